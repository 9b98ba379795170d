# -*- coding: utf-8 -*-

# Логи
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
DEFAULT_LOG_LEVEL = "INFO"
LOG_EVERY = 500  # шагов между строками прогресса

# Форматы файлов
FORMAT_VERSION = 1
CONFIG_ENV_VAR = "EDLM_CONFIG"
CONFIG_PREFIX = "EDLM_"
DIGEST_LEN = 12

# Расписание шума
DEFAULT_SCHEDULE = "linear"
SCHEDULE_KINDS = ("linear", "loglinear")
DEFAULT_SCHEDULE_EPS = 1e-4
DEFAULT_SCHEDULE_POWER = 1.0

# Словарь
TEXT8_ALPHABET = " abcdefghijklmnopqrstuvwxyz"
VOCAB_POLICIES = ("text8", "infer")
DEFAULT_VOCAB_POLICY = "text8"
DEFAULT_SEQ_LEN = 64
DEFAULT_SENTENCES = 2000  # make-corpus

# AR (n-граммы)
DEFAULT_AR_ORDER = 3
DEFAULT_AR_SMOOTHING = 0.1

# Денойзер
DENOISER_ARCHS = ("linear", "mlp")
DEFAULT_DENOISER_ARCH = "linear"
DEFAULT_CONTEXT_RADIUS = 3
DEFAULT_HIDDEN = 32
DEFAULT_LR = 0.1
DEFAULT_TRAIN_STEPS = 5000
DEFAULT_BATCH_SIZE = 8
DEFAULT_MAX_GRAD_NORM = 5.0
NORM_ATOL = 1e-9  # допуск нормировки строк mu

# NCE
DEFAULT_NCE_STEPS = 5000
DEFAULT_NCE_LR = 0.5
DEFAULT_NCE_BATCH = 8
DEFAULT_HELDOUT_SIZE = 64
DIVERGENCE_LOSS = 1e6  # выше считаем обучение разошедшимся

# Сэмплер
ENERGY_KINDS = ("ar", "coar", "nce", "none")
DEFAULT_ENERGY = "none"
DEFAULT_SAMPLE_STEPS = 32
DEFAULT_IMPORTANCE_SIZE = 4
DEFAULT_WINDOW = 1.0
DEFAULT_NUM_SAMPLES = 16
SAMPLE_CHUNK = 256  # строк сэмплера за проход

# Оценка
ESTIMATORS = ("continuous", "discrete")
DEFAULT_ESTIMATOR = "continuous"
DEFAULT_DISCRETE_T = 8
DEFAULT_MC_SAMPLES = 32
DEFAULT_BOUNDS_N = 64
DIAGNOSTIC_NEGATIVES = 16
DIAGNOSTIC_TIMES = (0.1, 0.3, 0.5, 0.7, 0.9)
ESS_VARIANTS = ("weights", "energies")
DEFAULT_ESS_VARIANT = "weights"

# Оракул
ORACLE_MAX_STATES = 5 ** 6

# Бенч
DEFAULT_BENCH_WORKERS = 1
DEFAULT_BENCH_GRID = {"steps": [8], "k": [1, 2], "window": [0.0, 1.0]}
