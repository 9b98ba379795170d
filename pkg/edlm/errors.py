# -*- coding: utf-8 -*-


class EdlmError(Exception):
    """Базовая ошибка пакета."""


class DomainError(EdlmError, ValueError):
    """Аргумент вне области определения."""


class PreconditionError(EdlmError, ValueError):
    """Нарушено предусловие (маски там, где нужен чистый текст)."""


class InconsistentPairError(PreconditionError):
    """x_t расходится с x0 на немаскированной позиции."""


class ModelError(EdlmError):
    """Модель вернула ненормированное или неконечное значение."""


class TrainingError(EdlmError):
    """Лосс стал неконечным или разошёлся."""


class SamplerError(EdlmError):
    pass


class DataError(EdlmError):
    pass


class CapacityError(EdlmError):
    """Перебор оракула больше допустимого."""


class ConfigError(EdlmError):
    pass


class CheckpointError(ConfigError):
    pass
