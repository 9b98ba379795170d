# -*- coding: utf-8 -*-
"""Точка входа: argparse-подкоманды -> RunConfig -> worker."""
import argparse
import sys
from typing import Any, Dict, List, Optional

from .constants import (
    DENOISER_ARCHS,
    ENERGY_KINDS,
    ESS_VARIANTS,
    ESTIMATORS,
    SCHEDULE_KINDS,
    VOCAB_POLICIES,
)
from .env import COMMANDS, load_config
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EdlmError,
    PreconditionError,
)
from .logging_conf import get_logger, setup_logging
from .worker import process

log = get_logger("edlm.cli")

# ошибки ввода -> код 2, прочие ошибки выполнения -> 1
_USAGE_ERRORS = (ConfigError, DataError, DomainError, PreconditionError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="dotenv-файл с ключами EDLM_*")
    p.add_argument("--log-level", dest="log_level")
    p.add_argument("--out")


def _data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus")
    p.add_argument("--vocab-policy", dest="vocab_policy",
                   choices=VOCAB_POLICIES)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--heldout-size", dest="heldout_size", type=int)


def _schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=SCHEDULE_KINDS)
    p.add_argument("--schedule-eps", dest="schedule_eps", type=float)
    p.add_argument("--schedule-power", dest="schedule_power", type=float)


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", dest="train_steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--trace", help="CSV трассы обучения")


def _energy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="чекпоинт денойзера")
    p.add_argument("--energy", choices=ENERGY_KINDS)
    p.add_argument("--ar", help="чекпоинт AR-модели")
    p.add_argument("--energy-model", dest="energy_model",
                   help="чекпоинт NCE-энергии")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edlm",
        description="Energy-based masked diffusion language model toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="синтетический корпус")
    _common(p)
    p.add_argument("--sentences", type=int)

    p = sub.add_parser("fit-ar", help="n-граммная AR-модель")
    _common(p)
    _data(p)
    p.add_argument("--order", type=int)
    p.add_argument("--smoothing", type=float)

    p = sub.add_parser("train-denoiser", help="факторизованный денойзер")
    _common(p)
    _data(p)
    _schedule(p)
    _training(p)
    p.add_argument("--architecture", choices=DENOISER_ARCHS)
    p.add_argument("--context-radius", dest="context_radius", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float)

    p = sub.add_parser("train-nce", help="NCE-энергия над денойзером")
    _common(p)
    _data(p)
    _schedule(p)
    _training(p)
    p.add_argument("--model", help="чекпоинт денойзера")

    p = sub.add_parser("sample", help="выборки EDLM")
    _common(p)
    _schedule(p)
    _energy(p)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--steps", dest="sample_steps", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--window", type=float)
    p.add_argument("--num-samples", dest="num_samples", type=int)

    p = sub.add_parser("eval", help="NELBO, BPC и PPL")
    _common(p)
    _data(p)
    _schedule(p)
    _energy(p)
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--discrete-steps", dest="discrete_steps", type=int)
    p.add_argument("--bounds-n", dest="bounds_n", type=int)
    p.add_argument("--no-stratified", dest="stratified",
                   action="store_const", const=False)
    p.add_argument("--diagnostics", action="store_const", const=True)
    p.add_argument("--ess-variant", dest="ess_variant", choices=ESS_VARIANTS)

    p = sub.add_parser("bench", help="сетка (steps, k, window)")
    _common(p)
    _schedule(p)
    _energy(p)
    p.add_argument("--grid", help="JSON с ключами steps, k, window")
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--num-samples", dest="num_samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_const", const=True)

    p = sub.add_parser("verify", help="сверка с точным оракулом")
    _common(p)
    return parser


def _cli_values(ns: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(ns).items()
            if k != "command" and v is not None}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    assert args.command in COMMANDS
    try:
        cfg = load_config(args.command, _cli_values(args))
        setup_logging(cfg.log_level)
        stats = process(cfg)
    except _USAGE_ERRORS as exc:
        log.error("%s: %s", args.command, exc)
        return 2
    except EdlmError as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1
    if cfg.command == "verify" and stats.get("failed"):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
