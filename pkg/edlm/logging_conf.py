# -*- coding: utf-8 -*-
"""Логи пакета: все логгеры называются edlm.<модуль> и наследуют уровень
и формат корня, который настраивает setup_logging."""
import logging
from typing import Optional

from .constants import DEFAULT_LOG_LEVEL, LOG_FORMAT

ROOT_LOGGER = "edlm"


def setup_logging(level_str: Optional[str] = None) -> None:
    level = (level_str or DEFAULT_LOG_LEVEL).upper()
    # force=True: повторная настройка в том же процессе
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def get_logger(name: str) -> logging.Logger:
    """get_logger("sampler") и get_logger("edlm.sampler") дают один логгер."""
    if name != ROOT_LOGGER and not name.startswith(ROOT_LOGGER + "."):
        name = f"{ROOT_LOGGER}.{name}"
    return logging.getLogger(name)
