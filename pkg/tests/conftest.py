# -*- coding: utf-8 -*-
import numpy as np
import pytest

from edlm.models import UniformDenoiser
from edlm.oracle import random_ar, random_denoiser
from edlm.schedule import NoiseSchedule


@pytest.fixture
def schedule():
    return NoiseSchedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_ar():
    """Случайная табличная биграммная модель, V=3."""
    return random_ar(np.random.default_rng(7), 3)


@pytest.fixture
def toy_denoiser():
    """Линейный денойзер радиуса 1 со случайными весами, V=3."""
    return random_denoiser(np.random.default_rng(11), 3)


@pytest.fixture
def uniform3():
    return UniformDenoiser(3)
