import numpy as np
import pytest

from stablebatch.dynamics import NoiseProfile, SimConfig
from stablebatch.esfit import FreeParams, from_free_params
from stablebatch.losslaw import PowerLawFit
from stablebatch.runs import TrainingRun

FULLBATCH = PowerLawFit(2.0, 5.0, 0.3)


def sim(kind="constant", b0=4.0, growth=0.0, scale_ref=1.0, epsilon=0.5, fullbatch=FULLBATCH, **kw):
    return SimConfig(epsilon, NoiseProfile(kind, b0, growth, scale_ref), fullbatch, **kw)


def planted_es(rng):
    """A random valid piecewise model with well separated knots."""
    s_min = rng.uniform(50, 500)
    s_1 = s_min * rng.uniform(1.2, 3)
    s_opt = s_1 * rng.uniform(1.2, 3)
    s_2 = s_opt * rng.uniform(1.2, 3)
    c = rng.uniform(0.01, 1)
    e_min = rng.uniform(100, 1e4) * s_opt / 100
    return from_free_params(FreeParams(s_min, s_1, s_opt, s_2, c, e_min))


def planted_samples(p, n=32):
    return p.s_min + np.geomspace(0.02 * p.s_min, 10 * p.s_2, n)


def power_law_run(fit, steps, batch=4.0, noise=0.0, seed=0):
    steps = np.asarray(steps, dtype=np.int64)
    loss = fit.l0 + fit.a * steps.astype(float) ** (-fit.alpha)
    if noise:
        loss = loss + np.random.default_rng(seed).normal(0, noise, steps.size)
    return TrainingRun(1.0, batch, steps, steps * batch, loss, {"run_id": f"plant_{seed}"})


@pytest.fixture
def constant_cfg():
    return sim()


@pytest.fixture
def witness_cfg():
    return sim("linear", b0=2.0, growth=0.08)
