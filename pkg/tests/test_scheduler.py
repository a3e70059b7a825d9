import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sim
from stablebatch.errors import (
    DomainError,
    InsufficientData,
    LengthMismatch,
    MonotonicityViolation,
    NonMonotoneWarning,
    NonPositiveBatch,
)
from stablebatch.esfit import BatchMetrics
from stablebatch.pipeline import default_verify_grid, simulated_surface
from stablebatch.scheduler import (
    BoptCurve,
    Schedule,
    compare_to_reference,
    deepseek_bopt,
    eval_bopt,
    fit_bopt_curve,
    make_schedule,
    mccandlish_lr,
    round_batch,
    surge_lr,
    verify_equivalence,
)

M, D = 1e6, 125e9


def linear_curve(d):
    return 2 * M + d / D * M


def test_hand_traced_schedules():
    assert make_schedule(linear_curve, D, [0, 0, 0, 0]).batches == [3 * M, 4 * M, 5 * M, 6 * M]
    assert make_schedule(linear_curve, D, [0, 0, 0, 0], init_mode="paper_literal").batches == [M, 2 * M, 3 * M, 4 * M]
    assert make_schedule(linear_curve, D, [1, 0, 0, 0]).batches == [4 * M, 5 * M, 6 * M, 7 * M]


def test_milestones_and_table():
    s = make_schedule(linear_curve, D, [0, 0])
    assert s.milestones == [D, 2 * D]
    assert s.table().splitlines()[1].split() == ["1", "1.25e+11", "3e+06"]
    assert Schedule.from_dict(s.to_dict()) == s


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e3, 1e9), min_size=2, max_size=8, unique=True), st.floats(1e5, 1e12), st.integers(1, 12))
def test_telescoping_is_bit_exact(bs, d_interval, n):
    ds = np.geomspace(d_interval / 3, d_interval * n * 2, len(bs))
    curve = BoptCurve(0.0, ds, sorted(bs), 0.4)
    s = make_schedule(curve, d_interval, [0.0] * n)
    assert s.batches == [float(eval_bopt(curve, i * d_interval)) for i in range(1, n + 1)]


def test_rounding_only_on_output():
    s = make_schedule(lambda d: 1000.0 + d, 1.0, [0, 0, 0], quantum=512)
    assert s.batches == [1024, 1024, 1024]
    assert round_batch(10, 512) == 512 and round_batch(1300, 512) == 1536


def test_schedule_errors():
    with pytest.raises(LengthMismatch):
        make_schedule(linear_curve, D, [0, 0], n=3)
    with pytest.raises(NonPositiveBatch):
        make_schedule(lambda d: 1.0 + d, 1.0, [-3.0])
    with pytest.raises(ValueError):
        make_schedule(linear_curve, D, [0], init_mode="sideways")


def test_compare_to_reference():
    rows = compare_to_reference(make_schedule(linear_curve, D, [0, 0, 0, 0]))["rows"]
    assert [r["ratio"] for r in rows] == [1.5, 1.0, 1.0, 1.0]


def _metrics(pairs):
    return [BatchMetrics(3.0 - 0.1 * i, 1.0, b, e, e / b) for i, (e, b) in enumerate(pairs)]


def test_bopt_curve_interp_and_extrapolation():
    curve = fit_bopt_curve(_metrics([(100.0, 1.0), (1000.0, 10.0), (1e4, 100.0)]))
    assert curve.extrapolation == pytest.approx(1.0)
    assert eval_bopt(curve, 50.0) == 1.0
    assert eval_bopt(curve, 1000.0) == 10.0
    assert eval_bopt(curve, 10**2.5) == pytest.approx(10**0.5)
    assert eval_bopt(curve, 1e5) == pytest.approx(1000.0)
    assert BoptCurve.from_dict(curve.to_dict()).knots == curve.knots


def test_bopt_curve_warns_and_needs_three():
    with pytest.warns(NonMonotoneWarning):
        curve = fit_bopt_curve(_metrics([(100.0, 2.0), (1000.0, 1.0), (1e4, 3.0)]))
    assert curve.warnings
    with pytest.raises(InsufficientData):
        fit_bopt_curve(_metrics([(100.0, 1.0), (1000.0, 2.0)]))


PROFILES = [
    dict(kind="constant", b0=4.0),
    dict(kind="linear", b0=2.0, growth=0.08),
    dict(kind="linear", b0=4.0, growth=0.02),
    dict(kind="power", b0=2.0, growth=0.5, scale_ref=10.0),
    dict(kind="power", b0=4.0, growth=1.0, scale_ref=100.0),
]


@pytest.mark.parametrize("eps", [0.5, 0.2])
@pytest.mark.parametrize("profile", PROFILES, ids=lambda p: f"{p['kind']}-{p['b0']}")
def test_equivalence_on_simulated_surfaces(profile, eps):
    cfg = sim(epsilon=eps, **profile)
    b, d = default_verify_grid(cfg, 1e4)
    rep = verify_equivalence(b, d, simulated_surface(cfg, b, d))
    assert rep.passed and len(rep.rows) == d.size


def test_equivalence_detects_corruption():
    cfg = sim()
    b, d = default_verify_grid(cfg, 1e4)
    L = simulated_surface(cfg, b, d)
    L[3, 5] = L[3, 4] + 0.1
    with pytest.raises(MonotonicityViolation):
        verify_equivalence(b, d, L)


def test_equivalence_rows():
    b = [1.0, 2.0]
    d = [1.0, 2.0, 3.0]
    L = np.array([[5.0, 3.0, 1.0], [4.0, 2.0, 1.5]])
    rep = verify_equivalence(b, d, L)
    assert rep.passed
    assert [r["b_loss_argmin"] for r in rep.rows] == [2.0, 2.0, 1.0]
    assert [r["data_needed"] for r in rep.rows] == d


def test_deepseek():
    assert deepseek_bopt(1) == 0.2920
    assert deepseek_bopt(1e20) == pytest.approx(0.2920 * 1e20**0.3271)
    with pytest.raises(DomainError):
        deepseek_bopt(0)


GRID = np.geomspace(1e-3, 1e3, 61)


def test_mccandlish_properties():
    eta, bn = 3e-4, 1.0
    lr = np.array([mccandlish_lr(eta, bn, B) for B in GRID])
    assert np.all(np.diff(lr) > 0) and np.all(lr < eta)
    assert mccandlish_lr(eta, bn, bn) == pytest.approx(eta / 2)
    assert mccandlish_lr(eta, bn, 1e12) == pytest.approx(eta, rel=1e-11)


def test_surge_properties():
    eta, bn = 3e-4, 1.0
    lr = np.array([surge_lr(eta, bn, B) for B in GRID])
    assert surge_lr(eta, bn, bn) == pytest.approx(eta)
    assert np.all(lr <= eta * (1 + 1e-15))
    assert lr == pytest.approx(lr[::-1], rel=1e-12)  # B <-> b^2 / B
    assert surge_lr(eta, bn, 1e-6) < 1e-2 * eta and surge_lr(eta, bn, 1e6) < 1e-2 * eta
