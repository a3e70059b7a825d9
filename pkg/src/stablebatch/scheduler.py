"""Optimal-batch curves, dynamic batch schedules and reference calculators."""

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    DomainError,
    InsufficientData,
    LengthMismatch,
    MonotonicityViolation,
    NonMonotoneWarning,
    NonPositiveBatch,
)

INIT_MODES = ("anchored", "paper_literal")
DEFAULT_QUANTUM = 65536

# Deployed schedule: 2M, 4M, 5M, 6M tokens per step, switched every 125B tokens.
REFERENCE_SCHEDULE = {
    "d_interval": 125e9,
    "batches": [2e6, 4e6, 5e6, 6e6],
}


@dataclass
class BoptCurve:
    """Optimal batch size as a function of tokens consumed, ``f(N, D)``."""

    model_size: float
    knots_d: np.ndarray
    knots_b: np.ndarray
    extrapolation: float = 0.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.knots_d = np.asarray(self.knots_d, dtype=float)
        self.knots_b = np.asarray(self.knots_b, dtype=float)
        if self.knots_d.shape != self.knots_b.shape or self.knots_d.size == 0:
            raise ValueError("knots must be non-empty and of equal length")
        if np.any(np.diff(self.knots_d) <= 0):
            raise ValueError("knot D values must be strictly increasing")
        if np.any(self.knots_b <= 0) or np.any(self.knots_d <= 0):
            raise ValueError("knot values must be positive")

    @property
    def knots(self):
        return list(zip(self.knots_d.tolist(), self.knots_b.tolist()))

    def __call__(self, D):
        return eval_bopt(self, D)

    def to_dict(self):
        return {
            "model_size": self.model_size,
            "knots": [{"D": d, "B": b} for d, b in self.knots],
            "extrapolation": self.extrapolation,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d):
        knots = d["knots"]
        return cls(
            float(d.get("model_size", 0.0)),
            [k["D"] for k in knots],
            [k["B"] for k in knots],
            float(d.get("extrapolation", 0.0)),
            list(d.get("warnings", [])),
        )


def fit_bopt_curve(metrics, model_size=0.0):
    """Re-index per-loss B_opt by the data the optimal run consumes (``e_min``)."""
    metrics = list(metrics)
    if len(metrics) < 3 or len({m.target_loss for m in metrics}) < 3:
        raise InsufficientData("need metrics at >= 3 distinct target losses")
    metrics.sort(key=lambda m: m.e_min)
    d = np.array([m.e_min for m in metrics])
    b = np.array([m.b_opt for m in metrics])
    tail = slice(-3, None)
    slope = float(np.polyfit(np.log(d[tail]), np.log(b[tail]), 1)[0])
    notes = []
    if np.any(np.diff(b) < 0):
        msg = "optimal batch size is not nondecreasing in data"
        warnings.warn(msg, NonMonotoneWarning, stacklevel=2)
        notes.append(msg)
    return BoptCurve(model_size, d, b, slope, notes)


def eval_bopt(curve, D):
    """Log-log interpolation between knots, power-law beyond the last knot,
    first-knot value below the first knot."""
    D = np.asarray(D, dtype=float)
    kd, kb = curve.knots_d, curve.knots_b
    out = np.empty(D.shape)
    flat = D.ravel()
    res = out.ravel()
    for i, x in enumerate(flat):
        if x <= kd[0]:
            res[i] = kb[0]
        elif x >= kd[-1]:
            res[i] = kb[-1] if x == kd[-1] else kb[-1] * (x / kd[-1]) ** curve.extrapolation
        else:
            j = int(np.searchsorted(kd, x, side="right"))
            if kd[j - 1] == x:
                res[i] = kb[j - 1]
                continue
            t = (math.log(x) - math.log(kd[j - 1])) / (math.log(kd[j]) - math.log(kd[j - 1]))
            res[i] = math.exp(math.log(kb[j - 1]) + t * (math.log(kb[j]) - math.log(kb[j - 1])))
    return float(out) if out.ndim == 0 else out


@dataclass
class Schedule:
    d_interval: float
    momenta: list
    n: int
    init_mode: str
    milestones: list
    batches: list
    model_size: float = 0.0
    quantum: float = None

    @property
    def entries(self):
        return list(zip(self.milestones, self.batches))

    def to_dict(self):
        return {
            "model_size": self.model_size,
            "d_interval": self.d_interval,
            "momenta": list(self.momenta),
            "init_mode": self.init_mode,
            "quantum": self.quantum,
            "entries": [{"tokens": d, "batch": b} for d, b in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        entries = d["entries"]
        return cls(
            float(d["d_interval"]),
            [float(a) for a in d["momenta"]],
            len(entries),
            d["init_mode"],
            [float(e["tokens"]) for e in entries],
            [float(e["batch"]) for e in entries],
            float(d.get("model_size", 0.0)),
            d.get("quantum"),
        )

    def table(self):
        rows = [f"{'switch':>6}  {'tokens':>14}  {'batch':>14}"]
        for i, (d, b) in enumerate(self.entries, start=1):
            rows.append(f"{i:>6}  {d:>14.6g}  {b:>14.6g}")
        return "\n".join(rows) + "\n"


def round_batch(b, quantum):
    if quantum is None:
        return b
    return max(quantum, round(b / quantum) * quantum)


def make_schedule(curve, d_interval, momenta, n=None, init_mode="anchored", quantum=None, model_size=None):
    """Batch sizes at token milestones ``i * d_interval``, ``i = 1..n``.

    Each switch adds ``(1 + alpha_i)`` times the curve's increment over the
    interval.  ``paper_literal`` starts the running total at 0; ``anchored``
    starts it at the curve value at zero tokens.  The recurrence is carried
    out in exact rational arithmetic, so zero momenta reproduce the curve
    bit for bit.  Rounding to ``quantum`` is applied only to the output.
    """
    momenta = [float(a) for a in momenta]
    if n is None:
        n = len(momenta)
    if n != len(momenta):
        raise LengthMismatch(f"n={n} but {len(momenta)} momenta given")
    if not d_interval > 0:
        raise ValueError("d_interval must be positive")
    if init_mode not in INIT_MODES:
        raise ValueError(f"init_mode must be one of {INIT_MODES}")
    f = curve if callable(curve) else (lambda D: eval_bopt(curve, D))

    def at(i):
        return Fraction(float(f(i * d_interval)))

    total = at(0) if init_mode == "anchored" else Fraction(0)
    milestones, batches = [], []
    for i in range(1, n + 1):
        total += (1 + Fraction(momenta[i - 1])) * (at(i) - at(i - 1))
        value = float(total)
        if value <= 0:
            raise NonPositiveBatch(f"switch {i} yields non-positive batch size {value}")
        milestones.append(i * d_interval)
        batches.append(round_batch(value, quantum))
    if model_size is None:
        model_size = getattr(curve, "model_size", 0.0)
    return Schedule(d_interval, momenta, n, init_mode, milestones, batches, model_size, quantum)


def compare_to_reference(schedule):
    """Per-switch ratio of ``schedule`` to the deployed 2M/4M/5M/6M schedule."""
    ref = REFERENCE_SCHEDULE["batches"]
    rows = []
    for i, b in enumerate(schedule.batches[: len(ref)]):
        rows.append({"switch": i + 1, "batch": b, "reference": ref[i], "ratio": b / ref[i]})
    return {"d_interval_reference": REFERENCE_SCHEDULE["d_interval"], "rows": rows}


@dataclass
class EquivalenceReport:
    passed: bool
    rows: list

    def to_dict(self):
        return {"passed": self.passed, "rows": self.rows}


def _first_reach(d_grid, row, level):
    """Least D on a decreasing row with loss <= level (linear interpolation)."""
    k = int(np.searchsorted(-row, -level, side="left"))
    if k >= len(row):
        return math.inf
    if k == 0 or row[k] == level:
        return float(d_grid[k])
    t = (row[k - 1] - level) / (row[k - 1] - row[k])
    return float(d_grid[k - 1] + t * (d_grid[k] - d_grid[k - 1]))


def verify_equivalence(b_grid, d_grid, losses):
    """Check that min-loss-at-fixed-data and min-data-at-fixed-loss pick the same batch.

    ``losses[i, j]`` is the loss at batch ``b_grid[i]`` after ``d_grid[j]``
    tokens.  For each data budget the loss-minimizing batch is found, its loss
    becomes the target, and every batch's data-to-target is compared.
    """
    b_grid = np.asarray(b_grid, dtype=float)
    d_grid = np.asarray(d_grid, dtype=float)
    L = np.asarray(losses, dtype=float)
    if L.shape != (b_grid.size, d_grid.size):
        raise ValueError(f"loss grid shape {L.shape} != ({b_grid.size}, {d_grid.size})")
    if np.any(np.diff(b_grid) <= 0) or np.any(np.diff(d_grid) <= 0):
        raise ValueError("b_grid and d_grid must be strictly increasing")
    bad = np.where(np.any(np.diff(L, axis=1) >= 0, axis=1))[0]
    if bad.size:
        raise MonotonicityViolation(f"loss is not strictly decreasing in D for B = {b_grid[bad].tolist()}")

    rows = []
    passed = True
    for j, d0 in enumerate(d_grid):
        i_star = int(np.argmin(L[:, j]))
        l0 = float(L[i_star, j])
        need = np.array([_first_reach(d_grid, L[i], l0) for i in range(b_grid.size)])
        i_data = int(np.argmin(need))
        ok = i_data == i_star
        passed &= ok
        rows.append({
            "d0": float(d0),
            "b_loss_argmin": float(b_grid[i_star]),
            "target_loss": l0,
            "b_data_argmin": float(b_grid[i_data]),
            "data_needed": float(need[i_data]),
            "ok": bool(ok),
        })
    return EquivalenceReport(bool(passed), rows)


def deepseek_bopt(compute):
    """Compute-optimal batch size power law."""
    if not compute > 0:
        raise DomainError("compute budget must be positive")
    return 0.2920 * compute**0.3271


def mccandlish_lr(eta_max, b_noise, B):
    return eta_max / (1.0 + b_noise / B)


def surge_lr(eta_max, b_noise, B):
    return eta_max / (0.5 * (math.sqrt(b_noise / B) + math.sqrt(B / b_noise)))
