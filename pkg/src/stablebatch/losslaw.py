"""Constant-learning-rate loss law ``L(S) = L0 + A * S**-alpha``.

Fitting, inversion to steps-at-target-loss, and assembly of the
``(S_i, E_i)`` datasets consumed by :mod:`stablebatch.esfit`.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, FitDiverged, InsufficientData
from .jsonio import read_json, write_json

MIN_RECORDS = 16
DEFAULT_WARMUP = 1000
DEFAULT_DELTA = 0.01
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PowerLawFit:
    l0: float
    a: float
    alpha: float
    warmup_exclude: int = 0
    delta: float = DEFAULT_DELTA
    seed: int = 0

    def __post_init__(self):
        if not (self.l0 > 0 and self.a > 0 and self.alpha > 0):
            raise ValueError(f"PowerLawFit needs l0, a, alpha > 0, got {self.l0}, {self.a}, {self.alpha}")

    def __call__(self, steps):
        return loss_at(self, steps)

    def to_dict(self):
        return {
            "l0": self.l0,
            "a": self.a,
            "alpha": self.alpha,
            "warmup_exclude": self.warmup_exclude,
            "delta": self.delta,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["l0"]),
            float(d["a"]),
            float(d["alpha"]),
            int(d.get("warmup_exclude", 0)),
            float(d.get("delta", DEFAULT_DELTA)),
            int(d.get("seed", 0)),
        )


def loss_at(fit, steps):
    steps = np.asarray(steps, dtype=float)
    out = fit.l0 + fit.a * steps ** (-fit.alpha)
    return float(out) if out.ndim == 0 else out


def steps_for_loss(fit, target):
    """Steps needed to reach ``target``; exact inverse of :func:`loss_at`."""
    if not target > fit.l0:
        raise DomainError(f"target loss {target} is not above the irreducible loss {fit.l0}")
    return ((target - fit.l0) / fit.a) ** (-1.0 / fit.alpha)


def huber(residual, delta):
    r = np.abs(residual)
    return np.where(r <= delta, 0.5 * r * r, delta * r - 0.5 * delta * delta)


def _profile(l0, log_s, loss, delta):
    """For fixed L0, regress log(L - L0) on log S; return (objective, log A, alpha).

    Weights ``L - L0`` turn log-space residuals back into loss-space ones.
    """
    gap = loss - l0
    slope, intercept = np.polyfit(log_s, np.log(gap), 1, w=gap)
    pred = l0 + np.exp(intercept + slope * log_s)
    return float(np.sum(huber(loss - pred, delta))), intercept, -slope


def _golden_min(func, lo, hi, tol):
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = func(c), func(d)
    while hi - lo > tol * max(1.0, abs(hi)):
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = func(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = func(d)
    return 0.5 * (lo + hi)


def fit_power_law(run, warmup_exclude=DEFAULT_WARMUP, delta=DEFAULT_DELTA, seed=0, n_starts=8):
    """Huber fit of ``L0 + A * S**-alpha`` to a run's (step, loss) records.

    The irreducible loss is located by golden-section search on the profile
    objective, with ``n_starts`` seeded jitters of the bracket; the best
    start is then polished jointly in ``(L0, log A, alpha)``.
    """
    steps = np.asarray(run.steps, dtype=float)
    loss = np.asarray(run.losses, dtype=float)
    keep = steps >= warmup_exclude
    steps, loss = steps[keep], loss[keep]
    if len(steps) < MIN_RECORDS:
        raise InsufficientData(f"need >= {MIN_RECORDS} records after warmup exclusion, got {len(steps)}")

    log_s = np.log(steps)
    floor = float(loss.min())
    rng = np.random.default_rng(seed)
    eps = 1e-12 * floor

    def objective(l0):
        return _profile(l0, log_s, loss, delta)[0]

    best = None
    for k in range(n_starts):
        if k == 0:
            lo, hi = 0.0, floor
        else:
            u = np.sort(rng.uniform(0.0, 1.0, size=2))
            lo, hi = u[0] * 0.5 * floor, floor * (0.5 + 0.5 * u[1])
            hi = max(hi, lo + 0.05 * floor)
        l0 = _golden_min(objective, lo + eps, min(hi, floor) - eps, 1e-13)
        obj, log_a, alpha = _profile(l0, log_s, loss, delta)
        if not (np.isfinite(obj) and alpha > 0):
            continue
        if best is None or obj < best[0]:
            best = (obj, l0, log_a, alpha)
    if best is None:
        raise FitDiverged("no start produced a decreasing power law")

    def residuals(p):
        return loss - (p[0] + np.exp(p[1]) * steps ** (-p[2]))

    x0 = np.array(best[1:])
    upper = floor * (1.0 - 1e-12)
    x0[0] = min(max(x0[0], 1e-12 * floor), upper * (1 - 1e-12))
    sol = least_squares(
        residuals,
        x0,
        bounds=([0.0, -np.inf, 0.0], [upper, np.inf, np.inf]),
        loss="huber",
        f_scale=delta,
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        method="trf",
    )
    cand = sol.x
    if np.all(np.isfinite(cand)) and np.sum(huber(residuals(cand), delta)) <= best[0]:
        l0, log_a, alpha = cand
    else:
        _, l0, log_a, alpha = best
    if not (0 < l0 < floor and alpha > 0 and np.isfinite(log_a)):
        raise FitDiverged(f"fit left the valid region: l0={l0}, alpha={alpha}")
    return PowerLawFit(float(l0), float(math.exp(log_a)), float(alpha), int(warmup_exclude), float(delta), int(seed))


@dataclass
class ESDataset:
    """Steps/tokens pairs reaching one target loss at several batch sizes."""

    target_loss: float
    s: np.ndarray
    e: np.ndarray
    b: np.ndarray
    source: list = field(default_factory=list)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (self.s.shape == self.e.shape == self.b.shape):
            raise ValueError("s, e and b must have equal length")
        if np.any(np.abs(self.e - self.b * self.s) > 0.5 + 1e-12 * np.abs(self.e)):
            raise ValueError("every point must satisfy E = B * S")
        order = np.argsort(self.s, kind="stable")
        self.s, self.e, self.b = self.s[order], self.e[order], self.b[order]
        if self.source:
            self.source = [self.source[i] for i in order]

    @property
    def points(self):
        return list(zip(self.s.tolist(), self.e.tolist(), self.b.tolist()))

    def __len__(self):
        return len(self.s)

    def to_dict(self):
        return {
            "target_loss": self.target_loss,
            "points": [{"S": s, "E": e, "B": b} for s, e, b in self.points],
            "source": list(self.source),
        }

    @classmethod
    def from_dict(cls, d):
        pts = d["points"]
        return cls(
            float(d["target_loss"]),
            [p["S"] for p in pts],
            [p["E"] for p in pts],
            [p["B"] for p in pts],
            list(d.get("source", [])),
        )


def es_dataset_from_points(target, batch_sizes, steps, source=None):
    b = np.asarray(batch_sizes, dtype=float)
    s = np.asarray(steps, dtype=float)
    return ESDataset(float(target), s, b * s, b, list(source) if source is not None else [])


def build_es_dataset(fits, target, source=None):
    """Build the E(S) dataset at ``target`` from per-batch-size power-law fits.

    ``fits`` is a sequence of ``(batch_size, PowerLawFit)``.
    """
    fits = list(fits)
    if len(fits) < 4:
        raise InsufficientData(f"need fits at >= 4 batch sizes, got {len(fits)}")
    bad = [b for b, f in fits if not target > f.l0]
    if bad:
        raise DomainError(f"target loss {target} unreachable for batch sizes {sorted(bad)}")
    steps = [steps_for_loss(f, target) for _, f in fits]
    return es_dataset_from_points(target, [b for b, _ in fits], steps, source)


def save_fit(fit, path):
    return write_json(fit.to_dict(), path)


def load_fit(path):
    return PowerLawFit.from_dict(read_json(path))
