"""Piecewise E(S) model, its Huber fit, and B_min / B_opt extraction.

The model has three pieces joined with matching value and slope::

    E(S) = b_minus1 / (S - s_min) + b_0      s_min < S <= s_1
         = c * (S - s_opt)**2 + e_min          s_1 < S <= s_2
         = a_1 * S + a_0                        S > s_2

The four matching conditions leave six free parameters
``(s_min, s_1, s_opt, s_2, c, e_min)``; fits work in the unconstrained
coordinates ``u`` with ``s_min = exp(u0)``, ``s_1 = s_min + exp(u1)``,
``s_opt = s_1 + exp(u2)``, ``s_2 = s_opt + exp(u3)``, ``c = exp(u4)``,
``e_min = exp(u5)``, so the ordering and positivity hold by construction.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .errors import DomainError, FitDiverged, InsufficientData, OrderingViolation
from .jsonio import read_json, write_json

DEFAULT_DELTA = 0.05
DEFAULT_SEEDS = 16
MIN_POINTS = 6


@dataclass(frozen=True)
class FreeParams:
    s_min: float
    s_1: float
    s_opt: float
    s_2: float
    c: float
    e_min: float

    def as_array(self):
        return np.array([self.s_min, self.s_1, self.s_opt, self.s_2, self.c, self.e_min])

    def to_u(self):
        return np.log([
            self.s_min,
            self.s_1 - self.s_min,
            self.s_opt - self.s_1,
            self.s_2 - self.s_opt,
            self.c,
            self.e_min,
        ])

    @classmethod
    def from_u(cls, u):
        e = np.exp(np.asarray(u, dtype=float))
        s_min = e[0]
        s_1 = s_min + e[1]
        s_opt = s_1 + e[2]
        s_2 = s_opt + e[3]
        return cls(float(s_min), float(s_1), float(s_opt), float(s_2), float(e[4]), float(e[5]))


@dataclass(frozen=True)
class PiecewiseES:
    s_min: float
    s_1: float
    s_opt: float
    s_2: float
    e_min: float
    c: float
    b_minus1: float
    b_0: float
    a_1: float
    a_0: float

    @property
    def free(self):
        return FreeParams(self.s_min, self.s_1, self.s_opt, self.s_2, self.c, self.e_min)

    def __call__(self, S):
        return eval_es(self, S)


def from_free_params(fp):
    """Solve the value- and slope-matching conditions for the dependent four."""
    if not (0 < fp.s_min < fp.s_1 < fp.s_opt < fp.s_2):
        raise OrderingViolation(
            f"need 0 < s_min < s_1 < s_opt < s_2, got {fp.s_min}, {fp.s_1}, {fp.s_opt}, {fp.s_2}"
        )
    if not (fp.c > 0 and fp.e_min > 0):
        raise OrderingViolation("c and e_min must be positive")
    d1 = fp.s_1 - fp.s_min
    b_minus1 = -2.0 * fp.c * (fp.s_1 - fp.s_opt) * d1 * d1
    b_0 = fp.c * (fp.s_1 - fp.s_opt) ** 2 + fp.e_min - b_minus1 / d1
    a_1 = 2.0 * fp.c * (fp.s_2 - fp.s_opt)
    a_0 = fp.c * (fp.s_2 - fp.s_opt) ** 2 + fp.e_min - a_1 * fp.s_2
    return PiecewiseES(fp.s_min, fp.s_1, fp.s_opt, fp.s_2, fp.e_min, fp.c, b_minus1, b_0, a_1, a_0)


def _pieces(p, S):
    S = np.asarray(S, dtype=float)
    if np.any(S <= p.s_min):
        raise DomainError(f"E(S) is undefined for S <= s_min = {p.s_min}")
    return S, S <= p.s_1, (S > p.s_1) & (S <= p.s_2), S > p.s_2


def eval_es(p, S):
    S, m1, m2, m3 = _pieces(p, S)
    out = np.empty_like(S)
    out[m1] = p.b_minus1 / (S[m1] - p.s_min) + p.b_0
    out[m2] = p.c * (S[m2] - p.s_opt) ** 2 + p.e_min
    out[m3] = p.a_1 * S[m3] + p.a_0
    return float(out) if out.ndim == 0 else out


def es_derivative(p, S):
    S, m1, m2, m3 = _pieces(p, S)
    out = np.empty_like(S)
    out[m1] = -p.b_minus1 / (S[m1] - p.s_min) ** 2
    out[m2] = 2.0 * p.c * (S[m2] - p.s_opt)
    out[m3] = p.a_1
    return float(out) if out.ndim == 0 else out


def constraint_residuals(p):
    """Relative gaps in value and slope at both knots (all zero for a valid model)."""
    d1 = p.s_1 - p.s_min
    left_v1 = p.b_minus1 / d1 + p.b_0
    mid_v1 = p.c * (p.s_1 - p.s_opt) ** 2 + p.e_min
    mid_v2 = p.c * (p.s_2 - p.s_opt) ** 2 + p.e_min
    right_v2 = p.a_1 * p.s_2 + p.a_0
    left_d1 = -p.b_minus1 / d1**2
    mid_d1 = 2.0 * p.c * (p.s_1 - p.s_opt)
    mid_d2 = 2.0 * p.c * (p.s_2 - p.s_opt)

    def rel(x, y):
        return abs(x - y) / max(abs(x), abs(y), 1e-300)

    return {
        "value_s1": rel(left_v1, mid_v1),
        "value_s2": rel(mid_v2, right_v2),
        "slope_s1": rel(left_d1, mid_d1),
        "slope_s2": rel(mid_d2, p.a_1),
    }


def _model_from_u(u, S):
    """Vectorized E(S_i) for unconstrained parameters ``u``; assumes S > s_min."""
    e = np.exp(u)
    s_min = e[0]
    s_1 = s_min + e[1]
    s_opt = s_1 + e[2]
    s_2 = s_opt + e[3]
    c, e_min = e[4], e[5]
    b_minus1 = 2.0 * c * e[2] * e[1] * e[1]
    b_0 = c * e[2] ** 2 + e_min - b_minus1 / e[1]
    a_1 = 2.0 * c * e[3]
    a_0 = c * e[3] ** 2 + e_min - a_1 * s_2
    return np.where(
        S <= s_1,
        b_minus1 / (S - s_min) + b_0,
        np.where(S <= s_2, c * (S - s_opt) ** 2 + e_min, a_1 * S + a_0),
    )


def _valid_u(u, S):
    return bool(np.all(np.abs(u) < 700)) and math.exp(u[0]) < S[0]


def _log_residuals(u, S, log_e):
    """Residuals for the least-squares polish; invalid parameters get a flat penalty."""
    if not _valid_u(u, S):
        return np.full(S.shape, 1e3)
    with np.errstate(all="ignore"):
        r = log_e - np.log(_model_from_u(u, S))
    return np.where(np.isfinite(r), r, 1e3)


def _objective(u, S, log_e, delta):
    if not _valid_u(u, S):
        return np.inf
    a = np.abs(log_e - np.log(_model_from_u(u, S)))
    return float(np.sum(np.where(a <= delta, 0.5 * a * a, delta * a - 0.5 * delta * delta)))


def _heuristic_start(S, E):
    """Initial free parameters read off the data."""
    i = int(np.argmin(E))
    s_opt, e_min = S[i], E[i]
    s_min = 0.8 * S[0]
    # curvature of the parabola through the three points around the minimum
    j = min(max(i, 1), len(S) - 2)
    x, y = S[j - 1 : j + 2], E[j - 1 : j + 2]
    c = np.polyfit(x, y, 2)[0]
    if not c > 0:
        c = e_min / (s_opt - s_min) ** 2
    a_1 = (E[-1] - E[-2]) / (S[-1] - S[-2])
    if not a_1 > 0:
        a_1 = E[-1] / S[-1]
    s_2 = s_opt + a_1 / (2.0 * c)
    s_1 = math.sqrt(s_min * s_opt)
    s_1 = min(max(s_1, s_min + 0.05 * (s_opt - s_min)), s_opt - 0.05 * (s_opt - s_min))
    return FreeParams(s_min, s_1, s_opt, s_2, c, e_min)


@dataclass
class FitDiagnostics:
    objective: float
    seed: int
    start: int
    n_points: int
    delta: float
    start_objectives: list = field(default_factory=list)


def fit_es(ds, delta=DEFAULT_DELTA, seeds=DEFAULT_SEEDS, seed=0, return_diagnostics=False, max_fev=2500):
    """Huber fit of the piecewise model to log E over an :class:`ESDataset`.

    ``seeds`` Nelder-Mead runs start from a data heuristic (start 0) and its
    seeded jitters; the best start is polished with a trust-region
    least-squares step on the same Huber objective.  Ties go to the lower
    objective, then the smaller ``s_min``.
    """
    S = np.asarray(ds.s, dtype=float)
    E = np.asarray(ds.e, dtype=float)
    if len(S) < MIN_POINTS:
        raise InsufficientData(f"need >= {MIN_POINTS} points, got {len(S)}")
    if len(np.unique(S)) != len(S):
        raise InsufficientData("S values must be distinct")
    order = np.argsort(S)
    S, E = S[order], E[order]
    i_min = int(np.argmin(E))
    if i_min == 0 or i_min == len(S) - 1:
        raise FitDiverged("E is monotone over the sampled S; no interior minimum to fit")

    log_e = np.log(E)
    u0 = _heuristic_start(S, E).to_u()
    rng = np.random.default_rng(seed)
    jitter = rng.normal(0.0, 0.3, size=(max(seeds, 1), 6))
    jitter[0] = 0.0
    simplex_step = 0.1 * np.vstack([np.zeros(6), np.eye(6)])

    results = []
    start_objs = []
    # infeasible simplex vertices score inf; NM subtracts them when testing convergence
    with np.errstate(invalid="ignore"):
        for k in range(max(seeds, 1)):
            start = u0 + jitter[k]
            start_objs.append(_objective(start, S, log_e, delta))
            res = minimize(
                _objective,
                start,
                args=(S, log_e, delta),
                method="Nelder-Mead",
                options={
                    "initial_simplex": start + simplex_step,
                    "xatol": 1e-10,
                    "fatol": 1e-18,
                    "maxiter": max_fev,
                    "maxfev": max_fev,
                    "adaptive": True,
                },
            )
            # one restart from the reported optimum shakes off simplex collapse
            res = minimize(
                _objective,
                res.x,
                args=(S, log_e, delta),
                method="Nelder-Mead",
                options={
                    "initial_simplex": res.x + 0.02 * np.vstack([np.zeros(6), np.eye(6)]),
                    "xatol": 1e-12,
                    "fatol": 1e-20,
                    "maxiter": max_fev // 2,
                    "maxfev": max_fev // 2,
                    "adaptive": True,
                },
            )
            results.append((float(res.fun), float(np.exp(res.x[0])), k, res.x))

    results.sort(key=lambda r: (r[0], r[1], r[2]))
    best_obj, _, best_k, best_u = results[0]

    def scaled_residuals(u):
        return _log_residuals(u, S, log_e)

    polish = least_squares(
        scaled_residuals, best_u, loss="huber", f_scale=delta, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    pol_obj = _objective(polish.x, S, log_e, delta)
    if np.isfinite(pol_obj) and pol_obj <= best_obj:
        best_u, best_obj = polish.x, pol_obj
    if not np.isfinite(best_obj):
        raise FitDiverged("no start reached a finite objective")

    model = from_free_params(FreeParams.from_u(best_u))
    if return_diagnostics:
        diag = FitDiagnostics(best_obj, seed, best_k, len(S), delta, start_objs)
        return model, diag
    return model


@dataclass(frozen=True)
class BatchMetrics:
    target_loss: float
    b_min: float
    b_opt: float
    e_min: float
    s_opt: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(*(float(d[k]) for k in ("target_loss", "b_min", "b_opt", "e_min", "s_opt")))


def extract_metrics(p, target_loss):
    """B_min is the asymptotic slope; B_opt the origin-to-minimum chord slope."""
    return BatchMetrics(float(target_loss), p.a_1, p.e_min / p.s_opt, p.e_min, p.s_opt)


def classic_es(e_min, s_min, S):
    """Classic hyperbolic E(S) with E and S both at their minima as asymptotes."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= s_min):
        raise DomainError(f"classic E(S) has a pole at S = s_min = {s_min}")
    out = e_min / (1.0 - s_min / S)
    return float(out) if out.ndim == 0 else out


def classic_data_for_batch(e_min, s_min, B):
    return e_min + B * s_min


@dataclass
class TrendReport:
    target_losses: list
    b_min: list
    b_opt: list
    b_min_monotone: bool
    b_opt_monotone: bool
    l0: float = None
    b_min_slope: float = None
    b_opt_slope: float = None

    def to_dict(self):
        return asdict(self)


def metrics_trend(metrics, l0=None, rtol=0.0):
    """How B_min and B_opt move as the target loss decreases.

    Slopes are d log B / d log(loss - l0) and are only computed when ``l0``
    is given; a negative slope means B grows as the loss falls.
    """
    metrics = list(metrics)
    if len(metrics) < 3 or len({m.target_loss for m in metrics}) < 3:
        raise InsufficientData("need metrics at >= 3 distinct target losses")
    metrics.sort(key=lambda m: -m.target_loss)
    losses = [m.target_loss for m in metrics]
    bmin = [m.b_min for m in metrics]
    bopt = [m.b_opt for m in metrics]

    def nondecreasing(xs):
        return all(b >= a * (1.0 - rtol) for a, b in zip(xs, xs[1:]))

    report = TrendReport(losses, bmin, bopt, nondecreasing(bmin), nondecreasing(bopt))
    if l0 is not None:
        gap = np.asarray(losses) - l0
        if np.any(gap <= 0):
            raise DomainError("every target loss must exceed l0")
        x = np.log(gap)
        report.l0 = float(l0)
        report.b_min_slope = float(np.polyfit(x, np.log(bmin), 1)[0])
        report.b_opt_slope = float(np.polyfit(x, np.log(bopt), 1)[0])
    return report


def es_to_dict(p, diagnostics=None):
    out = {
        "raw": {k: getattr(p, k) for k in ("s_min", "s_1", "s_opt", "s_2", "e_min", "c", "b_minus1", "b_0", "a_1", "a_0")},
        "free": asdict(p.free),
    }
    if diagnostics is not None:
        out["diagnostics"] = {
            "objective": diagnostics.objective,
            "seed": diagnostics.seed,
            "start": diagnostics.start,
            "n_points": diagnostics.n_points,
            "delta": diagnostics.delta,
        }
    return out


def es_from_dict(d):
    return from_free_params(FreeParams(**{k: float(v) for k, v in d["free"].items()}))


def save_es(p, path, diagnostics=None, extra=None):
    payload = es_to_dict(p, diagnostics)
    if extra:
        payload.update(extra)
    return write_json(payload, path)


def load_es(path):
    return es_from_dict(read_json(path))
