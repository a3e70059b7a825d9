"""Noisy-gradient training dynamics under a constant learning rate.

With the Hessian approximated by the identity, one step at batch size ``B``
reduces the loss (in expectation) as much as ``1 / step_ratio`` full-batch
steps.  Integrating the step ratio over full-batch pseudo-time ``s`` gives the
steps ``S(B)`` and tokens ``E(B) = B * S(B)`` needed to reach a target loss,
where the full-batch reference curve is a :class:`PowerLawFit`.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, InsufficientOverlap, StallError
from .losslaw import PowerLawFit, es_dataset_from_points, loss_at, steps_for_loss
from .quadrature import adaptive_simpson
from .runs import TrainingRun

NOISE_KINDS = ("constant", "linear", "power")


@dataclass(frozen=True)
class NoiseProfile:
    """Gradient noise scale ``B_noise(s)`` in tokens per step.

    ``growth`` is a slope for the linear kind and an exponent for the power
    kind; it is ignored for the constant kind.
    """

    kind: str = "constant"
    b0: float = 1.0
    growth: float = 0.0
    scale_ref: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (self.b0 > 0 and math.isfinite(self.b0)):
            raise ValueError("b0 must be positive and finite")
        if self.growth < 0 or self.scale_ref <= 0:
            raise ValueError("growth must be >= 0 and scale_ref > 0")

    def __call__(self, s):
        return noise_at(self, s)

    def to_dict(self):
        return {"kind": self.kind, "b0": self.b0, "growth": self.growth, "scale_ref": self.scale_ref}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "constant"), float(d["b0"]), float(d.get("growth", 0.0)), float(d.get("scale_ref", 1.0)))


def noise_at(profile, s):
    if profile.kind == "constant":
        if np.ndim(s):
            return np.full(np.shape(s), profile.b0, dtype=float)
        return profile.b0
    if np.ndim(s):
        s = np.asarray(s, dtype=float)
    if profile.kind == "linear":
        return profile.b0 + profile.growth * s
    return profile.b0 * (1.0 + s / profile.scale_ref) ** profile.growth


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    noise: NoiseProfile
    fullbatch_loss: PowerLawFit
    quad_rel_tol: float = 1e-8
    max_subdivisions: int = 2**20
    exact_step_ratio: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon < 2:
            raise ValueError("epsilon must lie in (0, 2)")
        if not 0 < self.quad_rel_tol <= 1e-2:
            raise ValueError("quad_rel_tol must lie in (0, 1e-2]")

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "noise": self.noise.to_dict(),
            "fullbatch_loss": {"l0": self.fullbatch_loss.l0, "a": self.fullbatch_loss.a, "alpha": self.fullbatch_loss.alpha},
            "quad_rel_tol": self.quad_rel_tol,
            "max_subdivisions": self.max_subdivisions,
            "exact_step_ratio": self.exact_step_ratio,
        }

    @classmethod
    def from_dict(cls, d):
        fb = d["fullbatch_loss"]
        return cls(
            float(d["epsilon"]),
            NoiseProfile.from_dict(d["noise"]),
            PowerLawFit(float(fb["l0"]), float(fb["a"]), float(fb["alpha"])),
            float(d.get("quad_rel_tol", 1e-8)),
            int(d.get("max_subdivisions", 2**20)),
            bool(d.get("exact_step_ratio", False)),
        )


def expected_loss_decrease(epsilon, grad_norm_sq, noise_trace, B):
    """Expected one-step loss decrease, identity-Hessian approximation."""
    return epsilon * grad_norm_sq - 0.5 * epsilon**2 * (grad_norm_sq + noise_trace / B)


def _stall_batch(epsilon, b_noise, exact=False):
    bound = 0.5 * epsilon * b_noise
    return bound / (1.0 - 0.5 * epsilon) if exact else bound


def step_ratio(epsilon, b_noise, B, exact=False):
    """Steps at batch ``B`` worth one full-batch step.

    The default drops the ``1 - epsilon/2`` factors (small learning rate);
    ``exact=True`` keeps them.
    """
    if math.isinf(B):
        return 1.0
    if exact:
        denom = 1.0 - 0.5 * epsilon * (1.0 + b_noise / B)
        if denom <= 0:
            raise StallError(f"B={B} is at or below the stall bound {_stall_batch(epsilon, b_noise, True)}")
        return (1.0 - 0.5 * epsilon) / denom
    denom = 1.0 - 0.5 * epsilon * b_noise / B
    if denom <= 0:
        raise StallError(f"B={B} is at or below the stall bound {0.5 * epsilon * b_noise}")
    return 1.0 / denom


def stall_bound(cfg, s):
    """Largest batch size that stalls at full-batch time ``s``."""
    return _stall_batch(cfg.epsilon, noise_at(cfg.noise, s), cfg.exact_step_ratio)


def _check_reachable(cfg, B, s_min):
    worst = max(noise_at(cfg.noise, 0.0), noise_at(cfg.noise, s_min))
    bound = _stall_batch(cfg.epsilon, worst, cfg.exact_step_ratio)
    if not B > bound:
        raise StallError(f"batch size {B} stalls before the target (needs B > {bound})")


def steps_to_loss(cfg, B, target_loss):
    """Optimizer steps at constant batch ``B`` to reach ``target_loss``."""
    s_min = steps_for_loss(cfg.fullbatch_loss, target_loss)
    if math.isinf(B):
        return s_min
    _check_reachable(cfg, B, s_min)
    eps, exact, prof = cfg.epsilon, cfg.exact_step_ratio, cfg.noise

    def integrand(s):
        return step_ratio(eps, noise_at(prof, s), B, exact)

    return adaptive_simpson(integrand, 0.0, s_min, cfg.quad_rel_tol, cfg.max_subdivisions)


def data_to_loss(cfg, B, target_loss):
    return B * steps_to_loss(cfg, B, target_loss)


@dataclass(frozen=True)
class OracleResult:
    """Closed-form E(S) bundle for a constant noise scale."""

    epsilon: float
    b0: float
    s_min: float
    s_opt: float
    e_min: float
    b_min: float
    b_opt: float

    def es(self, S):
        S = np.asarray(S, dtype=float)
        if np.any(S <= self.s_min):
            raise DomainError("S must exceed s_min")
        out = self.b_min * S**2 / (S - self.s_min)
        return float(out) if out.ndim == 0 else out

    def steps(self, B):
        return self.s_min / (1.0 - self.b_min / B)

    def data(self, B):
        return B * self.steps(B)


def constant_noise_oracle(epsilon, b0, s_min):
    half = 0.5 * epsilon * b0
    return OracleResult(epsilon, b0, s_min, 2.0 * s_min, 2.0 * epsilon * b0 * s_min, half, epsilon * b0)


def _pseudo_time(cfg, B, steps):
    """Full-batch time reached after each entry of ``steps`` (sorted) at batch ``B``.

    Marches ``ds/dS = 1 / step_ratio(s)``, floored at zero so time stops at
    the stall point instead of running backwards.
    """
    steps = np.asarray(steps, dtype=float)
    if math.isinf(B):
        return steps.copy()
    eps, prof = cfg.epsilon, cfg.noise
    if cfg.exact_step_ratio:
        def rate(S, s):
            b = noise_at(prof, max(s[0], 0.0))
            return [max(1.0 - 0.5 * eps * (1.0 + b / B), 0.0) / (1.0 - 0.5 * eps)]
    else:
        def rate(S, s):
            b = noise_at(prof, max(s[0], 0.0))
            return [max(1.0 - 0.5 * eps * b / B, 0.0)]

    if prof.kind == "constant":
        return steps * rate(0.0, [0.0])[0]
    sol = solve_ivp(rate, (0.0, float(steps[-1])), [0.0], method="DOP853", t_eval=steps, rtol=1e-12, atol=1e-12)
    if not sol.success:
        raise RuntimeError(f"pseudo-time integration failed: {sol.message}")
    return np.maximum.accumulate(sol.y[0])


def loss_at_tokens(cfg, B, tokens):
    """Loss of a constant-batch run at batch ``B`` after ``tokens`` tokens."""
    tokens = np.asarray(tokens, dtype=float)
    s = _pseudo_time(cfg, B, tokens / B)
    if np.any(s <= 0):
        raise StallError(f"batch size {B} makes no progress from initialization")
    return loss_at(cfg.fullbatch_loss, s)


def simulate_run(cfg, B, max_steps, record_every=1, model_size=1.0, meta=None):
    """Loss trajectory at constant batch ``B`` for ``max_steps`` steps.

    A run that reaches its stall bound plateaus there.  A run that stalls at
    initialization has no finite loss and raises :class:`StallError`.
    """
    if B <= 0 or max_steps <= 0:
        raise ValueError("B and max_steps must be positive")
    steps = np.arange(record_every, max_steps + 1, record_every, dtype=np.int64)
    if steps.size == 0 or steps[-1] != max_steps:
        steps = np.append(steps, max_steps)
    losses = loss_at_tokens(cfg, B, steps * float(B))
    info = {"source": "simulate_run", "epsilon": cfg.epsilon, "noise": cfg.noise.to_dict()}
    info.update(meta or {})
    return TrainingRun(model_size, B, steps, steps * float(B), losses, info)


def es_dataset_from_dynamics(cfg, batch_sizes, target_loss):
    """E(S) dataset at ``target_loss`` computed directly by quadrature."""
    steps = [steps_to_loss(cfg, B, target_loss) for B in batch_sizes]
    return es_dataset_from_points(target_loss, batch_sizes, steps, [f"B={B:.17g}" for B in batch_sizes])


def tokens_to_reach(run, levels):
    """Tokens at which ``run`` first reaches each loss level.

    Interpolates log-tokens linearly in loss between records; levels above
    the first record map to the first record's tokens, levels below the last
    record map to ``inf``.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    loss = run.losses
    logt = np.log(run.tokens)
    k = np.searchsorted(-loss, -levels, side="left")
    out = np.full(levels.shape, np.inf)
    first = k == 0
    out[first] = run.tokens[0]
    mid = (k > 0) & (k < len(loss))
    km = k[mid]
    l_hi, l_lo = loss[km - 1], loss[km]
    frac = np.where(l_hi > l_lo, (l_hi - levels[mid]) / np.where(l_hi > l_lo, l_hi - l_lo, 1.0), 1.0)
    out[mid] = np.exp(logt[km - 1] + frac * (logt[km] - logt[km - 1]))
    return out


@dataclass(frozen=True)
class Crossing:
    loss: float
    tokens_a: float
    tokens_b: float


def find_crossing(run_a, run_b, n_levels=256, rtol=1e-9):
    """Largest loss where the smaller-batch run stops being more data-efficient.

    Scans ``n_levels`` geometric loss levels over the common loss range from
    high to low and returns the first level pair where ``E_A < E_B`` turns
    into ``E_A > E_B``, refined by linear interpolation of the log-token gap.
    Returns None when no inversion exists.
    """
    if not run_a.batch_size < run_b.batch_size:
        raise ValueError("run_a must use the smaller batch size")
    hi = min(run_a.losses.max(), run_b.losses.max())
    lo = max(run_a.losses.min(), run_b.losses.min())
    if not lo < hi:
        raise InsufficientOverlap(f"loss ranges do not intersect (common range [{lo}, {hi}])")
    levels = np.geomspace(hi, lo, n_levels)
    gap = np.log(tokens_to_reach(run_a, levels)) - np.log(tokens_to_reach(run_b, levels))
    seen_less = False
    for j, g in enumerate(gap):
        if g < -rtol:
            seen_less = True
        elif g > rtol and seen_less:
            g0, g1 = gap[j - 1], g
            t = min(max(g0 / (g0 - g1), 0.0), 1.0)
            loss = levels[j - 1] + t * (levels[j] - levels[j - 1])
            ta, tb = tokens_to_reach(run_a, loss)[0], tokens_to_reach(run_b, loss)[0]
            return Crossing(float(loss), float(ta), float(tb))
    return None
