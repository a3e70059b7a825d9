# %% [markdown]
# On a simulated (B, D) loss surface, the batch that minimizes loss at a
# fixed data budget also minimizes the data needed to reach that loss.

# %%
from stablebatch.dynamics import NoiseProfile, SimConfig
from stablebatch.errors import MonotonicityViolation
from stablebatch.losslaw import PowerLawFit
from stablebatch.pipeline import default_verify_grid, simulated_surface
from stablebatch.scheduler import verify_equivalence

cfg = SimConfig(0.5, NoiseProfile("power", b0=2.0, growth=0.5, scale_ref=10.0), PowerLawFit(2.0, 5.0, 0.3))
b, d = default_verify_grid(cfg, 1e4)
L = simulated_surface(cfg, b, d)
rep = verify_equivalence(b, d, L)
print("passed:", rep.passed)
for row in rep.rows[::6]:
    print({k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()})

# %% a surface that is not decreasing in D is rejected outright
L[2, 7] = L[2, 6] + 0.05
try:
    verify_equivalence(b, d, L)
except MonotonicityViolation as exc:
    print("rejected:", exc)
