# %% [markdown]
# Turn an optimal-batch curve into a switch-every-D batch schedule.

# %%
from stablebatch.scheduler import (
    BoptCurve, compare_to_reference, deepseek_bopt, make_schedule, mccandlish_lr, surge_lr,
)
from stablebatch.plotting import plot_schedule

M = 2**20
D = 125e9

def linear(d):
    return 2 * M + d / D * M

for mode in ("anchored", "paper_literal"):
    s = make_schedule(linear, D, [0, 0, 0, 0], init_mode=mode)
    print(mode, [b / M for b in s.batches])

# momentum on the first switch doubles that increment
print("alpha=(1,0,0,0):", [b / M for b in make_schedule(linear, D, [1, 0, 0, 0]).batches])

# %% knot-based curve, rounded to 64Ki tokens
curve = BoptCurve(1e9, [1e9, 1e10, 1e11, 4e11], [1.5 * M, 2.5 * M, 4 * M, 5 * M], extrapolation=0.2)
sched = make_schedule(curve, D, [0, 0, 0, 0], quantum=65536)
print(sched.table())
for row in compare_to_reference(sched)["rows"]:
    print(row)
plot_schedule(sched, "out/figures/schedule.svg")

# %% reference calculators
print("deepseek_bopt(1e20):", deepseek_bopt(1e20))
for B in (0.25, 1, 4):
    print(B, mccandlish_lr(6e-4, 1.0, B), surge_lr(6e-4, 1.0, B))
