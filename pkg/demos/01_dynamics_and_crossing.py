# %% [markdown]
# Constant-LR dynamics: steps and data to a target loss, stalls, and the
# loss-vs-tokens crossing that appears once the noise scale grows.

# %%
from stablebatch.dynamics import (
    NoiseProfile, SimConfig, constant_noise_oracle, data_to_loss,
    find_crossing, simulate_run, stall_bound, steps_to_loss,
)
from stablebatch.losslaw import PowerLawFit
from stablebatch.plotting import plot_loss_vs_tokens

fullbatch = PowerLawFit(2.0, 5.0, 0.3)
const = SimConfig(0.5, NoiseProfile("constant", b0=4.0), fullbatch)

# %% constant noise: quadrature vs closed form
target = fullbatch(100.0)   # S_min = 100
oracle = constant_noise_oracle(0.5, 4.0, 100.0)
for B in [1.5, 2, 4, 16, 256]:
    print(f"B={B:>6}  steps {steps_to_loss(const, B, target):9.3f} (closed {oracle.steps(B):9.3f})"
          f"  data {data_to_loss(const, B, target):10.2f}")
print("B_min, B_opt:", oracle.b_min, oracle.b_opt)

# %% growing noise: small batches stall, and lose their data advantage
lin = SimConfig(0.5, NoiseProfile("linear", b0=2.0, growth=0.08), fullbatch)
print("stall bound at s=0, 100:", stall_bound(lin, 0.0), stall_bound(lin, 100.0))

runs = [simulate_run(lin, B, 2000) for B in (2.0, 6.0)]
c = find_crossing(*runs)
print(f"B=2 stops being more data-efficient than B=6 at loss {c.loss:.5f} "
      f"({c.tokens_a:.1f} vs {c.tokens_b:.1f} tokens)")

# no inversion when the noise scale is fixed
print("constant-noise crossing:", find_crossing(simulate_run(const, 2.5, 2000), simulate_run(const, 8.0, 2000)))

# %%
plot_loss_vs_tokens(runs, [c], "out/figures/crossing.svg")
