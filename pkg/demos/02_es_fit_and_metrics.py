# %% [markdown]
# Fit the piecewise E(S) curve at several target losses and read off
# B_min (asymptotic slope) and B_opt (chord to the minimum).

# %%
import numpy as np

from stablebatch.dynamics import NoiseProfile, SimConfig, es_dataset_from_dynamics, stall_bound
from stablebatch.esfit import FreeParams, constraint_residuals, eval_es, extract_metrics, fit_es, from_free_params, metrics_trend
from stablebatch.losslaw import PowerLawFit, es_dataset_from_points, steps_for_loss
from stablebatch.plotting import plot_es_fits, plot_metrics_trend

# %% a hand-built curve: vertex at (200, 400), asymptotic slope 8
p = from_free_params(FreeParams(s_min=100, s_1=150, s_opt=200, s_2=300, c=0.04, e_min=400))
print(p)
print("E(125), E(200), E(400):", eval_es(p, [125.0, 200.0, 400.0]))
print("matching residuals:", constraint_residuals(p))

# recover it from 32 noiseless samples
S = np.geomspace(102, 3000, 32)
fit = fit_es(es_dataset_from_points(3.0, eval_es(p, S) / S, S))
print("recovered:", np.round(fit.free.as_array(), 6))

# %% metrics as the loss target moves, linear noise
cfg = SimConfig(0.5, NoiseProfile("linear", b0=2.0, growth=0.08), PowerLawFit(2.0, 5.0, 0.3))
datasets, models, metrics = [], [], []
for L in np.linspace(3.3, 2.8, 6):
    b_min = stall_bound(cfg, steps_for_loss(cfg.fullbatch_loss, L))
    ds = es_dataset_from_dynamics(cfg, b_min * (1 + np.geomspace(1e-4, 100, 24)), L)
    m_fit = fit_es(ds)
    datasets.append(ds)
    models.append(m_fit)
    metrics.append(extract_metrics(m_fit, L))

trend = metrics_trend(metrics, l0=2.0)
for L, a, b in zip(trend.target_losses, trend.b_min, trend.b_opt):
    print(f"loss {L:.2f}  B_min {a:7.3f}  B_opt {b:7.3f}")
print("monotone:", trend.b_min_monotone, trend.b_opt_monotone)

# %%
plot_es_fits(datasets, models, "out/figures/es_fits.svg")
plot_metrics_trend(metrics, "out/figures/bmin_bopt.svg")
