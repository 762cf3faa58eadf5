"""Fit the generator on five storms, simulate a sixth and verify.

Runs in well under a minute on one core.
"""
import numpy as np

from tcprecip.core import FEATURE_NAMES
from tcprecip.model import FitConfig
from tcprecip.pipeline import fit_model, simulate_event, taper_stack
from tcprecip.synth import default_grid, make_storm_set
from tcprecip.verify import integrated_series, verification_report

grid = default_grid(30, 0.33)
storms = make_storm_set(6, grid, duration_h=36, seed=5)
train = [(s.precip, s.track) for s in storms[:5]]
held = storms[5]

cfg = FitConfig(n_trees=200, ensemble_size=30, seed=1)
model = fit_model(train, cfg)
print(f"{model.L} EOFs, variance explained {model.meta['variance_explained']:.3f}")
print("AR(1) coefficients of the PC residuals:", np.round([p.phi for p in model.ar], 2))
print(f"circular residual lag-1 coefficient {model.residual.phi_bar:.2f}")
print(f"gamma marginal shape {model.gamma.shape:.2f}, rate {model.gamma.rate:.2f}")

# which storm features drive the leading PC
imp = np.array(model.meta["importance"][0])
print("PC1 importance:", ", ".join(f"{n} {v / imp.sum():.2f}" for n, v in zip(FEATURE_NAMES, imp)))

ens = simulate_event(model, held.track, grid, seed=2, return_array=True)
obs = held.precip.values * taper_stack(held.track, grid, cfg)
rep = verification_report(ens, obs, grid, seed=3)
print(f"Brier {rep['brier_mean']:.3f} vs climatology {rep['brier_climatology']:.3f}")
print("rank histogram:", rep["rank_histogram"])

tot_obs = integrated_series(obs).sum()
tot_ens = np.array([integrated_series(e).sum() for e in ens])
print(f"event total: observed {tot_obs:.0f}, ensemble 5-95% "
      f"[{np.quantile(tot_ens, 0.05):.0f}, {np.quantile(tot_ens, 0.95):.0f}]")
