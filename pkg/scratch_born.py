import time

import numpy as np
from scipy import stats

from biphoton import OpticalConfig, SlitGeometry
from biphoton.bohm import (
    GridSpec,
    ScaledFarField,
    build_twoslit_field,
    default_t_star,
    ensemble_run,
)

C = 299_792_458.0
geom, opt = SlitGeometry(), OpticalConfig()
grid = GridSpec()
field0 = build_twoslit_field(geom, opt, grid)
evolution = ScaledFarField(field0, default_t_star(grid))
tau_final = evolution.tau_of(geom.screen_distance_m / C)

field_T = evolution.field_at(tau_final)
dens = field_T.density()
dy = grid.dy
block = grid.n // 64
p2d = dens.reshape(64, block, 64, block).sum(axis=(1, 3)) * dy * dy
p2d /= p2d.sum()
axis = grid.axis()
edges = np.concatenate([axis[::block] - 0.5 * dy, [axis[-1] + 0.5 * dy]])


def pval(born):
    obs, _, _ = np.histogram2d(born.y1_m[-1], born.y2_m[-1], bins=[edges, edges])
    expected = born.n_traj * p2d
    keep = expected >= 5.0
    chi2 = float(np.sum((obs[keep] - expected[keep]) ** 2 / expected[keep]))
    dof = int(keep.sum()) - 1
    pool_exp = float(expected[~keep].sum())
    if pool_exp >= 5.0:
        chi2 += (float(obs[~keep].sum()) - pool_exp) ** 2 / pool_exp
        dof += 1
    return chi2, dof, stats.chi2.sf(chi2, dof)


for seed, n_steps in ((20260817, 800), (7, 400), (99, 400)):
    t0 = time.perf_counter()
    born = ensemble_run(evolution, 10_000, "born", seed=seed,
                        t_final=tau_final, n_steps=n_steps)
    chi2, dof, p = pval(born)
    print(f"seed={seed} n_steps={n_steps}: chi2={chi2:.1f} dof={dof} p={p:.4f} "
          f"({time.perf_counter()-t0:.0f}s)", flush=True)
