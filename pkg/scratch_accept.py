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
    ergodicity_probe,
    pair_constraint_check,
)
from biphoton.scan import DiscriminatorConfig, run_discriminator

C = 299_792_458.0
geom, opt = SlitGeometry(), OpticalConfig()

t0 = time.perf_counter()
grid = GridSpec()
field0 = build_twoslit_field(geom, opt, grid)
evolution = ScaledFarField(field0, default_t_star(grid))
tau_final = evolution.tau_of(geom.screen_distance_m / C)
print(f"field+evolution {time.perf_counter()-t0:.1f}s tau_final={tau_final:.3e}")

t0 = time.perf_counter()
mirror = ensemble_run(evolution, 10_000, "mirror", seed=20260815,
                      t_final=tau_final, n_steps=400)
print(f"mirror ensemble {time.perf_counter()-t0:.1f}s exited={int(mirror.exited.sum())}")

# criterion 9 checks
t0 = time.perf_counter()
total = mirror.y1_m + mirror.y2_m
drift = np.max(np.abs(total - total[0]))
span = 2.0 * grid.half_span_m
crossings = 0
for i in range(mirror.n_traj):
    rep = pair_constraint_check(mirror.trajectory(i))
    crossings += int(rep.y1_sign_changed) + int(rep.y2_sign_changed)
print(f"crit9: drift={drift:.3e} ({drift/span:.2e} of span) crossings={crossings} "
      f"check={time.perf_counter()-t0:.1f}s")

# criterion 11 pieces
t0 = time.perf_counter()
erg = ergodicity_probe(mirror)
print(f"erg: space={erg.space_average} min_disc={erg.min_discrepancy} "
      f"all_unit={np.array_equal(np.abs(erg.time_averages), np.ones(mirror.n_traj))} "
      f"{time.perf_counter()-t0:.1f}s")

t0 = time.perf_counter()
cfg = DiscriminatorConfig(seed=20260815)
reports = run_discriminator(cfg, ensemble=mirror, evolution=evolution)
for r in reports:
    print(r.summary())
    print(f"   signif={r.significance:.1f} dbb={r.dbb_count} disc={r.discriminating}")
print(f"primary+control chains {time.perf_counter()-t0:.1f}s")

t0 = time.perf_counter()
cfg2 = DiscriminatorConfig(position_a_m=-0.117, position_b_m=-0.044, seed=20260816)
(sec,) = run_discriminator(cfg2, ensemble=mirror, evolution=evolution,
                           placements=("primary",))
print(sec.summary())
print(f"   signif={sec.significance:.1f} dbb={sec.dbb_count} disc={sec.discriminating}")
print(f"secondary chain {time.perf_counter()-t0:.1f}s")

# criterion 10: born ensemble + chi2 against |psi(tau_final)|^2
t0 = time.perf_counter()
born = ensemble_run(evolution, 10_000, "born", seed=20260817,
                    t_final=tau_final, n_steps=400)
print(f"born ensemble {time.perf_counter()-t0:.1f}s exited={int(born.exited.sum())}")

t0 = time.perf_counter()
field_T = evolution.field_at(tau_final)
dens = field_T.density()
dy = grid.dy
block = grid.n // 64  # 16 cells per histogram bin
p2d = dens.reshape(64, block, 64, block).sum(axis=(1, 3)) * dy * dy
p2d /= p2d.sum()
axis = grid.axis()
edges = np.concatenate([axis[::block] - 0.5 * dy, [axis[-1] + 0.5 * dy]])
obs, _, _ = np.histogram2d(born.y1_m[-1], born.y2_m[-1], bins=[edges, edges])
expected = born.n_traj * p2d
keep = expected >= 5.0
chi2 = float(np.sum((obs[keep] - expected[keep]) ** 2 / expected[keep]))
pool_exp = float(expected[~keep].sum())
pool_obs = float(obs[~keep].sum())
dof = int(keep.sum()) - 1
if pool_exp >= 5.0:
    chi2 += (pool_obs - pool_exp) ** 2 / pool_exp
    dof += 1
pval = stats.chi2.sf(chi2, dof)
print(f"crit10: kept_bins={int(keep.sum())} pool_exp={pool_exp:.1f} "
      f"chi2={chi2:.1f} dof={dof} p={pval:.4f} {time.perf_counter()-t0:.1f}s")
print(f"endpoints in grid: {np.max(np.abs(born.y1_m[-1]))/grid.half_span_m:.3f} "
      f"of half-span")
