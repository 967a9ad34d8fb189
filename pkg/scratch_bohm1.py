import numpy as np, math, time, sys
sys.path.insert(0, "src")
from biphoton.bohm import (
    HBAR, GridSpec, WaveField2P, build_twoslit_field, gaussian_packet_field,
    gaussian_sigma, propagate, quantum_potential, velocity_field,
    quantum_force, FreeEvolution, integrate_trajectory, effective_mass,
    _laplacian4, _gradient4, _project_pair_symmetry, _negate_indices,
)
from biphoton.optics import OpticalConfig, SlitGeometry

opt = OpticalConfig()
m = effective_mass(opt)
print(f"effective mass {m:.4e} kg-equivalent")

# ---- Laplacian convergence: smooth periodic field, h = 1e-3 of feature scale
n1, q = 31416, 5
span = 1.0
h = span / n1
k = 2 * np.pi * q / span          # feature scale 1/k, h*k = 1.0e-3
yy1 = np.arange(n1) * h
f = np.sin(k * yy1)[:, None] * np.ones((1, 4))
lap_num = _laplacian4(f, h)
lap_ref = -(k**2) * f
err = np.max(np.abs(lap_num - lap_ref)) / np.max(np.abs(lap_ref))
print(f"laplacian rel err {err:.2e} at h = {h*k:.2e} of feature scale")
assert err < 1e-6

# ---- Q on Gaussian product: closed form ----
grid = GridSpec(n=512, half_span_m=500e-6)
sig = 60e-6
fld = gaussian_packet_field(grid, sig, 0.0, m)
qp = quantum_potential(fld)
yy = grid.axis()
q1 = -(HBAR**2 / (2 * m)) * (yy**2 / (4 * sig**4) - 1.0 / (2 * sig**2))
q_ref = np.add.outer(q1, q1)
ok = ~qp.mask
scale = np.abs(q_ref[ok]).max()
rel = np.abs(qp.values[ok] - q_ref[ok]) / np.maximum(np.abs(q_ref[ok]), 1e-3 * scale)
print(f"Q rel err max {rel.max():.2e}")
assert rel.max() < 1e-4

# ---- v on evolved Gaussian: closed form v = y*beta*(hbar/2m sig0^2)/(1+beta^2) ----
sig_v = 40e-6
t = 1.0 * (2 * m * sig_v**2 / HBAR)   # beta = 1; border stays below the floor
beta = HBAR * t / (2 * m * sig_v**2)
fld_t = gaussian_packet_field(grid, sig_v, t, m)
v1, v2, mask = velocity_field(fld_t)
vref1 = yy * beta * (HBAR / (2 * m * sig_v**2)) / (1 + beta**2)
v_ref = np.broadcast_to(vref1[:, None], v1.shape)
ok = ~mask
vscale = np.abs(v_ref[ok]).max()
relv = np.abs(v1[ok] - v_ref[ok]) / np.maximum(np.abs(v_ref[ok]), 1e-3 * vscale)
print(f"v rel err max {relv.max():.2e}")
assert relv.max() < 1e-4

# ---- propagate: width growth + norm ----
fld0 = gaussian_packet_field(grid, sig, 0.0, m)
T = 3.0 * (2 * m * sig**2 / HBAR) / 2
out = propagate(fld0, T / 1000, 1000)
dens = out.density()
marg = dens.sum(axis=1)
marg /= marg.sum() * grid.dy
sig_meas = math.sqrt(float(np.sum(marg * yy**2) * grid.dy))
sig_pred = gaussian_sigma(sig, T, m)
print(f"sigma measured {sig_meas*1e6:.3f} um predicted {sig_pred*1e6:.3f} um")
assert abs(sig_meas - sig_pred) / sig_pred < 1e-4
assert abs(out.norm() - 1.0) < 1e-9
assert propagate(fld0, 1.0, 0) is fld0

# ---- free-Gaussian trajectory: y(t) = y0 sigma(t)/sigma0 ----
ev = FreeEvolution(fld0)
t_final = T
y0 = (40e-6, -25e-6)
tr = integrate_trajectory(ev, y0, t_final / 300, t_final, record_every=10)
scalef = gaussian_sigma(sig, tr.times_s, m) / sig
err1 = np.abs(tr.y1_m - y0[0] * scalef) / (np.abs(y0[0]) * scalef)
err2 = np.abs(tr.y2_m - y0[1] * scalef) / (np.abs(y0[1]) * scalef)
print(f"trajectory rel err {max(err1.max(), err2.max()):.2e}, exited={tr.exited}")
assert not tr.exited
assert max(err1.max(), err2.max()) < 1e-3

# dt convergence: halve dt -> endpoint change < 1e-4 relative
tr2 = integrate_trajectory(ev, y0, t_final / 600, t_final, record_every=20)
de = abs(tr2.y1_m[-1] - tr.y1_m[-1]) / abs(tr.y1_m[-1])
print(f"dt halving endpoint change {de:.2e}")
assert de < 1e-4

# ---- second-order consistency: acceleration vs -grad Q / m (5%) ----
# sample acceleration along the Gaussian trajectory via finite differences
tt = tr.times_s
a_num = np.gradient(np.gradient(tr.y1_m, tt), tt)
sig_t = gaussian_sigma(sig, tt, m)
a_ref = HBAR**2 * tr.y1_m / (4 * m**2 * sig_t**4)  # -dQ/dy/m for Gaussian
sel = slice(2, -2)
rel_a = np.abs(a_num[sel] - a_ref[sel]) / np.abs(a_ref[sel]).max()
print(f"second-order consistency rel err {rel_a.max():.2e}")
assert rel_a.max() < 0.05

# ---- symmetry projection exactness ----
rng = np.random.default_rng(0)
A = rng.normal(size=(64, 64)); B = rng.normal(size=(64, 64))
P1, P2 = _project_pair_symmetry(A, B)
assert np.array_equal(P1, -_negate_indices(P1))
assert np.array_equal(P1.T, P2)
print("symmetry projection exact")

print("STAGE 1 PASSED")
