import time
import numpy as np
from peda.twin import TwinConfig, run_twin
from peda.dynamics import PhysParams

cases = [
    ("Y1 sv.5", dict(sigma_v=0.5)),
    ("Y2 sv.33", dict(sigma_v=0.33)),
    ("Y3 a.5", dict(phys=PhysParams(alpha=0.5, beta=0.5, gamma=0.5, nu=0.005))),
    ("Y4 a.5 sv.5", dict(sigma_v=0.5,
                         phys=PhysParams(alpha=0.5, beta=0.5, gamma=0.5, nu=0.005))),
    ("Y5 a.5 sv.33 15in", dict(sigma_v=0.33, inner_iters=15,
                         phys=PhysParams(alpha=0.5, beta=0.5, gamma=0.5, nu=0.005))),
]

for label, kw in cases:
    t0 = time.time()
    base = dict(nx=32, ny=32, nz=9, tau0=0.5, spinup_steps=2500,
                phys=PhysParams(alpha=1.0, beta=0.5, gamma=0.5, nu=0.005),
                dt=0.02, z0=0.7, window_steps=200, floats=50, obs_count=10,
                noise_sd=1e-3, background_norm="u", sigma_mode="const",
                sigma_u=1.0, sigma_v=1.0, sigma_theta=1.0, omega=0.01,
                freeze_theta=True, outer_loops=3, inner_iters=10, seed=1234)
    base.update(kw)
    cfg = TwinConfig(**base)
    try:
        res = run_twin(cfg)
        w = res.last
        print(f"{label}: Jo {w.Jo_initial:.1f}->{w.Jo_final:.3f} "
              f"({w.Jo_final/w.Jo_initial:.3f}) | "
              f"Eu(T) bg {w.errors_bg.e_u[-1]:.3f} an {w.errors_an.e_u[-1]:.3f} "
              f"r={w.errors_an.e_u[-1]/w.errors_bg.e_u[-1]:.2f} | "
              f"Ev(T) bg {w.errors_bg.e_v[-1]:.3f} an {w.errors_an.e_v[-1]:.3f} "
              f"r={w.errors_an.e_v[-1]/w.errors_bg.e_v[-1]:.2f} | "
              f"Eu(0) {w.errors_an.e_u[0]:.3f} Ev(0) {w.errors_an.e_v[0]:.3f} | "
              f"{time.time()-t0:.0f}s", flush=True)
    except Exception as e:
        print(f"{label}: FAILED {type(e).__name__}: {e}", flush=True)
