import time
import numpy as np
from peda.grid import Grid, StateField, inner
from peda.dynamics import (ModelConfig, PhysParams, Forcing, integrate,
                           Trajectory, kinetic_energy, cfl_check)

t0 = time.time()
g = Grid(32, 32, 9, 1.0)
ph = PhysParams(alpha=1.0, beta=0.5, gamma=0.5, nu=0.005)
cfg = ModelConfig(g, ph, dt=0.02, forcing=Forcing.wind(g, 0.5))
X = StateField.zeros(g)
for stage in range(8):
    X = integrate(X, cfg, 500)
    un = np.sqrt(inner(g, X.u, X.u))
    vn = np.sqrt(inner(g, X.v, X.v))
    print(f"after {(stage+1)*500} steps (T={(stage+1)*10}): KE {kinetic_energy(X):.3f} "
          f"|u|2 {un:.3f} |v|2 {vn:.3f} v/u {vn/un:.2f} cfl {cfl_check(X, cfg):.4f}",
          flush=True)
# time variability of v over a 200-step window after 2500 steps
X = StateField.zeros(g)
X = integrate(X, cfg, 2500)
traj = Trajectory()
integrate(X, cfg, 200, recorder=traj)
vns = [np.sqrt(inner(g, s.v, s.v)) for s in traj.states[::20]]
uns = [np.sqrt(inner(g, s.u, s.u)) for s in traj.states[::20]]
print("window |v|2 series:", " ".join("%.3f" % v for v in vns))
print("window |u|2 series:", " ".join("%.3f" % u for u in uns))
print("elapsed", time.time() - t0)
