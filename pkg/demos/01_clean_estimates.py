# Clean-latent extrapolation on an analytic rectified flow.
#
# For a point-mass target the velocity field is (x - mu)/t, so x - t*v lands
# on mu from anywhere on the trajectory. For a two-mode mixture the estimate
# starts at the posterior mean between the modes and commits as t -> 0.
import numpy as np

from artifact_guidance import MixtureSpec, MixtureVelocity, clean_estimate_flow, make_time_grid

point = MixtureSpec([1.0], [[1.0, -0.5]], [0.0])
field = MixtureVelocity(point)
x = np.array([0.3, 2.0])
for t in (1.0, 0.5, 0.1):
    print(f"point mass, t={t:.1f}: x0_hat =", clean_estimate_flow(x, field(x, t), t))

two_mode = MixtureSpec([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [0.5, 0.5])
field = MixtureVelocity(two_mode)
grid = make_time_grid(10)
x = np.array([0.4, -0.3])
print("\ntwo-mode trajectory (t, x_t, x0_hat):")
for i in range(grid.N):
    t = grid.times[i]
    v = field(x, t)
    print(f"  t={t:.1f}  x_t={np.round(x, 3)}  x0_hat={np.round(clean_estimate_flow(x, v, t), 3)}")
    x = x - grid.dt(i) * v
print("final sample:", np.round(x, 3))
