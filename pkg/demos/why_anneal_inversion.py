"""Why the inversion has a cosine step-size option.

The residual is a sum of absolute values, whose gradient has constant
magnitude right up to the minimum. Adam with a fixed step therefore never
settles: it keeps circling the solution at a radius that scales with the
step size. On a generator with a known inverse, G(z) = a*z + b, this is easy
to see. Annealing the step to zero over the budget lets the last iterates
close in.

    python3 demos/why_anneal_inversion.py
"""

import numpy as np

from foregan import diffcore as dc
from foregan.inversion import InversionConfig, invert


class Linear:
    def __init__(self, a, b):
        self.a, self.b = a.astype(np.float32), b.astype(np.float32)
        self.latent_dim = a.size

    def generator(self, z):
        z = z if isinstance(z, dc.Tensor) else dc.Tensor(np.asarray(z, np.float32))
        return (z * self.a + self.b).reshape(-1, 1, 1, self.latent_dim)


rng = np.random.default_rng(0)
d = 32
a = rng.uniform(0.5, 2, d) * rng.choice([-1, 1], d)
b = rng.uniform(-0.5, 0.5, d)
g = Linear(a, b)
z_true = rng.uniform(-1, 1, d).astype(np.float32)
x = g.generator(z_true[None]).data[0]

print("schedule   lr     worst |z - z*|   final loss   best loss")
for schedule in ("constant", "cosine"):
    for lr in (0.01, 0.003):
        r = invert(g, x, InversionConfig(steps=500, lr=lr, lr_schedule=schedule))
        err = np.abs(r.best_z - z_true).max()
        print(f"{schedule:9s} {lr:6.3f}   {err:12.2e}   {r.trajectory[-1]:10.4f}   {r.best_loss:9.4f}")

# At lr 0.01 a fixed step stalls a few thousandths from the solution, while
# the cosine schedule gets within 1e-5 on the same budget. Shrinking the fixed
# step instead does not help: at lr 0.003 the iterate runs out of steps long
# before it reaches the solution.
