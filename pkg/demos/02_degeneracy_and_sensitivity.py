"""Degeneracy diagnostics: intensity and sensitivity.

CP models fitted to hard tensors often develop pairs of huge rank-1
components that nearly cancel.  Two scalars quantify the damage:

* intensity  sn = sum of squared component norms,
* sensitivity ss = expected squared reconstruction change per unit of
  i.i.d. Gaussian noise on the factor entries.

The closed-form sensitivity is checked here against its defining
Monte-Carlo expectation.
"""

import numpy as np

from convfactor import CPModel, intensity, monte_carlo_sensitivity, sensitivity

rng = np.random.default_rng(1)

dims = (9, 8, 7)
vecs = [rng.standard_normal(n) for n in dims]
vecs = [v / np.linalg.norm(v) for v in vecs]
a, b, c = vecs

healthy = CPModel(a[:, None], b[:, None], c[:, None])
print("healthy rank-1 model (unit norms):")
print(f"  intensity   = {intensity(healthy):.4f}")
print(f"  sensitivity = {sensitivity(healthy):.4f}  (= I+J+K = {sum(dims)})\n")

# two canceling components, each ~100x the data norm
eps = 0.005
degenerate = CPModel(
    np.stack([(1 + eps) / (2 * eps) * a, -(1 - eps) / (2 * eps) * a], axis=1),
    np.stack([b, b], axis=1),
    np.stack([c, c], axis=1),
)
print("canceling pair representing the same rank-1 tensor:")
print(f"  reconstruction gap  = "
      f"{np.linalg.norm(degenerate.to_tensor() - healthy.to_tensor()):.2e}")
print(f"  intensity   = {intensity(degenerate):.4e}")
print(f"  sensitivity = {sensitivity(degenerate):.4e}\n")

print("sensitivity closed form vs Monte-Carlo estimate of the definition:")
for seed in range(3):
    r = np.random.default_rng(seed)
    m = CPModel(
        r.standard_normal((6, 3)), r.standard_normal((7, 3)), r.standard_normal((5, 3))
    )
    mc = monte_carlo_sensitivity(m, sigma=1e-4, n_samples=2000, seed=seed)
    cf = sensitivity(m)
    print(f"  model {seed}: closed {cf:10.2f}   sampled {mc:10.2f}   "
          f"rel gap {abs(mc - cf) / cf:.3%}")
