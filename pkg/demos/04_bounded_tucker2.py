"""Tucker-2 with an error bound instead of fixed ranks.

The solver keeps the fewest principal directions per channel mode whose
retained energy meets ||t||^2 - delta^2, alternating the two modes.  The
looser the bound, the smaller the model.
"""

import numpy as np

from convfactor import build_q1, build_q2, tucker2_bounded

rng = np.random.default_rng(3)

tensor = rng.standard_normal((9, 32, 24))
norm = np.linalg.norm(tensor)
print(f"tensor {tensor.shape}, ||t|| = {norm:.2f}\n")

print("delta/||t||   ranks      params   actual error")
for frac in (0.02, 0.05, 0.1, 0.2, 0.4):
    model = tucker2_bounded(tensor, frac * norm)
    err = np.linalg.norm(tensor - model.to_tensor()) / norm
    print(f"{frac:11.2f}   {str(model.ranks):8s}   {model.param_count():6d}"
          f"   {err:.4f}")

model = tucker2_bounded(tensor, 0.2 * norm)
bound = norm**2 - (0.2 * norm) ** 2
print(f"\nminimality at delta = 0.2||t|| (ranks {model.ranks}):")
for label, q, rank in (
    ("mode-1", build_q1(tensor, model.V), model.ranks[0]),
    ("mode-2", build_q2(tensor, model.U), model.ranks[1]),
):
    w = np.sort(np.linalg.eigvalsh(q))[::-1]
    kept = np.sum(w[:rank])
    dropped = np.sum(w[: rank - 1])
    print(f"  {label}: kept energy {kept:.2f} >= bound {bound:.2f} "
          f"> energy with one fewer vector {dropped:.2f}")
