"""Hybrid pipeline: Tucker-2 compression followed by CPD+EPC of the core.

The error budget splits between the two stages in the energy domain:
the Tucker stage consumes ``sqrt(theta) * delta_total`` and the core CPD
gets whatever the Tucker stage left over.  Because U and V are orthonormal
the two stage errors add Pythagorean-style, so the total error stays
within ``delta_total``.
"""

from dataclasses import dataclass

import numpy as np

from .cpd import AlsOptions, CPModel, cpd_als
from .epc import EpcOptions, epc_correct
from .errors import InfeasibleBoundError
from .tucker2 import tucker2_bounded

__all__ = ["HybridModel", "tkd_cpd_epc", "should_merge", "to_equivalent_cp"]


@dataclass
class HybridModel:
    """Tucker-2 factors wrapping a CP model of the core."""

    U: np.ndarray
    V: np.ndarray
    core_cp: CPModel

    @property
    def ranks(self):
        """(R1, R2, R): multilinear ranks and the core CP rank."""
        return (self.U.shape[1], self.V.shape[1], self.core_cp.rank)

    @property
    def shape(self):
        return (self.core_cp.shape[0], self.U.shape[0], self.V.shape[0])

    def param_count(self):
        """Weight count of the 5-layer factorized form."""
        r1, r2, r = self.ranks
        d2, s, t = self.shape
        return r1 * s + r2 * t + r * (d2 + r1 + r2)

    def to_tensor(self):
        from .tensorops import mode_product

        g = self.core_cp.to_tensor()
        return mode_product(mode_product(g, self.U, 1), self.V, 2)


def _exact_core_model(core, rank):
    """Exact CP model of a core tensor from its mode-0 slices.

    Component (p, q) is ``core[:, p, q] o e_p o e_q``; needs
    ``rank >= R1 * R2``.  Extra components are zero columns.
    """
    d2, r1, r2 = core.shape
    a = np.zeros((d2, rank))
    b = np.zeros((r1, rank))
    c = np.zeros((r2, rank))
    idx = 0
    for q in range(r2):
        for p in range(r1):
            a[:, idx] = core[:, p, q]
            b[p, idx] = 1.0
            c[q, idx] = 1.0
            idx += 1
    return CPModel(a, b, c)


def tkd_cpd_epc(tensor, delta_total, rank, theta=0.5, ranks=None, als_opts=None,
                epc_opts=None):
    """Decompose an order-3 kernel tensor as Tucker-2 around a CP core.

    Parameters
    ----------
    tensor : ndarray (D2, S, T)
    delta_total : float
        Absolute Frobenius error budget for the whole model.
    rank : int
        CP rank of the core.
    theta : float
        Fraction of the squared budget given to the Tucker stage.
    ranks : (R1, R2), optional
        Fix the multilinear ranks instead of deriving them from the bound.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    norm_t = np.linalg.norm(tensor)
    if not 0 <= delta_total <= norm_t * (1 + 1e-12) + 1e-300:
        raise ValueError(f"delta_total must lie in [0, ||t||] = [0, {norm_t:.6g}]")
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")

    delta_tkd = np.sqrt(theta) * delta_total
    tkd = tucker2_bounded(tensor, delta_tkd, ranks=ranks)
    err_tkd2 = max(float(np.sum(tensor**2) - np.sum(tkd.G**2)), 0.0)
    if err_tkd2 > delta_total**2 * (1 + 1e-9) + 1e-12 * norm_t**2:
        raise InfeasibleBoundError(
            "the Tucker stage alone already exceeds the total budget; "
            "increase theta or use fixed larger multilinear ranks",
            min_residual=err_tkd2,
            bound=delta_total**2,
        )
    delta_core = float(np.sqrt(max(delta_total**2 - err_tkd2, 0.0)))

    core = tkd.G
    norm_core = np.linalg.norm(core)
    r1, r2 = tkd.ranks
    if als_opts is None:
        als_opts = AlsOptions(restarts=3, max_iters=1000, tol=1e-12, init="mixed")
    res = cpd_als(core, rank, als_opts)
    err_core = res.rel_error * norm_core
    slack = 1e-9 * max(norm_core, 1.0)
    model = res.model
    if err_core > delta_core + slack:
        if rank >= r1 * r2:
            model = _exact_core_model(core, rank)
        else:
            raise InfeasibleBoundError(
                f"CP rank {rank} cannot meet the core budget "
                f"{delta_core:.6g} (reached {err_core:.6g}); raise the rank "
                f"or give the Tucker stage a smaller share (theta)",
                min_residual=err_core**2,
                bound=delta_core**2,
            )

    if epc_opts is None:
        epc_opts = EpcOptions(delta=delta_core)
    corrected, _ = epc_correct(core, model, epc_opts)
    return HybridModel(tkd.U, tkd.V, corrected)


def should_merge(ranks):
    """True when the CP rank is below both multilinear ranks.

    In that case the back-to-back 1x1 convolutions of the 5-layer hybrid
    block can be merged, so the plain 3-layer CP block is smaller.
    """
    r1, r2, r = ranks
    if min(r1, r2, r) < 1:
        raise ValueError("ranks must be positive")
    return r < r1 and r < r2


def to_equivalent_cp(model):
    """Absorb the Tucker factors into the core CP factors.

    Returns a CP model of the full tensor with ``B' = U @ B`` and
    ``C' = V @ C``; orthonormality of U and V preserves column norms, so
    normalized weights stay valid and the reconstruction is identical.
    """
    core = model.core_cp
    return CPModel(core.A, model.U @ core.B, model.V @ core.C, core.lam)
