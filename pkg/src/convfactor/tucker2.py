"""Bound-constrained Tucker-2 decomposition.

Model: ``t ~= G x_1 U x_2 V`` on the last two modes of an order-3 tensor
(the first mode is untouched), with orthonormal U (S x R1) and V (T x R2)
and core ``G = t x_1 U' x_2 V'``.  Rather than fixing ranks up front, the
solver finds the smallest ranks whose principal subspaces keep enough
energy to meet a Frobenius error bound, alternating eigendecompositions of
the two projected Gram matrices.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBoundError
from .tensorops import mode_product

__all__ = [
    "Tucker2Model",
    "tucker2_bounded",
    "build_q1",
    "build_q2",
    "minimal_rank_eigvecs",
    "core_closed_form",
]

_ORTHO_TOL = 1e-6


@dataclass
class Tucker2Model:
    """Tucker-2 model with core G (D2 x R1 x R2) and orthonormal U, V.

    ``history`` records one dict per eigendecomposition step of the
    bounded solver: kept ranks, kept energy, and squared error.
    """

    G: np.ndarray
    U: np.ndarray
    V: np.ndarray
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def ranks(self):
        return (self.U.shape[1], self.V.shape[1])

    @property
    def shape(self):
        return (self.G.shape[0], self.U.shape[0], self.V.shape[0])

    def param_count(self):
        """Model size R1*S + R2*T + R1*R2*D2 (the bound-search objective)."""
        r1, r2 = self.ranks
        d2, s, t = self.shape
        return r1 * s + r2 * t + r1 * r2 * d2

    def to_tensor(self):
        return mode_product(mode_product(self.G, self.U, 1), self.V, 2)


def _check_orthonormal(m, name):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if m.shape[1] == 0:
        return m
    gap = np.max(np.abs(m.T @ m - np.eye(m.shape[1])))
    if gap > _ORTHO_TOL:
        raise ValueError(f"{name} is not orthonormal (deviation {gap:.3g})")
    return m


def build_q1(tensor, v):
    """S x S Gram matrix of the mode-1 slices after projecting mode 2 on V.

    ``Q1[i, j] = sum_r <K(:, i, :) v_r, K(:, j, :) v_r>``; with a full
    orthonormal V, ``tr(Q1) = ||t||_F^2``.  Symmetrized as (Q + Q') / 2.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if v.ndim != 2 or v.shape[0] != tensor.shape[2]:
        raise ValueError(
            f"V shape {v.shape} does not match mode-2 extent {tensor.shape[2]}"
        )
    proj = np.einsum("dst,tr->dsr", tensor, v)
    q = np.einsum("dsr,dzr->sz", proj, proj)
    return (q + q.T) / 2


def build_q2(tensor, u):
    """T x T analogue of :func:`build_q1` with the roles of U and V swapped."""
    tensor = np.asarray(tensor, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if u.ndim != 2 or u.shape[0] != tensor.shape[1]:
        raise ValueError(
            f"U shape {u.shape} does not match mode-1 extent {tensor.shape[1]}"
        )
    proj = np.einsum("dst,sr->drt", tensor, u)
    q = np.einsum("drt,drz->tz", proj, proj)
    return (q + q.T) / 2


def _eigh_desc(q):
    w, vecs = np.linalg.eigh((q + q.T) / 2)
    return w[::-1], vecs[:, ::-1]


def minimal_rank_eigvecs(q, energy_bound, tie_tol=0.0):
    """Fewest principal eigenvectors of a PSD matrix holding an energy bound.

    Returns ``(basis, rank)`` where rank is the smallest R with
    ``sum of top-R eigenvalues >= energy_bound``; R = 0 when the bound is
    <= 0.  With ``tie_tol > 0``, eigenvalues tied with the cut (relative
    gap below tie_tol) are kept as a cluster to avoid basis ambiguity.
    """
    q = np.asarray(q, dtype=np.float64)
    w, vecs = _eigh_desc(q)
    w = np.maximum(w, 0.0)
    total = float(np.sum(w))
    slack = 1e-12 * max(total, 1.0)
    if energy_bound > total * (1 + 1e-10) + slack:
        raise InfeasibleBoundError(
            f"energy bound {energy_bound:.6g} exceeds tr(Q) = {total:.6g}",
            min_residual=total,
            bound=float(energy_bound),
        )
    if energy_bound <= 0:
        return np.zeros((q.shape[0], 0)), 0
    csum = np.cumsum(w)
    rank = int(np.searchsorted(csum, energy_bound - slack) + 1)
    rank = min(rank, len(w))
    if tie_tol > 0:
        lam_cut = w[rank - 1]
        while rank < len(w) and w[rank] >= lam_cut * (1 - tie_tol) and w[rank] > 0:
            rank += 1
    return np.ascontiguousarray(vecs[:, :rank]), rank


def core_closed_form(tensor, u, v):
    """Optimal core for given orthonormal factors: ``G = t x_1 U' x_2 V'``.

    Orthonormality makes the error Pythagorean:
    ``||t - G x U x V||^2 = ||t||^2 - ||G||^2``.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    u = _check_orthonormal(u, "U")
    v = _check_orthonormal(v, "V")
    return mode_product(mode_product(tensor, u.T, 1), v.T, 2)


def tucker2_bounded(tensor, delta, ranks=None, max_alternations=2, tie_tol=1e-12):
    """Smallest Tucker-2 model meeting a Frobenius error bound.

    Alternates a U-step and a V-step; each step keeps the minimal number
    of principal eigenvectors of the projected Gram matrix whose energy
    reaches ``||t||^2 - delta^2``, so the reconstruction error stays within
    `delta` after every step.  The first U-step uses the identity-complete
    V.  With ``ranks=(R1, R2)`` the ranks are fixed instead and each step
    keeps exactly the top eigenvectors (plain orthogonal iteration).

    Returns a :class:`Tucker2Model`; ``model.history`` holds per-step
    records ``{"step", "ranks", "energy", "sq_error"}``.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    d2, s, t = tensor.shape
    norm2 = float(np.sum(tensor**2))
    bound = norm2 - delta**2

    fixed = ranks is not None
    if fixed:
        r1_fix, r2_fix = int(ranks[0]), int(ranks[1])
        if not (0 < r1_fix <= s and 0 < r2_fix <= t):
            raise ValueError(f"fixed ranks {ranks} out of range for shape {tensor.shape}")

    history = []

    def step(q, r_fix, label, other_rank):
        if fixed:
            w, vecs = _eigh_desc(q)
            basis = np.ascontiguousarray(vecs[:, :r_fix])
            energy = float(np.sum(np.maximum(w[:r_fix], 0.0)))
        else:
            basis, _ = minimal_rank_eigvecs(q, bound, tie_tol=tie_tol)
            energy = float(np.trace(basis.T @ q @ basis))
        history.append(
            {
                "step": label,
                "ranks": (basis.shape[1], other_rank)
                if label == "U"
                else (other_rank, basis.shape[1]),
                "energy": energy,
                "sq_error": max(norm2 - energy, 0.0),
            }
        )
        return basis

    if fixed:
        v = step(build_q2(tensor, np.eye(s)), r2_fix, "V", s)
    else:
        v = np.eye(t)  # identity-complete start for the first U-step
    u = None

    for _ in range(max_alternations):
        prev = (u.shape[1] if u is not None else None, v.shape[1])
        u = step(build_q1(tensor, v), r1_fix if fixed else None, "U", v.shape[1])
        v = step(build_q2(tensor, u), r2_fix if fixed else None, "V", u.shape[1])
        if prev == (u.shape[1], v.shape[1]) and len(history) >= 4:
            if abs(history[-1]["energy"] - history[-3]["energy"]) <= 1e-12 * max(
                norm2, 1.0
            ):
                break

    g = core_closed_form(tensor, u, v)
    return Tucker2Model(g, u, v, history=history)
