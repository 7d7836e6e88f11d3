"""Shared test helpers: synthetic tensors and degenerate CP starts."""

import numpy as np

from convfactor import CPModel, mode_product, reconstruct_cp


def random_cp_tensor(rng, dims, rank):
    """Tensor with an exact rank-`rank` CP structure, plus its factors."""
    a = rng.standard_normal((dims[0], rank))
    b = rng.standard_normal((dims[1], rank))
    c = rng.standard_normal((dims[2], rank))
    return reconstruct_cp(a, b, c), (a, b, c)


def random_tucker2_tensor(rng, dims, ranks):
    """Tensor with exact multilinear ranks on modes 1 and 2."""
    d2, s, t = dims
    r1, r2 = ranks
    core = rng.standard_normal((d2, r1, r2))
    u, _ = np.linalg.qr(rng.standard_normal((s, r1)))
    v, _ = np.linalg.qr(rng.standard_normal((t, r2)))
    return mode_product(mode_product(core, u, 1), v, 2), (core, u, v)


def hybrid_structured_tensor(rng, dims, ml_ranks, cp_rank, noise=0.0):
    """Tensor that is exactly Tucker-2 with a CP core, plus optional noise."""
    d2, s, t = dims
    r1, r2 = ml_ranks
    core = reconstruct_cp(
        rng.standard_normal((d2, cp_rank)),
        rng.standard_normal((r1, cp_rank)),
        rng.standard_normal((r2, cp_rank)),
    )
    u, _ = np.linalg.qr(rng.standard_normal((s, r1)))
    v, _ = np.linalg.qr(rng.standard_normal((t, r2)))
    tensor = mode_product(mode_product(core, u, 1), v, 2)
    if noise:
        bump = rng.standard_normal(dims)
        tensor = tensor + noise * np.linalg.norm(tensor) * bump / np.linalg.norm(bump)
    return tensor


def degenerate_pair(rng, dims, scale=100.0, noise=0.01):
    """Rank-1-plus-noise tensor and a two-component canceling start.

    The start reconstructs the rank-1 part exactly while its two component
    intensities are about `scale` times the data norm, mimicking diverging
    ALS solutions.
    """
    vecs = [rng.standard_normal(n) for n in dims]
    vecs = [v / np.linalg.norm(v) for v in vecs]
    a, b, c = vecs
    n = rng.standard_normal(dims)
    n /= np.linalg.norm(n)
    tensor = np.einsum("i,j,k->ijk", a, b, c) + noise * n
    eps = 1.0 / (2.0 * scale)
    model = CPModel(
        np.stack([(1 + eps) / (2 * eps) * a, -(1 - eps) / (2 * eps) * a], axis=1),
        np.stack([b, b], axis=1),
        np.stack([c, c], axis=1),
    )
    return tensor, model
