"""Dense tensor primitives: unfolding, Khatri-Rao, Kruskal and Tucker algebra.

Tensors are plain numpy arrays in C (row-major) memory order.  Unfoldings
follow the first-remaining-mode-fastest convention, so that the mode-1
unfolding of a Kruskal tensor ``[[A, B, C]]`` equals ``A @ khatri_rao(C, B).T``.
All decomposition work is done in float64; float32 is accepted at the
boundaries and promoted.
"""

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "khatri_rao",
    "reconstruct_cp",
    "mode_product",
    "reshape_kernel",
    "restore_kernel",
]


def _as_f64(a):
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a, dtype=np.float64) if a.dtype != np.float64 else a


def unfold(tensor, mode):
    """Mode-`mode` unfolding (matricization) of `tensor`.

    Parameters
    ----------
    tensor : ndarray
    mode : int
        0-based mode index in ``range(tensor.ndim)``.

    Returns
    -------
    ndarray of shape ``(tensor.shape[mode], prod(other extents))``
        Columns enumerate the remaining modes with the first remaining
        mode fastest: for an I x J x K tensor and mode 0, the column of
        element (i, j, k) is ``j + k*J``.
    """
    tensor = np.asarray(tensor)
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for order-{tensor.ndim} tensor")
    return np.reshape(
        np.moveaxis(tensor, mode, 0), (tensor.shape[mode], -1), order="F"
    )


def fold(matrix, mode, shape):
    """Inverse of :func:`unfold`: rebuild a tensor of `shape` from its unfolding.

    ``fold(unfold(t, mode), mode, t.shape)`` restores `t` bitwise.
    """
    matrix = np.asarray(matrix)
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    other = shape[:mode] + shape[mode + 1 :]
    expected = (shape[mode], int(np.prod(other, dtype=np.int64)))
    if matrix.shape != expected:
        raise ValueError(
            f"matrix shape {matrix.shape} inconsistent with shape {shape}, "
            f"mode {mode} (expected {expected})"
        )
    moved = np.reshape(matrix, (shape[mode],) + other, order="F")
    return np.ascontiguousarray(np.moveaxis(moved, 0, mode))


def khatri_rao(a, b):
    """Column-wise Kronecker (Khatri-Rao) product of two matrices.

    Column r of the result is ``kron(a[:, r], b[:, r])``; with this
    convention ``unfold(reconstruct_cp(A, B, C), 0) == A @ khatri_rao(C, B).T``.

    Parameters
    ----------
    a : ndarray (m, R)
    b : ndarray (n, R)

    Returns
    -------
    ndarray (m*n, R)
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return np.einsum("ir,jr->ijr", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1])


def reconstruct_cp(a, b, c, weights=None):
    """Rebuild the dense tensor of the Kruskal model ``[[A, B, C]]``.

    ``t[i, j, k] = sum_r w_r * A[i, r] * B[j, r] * C[k, r]`` with ``w = 1``
    when `weights` is None.
    """
    a = _as_f64(a)
    b = _as_f64(b)
    c = _as_f64(c)
    if a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
        raise ValueError("factors must be matrices")
    if not (a.shape[1] == b.shape[1] == c.shape[1]):
        raise ValueError(
            f"factor column counts differ: {a.shape[1]}, {b.shape[1]}, {c.shape[1]}"
        )
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (a.shape[1],):
            raise ValueError("weights length must equal the factor column count")
        a = a * weights
    return np.einsum("ir,jr,kr->ijk", a, b, c)


def mode_product(tensor, matrix, mode):
    """Mode-`mode` product ``tensor x_mode matrix``.

    Contracts the `mode` axis of `tensor` (extent n) with the columns of
    `matrix` (shape m x n); the result has extent m at `mode`.
    """
    tensor = np.asarray(tensor)
    matrix = np.asarray(matrix)
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for order-{tensor.ndim} tensor")
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[mode]:
        raise ValueError(
            f"matrix shape {matrix.shape} does not match extent "
            f"{tensor.shape[mode]} at mode {mode}"
        )
    out = np.tensordot(matrix, tensor, axes=(1, mode))
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def reshape_kernel(kernel4):
    """Flatten the two spatial axes of a D x D x S x T kernel into one.

    Returns the order-3 view of shape (D*D, S, T) with spatial index
    ``d = i + j*D`` (first spatial axis fastest); :func:`restore_kernel`
    inverts the mapping bitwise.
    """
    kernel4 = np.asarray(kernel4)
    if kernel4.ndim != 4:
        raise ValueError(f"expected an order-4 kernel, got order {kernel4.ndim}")
    d0, d1, s, t = kernel4.shape
    return np.ascontiguousarray(
        kernel4.transpose(1, 0, 2, 3).reshape(d0 * d1, s, t)
    )


def restore_kernel(kernel3, d):
    """Inverse of :func:`reshape_kernel` for a square D x D spatial window."""
    kernel3 = np.asarray(kernel3)
    if kernel3.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {kernel3.ndim}")
    d = int(d)
    if kernel3.shape[0] != d * d:
        raise ValueError(
            f"first extent {kernel3.shape[0]} is not the square of d={d}"
        )
    s, t = kernel3.shape[1], kernel3.shape[2]
    return np.ascontiguousarray(
        kernel3.reshape(d, d, s, t).transpose(1, 0, 2, 3)
    )
