"""CP decomposition by ALS plus degeneracy diagnostics.

A rank-R CP model of an order-3 tensor is held as three factor matrices
(A, B, C) with an optional nonnegative weight vector ``lam`` used when the
columns are normalized to unit length.  Degeneracy of a model is measured
by two scalars:

* intensity: the sum of squared Frobenius norms of the rank-1 components;
* sensitivity: the expected squared reconstruction perturbation per unit
  variance of i.i.d. Gaussian noise added to every factor entry.

``monte_carlo_sensitivity`` estimates the defining expectation by sampling
and is the ground-truth oracle for the closed-form ``sensitivity``.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensorops import khatri_rao, reconstruct_cp, unfold

__all__ = [
    "CPModel",
    "AlsOptions",
    "AlsResult",
    "cpd_als",
    "normalize",
    "balance_components",
    "intensity",
    "sensitivity",
    "monte_carlo_sensitivity",
]


@dataclass
class CPModel:
    """Kruskal-format CP model: factors A (I x R), B (J x R), C (K x R).

    ``lam`` holds per-component magnitudes when the factor columns are
    unit-normalized; ``lam=None`` means magnitudes live in the factors.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        if not (self.A.ndim == self.B.ndim == self.C.ndim == 2):
            raise ValueError("CP factors must be matrices")
        if not (self.A.shape[1] == self.B.shape[1] == self.C.shape[1]):
            raise ValueError(
                "factor column counts differ: "
                f"{self.A.shape[1]}, {self.B.shape[1]}, {self.C.shape[1]}"
            )
        if self.lam is not None:
            self.lam = np.asarray(self.lam, dtype=np.float64)
            if self.lam.shape != (self.rank,):
                raise ValueError("lam must have one weight per component")
            for f in (self.A, self.B, self.C):
                norms = np.linalg.norm(f, axis=0)
                if np.any(np.abs(norms - 1.0) > 1e-8):
                    raise ValueError(
                        "factor columns must be unit-norm when lam is present"
                    )

    @property
    def rank(self):
        return self.A.shape[1]

    @property
    def shape(self):
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def factors_folded(self):
        """Return (A, B, C) with ``lam`` folded into A."""
        if self.lam is None:
            return self.A, self.B, self.C
        return self.A * self.lam, self.B, self.C

    def to_tensor(self):
        return reconstruct_cp(self.A, self.B, self.C, weights=self.lam)


@dataclass
class AlsOptions:
    """Knobs for :func:`cpd_als`.

    init: "random" (seeded Gaussian), "svd" (leading singular vectors of
    each unfolding), or "mixed" (svd for the first restart, random for the
    rest; avoids the slow-convergence swamps of over-parameterized fits
    without losing restart diversity).
    """

    max_iters: int = 1000
    tol: float = 1e-8
    init: str = "random"
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init not in ("random", "svd", "mixed"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class AlsResult:
    """Best-restart outcome of :func:`cpd_als`.

    ``rel_errors`` is the per-sweep relative error trace of the winning
    restart (non-increasing up to roundoff).
    """

    model: CPModel
    rel_error: float
    rel_errors: list = field(repr=False)
    n_iters: int = 0
    converged: bool = False

    def __iter__(self):
        # allow ``model, rel_error = cpd_als(...)``
        return iter((self.model, self.rel_error))


def _pinv_psd(g, rcond=1e-12):
    """Pseudo-inverse of a symmetric PSD matrix via eigendecomposition."""
    w, v = np.linalg.eigh((g + g.T) / 2)
    cutoff = rcond * max(w[-1], 0.0)
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return (v * inv) @ v.T


def _init_factors(shape, rank, init, rng, tensor):
    if init == "random":
        return [rng.standard_normal((n, rank)) for n in shape]
    factors = []
    for mode, n in enumerate(shape):
        u, _, _ = np.linalg.svd(unfold(tensor, mode), full_matrices=False)
        if u.shape[1] >= rank:
            factors.append(np.ascontiguousarray(u[:, :rank]))
        else:
            # more components than singular vectors: pad with random columns
            pad = rng.standard_normal((n, rank - u.shape[1]))
            factors.append(np.hstack([u, pad]))
    return factors


def cpd_als(tensor, rank, opts=None):
    """Rank-`rank` CP decomposition of an order-3 tensor by ALS.

    Each sweep solves the exact least-squares update for A, B, C in turn
    (``A <- K_(1) Z pinv(Z'Z)`` with ``Z = khatri_rao(C, B)`` and cyclic
    analogues), so the relative error is non-increasing per sweep.  The
    best of ``opts.restarts`` runs is returned in normalized form (unit
    columns, weights sorted descending); ties in final error are broken by
    lower sensitivity.

    Returns
    -------
    AlsResult
        Unpacks as ``(model, rel_error)``.
    """
    if opts is None:
        opts = AlsOptions()
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if not np.all(np.isfinite(tensor)):
        raise ValueError("tensor contains non-finite values")

    norm_t = np.linalg.norm(tensor)
    shape = tensor.shape
    if norm_t == 0.0:
        # Zero-tensor convention: rel_error 0, zero model.
        zero = normalize(
            CPModel(
                np.zeros((shape[0], rank)),
                np.zeros((shape[1], rank)),
                np.zeros((shape[2], rank)),
            )
        )
        return AlsResult(zero, 0.0, [0.0], n_iters=0, converged=True)

    unfoldings = [unfold(tensor, m) for m in range(3)]

    best = None
    for restart in range(opts.restarts):
        rng = np.random.default_rng((opts.seed, restart))
        init = opts.init
        if init == "mixed":
            init = "svd" if restart == 0 else "random"
        a, b, c = _init_factors(shape, rank, init, rng, tensor)
        errors = []
        prev_err = np.inf
        n_iters = 0
        converged = False
        for sweep in range(opts.max_iters):
            a = unfoldings[0] @ khatri_rao(c, b) @ _pinv_psd((c.T @ c) * (b.T @ b))
            b = unfoldings[1] @ khatri_rao(c, a) @ _pinv_psd((c.T @ c) * (a.T @ a))
            zc = khatri_rao(b, a)
            c = unfoldings[2] @ zc @ _pinv_psd((b.T @ b) * (a.T @ a))
            err = np.linalg.norm(unfoldings[2] - c @ zc.T) / norm_t
            errors.append(err)
            n_iters = sweep + 1
            if abs(prev_err - err) < opts.tol:
                converged = True
                break
            prev_err = err

        model = normalize(CPModel(a, b, c))
        final = errors[-1]
        if (
            best is None
            or final < best.rel_error - 1e-12
            or (
                abs(final - best.rel_error) <= 1e-12
                and sensitivity(model) < sensitivity(best.model)
            )
        ):
            best = AlsResult(model, final, errors, n_iters=n_iters, converged=converged)

    return best


def normalize(model):
    """Rescale factor columns to unit norm, collecting magnitudes in ``lam``.

    Components are sorted by descending weight.  An exactly zero column
    gets weight 0 and is replaced by the first standard basis vector, so
    the unit-norm invariant holds for every component.  Reconstruction is
    unchanged.
    """
    factors = []
    lam = np.ones(model.rank)
    if model.lam is not None:
        lam = lam * model.lam
    for f in (model.A, model.B, model.C):
        norms = np.linalg.norm(f, axis=0)
        unit = np.array(f, dtype=np.float64)
        zero = norms == 0.0
        nz = ~zero
        unit[:, nz] = unit[:, nz] / norms[nz]
        if np.any(zero):
            unit[:, zero] = 0.0
            unit[0, zero] = 1.0
        lam = lam * norms
        factors.append(unit)
    order = np.argsort(-lam, kind="stable")
    return CPModel(
        factors[0][:, order], factors[1][:, order], factors[2][:, order], lam[order]
    )


def balance_components(model):
    """Distribute each component's magnitude across the three factors so the
    component's sensitivity contribution is minimal.

    For fixed rank-1 directions and magnitude p, the contribution
    ``K x^2 y^2 + I y^2 z^2 + J x^2 z^2`` with ``xyz = p`` is minimized at
    ``x^2 = cbrt(p^2 I^2 / (J K))`` and cyclic analogues.  Reconstruction
    is unchanged; weights are absorbed into the factors (``lam=None``).
    """
    i, j, k = model.shape
    a, b, c = (np.array(f, dtype=np.float64) for f in model.factors_folded())
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    nc = np.linalg.norm(c, axis=0)
    p = na * nb * nc
    nz = p > 0
    # target squared norms per factor
    ta = np.cbrt(p**2 * i**2 / (j * k))
    tb = np.cbrt(p**2 * j**2 / (i * k))
    tc = np.cbrt(p**2 * k**2 / (i * j))
    a[:, nz] *= np.sqrt(ta[nz]) / na[nz]
    b[:, nz] *= np.sqrt(tb[nz]) / nb[nz]
    c[:, nz] *= np.sqrt(tc[nz]) / nc[nz]
    return CPModel(a, b, c)


def intensity(model):
    """Sum of squared Frobenius norms of the rank-1 components."""
    a, b, c = model.factors_folded()
    return float(
        np.sum(
            np.sum(a**2, axis=0) * np.sum(b**2, axis=0) * np.sum(c**2, axis=0)
        )
    )


def sensitivity(model):
    """Closed-form sensitivity of a CP model.

    With mode extents (I, J, K) and weights folded into A::

        ss = K tr{(A'A) * (B'B)} + I tr{(B'B) * (C'C)} + J tr{(A'A) * (C'C)}

    where ``*`` is the Hadamard product.  Equals the Gaussian-perturbation
    expectation estimated by :func:`monte_carlo_sensitivity`.
    """
    a, b, c = model.factors_folded()
    i, j, k = model.shape
    sa = np.sum(a**2, axis=0)
    sb = np.sum(b**2, axis=0)
    sc = np.sum(c**2, axis=0)
    return float(k * np.dot(sa, sb) + i * np.dot(sb, sc) + j * np.dot(sa, sc))


def monte_carlo_sensitivity(model, sigma=1e-4, n_samples=2000, seed=0):
    """Sampling estimate of the sensitivity definition.

    Draws i.i.d. N(0, sigma^2) perturbations of every factor entry and
    averages ``||T - [[A+dA, B+dB, C+dC]]||_F^2 / sigma^2`` over
    `n_samples` draws.  The estimate converges to :func:`sensitivity` as
    sigma -> 0 (the sigma^2 normalization is pinned so the closed form and
    the estimate agree; see the package notes on the weight convention).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a, b, c = model.factors_folded()
    base = reconstruct_cp(a, b, c)
    rng = np.random.default_rng(seed)
    acc = 0.0
    for _ in range(n_samples):
        da = rng.normal(0.0, sigma, a.shape)
        db = rng.normal(0.0, sigma, b.shape)
        dc = rng.normal(0.0, sigma, c.shape)
        diff = base - reconstruct_cp(a + da, b + db, c + dc)
        acc += float(np.sum(diff**2))
    return acc / (n_samples * sigma**2)
