"""Error-preserving correction: minimize sensitivity under an error bound.

Given a tensor and a CP model (typically a degenerate ALS result with huge
canceling components), re-optimize the factors to minimize sensitivity
subject to ``||t - [[A, B, C]]||_F <= delta``.  Each factor update is an
exact minimum-weighted-norm least-squares problem with a residual-ball
constraint, solved in closed form through a one-dimensional secular
equation in the Lagrange multiplier.
"""

from dataclasses import dataclass

import numpy as np

from .cpd import CPModel, balance_components, sensitivity
from .errors import InfeasibleBoundError
from .tensorops import khatri_rao, unfold

__all__ = [
    "EpcOptions",
    "epc_correct",
    "factor_update_bounded",
    "spherical_qp",
]


@dataclass
class EpcOptions:
    """Knobs for :func:`epc_correct`.

    delta is the absolute Frobenius error bound; None means "preserve the
    current error of the input model".  ``unweighted_diag`` selects the
    plain diagonal ``diag(B'B + C'C)`` for the factor subproblems instead
    of the dimension-weighted diagonal that exactly matches the
    sensitivity formula.
    """

    delta: float | None = None
    max_sweeps: int = 100
    ss_tol: float = 1e-6
    qp_tol: float = 1e-10
    unweighted_diag: bool = False

    def __post_init__(self):
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.ss_tol <= 0 or self.qp_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


def spherical_qp(y, zt, delta, qp_tol=1e-10, max_iters=200):
    """Minimum-norm matrix regression with a residual-ball constraint.

    Solves ``min ||X||_F^2  s.t.  ||Y - X Zt'||_F^2 <= delta^2``.

    The stationary family is ``X(mu) = mu Y Zt (I + mu Zt'Zt)^{-1}`` with
    multiplier mu >= 0; the residual is a strictly decreasing rational
    function of mu, evaluated stably in the eigenbasis of Zt'Zt and solved
    by Newton steps safeguarded with bisection.

    Returns
    -------
    (X, mu) : (ndarray, float)
        mu is 0 when the origin is feasible, inf when the bound equals the
        least-squares residual (exact-fit limit).

    Raises
    ------
    InfeasibleBoundError
        If even the unconstrained least-squares residual exceeds delta^2.
    RuntimeError
        If the scalar root-find does not converge within `max_iters`.
    """
    y = np.asarray(y, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    norm_y2 = float(np.sum(y**2))
    delta2 = delta**2

    if norm_y2 <= delta2 * (1 + 1e-15) or norm_y2 == 0.0:
        return np.zeros((y.shape[0], zt.shape[1])), 0.0

    gram = zt.T @ zt
    lam, q = np.linalg.eigh((gram + gram.T) / 2)
    lam = np.maximum(lam, 0.0)
    p = y @ zt @ q                      # columns in the eigenbasis
    s = np.sum(p**2, axis=0)            # component energies
    # eigenvalues below the relative cutoff carry no usable signal
    cutoff = 1e-12 * (lam[-1] if lam.size else 0.0)
    live = lam > cutoff

    # least-squares residual: energy outside the reachable subspace
    r_min = norm_y2 - float(np.sum(s[live] / lam[live])) if np.any(live) else norm_y2
    r_min = max(r_min, 0.0)
    scale = max(norm_y2, 1.0)
    if r_min > delta2 + qp_tol * scale:
        raise InfeasibleBoundError(
            f"least-squares residual {r_min:.6g} exceeds bound {delta2:.6g}",
            min_residual=r_min,
            bound=delta2,
        )

    lam_l = lam[live]
    s_l = s[live]

    def residual(mu):
        num = s_l * (2.0 * mu + mu**2 * lam_l)
        return norm_y2 - float(np.sum(num / (1.0 + mu * lam_l) ** 2))

    def residual_prime(mu):
        return -2.0 * float(np.sum(s_l / (1.0 + mu * lam_l) ** 3))

    def x_of(mu):
        # dead directions carry no residual signal; the min-norm solution
        # (and the secular residual above) puts exactly zero there
        coef = np.where(live, mu / (1.0 + mu * lam), 0.0)
        return (p * coef) @ q.T

    if delta2 <= r_min + qp_tol * scale:
        # active bound sits at the exact-fit limit: min-norm LS solution
        coef = np.zeros_like(lam)
        coef[live] = 1.0 / lam[live]
        return (p * coef) @ q.T, np.inf

    # bracket [lo, hi] with residual(lo) > delta2 > residual(hi)
    lo = 0.0
    hi = 1.0 / max(lam_l[-1], 1e-300)
    for _ in range(400):
        if residual(hi) < delta2:
            break
        lo = hi
        hi *= 2.0
    else:
        raise RuntimeError(
            f"could not bracket the multiplier (bracket [{lo:.3g}, {hi:.3g}])"
        )

    mu = lo
    for _ in range(max_iters):
        f = residual(mu) - delta2
        if abs(f) <= qp_tol * max(delta2, qp_tol):
            return x_of(mu), mu
        if f > 0:
            lo = mu
        else:
            hi = mu
        step = mu - f / residual_prime(mu)
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    f = residual(mu) - delta2
    if abs(f) <= 1e-6 * max(delta2, 1e-12):
        return x_of(mu), mu
    raise RuntimeError(
        f"secular root-find did not converge: mu={mu:.6g}, "
        f"bracket [{lo:.6g}, {hi:.6g}], residual gap {f:.6g}"
    )


def factor_update_bounded(k1, z, w, delta, qp_tol=1e-10):
    """One bound-constrained factor update.

    Solves ``min ||A diag(w)||_F^2  s.t.  ||K1 - A Z'||_F^2 <= delta^2``
    via the change of variables ``At = A diag(w)``, ``Zt = Z diag(1/w)``,
    which turns the objective into a plain minimum-norm regression handled
    by :func:`spherical_qp`.

    `w` must be strictly positive.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    zt = np.asarray(z, dtype=np.float64) / w
    at, _ = spherical_qp(k1, zt, delta, qp_tol=qp_tol)
    return at / w


def epc_correct(tensor, model, opts=None):
    """Minimize model sensitivity while keeping the approximation error
    within a bound.

    Sweeps A -> B -> C cyclically; each update is the exact constrained
    minimizer of the sensitivity terms involving that factor, so both the
    error bound and sensitivity monotonicity hold after every accepted
    update.  Components are magnitude-balanced across factors up front
    (free sensitivity reduction, reconstruction unchanged).

    Returns
    -------
    (CPModel, trace)
        The corrected model (weights absorbed into the factors) and a list
        of per-sweep records ``{"error": float, "ss": float}``, starting
        with the balanced input state.
    """
    if opts is None:
        opts = EpcOptions()
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got order {tensor.ndim}")
    if model.shape != tensor.shape:
        raise ValueError(f"model shape {model.shape} != tensor shape {tensor.shape}")

    norm_t = np.linalg.norm(tensor)
    model = balance_components(model)
    a, b, c = model.A, model.B, model.C
    dims = tensor.shape

    def current_error(a, b, c):
        return np.linalg.norm(tensor - np.einsum("ir,jr,kr->ijk", a, b, c))

    err0 = current_error(a, b, c)
    delta = err0 if opts.delta is None else float(opts.delta)

    unfoldings = [unfold(tensor, m) for m in range(3)]
    trace = [{"error": float(err0), "ss": sensitivity(CPModel(a, b, c))}]

    def update(target, f1, f2, dim1, dim2, name):
        """Bounded update of one factor; f1, f2 are the two fixed factors."""
        if opts.unweighted_diag:
            w2 = np.sum(f1**2, axis=0) + np.sum(f2**2, axis=0)
        else:
            w2 = dim2 * np.sum(f1**2, axis=0) + dim1 * np.sum(f2**2, axis=0)
        z = khatri_rao(f2, f1)
        live = w2 > 1e-300
        if np.all(live):
            try:
                return factor_update_bounded(
                    target, z, np.sqrt(w2), delta, qp_tol=opts.qp_tol
                )
            except InfeasibleBoundError as e:
                e.factor = name
                raise
        # dead components (zero in both fixed factors) contribute nothing:
        # solve the reduced problem and zero them out
        new = np.zeros((target.shape[0], z.shape[1]))
        if np.any(live):
            try:
                new[:, live] = factor_update_bounded(
                    target, z[:, live], np.sqrt(w2[live]), delta, qp_tol=opts.qp_tol
                )
            except InfeasibleBoundError as e:
                e.factor = name
                raise
        elif np.linalg.norm(target) > delta + opts.qp_tol * max(norm_t, 1.0):
            raise InfeasibleBoundError(
                f"all components vanished while updating {name} and the "
                f"remaining residual exceeds the bound",
                min_residual=float(np.sum(target**2)),
                bound=delta**2,
                factor=name,
            )
        return new

    i, j, k = dims
    prev_ss = trace[0]["ss"]
    for _ in range(opts.max_sweeps):
        a = update(unfoldings[0], b, c, j, k, "A")
        b = update(unfoldings[1], a, c, i, k, "B")
        c = update(unfoldings[2], a, b, i, j, "C")
        # single-factor updates cannot move magnitude between factors;
        # rebalancing is free (reconstruction unchanged, ss non-increasing)
        balanced = balance_components(CPModel(a, b, c))
        a, b, c = balanced.A, balanced.B, balanced.C
        ss = sensitivity(balanced)
        err = current_error(a, b, c)
        trace.append({"error": float(err), "ss": float(ss)})
        if prev_ss <= 0 or abs(prev_ss - ss) <= opts.ss_tol * max(prev_ss, 1e-300):
            break
        prev_ss = ss

    return CPModel(a, b, c), trace
