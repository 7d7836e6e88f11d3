import numpy as np
import pytest

from conftest import random_tucker2_tensor
from convfactor import (
    InfeasibleBoundError,
    build_q1,
    build_q2,
    core_closed_form,
    minimal_rank_eigvecs,
    mode_product,
    tucker2_bounded,
)


def q1_loop(tensor, v):
    """Direct loop evaluation of the projected mode-1 Gram matrix (oracle)."""
    _, s, _ = tensor.shape
    r2 = v.shape[1]
    q = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            for r in range(r2):
                q[i, j] += np.dot(tensor[:, i, :] @ v[:, r], tensor[:, j, :] @ v[:, r])
    return q


def q2_loop(tensor, u):
    _, _, t = tensor.shape
    r1 = u.shape[1]
    q = np.zeros((t, t))
    for i in range(t):
        for j in range(t):
            for r in range(r1):
                q[i, j] += np.dot(
                    tensor[:, :, i] @ u[:, r], tensor[:, :, j] @ u[:, r]
                )
    return q


class TestGramMatrices:
    def test_q1_energy_identity(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((4, 3, 5))
        v, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        assert np.trace(build_q1(t, v)) == pytest.approx(np.sum(t**2), rel=1e-10)

    def test_q2_energy_identity(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((4, 3, 5))
        u, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert np.trace(build_q2(t, u)) == pytest.approx(np.sum(t**2), rel=1e-10)

    def test_zero_tensor(self):
        z = np.zeros((4, 3, 5))
        assert np.all(build_q1(z, np.eye(5)) == 0)
        assert np.all(build_q2(z, np.eye(3)) == 0)

    def test_q1_against_loop(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((4, 3, 5))
        v, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        assert np.max(np.abs(build_q1(t, v) - q1_loop(t, v))) < 1e-12

    def test_q1_single_column(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal((4, 3, 5))
        v = np.zeros((5, 1))
        v[0, 0] = 1.0
        assert np.max(np.abs(build_q1(t, v) - q1_loop(t, v))) < 1e-12

    def test_q2_against_loop(self):
        rng = np.random.default_rng(4)
        t = rng.standard_normal((4, 3, 5))
        u, _ = np.linalg.qr(rng.standard_normal((3, 2)))
        assert np.max(np.abs(build_q2(t, u) - q2_loop(t, u))) < 1e-12

    def test_psd_and_symmetric(self):
        rng = np.random.default_rng(5)
        t = rng.standard_normal((4, 6, 5))
        q = build_q1(t, np.eye(5))
        assert np.array_equal(q, q.T)
        assert np.min(np.linalg.eigvalsh(q)) > -1e-10

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            build_q1(np.zeros((4, 3, 5)), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            build_q2(np.zeros((4, 3, 5)), np.zeros((5, 2)))


class TestMinimalRankEigvecs:
    def test_forced_arithmetic(self):
        q = np.diag([5.0, 3.0, 2.0])
        basis, rank = minimal_rank_eigvecs(q, 8.0)
        assert rank == 2
        assert basis.shape == (3, 2)

    def test_zero_bound(self):
        basis, rank = minimal_rank_eigvecs(np.diag([3.0, 1.0]), 0.0)
        assert rank == 0
        assert basis.shape == (2, 0)

    def test_full_trace_bound_counts_nonzero(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((5, 3))
        q = m @ m.T  # rank 3 PSD
        w = np.sort(np.linalg.eigvalsh(q))[::-1]
        csum = np.cumsum(np.maximum(w, 0))
        expect = int(np.searchsorted(csum, np.trace(q) - 1e-12 * np.trace(q)) + 1)
        _, rank = minimal_rank_eigvecs(q, np.trace(q))
        assert rank == expect == 3

    def test_infeasible(self):
        with pytest.raises(InfeasibleBoundError):
            minimal_rank_eigvecs(np.diag([1.0, 1.0]), 2.5)

    def test_orthonormal_output(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((6, 6))
        q = m @ m.T
        basis, rank = minimal_rank_eigvecs(q, 0.5 * np.trace(q))
        assert np.max(np.abs(basis.T @ basis - np.eye(rank))) < 1e-10


class TestCoreClosedForm:
    def test_square_orthonormal_exact(self):
        rng = np.random.default_rng(8)
        t = rng.standard_normal((4, 3, 5))
        u, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        v, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        g = core_closed_form(t, u, v)
        recon = mode_product(mode_product(g, u, 1), v, 2)
        assert np.max(np.abs(recon - t)) < 1e-10

    def test_leading_identity_columns(self):
        t = np.random.default_rng(9).standard_normal((4, 3, 5))
        u = np.eye(3)[:, :2]
        v = np.eye(5)[:, :3]
        assert np.array_equal(core_closed_form(t, u, v), t[:, :2, :3])

    def test_pythagorean_identity(self):
        rng = np.random.default_rng(10)
        t = rng.standard_normal((4, 6, 5))
        u, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        v, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        g = core_closed_form(t, u, v)
        recon = mode_product(mode_product(g, u, 1), v, 2)
        lhs = np.sum((t - recon) ** 2)
        rhs = np.sum(t**2) - np.sum(g**2)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_non_orthonormal_error(self):
        t = np.zeros((4, 3, 5))
        with pytest.raises(ValueError):
            core_closed_form(t, 2 * np.eye(3), np.eye(5))


class TestTucker2Bounded:
    def test_exact_rank_recovery(self):
        rng = np.random.default_rng(11)
        t, _ = random_tucker2_tensor(rng, (9, 6, 7), (2, 3))
        model = tucker2_bounded(t, 0.0)
        assert model.ranks == (2, 3)
        rel = np.linalg.norm(t - model.to_tensor()) / np.linalg.norm(t)
        assert rel <= 1e-10

    def test_vacuous_bound_allows_minimal_or_empty_model(self):
        rng = np.random.default_rng(12)
        t = rng.standard_normal((4, 3, 5))
        model = tucker2_bounded(t, np.linalg.norm(t))
        # the energy bound is ~0 up to roundoff: rank 0 or 1 both qualify
        assert max(model.ranks) <= 1
        err = np.linalg.norm(t - model.to_tensor())
        assert err <= np.linalg.norm(t) * (1 + 1e-12)
        empty = tucker2_bounded(t, np.linalg.norm(t) * (1 + 1e-6))
        assert empty.ranks == (0, 0)

    @pytest.mark.parametrize("frac", [0.05, 0.1, 0.2])
    def test_bound_and_minimality(self, frac):
        rng = np.random.default_rng(13)
        t = rng.standard_normal((9, 12, 10))
        delta = frac * np.linalg.norm(t)
        model = tucker2_bounded(t, delta)
        err = np.linalg.norm(t - model.to_tensor())
        assert err <= delta + 1e-8 * np.linalg.norm(t)
        bound = np.sum(t**2) - delta**2
        # dropping the last kept eigenvector in either mode breaks the bound
        for q, rank in (
            (build_q1(t, model.V), model.ranks[0]),
            (build_q2(t, model.U), model.ranks[1]),
        ):
            w = np.sort(np.linalg.eigvalsh(q))[::-1]
            assert np.sum(w[: rank - 1]) < bound

    def test_orthonormal_factors(self):
        rng = np.random.default_rng(14)
        t = rng.standard_normal((4, 8, 6))
        model = tucker2_bounded(t, 0.3 * np.linalg.norm(t))
        r1, r2 = model.ranks
        assert np.max(np.abs(model.U.T @ model.U - np.eye(r1))) < 1e-10
        assert np.max(np.abs(model.V.T @ model.V - np.eye(r2))) < 1e-10

    def test_history_errors_within_bound_and_params_monotone(self):
        rng = np.random.default_rng(15)
        t = rng.standard_normal((9, 14, 12))
        delta = 0.15 * np.linalg.norm(t)
        model = tucker2_bounded(t, delta, max_alternations=4)
        d2, s, tt = t.shape
        params = []
        stable_errors = []
        for rec in model.history:
            assert rec["sq_error"] <= delta**2 + 1e-8 * np.sum(t**2)
            r1, r2 = rec["ranks"]
            params.append(r1 * s + r2 * tt + r1 * r2 * d2)
            if rec["ranks"] == model.ranks:
                stable_errors.append(rec["sq_error"])
        assert all(params[i + 1] <= params[i] for i in range(1, len(params) - 1))
        # once the ranks settle, the alternation cannot increase the error
        assert all(
            stable_errors[i + 1] <= stable_errors[i] + 1e-8 * np.sum(t**2)
            for i in range(len(stable_errors) - 1)
        )

    def test_fixed_ranks_mode(self):
        rng = np.random.default_rng(16)
        t, _ = random_tucker2_tensor(rng, (9, 8, 7), (3, 2))
        model = tucker2_bounded(t, 0.0, ranks=(3, 2))
        assert model.ranks == (3, 2)
        assert np.linalg.norm(t - model.to_tensor()) <= 1e-10 * np.linalg.norm(t)

    def test_param_count_matches_objective(self):
        rng = np.random.default_rng(17)
        t = rng.standard_normal((4, 9, 8))
        model = tucker2_bounded(t, 0.2 * np.linalg.norm(t))
        r1, r2 = model.ranks
        assert model.param_count() == r1 * 9 + r2 * 8 + r1 * r2 * 4

    def test_errors(self):
        with pytest.raises(ValueError):
            tucker2_bounded(np.zeros((2, 2, 2)), -1.0)
        with pytest.raises(ValueError):
            tucker2_bounded(np.zeros((2, 2)), 0.0)
