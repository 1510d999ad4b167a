import numpy as np
import pytest

from privgauss import linalg, subspace
from privgauss.dp_core import Accountant, PrivacyBudget, RandomSource
from privgauss.errors import InsufficientSamples, InvalidArgument
from privgauss.subspace import (
    boost,
    n_min,
    recover_subspace,
    recover_subspace_boosted,
    sample_reference_points,
    subspace_params,
)

BUDGET = PrivacyBudget(10.0, 1e-6)
BETA = 0.05


def spectral_dist(a, b):
    return float(np.abs(np.linalg.eigvalsh(a - b)).max())


def gapped_samples(d, k, low, n, seed):
    diag = np.array([1.0] * k + [low] * (d - k))
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)) * np.sqrt(diag)


class TestRecoverSubspace:
    def test_two_dim_tiny_tail(self):
        d, k, gamma, psi = 2, 1, 1e-2, 0.5
        n = n_min(d, k, psi, BUDGET, BETA)
        truth = np.diag([1.0, 0.0])
        wins = 0
        for seed in range(40):
            x = gapped_samples(d, k, 1e-8, n, seed)
            proj = recover_subspace(x, k, gamma, psi, BUDGET, BETA, RandomSource(seed).child("t"))
            wins += spectral_dist(proj.matrix, truth) <= psi * gamma
        assert wins >= 28  # single-shot bar is 70%

    def test_exact_rank_data(self):
        d, k = 4, 2
        gamma = 1e-9
        n = n_min(d, k, 0.5, BUDGET, BETA)
        rng = np.random.default_rng(3)
        x = np.zeros((n, d))
        x[:, :2] = rng.normal(size=(n, 2))
        truth = np.diag([1.0, 1.0, 0.0, 0.0])
        proj = recover_subspace(x, k, gamma, 0.5, BUDGET, BETA, RandomSource(0).child("ex"))
        assert spectral_dist(proj.matrix, truth) <= 1e-9

    def test_k_equals_d_minus_one(self):
        d, k, gamma, psi = 4, 3, 1e-2, 0.3
        n = n_min(d, k, psi, BUDGET, BETA)
        truth = np.diag([1.0, 1.0, 1.0, 0.0])
        wins = 0
        for seed in range(30):
            x = gapped_samples(d, k, 1e-10, n, seed)
            proj = recover_subspace(x, k, gamma, psi, BUDGET, BETA, RandomSource(seed).child("kd"))
            wins += spectral_dist(proj.matrix, truth) <= psi * gamma
        assert wins >= 24

    def test_output_is_valid_projector(self):
        d, k = 4, 1
        n = n_min(d, k, 0.5, BUDGET, BETA)
        for seed in range(5):
            x = gapped_samples(d, k, 1e-6, n, seed)
            proj = recover_subspace(x, k, 1e-2, 0.5, BUDGET, BETA, RandomSource(seed).child("p"))
            p = proj.matrix
            assert proj.rank == k
            assert np.linalg.norm(p @ p - p) <= 1e-9
            assert abs(np.trace(p) - k) <= 1e-9 * d

    def test_invalid_k(self):
        x = np.zeros((100, 3))
        with pytest.raises(InvalidArgument):
            recover_subspace(x, 0, 0.1, 0.5, BUDGET, BETA, RandomSource(0))
        with pytest.raises(InvalidArgument):
            recover_subspace(x, 3, 0.1, 0.5, BUDGET, BETA, RandomSource(0))

    def test_insufficient_samples(self):
        d, k = 4, 1
        n = n_min(d, k, 0.5, BUDGET, BETA)
        x = gapped_samples(d, k, 1e-6, n // 10, 0)
        with pytest.raises(InsufficientSamples):
            recover_subspace(x, k, 1e-2, 0.5, BUDGET, BETA, RandomSource(0))

    def test_determinism(self):
        d, k = 2, 1
        n = n_min(d, k, 0.5, BUDGET, BETA)
        x = gapped_samples(d, k, 1e-8, n, 5)
        a = recover_subspace(x, k, 1e-2, 0.5, BUDGET, BETA, RandomSource(7).child("d"))
        b = recover_subspace(x, k, 1e-2, 0.5, BUDGET, BETA, RandomSource(7).child("d"))
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_privacy_ledger(self):
        d, k = 4, 2
        q = subspace.REFS_PER_RANK * k
        n = n_min(d, k, 0.5, BUDGET, BETA)
        x = gapped_samples(d, k, 1e-8, n, 1)
        acc = Accountant()
        recover_subspace(x, k, 1e-2, 0.5, BUDGET, BETA, RandomSource(1).child("l"), accountant=acc)
        centers = [e for e in acc.entries if "center" in e.label]
        sums = [e for e in acc.entries if "sum" in e.label]
        assert len(centers) == q
        assert len(sums) == q
        params = subspace_params(n, d, k, 1e-2, 0.5, BUDGET, BETA)
        for e in sums:
            assert e.sensitivity == pytest.approx(2.0 * params.trunc_radius)
        eps = sum(e.budget.epsilon for e in acc.entries)
        delta = sum(e.budget.delta for e in acc.entries)
        assert eps <= BUDGET.epsilon * (1 + 1e-9)
        assert delta <= BUDGET.delta * (1 + 1e-9)

    def test_sigma_formula(self):
        d, k = 4, 2
        n = n_min(d, k, 0.5, BUDGET, BETA)
        params = subspace_params(n, d, k, 1e-2, 0.5, BUDGET, BETA)
        sums_budget = PrivacyBudget(BUDGET.epsilon / 2, BUDGET.delta / 2)
        expected = (
            4.0
            * params.trunc_radius
            * np.sqrt(params.q)
            * np.log(params.q / sums_budget.delta)
            / (sums_budget.epsilon * params.t)
        )
        assert params.sigma == pytest.approx(expected, rel=1e-12)

    def test_rotation_equivariance_distribution(self):
        # error norms of recovery on rotated data match the unrotated law
        d, k, gamma, psi = 4, 1, 1e-2, 0.5
        n = n_min(d, k, psi, BUDGET, BETA)
        rng = np.random.default_rng(0)
        q_mat, _ = np.linalg.qr(rng.normal(size=(d, d)))
        truth = np.diag([1.0, 0.0, 0.0, 0.0])
        truth_rot = q_mat @ truth @ q_mat.T
        errs_plain = []
        errs_rot = []
        for seed in range(200):
            x = gapped_samples(d, k, 1e-8, n, 100 + seed)
            p1 = recover_subspace(x, k, gamma, psi, BUDGET, BETA, RandomSource(seed).child("r0"))
            errs_plain.append(spectral_dist(p1.matrix, truth))
            p2 = recover_subspace(
                x @ q_mat.T, k, gamma, psi, BUDGET, BETA, RandomSource(5000 + seed).child("r1")
            )
            errs_rot.append(spectral_dist(p2.matrix, truth_rot))
        a = np.sort(errs_plain)
        b = np.sort(errs_rot)
        grid = np.concatenate([a, b])
        ks = np.max(
            np.abs(
                np.searchsorted(a, grid, side="right") / a.size
                - np.searchsorted(b, grid, side="right") / b.size
            )
        )
        assert ks < 0.15


class TestReferencePoints:
    def test_reproducible(self):
        a = sample_reference_points(5, 3, RandomSource(1).child("p"))
        b = sample_reference_points(5, 3, RandomSource(1).child("p"))
        np.testing.assert_array_equal(a, b)

    def test_rejects_zero(self):
        with pytest.raises(InvalidArgument):
            sample_reference_points(0, 3, RandomSource(0))

    def test_standard_gaussian_moments(self):
        pts = sample_reference_points(20_000, 5, RandomSource(2).child("m"))
        assert np.abs(pts.mean(axis=0)).max() <= 3.0 / np.sqrt(20_000)
        assert np.abs(pts.var(axis=0) - 1.0).max() <= 0.05


class TestBoost:
    def _projector(self, basis_cols, d):
        b = np.zeros((d, len(basis_cols)))
        for i, c in enumerate(basis_cols):
            b[c, i] = 1.0
        return linalg.Projector(b @ b.T, len(basis_cols))

    def test_all_identical(self):
        p = self._projector([0], 3)
        assert boost([p, p, p], 0.1) is p

    def test_majority_beats_junk(self):
        good = self._projector([0], 3)
        junk = self._projector([2], 3)
        out = boost([good, good, junk, good, good], 0.1)
        assert np.array_equal(out.matrix, good.matrix)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgument):
            boost([], 0.1)

    def test_binomial_failure_rate(self):
        # runs correct independently w.p. 0.7; failure of 9-run boosting
        # should be far below 5% because junk runs do not cluster
        d = 4
        truth = np.diag([1.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(11)
        tol = 0.1
        failures = 0
        for _ in range(1000):
            runs = []
            for _ in range(9):
                if rng.uniform() < 0.7:
                    noise = rng.normal(scale=tol / 20.0, size=(d, d))
                    mat = truth + 0.5 * (noise + noise.T)
                else:
                    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
                    mat = np.outer(q[:, 0], q[:, 0])
                runs.append(linalg.Projector(mat, 1))
            winner = boost(runs, tol)
            failures += spectral_dist(winner.matrix, truth) > tol
        assert failures <= 50

    def test_boosted_recovery(self):
        d, k, gamma, psi = 2, 1, 1e-2, 0.5
        n = n_min(d, k, psi, BUDGET, BETA)
        truth = np.diag([1.0, 0.0])
        acc = Accountant()
        wins = 0
        for seed in range(20):
            x = gapped_samples(d, k, 1e-8, 5 * n, seed)
            proj = recover_subspace_boosted(
                x, k, gamma, psi, BUDGET, BETA, RandomSource(seed).child("b"), accountant=acc
            )
            wins += spectral_dist(proj.matrix, truth) <= psi * gamma
        assert wins >= 19
        # one parallel-composition charge per call
        assert len(acc.entries) == 20
        assert all(e.budget == BUDGET for e in acc.entries)
