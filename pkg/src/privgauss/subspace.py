"""Private recovery of the top-k eigenspace under an eigengap promise.

Subsample-and-aggregate over projectors: each data chunk's empirical top-k
projector is applied to shared standard-Gaussian reference points, the
projected points are aggregated per reference point with a DP ball finder,
truncated to the found ball, summed with Gaussian noise, and the top-k
subspace of the noisy sums is returned.

Requires lambda_{k+1} / lambda_k < gamma^2 (the caller's promise); under
the sample bound the output projector is within psi * gamma of the truth
in spectral norm with constant probability, boosted by majority vote over
disjoint splits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ball_finder, linalg
from .dp_core import PrivacyBudget, RandomSource, split_budget
from .errors import InsufficientSamples, InvalidArgument

# q = REFS_PER_RANK * k reference points.
REFS_PER_RANK = 4
# t ~ T_SCALE sqrt(dk) ln(dk / (eps delta)) / eps subsamples.
T_SCALE = 8.0
# r = R_SCALE gamma sqrt(d) (sqrt(k) + sqrt(ln(kt))) / sqrt(m): concentration
# radius of the projected reference points.
R_SCALE = 4.0
# Truncation radius R = TRUNC_SCALE * r * sqrt(ln t).
TRUNC_SCALE = 4.0
# Variance-model constant in the m >= ~ d polylog / (psi^2 t q) requirement.
M_MIN_SCALE = 32.0
# Rows per subsample never drop below this many times d.
MIN_ROWS_PER_DIM = 4
# Majority-vote boosting over disjoint splits.
BOOST_RUNS = 5
BOOST_TOL_FACTOR = 0.5  # tolerance = factor * psi * gamma


@dataclass(frozen=True)
class SubspaceParams:
    k: int
    gamma: float
    psi: float
    t: int
    m: int
    q: int
    r: float
    trunc_radius: float
    sigma: float


def _validate(d, k, gamma, psi):
    if not 1 <= k <= d - 1:
        raise InvalidArgument(f"k={k} out of range [1, {d - 1}]")
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgument(f"gamma must lie in (0, 1], got {gamma}")
    if not 0.0 < psi < 1.0:
        raise InvalidArgument(f"psi must lie in (0, 1), got {psi}")


def _phase_budgets(budget: PrivacyBudget, q):
    """Centers phase and sums phase each get half the budget; within the
    centers phase each of the q ball-finder calls gets the source
    algorithm's share capped so the q calls compose within the phase."""
    centers, sums = split_budget(budget, [0.5, 0.5])
    eps_c = min(
        centers.epsilon / math.sqrt(q * math.log(1.0 / centers.delta)),
        centers.epsilon / q,
    )
    per_center = PrivacyBudget(eps_c, centers.delta / q)
    per_sum = PrivacyBudget(sums.epsilon / q, sums.delta / q)
    return centers, sums, per_center, per_sum


def subsample_count(d, k, budget: PrivacyBudget, beta):
    q = REFS_PER_RANK * k
    _, _, per_center, _ = _phase_budgets(budget, q)
    t_accuracy = math.ceil(
        T_SCALE
        * math.sqrt(d * k)
        * math.log(d * k / (budget.epsilon * budget.delta))
        / budget.epsilon
    )
    t_release = ball_finder.n_min(d, per_center, beta / q)
    return max(t_accuracy, t_release, 2 * k + 2, 8)


def min_subsample_rows(d, k, psi, t):
    q = REFS_PER_RANK * k
    variance = M_MIN_SCALE * d * math.log(math.e * d * k) / (psi * psi * t * q)
    return max(MIN_ROWS_PER_DIM * d, int(math.ceil(variance)))


def n_min(d, k, psi, budget, beta):
    """Smallest n recover_subspace accepts at the requested accuracy."""
    t = subsample_count(d, k, budget, beta)
    return t * min_subsample_rows(d, k, psi, t)


def feasible_psi(n, d, k, budget, beta):
    """Smallest psi the given n supports (callers clamp their request)."""
    t = subsample_count(d, k, budget, beta)
    m = n // t
    if m < MIN_ROWS_PER_DIM * d:
        raise InsufficientSamples(
            f"need n >= {t * MIN_ROWS_PER_DIM * d} for any accuracy, got {n}"
        )
    q = REFS_PER_RANK * k
    psi_sq = M_MIN_SCALE * d * math.log(math.e * d * k) / (m * t * q)
    return min(math.sqrt(psi_sq), 0.999)


def subspace_params(n, d, k, gamma, psi, budget, beta) -> SubspaceParams:
    _validate(d, k, gamma, psi)
    q = REFS_PER_RANK * k
    t = subsample_count(d, k, budget, beta)
    m = n // t
    if m < min_subsample_rows(d, k, psi, t):
        raise InsufficientSamples(
            f"need n >= {n_min(d, k, psi, budget, beta)} at psi={psi}, got {n}"
        )
    r = R_SCALE * gamma * math.sqrt(d) * (math.sqrt(k) + math.sqrt(math.log(k * t))) / math.sqrt(m)
    trunc = TRUNC_SCALE * r * math.sqrt(math.log(t))
    _, sums, _, _ = _phase_budgets(budget, q)
    sigma = 4.0 * trunc * math.sqrt(q) * math.log(q / sums.delta) / (sums.epsilon * t)
    return SubspaceParams(k=k, gamma=gamma, psi=psi, t=t, m=m, q=q, r=r, trunc_radius=trunc, sigma=sigma)


def sample_reference_points(q, d, rng: RandomSource):
    """q independent standard Gaussian reference points (public randomness)."""
    if q < 1:
        raise InvalidArgument(f"need q >= 1 reference points, got {q}")
    return rng.child("refs").standard_normal((q, d))


def recover_subspace(
    x,
    k,
    gamma,
    psi,
    budget: PrivacyBudget,
    beta,
    rng: RandomSource,
    accountant=None,
    label="subspace",
) -> linalg.Projector:
    """Privately recover the projector onto the top-k eigenspace.

    The promise is lambda_{k+1}(Sigma) / lambda_k(Sigma) < gamma^2.  The
    two phases (ball-finder centers, truncated noisy sums) each spend half
    the passed budget, so the ledger total stays within ``budget``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"expected an (n, d) sample matrix, got shape {x.shape}")
    n, d = x.shape
    params = subspace_params(n, d, k, gamma, psi, budget, beta)
    t, m, q = params.t, params.m, params.q
    _, _, per_center, per_sum = _phase_budgets(budget, q)

    refs = sample_reference_points(q, d, rng)

    chunks = x[: t * m].reshape(t, m, d)
    seconds = np.matmul(chunks.transpose(0, 2, 1), chunks)
    _, vecs = linalg.sym_eig_batch(seconds)
    bases = vecs[:, :, :k]  # (t, d, k)
    # p_i^j = Pi_j p_i for every subsample j and reference point i
    coords = np.einsum("tdk,qd->tqk", bases, refs)
    projected = np.einsum("tqk,tdk->tqd", coords, bases)

    sums_matrix = np.empty((d, q))
    for i in range(q):
        points = projected[:, i, :]
        result = ball_finder.find_center(
            points,
            params.r,
            per_center,
            beta / q,
            rng.child("center", i),
            accountant=accountant,
            label=f"{label}/center{i}",
        )
        delta_vec = points - result.center
        dist = np.linalg.norm(delta_vec, axis=1)
        scale = np.minimum(1.0, params.trunc_radius / np.maximum(dist, 1e-300))
        truncated = result.center + delta_vec * scale[:, None]
        noisy = truncated.sum(axis=0) + rng.child("sum", i).normal(
            scale=params.sigma, size=d
        )
        if accountant is not None:
            accountant.charge(
                f"{label}/sum{i}",
                per_sum,
                mechanism="gaussian",
                sensitivity=2.0 * params.trunc_radius,
            )
        sums_matrix[:, i] = noisy

    gram = sums_matrix @ sums_matrix.T
    spec = linalg.sym_eig(linalg.as_sym_matrix(gram))
    return linalg.top_k_projector(spec, k)


def boost(runs, tolerance) -> linalg.Projector:
    """Pick the run closest (within tolerance, spectral norm) to the most
    other runs; ties break toward the earliest run.

    Sound when the runs came from disjoint data splits: selection is then
    post-processing, and if more than half the runs satisfy the error
    bound the winner is within tolerance of a correct run.
    """
    if not runs:
        raise InvalidArgument("boost needs at least one run")
    if len(runs) == 1:
        return runs[0]
    mats = [r.matrix for r in runs]
    agreements = []
    for i, a in enumerate(mats):
        count = 0
        for j, b in enumerate(mats):
            if i == j:
                continue
            dist = np.abs(np.linalg.eigvalsh(a - b)).max()
            count += dist <= tolerance
        agreements.append(count)
    return runs[int(np.argmax(agreements))]


def recover_subspace_boosted(
    x,
    k,
    gamma,
    psi,
    budget,
    beta,
    rng: RandomSource,
    accountant=None,
    runs=BOOST_RUNS,
    label="subspace",
) -> linalg.Projector:
    """Majority-boosted recovery over ``runs`` disjoint splits of the data.

    Each split is charged the same budget; disjointness gives parallel
    composition, so the parent ledger records a single charge of ``budget``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if runs < 1:
        raise InvalidArgument(f"need runs >= 1, got {runs}")
    size = n // runs
    outputs = []
    for j in range(runs):
        chunk = x[j * size : (j + 1) * size]
        outputs.append(
            recover_subspace(chunk, k, gamma, psi, budget, beta, rng.child("boost", j))
        )
    if accountant is not None:
        accountant.charge(label, budget, mechanism="parallel_composition")
    return boost(outputs, BOOST_TOL_FACTOR * psi * gamma)
