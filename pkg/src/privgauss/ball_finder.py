"""DP approximate-center finding for clustered point sets.

Given n points that mostly lie in some ball of radius r_opt, return a
center c such that a modestly inflated ball around c captures at least
half the points, under the charged (epsilon, delta) budget.

The aggregation is coordinate-wise: each coordinate runs a stability-based
histogram over bins of width r_opt (with a shared random offset, so the
center distribution is translation equivariant), the heavy bin's midpoint
is taken per coordinate, and the assembled center is snapped to a fixed
grid of cell width r_opt / (100 sqrt(D)).  Relative to an LSH-based center
finder this costs an extra sqrt(D) inside the inflation constant and a
poly(D) sample overhead, which is acceptable at the scales targeted here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dp_core import PrivacyBudget, RandomSource, plan_shares, stable_counts, stable_release_threshold
from .errors import BottomReleased, InsufficientSamples, InvalidArgument

# Radius inflation: radius_used = INFLATION * sqrt(D) * r_opt * sqrt(ln n).
INFLATION = 4.0
# Sample floor constant in n_min.
N_MIN_SCALE = 8.0
# A clustered bucket needs roughly this multiple of the release threshold
# to clear it with margin even when the cluster straddles two bins.
RELEASE_MARGIN = 4.0


@dataclass(frozen=True)
class BallResult:
    center: np.ndarray
    radius_used: float
    captured_fraction_estimate: float


def grid_cell(r_opt, dim):
    return r_opt / (100.0 * math.sqrt(dim))


def n_min(dim, budget: PrivacyBudget, beta):
    """Smallest point count find_center accepts.

    Combines the sqrt(D) polylog / eps shape with a floor that lets an
    entirely clustered dataset clear the per-coordinate release threshold.
    """
    if not 0.0 < beta < 1.0:
        raise InvalidArgument(f"beta must lie in (0, 1), got {beta}")
    shape = N_MIN_SCALE * math.sqrt(dim) * math.log(dim / (budget.delta * beta)) / budget.epsilon
    per_coord = plan_shares(budget, dim).per_call
    floor = RELEASE_MARGIN * stable_release_threshold(per_coord)
    return max(int(math.ceil(shape)), int(math.ceil(floor)), 4)


def find_center(points, r_opt, budget, beta, rng: RandomSource, accountant=None, label="ball_finder"):
    """Privately locate a center whose inflated ball captures >= n/2 points.

    The captured-fraction diagnostic is computed non-privately from the
    released center and is excluded from the DP claim (post-processing).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InvalidArgument(f"points must be an (n, D) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgument("points contain NaN or Inf")
    if not (math.isfinite(r_opt) and r_opt > 0.0):
        raise InvalidArgument(f"r_opt must be positive, got {r_opt}")
    n, dim = pts.shape
    needed = n_min(dim, budget, beta)
    if n < needed:
        raise InsufficientSamples(f"need at least {needed} points for D={dim}, got {n}")

    per_coord = plan_shares(budget, dim).per_call
    # Shared random bin offset (public randomness): makes the released
    # center distribution shift exactly with the data.
    offsets = rng.child("offset").uniform(0.0, r_opt, size=dim)
    cell = grid_cell(r_opt, dim)

    center = np.empty(dim)
    for j in range(dim):
        keys = np.floor((pts[:, j] - offsets[j]) / r_opt).astype(np.int64)
        uniq, counts = np.unique(keys, return_counts=True)
        table = {int(k): int(c) for k, c in zip(uniq, counts)}
        released = stable_counts(table, per_coord, rng.child("hist", j))
        if not released:
            raise BottomReleased(f"no heavy bin released for coordinate {j}")
        # heaviest noisy count; ties break toward the smaller coordinate
        best_key = None
        best_count = -math.inf
        for key in sorted(released):
            if released[key] > best_count:
                best_key, best_count = key, released[key]
        center[j] = offsets[j] + (best_key + 0.5) * r_opt

    center = np.round(center / cell) * cell
    if accountant is not None:
        accountant.charge(label, budget, mechanism="coordinate_stable_histogram")

    radius = INFLATION * math.sqrt(dim) * r_opt * math.sqrt(max(math.log(n), 1.0))
    dist = np.linalg.norm(pts - center, axis=1)
    captured = float(np.mean(dist <= radius)) if n else 0.0
    return BallResult(center=center, radius_used=radius, captured_fraction_estimate=captured)
