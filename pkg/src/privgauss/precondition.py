"""Private preconditioning: make the data covariance O(1)-conditioned with
no prior bound on its spectrum.

Three layers:

* coarse step -- under a large consecutive eigengap at index k, recover the
  top-k subspace privately and rescale it by the estimated gap ratio, which
  crushes the gap;
* fine step -- under a bounded cumulative gap, probe the covariance with the
  naive estimator and rescale each large eigendirection individually;
* the scanning loop -- walk the eigenvalue indexes once, firing whichever
  step the privately estimated ratios call for, and accumulate the map.

The accumulated map is kept symmetric positive definite by replacing the
raw step product A with its SPD polar factor (A^T A)^{1/2}, which preserves
the spectrum of A Sigma A^T exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg, subspace
from .dp_core import PrivacyBudget, RandomSource, plan_shares
from .eigenvalues import estimate_eigenvalues
from .errors import DegenerateSpectrum, InvalidArgument
from .naive import naive_estimate

# Gap thresholds of the scanning loop.
TAU_SQ = 1.0 / 10000.0
GAMMA_BAR_SQ = 40.0 / 10000.0
# Requested subspace accuracy for the coarse step is gamma_bar^2 / this
# (clamped up to what the available sample size supports).
COARSE_PSI_DIVISOR = 100.0
# Fine step keeps directions with lambda_i(Z) >= lambda_{k+1}(Z) / (S_DIV gbar^2).
FINE_S_DIVISOR = 16.0
# Budget shares: one per call, at most this many calls.
CALLS_PER_ITERATION = 5
INITIAL_CALLS = 2


@dataclass(frozen=True)
class PreconditionStep:
    iteration: int
    kind: str  # "coarse" | "fine" | "skip"
    k: int
    ratios: dict
    epsilon_spent: float
    delta_spent: float

    def as_dict(self):
        return {
            "iteration": self.iteration,
            "kind": self.kind,
            "k": self.k,
            "ratios": dict(self.ratios),
            "epsilon_spent": self.epsilon_spent,
            "delta_spent": self.delta_spent,
        }


@dataclass
class PreconditionTrace:
    steps: list = field(default_factory=list)
    final_map: np.ndarray | None = None

    def as_dict(self):
        return {
            "steps": [s.as_dict() for s in self.steps],
            "final_map": None if self.final_map is None else self.final_map.tolist(),
        }


def max_calls(d):
    return CALLS_PER_ITERATION * (d - 1) + INITIAL_CALLS


def coarse_psi(gamma_bar_sq=GAMMA_BAR_SQ):
    return gamma_bar_sq / COARSE_PSI_DIVISOR


def coarse_precondition(
    x,
    k,
    gamma_hat,
    budget: PrivacyBudget,
    beta,
    rng: RandomSource,
    accountant=None,
    projector_override=None,
    label="coarse",
):
    """One coarse step: A = gamma_hat * P + (I - P) for the privately
    recovered top-k projector P.

    Promise: lambda_k / lambda_1 >= gamma_bar^2 and the true consecutive
    ratio lambda_{k+1} / lambda_k lies within a factor 4 of gamma_hat^2.
    The requested subspace accuracy gamma_bar^2/100 is clamped up to the
    best the sample size supports; the noiseless ``projector_override``
    hook bypasses recovery for closed-form tests.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 0.0 < gamma_hat <= 1.0:
        raise InvalidArgument(f"gamma_hat must lie in (0, 1], got {gamma_hat}")
    if gamma_hat == 1.0:
        return np.eye(d)
    if projector_override is not None:
        proj = projector_override
    else:
        psi = coarse_psi()
        psi = max(psi, subspace.feasible_psi(n, d, k, budget, beta))
        if psi >= 1.0:
            psi = 0.999
        proj = subspace.recover_subspace(
            x, k, gamma_hat, psi, budget, beta, rng.child("subspace"), accountant=accountant, label=label
        )
    p = proj.matrix
    return gamma_hat * p + (np.eye(d) - p)


def fine_precondition(
    x,
    k,
    gamma_bar,
    kappa,
    budget: PrivacyBudget,
    beta,
    rng: RandomSource,
    accountant=None,
    probe_override=None,
    label="fine",
):
    """One fine step: probe the covariance and shrink every direction with
    lambda_i(Z) >= lambda_{k+1}(Z) / (16 gamma_bar^2) down to that level.

    Promise: lambda_{k+1} / lambda_1 >= tau^2 gamma_bar^2.  ``probe_override``
    substitutes a noiseless Z for closed-form tests.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    if not 0.0 < gamma_bar <= 1.0:
        raise InvalidArgument(f"gamma_bar must lie in (0, 1], got {gamma_bar}")
    if not 1 <= k <= d - 1:
        raise InvalidArgument(f"k={k} out of range [1, {d - 1}]")
    if probe_override is not None:
        z = np.asarray(probe_override, dtype=np.float64)
    else:
        z = naive_estimate(
            x, budget, beta, rng.child("naive"), kappa2=kappa, accountant=accountant, label=label
        )
    spec = linalg.sym_eig(linalg.as_sym_matrix(z))
    lam = spec.eigenvalues
    pivot = lam[k]  # lambda_{k+1}(Z), 0-indexed
    if pivot <= 0.0:
        raise DegenerateSpectrum(f"lambda_{k + 1}(Z) = {pivot} is not positive")
    gbar_sq = gamma_bar * gamma_bar
    cutoff = pivot / (FINE_S_DIVISOR * gbar_sq)
    scales = np.ones(d)
    in_s = lam >= cutoff
    g = np.sqrt(np.maximum(lam, 0.0) / pivot)
    scales[in_s] = 1.0 / (4.0 * g[in_s] * gamma_bar)
    v = spec.eigenvectors
    a = (v * scales) @ v.T
    return 0.5 * (a + a.T)


def min_samples(d, budget, beta):
    """Published sample floor for the scanning loop (subroutine needs at the
    per-call budget share)."""
    from . import eigenvalues as eig_mod

    per_call = plan_shares(budget, max_calls(d)).per_call
    beta_i = beta / d
    needs = [eig_mod.min_samples(d, per_call, beta_i), 2 * d]
    for k in range(1, d):
        t = subspace.subsample_count(d, k, per_call, beta_i)
        needs.append(t * subspace.MIN_ROWS_PER_DIM * d)
    return max(needs)


def _spectrum_of(matrix):
    return linalg.sym_eig(linalg.as_sym_matrix(matrix)).eigenvalues


def precondition(x, budget: PrivacyBudget, beta, rng: RandomSource, accountant=None, label="precondition"):
    """Scan eigenvalue indexes once, firing coarse/fine steps as the private
    estimates call for, and return the accumulated SPD map with its trace.

    Every subroutine call gets an equal share of the budget sized for the
    worst-case call count, so the ledger total always lands within
    ``budget`` no matter which branches fire.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"expected an (n, d) sample matrix, got shape {x.shape}")
    n, d = x.shape
    trace = PreconditionTrace()
    if d == 1:
        trace.final_map = np.eye(1)
        return trace

    per_call = plan_shares(budget, max_calls(d)).per_call
    beta_i = beta / d
    gamma_bar = math.sqrt(GAMMA_BAR_SQ)

    a = np.eye(d)
    xa = x

    def spent(calls):
        return calls * per_call.epsilon, calls * per_call.delta

    def check_positive(values, what):
        if values[-1] <= 0.0:
            raise DegenerateSpectrum(
                f"{what} reports a non-positive bottom eigenvalue; "
                "rank-deficient input must be projected out upstream"
            )

    lam_hat = estimate_eigenvalues(
        xa, per_call, beta_i, rng.child("eig", 0), accountant=accountant, label=f"{label}/eig0"
    ).values
    check_positive(lam_hat, "initial eigenvalue estimate")
    z = naive_estimate(
        xa,
        per_call,
        beta_i,
        rng.child("naive", 0),
        kappa2=4.0 * lam_hat[0],
        accountant=accountant,
        label=f"{label}/naive0",
    )

    for i in range(1, d):
        calls = 0
        ratio_consec = lam_hat[i] / lam_hat[i - 1]
        ratio_cumul = lam_hat[i] / lam_hat[0]
        ratios = {"consecutive": ratio_consec, "cumulative": ratio_cumul}
        kind = "skip"
        k = i

        if ratio_consec < 4.0 * TAU_SQ:
            kind = "coarse"
            gamma_hat = math.sqrt(ratio_consec)
            b = coarse_precondition(
                xa,
                i,
                gamma_hat,
                per_call,
                beta_i,
                rng.child("coarse", i),
                accountant=accountant,
                label=f"{label}/coarse{i}",
            )
            calls += 1
            a = linalg.symmetric_polar_factor(b @ a)
            xa = x @ a
            ratios["gamma_hat"] = gamma_hat
            # fresh probe of the transformed data; its own internal scale
            # estimate, since lam_hat is stale after the coarse rescale
            z = naive_estimate(
                xa,
                per_call,
                beta_i,
                rng.child("naive_post", i),
                accountant=accountant,
                label=f"{label}/naive_post{i}",
            )
            calls += 1
            lam_z = _spectrum_of(z)
            if lam_z[0] > 0.0 and lam_z[i] / lam_z[0] < 4.0 * GAMMA_BAR_SQ:
                kind = "coarse+fine"
                ratios["post_coarse_probe"] = lam_z[i] / lam_z[0]
                kappa = lam_z[0]
                c = fine_precondition(
                    xa,
                    i,
                    gamma_bar,
                    kappa,
                    per_call,
                    beta_i,
                    rng.child("fine", i),
                    accountant=accountant,
                    label=f"{label}/fine{i}",
                )
                calls += 1
                a = linalg.symmetric_polar_factor(c @ a)
                xa = x @ a
        elif ratio_cumul < 4.0 * GAMMA_BAR_SQ:
            kind = "fine"
            lam_z = _spectrum_of(z)
            kappa = lam_z[0] if lam_z[0] > 0.0 else 4.0 * lam_hat[0]
            c = fine_precondition(
                xa,
                i,
                gamma_bar,
                kappa,
                per_call,
                beta_i,
                rng.child("fine", i),
                accountant=accountant,
                label=f"{label}/fine{i}",
            )
            calls += 1
            a = linalg.symmetric_polar_factor(c @ a)
            xa = x @ a

        # refresh for the next iteration: eigenvalues first so the probe's
        # spectral bound is never stale
        lam_hat = estimate_eigenvalues(
            xa, per_call, beta_i, rng.child("eig", i), accountant=accountant, label=f"{label}/eig{i}"
        ).values
        check_positive(lam_hat, f"eigenvalue refresh at iteration {i}")
        z = naive_estimate(
            xa,
            per_call,
            beta_i,
            rng.child("naive", i),
            kappa2=4.0 * lam_hat[0],
            accountant=accountant,
            label=f"{label}/naive{i}",
        )
        calls += 2

        spectrum_a = _spectrum_of(a)
        if spectrum_a[-1] <= 0.0:
            raise DegenerateSpectrum("accumulated preconditioner lost positive definiteness")
        eps_spent, delta_spent = spent(calls)
        trace.steps.append(
            PreconditionStep(
                iteration=i,
                kind=kind,
                k=k,
                ratios=ratios,
                epsilon_spent=eps_spent,
                delta_spent=delta_spent,
            )
        )

    trace.final_map = a
    return trace
