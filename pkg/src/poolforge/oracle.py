"""Brute-force reference implementations used by tests and `oracle-check`.

Everything here trades efficiency for obviousness and shares no code
with the engine paths it validates: posterior variance is evaluated in
kernel space with an LU solve (the engine factorises the feature-space
precision matrix with Cholesky), top-K comes from a full sort (the
engine streams a heap), and LCMD recomputes complete distance matrices
every step (the engine updates nearest-centre state incrementally).
Capped at small instance sizes; these are correctness references, not
production paths.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .validation import NumericalError, ValidationError

__all__ = [
    "MAX_ORACLE_POINTS",
    "kernel_posterior_variance",
    "dense_top_k",
    "reference_lcmd",
    "GradientCheckReport",
    "fd_gradient_check",
    "run_oracle_checks",
]

MAX_ORACLE_POINTS = 1000


def _check_size(n, what):
    if n > MAX_ORACLE_POINTS:
        raise ValidationError(
            f"oracle {what} capped at {MAX_ORACLE_POINTS} points, got {n}"
        )


def kernel_posterior_variance(k_self, k_train, train_kernel, ridge) -> np.ndarray:
    """Gaussian posterior variance from explicit kernel blocks.

    sigma^2(x) = k(x,x) - k_T(x)^T (K_TT + ridge I)^-1 k_T(x), with one
    row of ``k_train`` per candidate. An empty training set gives
    sigma^2 = k(x,x).
    """
    k_self = np.atleast_1d(np.asarray(k_self, dtype=np.float64))
    k_train = np.asarray(k_train, dtype=np.float64)
    train_kernel = np.asarray(train_kernel, dtype=np.float64)
    n_t = train_kernel.shape[0]
    _check_size(max(n_t, k_self.size), "posterior variance")
    if ridge <= 0:
        raise ValidationError("ridge must be positive")
    if n_t == 0:
        return k_self.copy()
    if k_train.ndim != 2 or k_train.shape != (k_self.size, n_t):
        raise ValidationError(
            f"k_train must have shape ({k_self.size}, {n_t}), got {k_train.shape}"
        )
    try:
        solved = np.linalg.solve(train_kernel + ridge * np.eye(n_t), k_train.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular training system: {exc}") from exc
    return k_self - np.einsum("ij,ji->i", k_train, solved)


def dense_top_k(scores, k) -> np.ndarray:
    """Indices of the k largest scores via a full sort; ties favour low index."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_size(scores.size, "top-k")
    if k < 1:
        raise ValidationError("k must be >= 1")
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[: min(k, scores.size)].astype(np.int64)


def reference_lcmd(candidates, centres, batch_size):
    """Quadratic LCMD reference: full distance matrices, rebuilt every step.

    Implements the same rule as the engine (largest-mass cluster among
    those holding a candidate, farthest member, lowest-index ties) and
    returns (indices, masses, distances).
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    centres = np.asarray(centres, dtype=np.float64)
    _check_size(candidates.shape[0] + centres.shape[0], "lcmd")
    if centres.shape[0] == 0:
        raise ValidationError("centre set must be non-empty")
    n = candidates.shape[0]
    batch_size = min(batch_size, n)
    chosen: list[int] = []
    masses_out = []
    dists_out = []
    for _ in range(batch_size):
        all_centres = (
            np.vstack([centres, candidates[chosen]]) if chosen else centres
        )
        remaining = np.array([i for i in range(n) if i not in chosen])
        dmat = (
            (candidates[remaining][:, None, :] - all_centres[None, :, :]) ** 2
        ).sum(axis=2)
        assign = np.argmin(dmat, axis=1)
        d2 = dmat[np.arange(remaining.size), assign]
        best_cluster, best_mass = None, -np.inf
        for c in range(all_centres.shape[0]):
            mask = assign == c
            if not mask.any():
                continue
            mass = float(d2[mask].sum())
            if mass > best_mass:
                best_cluster, best_mass = c, mass
        members = remaining[assign == best_cluster]
        member_d2 = d2[assign == best_cluster]
        pick = int(members[np.argmax(member_d2)])
        chosen.append(pick)
        masses_out.append(best_mass)
        dists_out.append(float(member_d2[np.argmax(member_d2)]))
    return np.array(chosen, dtype=np.int64), np.array(masses_out), np.array(dists_out)


@dataclass(frozen=True)
class GradientCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_error: float
    max_relative_error: float


def fd_gradient_check(f, grad, point, step) -> GradientCheckReport:
    """Compare an analytic gradient against central finite differences.

    The relative error is the largest component mismatch divided by the
    largest finite-difference magnitude (or 1 when the gradient
    vanishes), so linear functions come out at roundoff level and the
    error of smooth functions shrinks quadratically with the step.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad(point), dtype=np.float64)
    numeric = np.empty_like(point)
    for i in range(point.size):
        shifted = point.copy()
        shifted.flat[i] += step
        hi = f(shifted)
        shifted.flat[i] -= 2 * step
        lo = f(shifted)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"non-finite function evaluation at component {i}")
        numeric.flat[i] = (hi - lo) / (2 * step)
    max_abs = float(np.abs(analytic - numeric).max())
    scale = float(np.abs(numeric).max())
    return GradientCheckReport(
        analytic=analytic,
        numeric=numeric,
        max_abs_error=max_abs,
        max_relative_error=max_abs / (scale if scale > 0 else 1.0),
    )


# ---------------------------------------------------------------------------
# The oracle-check sweeps


def _check_woodbury(rng, report):
    from .acquisition import PosteriorVarianceScorer

    worst = 0.0
    rank_ok = True
    for d in (4, 16):
        for n_t in (0, 1, 40):
            X_t = rng.standard_normal((n_t, d))
            X_p = rng.standard_normal((150, d))
            ridge = 10.0 ** rng.uniform(-4, 0)
            scorer = PosteriorVarianceScorer(ridge=ridge)
            if n_t:
                scorer.fit(X_t, chunk_size=7)
            else:
                scorer.fit_empty(d)
            s = scorer.score_samples(X_p)
            sigma2 = kernel_posterior_variance(
                np.einsum("ij,ij->i", X_p, X_p), X_p @ X_t.T, X_t @ X_t.T, ridge
            )
            worst = max(worst, float(np.abs(ridge * s - sigma2).max() / np.abs(sigma2).max()))
            rank_ok &= bool(np.array_equal(np.argsort(-s), np.argsort(-sigma2)))
    ok = worst < 1e-8 and rank_ok
    report(
        f"posterior variance vs kernel oracle: max rel err {worst:.2e}, "
        f"rankings {'match' if rank_ok else 'DIFFER'}",
        ok,
    )
    return ok


def _check_shortlist(rng, report):
    from .acquisition import PosteriorVarianceScorer, stream_shortlist

    d, n = 8, 200
    X_t = rng.standard_normal((20, d))
    X_p = rng.standard_normal((n, d))
    X_p[50] = X_p[10]  # force exact score ties
    X_p[120] = X_p[10]
    scorer = PosteriorVarianceScorer(ridge=1e-2).fit(X_t)
    scores = scorer.score_samples(X_p)
    ok = True
    for k in (1, 7, n // 2, n):
        expected = dense_top_k(scores, k)
        for chunk in (1, 3, 17, n):
            got = stream_shortlist(X_p, scorer, k, chunk).indices
            ok &= bool(np.array_equal(np.sort(got), np.sort(expected)))
    report("streaming shortlist vs full-sort oracle (ties included)", ok)
    return ok


def _check_lcmd(rng, report):
    from .acquisition import lcmd_select

    ok = True
    for _ in range(20):
        n = int(rng.integers(5, 80))
        d = int(rng.integers(2, 8))
        b = int(rng.integers(1, min(n, 10) + 1))
        cand = rng.standard_normal((n, d))
        cent = rng.standard_normal((int(rng.integers(1, 6)), d))
        got = lcmd_select(cand, cent, b)
        want, _, _ = reference_lcmd(cand, cent, b)
        ok &= bool(np.array_equal(got.indices, want))
    report("streaming LCMD vs quadratic reference (20 instances)", ok)
    return ok


def _check_derivatives(rng, report):
    from .potential import (
        DescriptorConfig,
        ModelParams,
        energy,
        forces,
    )
    from .structures import Structure

    cfg = DescriptorConfig()
    params = ModelParams.random(3, 4, 8, cfg.n_centers, seed=11)
    x = Structure(rng.integers(0, 3, 5), rng.uniform(0, 2.5, (5, 3)))
    check = fd_gradient_check(
        f=lambda p: energy(params, cfg, Structure(x.species, p.reshape(-1, 3))),
        grad=lambda p: -forces(
            params, cfg, Structure(x.species, p.reshape(-1, 3))
        ).ravel(),
        point=x.positions.ravel(),
        step=1e-4,
    )
    ok = check.max_relative_error < 1e-5
    report(f"analytic forces vs finite differences: rel err {check.max_relative_error:.2e}", ok)
    return ok


def run_oracle_checks(seed=0, stream=None) -> bool:
    """Run all oracle sweeps, print a report, return True iff all pass."""
    stream = stream or sys.stdout

    results = []

    def report(message, ok):
        results.append(ok)
        stream.write(f"[{'ok' if ok else 'FAIL'}] {message}\n")

    rng = np.random.default_rng(seed)
    _check_woodbury(rng, report)
    _check_shortlist(rng, report)
    _check_lcmd(rng, report)
    _check_derivatives(rng, report)
    all_ok = all(results)
    stream.write(
        f"{'all checks passed' if all_ok else 'SOME CHECKS FAILED'} "
        f"({sum(results)}/{len(results)})\n"
    )
    return all_ok
