"""Streaming batch-selection engine with bounded memory.

Scoring is Gaussian posterior variance computed in feature space: with
training features Phi (n_T x d) and ridge lambda, the d x d precision
matrix M = (Phi^T Phi + lambda I)^-1 gives each candidate the score
s(x) = phi(x)^T M phi(x), and lambda * s(x) equals the kernel-space
posterior variance of x under the linear kernel. Candidates are scored
in chunks against the cached M while a running top-K shortlist tracks
the best scores, so peak auxiliary memory stays at O(d^2 + C d + K)
regardless of pool size; no pool-pool or train-pool kernel matrix is
ever materialised. Batch selection then runs on the shortlist: LCMD
(assign candidates to the nearest centre among train + already picked,
take the cluster with the largest total squared-distance mass, pick the
farthest point inside it) or plain greedy top-B.

Tie-breaking is "lowest index wins" everywhere, which makes results
reproducible and lets tests demand exact equality against brute-force
references. In deterministic mode the Gram accumulation and scoring use
a fixed per-row reduction order, so results are bitwise identical for
any chunk size; the fast mode reduces per chunk with BLAS and agrees
with deterministic mode to within a small relative tolerance.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .kernels import HEADER_SIZE, read_feature_header
from .validation import (
    NumericalError,
    ValidationError,
    check_matrix,
    check_option,
    check_positive,
)

__all__ = [
    "ScratchCounter",
    "ArrayFeatureSource",
    "FeatureFileSource",
    "GaussianFeatureSource",
    "as_feature_source",
    "PosteriorVarianceScorer",
    "Shortlist",
    "stream_shortlist",
    "SelectionResult",
    "lcmd_select",
    "greedy_select",
    "random_select",
    "CommitteeScores",
    "committee_scores",
    "dense_pv_scores",
]

# heap entries are (score, -index) pairs of Python floats/ints
_SHORTLIST_ENTRY_BYTES = 24


class ScratchCounter:
    """Explicit accounting of engine scratch buffers, in bytes.

    Code paths register the working buffers they materialise under a
    tag; the counter tracks the current total and the peak. This is the
    number reported as ``scratch_bytes`` in stats records: it covers the
    buffers whose scaling the memory contract constrains (Gram and
    precision matrices, chunk staging, score vectors, the shortlist, and
    any dense kernel a non-chunked path allocates), not interpreter
    overhead.
    """

    def __init__(self):
        self._sizes = {}
        self.current = 0
        self.peak = 0

    def alloc(self, tag, nbytes):
        self.current += int(nbytes) - self._sizes.get(tag, 0)
        self._sizes[tag] = int(nbytes)
        self.peak = max(self.peak, self.current)

    def free(self, tag):
        self.current -= self._sizes.pop(tag, 0)

    def reset(self):
        self._sizes.clear()
        self.current = 0
        self.peak = 0


# ---------------------------------------------------------------------------
# Feature sources: anything exposing n_rows, dim, iter_chunks, take


class ArrayFeatureSource:
    """In-memory feature matrix presented as a chunk stream."""

    def __init__(self, X):
        self.X = check_matrix(X, "features")

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def iter_chunks(self, chunk_size):
        for start in range(0, self.n_rows, chunk_size):
            yield start, self.X[start : start + chunk_size]

    def take(self, indices):
        return self.X[np.asarray(indices, dtype=np.int64)]


class FeatureFileSource:
    """Chunked reader over a PFFM feature file; rows are never all resident."""

    def __init__(self, path):
        self.path = path
        self.n_rows, self.dim, self.precision = read_feature_header(path)
        self._dtype = "<f4" if self.precision == 4 else "<f8"

    def _read_rows(self, start, count):
        with open(self.path, "rb") as fh:
            fh.seek(HEADER_SIZE + start * self.dim * self.precision)
            data = np.frombuffer(
                fh.read(count * self.dim * self.precision), dtype=self._dtype
            )
        if data.size != count * self.dim:
            raise ValidationError(f"{self.path}: truncated feature payload")
        return data.astype(np.float64).reshape(count, self.dim)

    def iter_chunks(self, chunk_size):
        for start in range(0, self.n_rows, chunk_size):
            count = min(chunk_size, self.n_rows - start)
            yield start, self._read_rows(start, count)

    def take(self, indices):
        return np.vstack([self._read_rows(int(i), 1) for i in indices])


class GaussianFeatureSource:
    """Deterministic synthetic standard-normal rows for scaling benches.

    Rows are generated in fixed-size internal blocks seeded by
    (seed, block index), so the row stream does not depend on the
    iteration chunk size and random access is cheap.
    """

    _BLOCK = 1024

    def __init__(self, n_rows, dim, seed=0):
        if n_rows < 1 or dim < 1:
            raise ValidationError("synthetic source needs n_rows >= 1 and dim >= 1")
        self.n_rows = int(n_rows)
        self.dim = int(dim)
        self.seed = int(seed)

    def _block(self, block_index):
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, block_index])
        )
        count = min(self._BLOCK, self.n_rows - block_index * self._BLOCK)
        return rng.standard_normal((count, self.dim))

    def _rows(self, start, stop):
        parts = []
        b = start // self._BLOCK
        while b * self._BLOCK < stop:
            block = self._block(b)
            lo = max(start - b * self._BLOCK, 0)
            hi = min(stop - b * self._BLOCK, block.shape[0])
            parts.append(block[lo:hi])
            b += 1
        return np.vstack(parts)

    def iter_chunks(self, chunk_size):
        for start in range(0, self.n_rows, chunk_size):
            yield start, self._rows(start, min(start + chunk_size, self.n_rows))

    def take(self, indices):
        return np.vstack([self._rows(int(i), int(i) + 1) for i in indices])


def as_feature_source(obj):
    if hasattr(obj, "iter_chunks"):
        return obj
    return ArrayFeatureSource(obj)


# ---------------------------------------------------------------------------
# Posterior-variance scoring


class PosteriorVarianceScorer(BaseEstimator):
    """Feature-space posterior-variance scorer with chunked accumulation.

    ``partial_fit`` accumulates the Gram matrix over training-feature
    chunks, ``finalize`` inverts (Gram + ridge I) through a symmetric
    positive-definite factorisation, and ``score_samples`` returns
    s(x) = phi^T M phi per row. ``fit`` does all three for a matrix or
    feature source. Scores relate to kernel posterior variance by
    sigma^2 = ridge * s.
    """

    def __init__(self, ridge=1e-4, deterministic=True, counter=None):
        self.ridge = ridge
        self.deterministic = deterministic
        self.counter = counter

    # -- state management ---------------------------------------------------

    def reset(self, dim) -> "PosteriorVarianceScorer":
        if dim < 1:
            raise ValidationError("feature dimension must be >= 1")
        self.dim_ = int(dim)
        self.gram_ = np.zeros((dim, dim))
        self.n_seen_ = 0
        self.precision_ = None
        if self.counter is not None:
            self.counter.alloc("pv.gram", self.gram_.nbytes)
        return self

    def partial_fit(self, chunk) -> "PosteriorVarianceScorer":
        """Add chunk^T chunk to the Gram accumulator; invalidates the inverse."""
        if not hasattr(self, "gram_"):
            self.reset(np.asarray(chunk).shape[1])
        chunk = check_matrix(chunk, "chunk", n_cols=self.dim_)
        if self.deterministic:
            # fixed per-row reduction order, independent of chunking
            for row in chunk:
                self.gram_ += np.outer(row, row)
        else:
            self.gram_ += chunk.T @ chunk
        self.n_seen_ += chunk.shape[0]
        self.precision_ = None
        return self

    def finalize(self) -> "PosteriorVarianceScorer":
        """Invert (Gram + ridge I) via Cholesky; makes the scorer usable."""
        if not hasattr(self, "gram_"):
            raise NotFittedError("no features accumulated; call reset/partial_fit first")
        check_positive(self.ridge, "ridge")
        system = self.gram_ + self.ridge * np.eye(self.dim_)
        if not np.all(np.isfinite(system)):
            raise NumericalError("Gram accumulator contains non-finite values")
        try:
            chol = scipy.linalg.cho_factor(system, lower=True)
            precision = scipy.linalg.cho_solve(chol, np.eye(self.dim_))
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"precision factorization failed: {exc}") from exc
        self.precision_ = 0.5 * (precision + precision.T)
        if self.counter is not None:
            self.counter.alloc("pv.precision", self.precision_.nbytes)
        return self

    def fit(self, X, y=None, chunk_size=None) -> "PosteriorVarianceScorer":
        """Accumulate all rows of a matrix or feature source, then finalize."""
        source = as_feature_source(X)
        self.reset(source.dim)
        for _, chunk in source.iter_chunks(chunk_size or max(1, source.n_rows)):
            self.partial_fit(chunk)
        return self.finalize()

    def fit_empty(self, dim) -> "PosteriorVarianceScorer":
        """No training data: the precision is I / ridge."""
        return self.reset(dim).finalize()

    # -- scoring --------------------------------------------------------------

    def score_samples(self, X) -> np.ndarray:
        """Posterior-variance scores s = phi^T M phi, one per row; all >= 0."""
        if getattr(self, "precision_", None) is None:
            raise NotFittedError("scorer not finalized; call fit or finalize first")
        X = check_matrix(X, "features", n_cols=self.dim_)
        if self.deterministic:
            return np.array([float(row @ self.precision_ @ row) for row in X])
        return np.einsum("ij,ij->i", X @ self.precision_, X)


# ---------------------------------------------------------------------------
# Streaming top-K shortlist


@dataclass(frozen=True)
class Shortlist:
    """The K highest-scoring candidates seen, best first; ties favour low index."""

    capacity: int
    indices: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return self.indices.size


def stream_shortlist(source, scorer, k, chunk_size, counter=None) -> Shortlist:
    """Score a pool in chunks and keep a running top-K shortlist.

    Returns exactly the K highest-scoring candidates (all of them when K
    is at least the pool size), breaking score ties toward the lower
    candidate index. Auxiliary memory is one chunk of features, one
    chunk of scores, and the K-entry heap.
    """
    if k < 1:
        raise ValidationError("shortlist capacity must be >= 1")
    if chunk_size < 1:
        raise ValidationError("chunk size must be >= 1")
    source = as_feature_source(source)
    if source.n_rows == 0:
        raise ValidationError("candidate pool is empty")
    if counter is not None:
        counter.alloc("shortlist.chunk", chunk_size * source.dim * 8)
        counter.alloc("shortlist.scores", chunk_size * 8)
        counter.alloc("shortlist.heap", min(k, source.n_rows) * _SHORTLIST_ENTRY_BYTES)
    heap: list = []
    for start, chunk in source.iter_chunks(chunk_size):
        scores = scorer.score_samples(chunk)
        if len(heap) < k:
            take = min(k - len(heap), scores.size)
            for j in range(take):
                heapq.heappush(heap, (float(scores[j]), -(start + j)))
            offset = take
        else:
            offset = 0
        if offset < scores.size:
            threshold = heap[0][0]
            for j in np.nonzero(scores[offset:] >= threshold)[0]:
                entry = (float(scores[offset + j]), -(start + offset + int(j)))
                if entry > heap[0]:
                    heapq.heapreplace(heap, entry)
                    threshold = heap[0][0]
    ordered = sorted(heap, key=lambda e: (-e[0], -e[1]))
    if counter is not None:
        counter.free("shortlist.chunk")
        counter.free("shortlist.scores")
    return Shortlist(
        capacity=k,
        indices=np.array([-neg for _, neg in ordered], dtype=np.int64),
        scores=np.array([s for s, _ in ordered]),
    )


# ---------------------------------------------------------------------------
# Batch selection


@dataclass(frozen=True)
class SelectionResult:
    """Ordered batch of candidate indices with per-step diagnostics."""

    indices: np.ndarray
    scores: np.ndarray | None = None
    cluster_mass: np.ndarray | None = None
    distance: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.indices.size


def lcmd_select(candidates, centres, batch_size, counter=None) -> SelectionResult:
    """Largest-cluster maximum-distance selection over shortlist features.

    Each step assigns every unselected candidate to its nearest centre
    (training points plus previous picks), computes each cluster's total
    squared-distance mass, takes the cluster with the largest mass among
    those with at least one candidate (ties toward the lower centre
    index), and picks the farthest candidate inside it (ties toward the
    lower candidate index). Distances are squared Euclidean in feature
    space.
    """
    candidates = check_matrix(candidates, "candidates")
    centres = check_matrix(centres, "centres", n_cols=candidates.shape[1])
    if centres.shape[0] == 0:
        raise ValidationError("centre set must be non-empty")
    if batch_size < 1:
        raise ValidationError("batch size must be >= 1")
    n = candidates.shape[0]
    if batch_size > n:
        warnings.warn(
            f"batch size {batch_size} exceeds shortlist size {n}; selecting all",
            stacklevel=2,
        )
        batch_size = n
    if counter is not None:
        counter.alloc("lcmd.state", n * 24 + (centres.shape[0] + batch_size) * 8)

    # nearest existing centre; ascending centre order keeps the lowest
    # index on exact distance ties
    nearest_d2 = np.full(n, np.inf)
    assign = np.zeros(n, dtype=np.int64)
    for ci in range(centres.shape[0]):
        dist = ((candidates - centres[ci]) ** 2).sum(axis=1)
        better = dist < nearest_d2
        assign[better] = ci
        nearest_d2[better] = dist[better]

    n_centres = centres.shape[0]
    alive = np.ones(n, dtype=bool)
    picked = np.empty(batch_size, dtype=np.int64)
    picked_mass = np.empty(batch_size)
    picked_dist = np.empty(batch_size)
    for step in range(batch_size):
        total = n_centres + step
        masses = np.bincount(assign[alive], weights=nearest_d2[alive], minlength=total)
        counts = np.bincount(assign[alive], minlength=total)
        masses[counts == 0] = -np.inf  # a cluster with no candidates is ineligible
        c_star = int(np.argmax(masses))
        members = np.nonzero(alive & (assign == c_star))[0]
        best = int(members[np.argmax(nearest_d2[members])])
        picked[step] = best
        picked_mass[step] = masses[c_star]
        picked_dist[step] = nearest_d2[best]
        alive[best] = False
        dist = ((candidates - candidates[best]) ** 2).sum(axis=1)
        better = dist < nearest_d2
        assign[better] = n_centres + step
        nearest_d2[better] = dist[better]
    if counter is not None:
        counter.free("lcmd.state")
    return SelectionResult(
        indices=picked, cluster_mass=picked_mass, distance=picked_dist
    )


def greedy_select(scores, batch_size) -> SelectionResult:
    """Top-B candidates by score, no reconditioning; ties toward lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValidationError("scores must be a non-empty 1-d array")
    if batch_size < 1:
        raise ValidationError("batch size must be >= 1")
    if batch_size > scores.size:
        warnings.warn(
            f"batch size {batch_size} exceeds pool size {scores.size}; selecting all",
            stacklevel=2,
        )
        batch_size = scores.size
    order = np.argsort(-scores, kind="stable")[:batch_size]
    return SelectionResult(indices=order.astype(np.int64), scores=scores[order])


def random_select(pool_size, batch_size, seed) -> SelectionResult:
    """Uniform sample without replacement; reproducible from the seed."""
    if batch_size < 1:
        raise ValidationError("batch size must be >= 1")
    if batch_size > pool_size:
        raise ValidationError(
            f"cannot draw {batch_size} candidates from a pool of {pool_size}"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(pool_size, size=batch_size, replace=False)
    return SelectionResult(indices=idx.astype(np.int64))


# ---------------------------------------------------------------------------
# Committee disagreement


@dataclass(frozen=True)
class CommitteeScores:
    """Per-candidate disagreement of a model committee."""

    energy_variance: np.ndarray
    force_variance: np.ndarray
    mode: str

    @property
    def scores(self) -> np.ndarray:
        return self.energy_variance if self.mode == "energy" else self.force_variance


def committee_scores(member_predictions, mode) -> CommitteeScores:
    """Disagreement scores from per-member candidate predictions.

    ``member_predictions`` holds, for each of the M >= 2 members, a
    sequence of (energy, forces) pairs over the same candidates. Energy
    disagreement is the population variance of member energies. Force
    disagreement is the per-atom force-component variance across
    members, summed over the three axes and averaged over atoms.
    """
    check_option(mode, "committee mode", ("energy", "force"))
    members = [list(m) for m in member_predictions]
    if len(members) < 2:
        raise ValidationError("committee needs at least two members")
    n = len(members[0])
    if n == 0 or any(len(m) != n for m in members):
        raise ValidationError("members must predict the same non-empty candidate list")
    energies = np.array([[float(e) for e, _ in m] for m in members])
    # shifting by the first member keeps the variance exactly zero when
    # every member agrees bitwise
    energy_var = (energies - energies[0]).var(axis=0)
    force_var = np.empty(n)
    for c in range(n):
        arrays = [np.asarray(m[c][1], dtype=np.float64) for m in members]
        if any(a.shape != arrays[0].shape or a.ndim != 2 or a.shape[1] != 3
               for a in arrays):
            raise ValidationError(f"inconsistent force shapes for candidate {c}")
        stack = np.stack(arrays)
        force_var[c] = (stack - stack[0]).var(axis=0).sum(axis=1).mean()
    return CommitteeScores(energy_var, force_var, mode)


# ---------------------------------------------------------------------------
# Dense comparison path (for the scaling bench only)


def dense_pv_scores(train_features, pool_features, ridge, counter=None):
    """Non-chunked posterior variance via the full kernel matrix.

    Materialises the (n_T + n_P)^2 kernel the way a naive implementation
    would, so its scratch accounting grows quadratically with pool size.
    Returns kernel-space posterior variances sigma^2 (= ridge * s).
    """
    train_features = check_matrix(train_features, "train_features")
    pool_features = check_matrix(
        pool_features, "pool_features", n_cols=train_features.shape[1]
    )
    check_positive(ridge, "ridge")
    n_t = train_features.shape[0]
    stacked = np.vstack([train_features, pool_features])
    kernel = stacked @ stacked.T
    if counter is not None:
        counter.alloc("dense.kernel", kernel.nbytes)
    k_tt = kernel[:n_t, :n_t]
    k_pt = kernel[n_t:, :n_t]
    diag_pp = np.diagonal(kernel)[n_t:].copy()
    if counter is not None:
        counter.alloc("dense.cross", k_pt.nbytes)
    if n_t == 0:
        sigma2 = diag_pp
    else:
        try:
            solved = np.linalg.solve(k_tt + ridge * np.eye(n_t), k_pt.T)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"dense posterior-variance solve failed: {exc}") from exc
        sigma2 = diag_pp - np.einsum("ij,ji->i", k_pt, solved)
    if counter is not None:
        counter.free("dense.cross")
        counter.free("dense.kernel")
    return sigma2
