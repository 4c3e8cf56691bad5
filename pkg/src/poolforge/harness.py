"""Synthetic benchmark: pathway generation, biased pools, and the AL loop.

The benchmark builds labelled data from a held-out teacher model (same
architecture as the student, wider hidden layer, independent seed):
each reaction family owns a base geometry, each pathway instance
interpolates linearly between two randomly perturbed endpoint copies of
it, and each frame adds Gaussian jitter. Frames are tagged with
(family, instance, frame), which lets candidate pools be skewed across
families (weights w_r, sampled with probability proportional to
w_r * N_r) and along the pathway coordinate (frame weights pi_f).

The offline loop is the usual pool-based round structure: score and
select a batch from the pool, move it with its labels into the training
set, retrain the student from its fixed initial parameters, evaluate on
the fixed balanced test set, and log per-round metrics. Energy errors
are reported per atom in meV, force errors per component in meV/A, and
the learning-curve AUC of a metric is its discrete sum over rounds.

All randomness derives from one root seed through named sub-streams
(teacher, data, split, student, shuffle, selection), so any component
can be varied independently and runs are bitwise reproducible.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .acquisition import (
    ArrayFeatureSource,
    PosteriorVarianceScorer,
    ScratchCounter,
    committee_scores,
    greedy_select,
    lcmd_select,
    random_select,
    stream_shortlist,
)
from .kernels import make_feature_map
from .potential import NeuralPotential
from .structures import LabeledStructure, Structure
from .validation import ValidationError, check_option

__all__ = [
    "named_seed",
    "PathwaySpec",
    "BiasSpec",
    "generate_pathways",
    "PoolSampler",
    "biased_pool",
    "BenchmarkData",
    "build_benchmark",
    "MetricsEntry",
    "compute_metrics",
    "auc",
    "ALConfig",
    "RoundLog",
    "al_loop",
    "SELECTION_METHODS",
    "write_round_logs",
    "write_summary",
]

_STREAMS = {
    "teacher": 0,
    "data": 1,
    "split": 2,
    "student": 3,
    "shuffle": 4,
    "selection": 5,
}


def named_seed(root_seed, name, *extra) -> np.random.SeedSequence:
    """Derive the named sub-stream of a root seed (plus optional keys)."""
    if name not in _STREAMS:
        raise ValidationError(f"unknown random stream {name!r}")
    return np.random.SeedSequence([int(root_seed), _STREAMS[name], *map(int, extra)])


# ---------------------------------------------------------------------------
# Pathway generation


@dataclass(frozen=True)
class PathwaySpec:
    """Geometry of the synthetic reaction-pathway corpus."""

    families: int = 5
    instances_per_family: int = 80
    frames: int = 10
    atoms_min: int = 4
    atoms_max: int = 8
    n_species: int = 4
    endpoint_scale: float = 0.35  # endpoint perturbation, Angstrom
    jitter: float = 0.05  # per-frame Gaussian jitter, Angstrom
    min_distance: float = 0.5  # hard floor on interatomic distances
    base_spacing: float = 1.3  # minimum separation in family base geometries

    def __post_init__(self):
        if self.families < 1 or self.frames < 2 or self.instances_per_family < 1:
            raise ValidationError("need families >= 1, instances >= 1, frames >= 2")
        if not (1 <= self.atoms_min <= self.atoms_max):
            raise ValidationError("need 1 <= atoms_min <= atoms_max")
        if self.endpoint_scale <= 0 or self.jitter < 0 or self.min_distance <= 0:
            raise ValidationError("scales must be positive (jitter may be zero)")


@dataclass(frozen=True)
class BiasSpec:
    """Sampling weights: one per family (> 0) and one per frame (>= 0)."""

    family_weights: tuple = ()
    frame_weights: tuple = ()

    def resolved(self, families, frames):
        fam = np.asarray(self.family_weights or np.ones(families), dtype=np.float64)
        frm = np.asarray(self.frame_weights or np.ones(frames), dtype=np.float64)
        if fam.shape != (families,) or np.any(fam <= 0):
            raise ValidationError(f"family weights must be {families} positive values")
        if frm.shape != (frames,) or np.any(frm < 0) or not np.any(frm > 0):
            raise ValidationError(
                f"frame weights must be {frames} non-negative values, not all zero"
            )
        return fam, frm


def _min_pair_distance(positions):
    if positions.shape[0] < 2:
        return np.inf
    diff = positions[:, None, :] - positions[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _random_cluster(rng, n_atoms, spacing, max_tries=1000):
    """Compact random geometry with a minimum pairwise separation."""
    side = spacing * max(1.5, n_atoms ** (1 / 3) * 1.4)
    for _ in range(max_tries):
        pos = rng.uniform(0.0, side, (n_atoms, 3))
        if _min_pair_distance(pos) >= spacing:
            return pos
    raise ValidationError(
        f"could not place {n_atoms} atoms with spacing {spacing} in {max_tries} tries"
    )


def generate_pathways(spec: PathwaySpec, teacher: NeuralPotential, seed) -> list:
    """Teacher-labelled pathway frames, tagged with (family, instance, frame).

    Each instance interpolates linearly between two endpoint geometries
    (family base plus Gaussian perturbations) and adds per-frame jitter.
    Instances whose frames violate the minimum interatomic distance are
    redrawn; after 1000 failed attempts a geometry error is raised.
    """
    rng = np.random.default_rng(seed)
    alphas = np.linspace(0.0, 1.0, spec.frames)
    labeled = []
    for family in range(spec.families):
        n_atoms = int(rng.integers(spec.atoms_min, spec.atoms_max + 1))
        species = rng.integers(0, spec.n_species, n_atoms)
        base = _random_cluster(rng, n_atoms, spec.base_spacing)
        for instance in range(spec.instances_per_family):
            for attempt in range(1000):
                end_a = base + spec.endpoint_scale * rng.standard_normal((n_atoms, 3))
                end_b = base + spec.endpoint_scale * rng.standard_normal((n_atoms, 3))
                frames = (
                    end_a[None] + alphas[:, None, None] * (end_b - end_a)[None]
                    + spec.jitter * rng.standard_normal((spec.frames, n_atoms, 3))
                )
                if all(_min_pair_distance(f) >= spec.min_distance for f in frames):
                    break
            else:
                raise ValidationError(
                    f"family {family} instance {instance}: no collision-free "
                    f"pathway found in 1000 attempts"
                )
            structures = [Structure(species, f) for f in frames]
            tags = [
                {"family": family, "instance": instance, "frame": f}
                for f in range(spec.frames)
            ]
            labeled.extend(teacher.label(structures, tags))
    return labeled


# ---------------------------------------------------------------------------
# Biased pool sampling


class PoolSampler:
    """Two-stage sampler over tagged structures, without replacement.

    A draw first picks a family with probability proportional to
    w_r * N_r over the remaining structures, then a frame within the
    family with probability proportional to pi_f over frames that still
    have stock, then a uniform instance inside that (family, frame)
    cell. Structures in zero-weight frames are never drawn.
    """

    def __init__(self, labeled, bias: BiasSpec, families, frames):
        self.family_w, self.frame_w = bias.resolved(families, frames)
        self.cells = {}
        for idx, item in enumerate(labeled):
            key = (item.tags["family"], item.tags["frame"])
            self.cells.setdefault(key, []).append(idx)
        self.cells = {k: np.asarray(v, dtype=np.int64) for k, v in self.cells.items()}
        self.families = families
        self.frames = frames

    def available(self):
        return sum(
            self.cells[k].size
            for k in self.cells
            if self.frame_w[k[1]] > 0
        )

    def sample(self, pool_size, seed) -> np.ndarray:
        if pool_size > self.available():
            raise ValidationError(
                f"cannot sample {pool_size} structures, only {self.available()} "
                f"available under the frame weights"
            )
        rng = np.random.default_rng(seed)
        remaining = {}  # copy-on-write per cell: (array, live count)
        counts = np.zeros((self.families, self.frames), dtype=np.int64)
        for (r, f), idx in self.cells.items():
            if self.frame_w[f] > 0:
                counts[r, f] = idx.size
        chosen = np.empty(pool_size, dtype=np.int64)
        for i in range(pool_size):
            fam_mass = self.family_w * counts.sum(axis=1)
            family = rng.choice(self.families, p=fam_mass / fam_mass.sum())
            frame_mass = np.where(counts[family] > 0, self.frame_w, 0.0)
            frame = rng.choice(self.frames, p=frame_mass / frame_mass.sum())
            key = (family, frame)
            if key not in remaining:
                remaining[key] = self.cells[key].copy()
            cell = remaining[key]
            live = counts[family, frame]
            j = rng.integers(live)
            chosen[i] = cell[j]
            cell[j], cell[live - 1] = cell[live - 1], cell[j]
            counts[family, frame] -= 1
        return chosen


def biased_pool(labeled, bias: BiasSpec, pool_size, seed, families=None, frames=None):
    """Sample a candidate pool under family and frame weights."""
    if families is None:
        families = max(item.tags["family"] for item in labeled) + 1
    if frames is None:
        frames = max(item.tags["frame"] for item in labeled) + 1
    return PoolSampler(labeled, bias, families, frames).sample(pool_size, seed)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class MetricsEntry:
    """Test errors: energies per atom in meV, force components in meV/A."""

    energy_rmse: float
    energy_mae: float
    force_rmse: float
    force_mae: float

    def as_dict(self):
        return {
            "energy_rmse": self.energy_rmse,
            "energy_mae": self.energy_mae,
            "force_rmse": self.force_rmse,
            "force_mae": self.force_mae,
        }


def compute_metrics(pred_energies, pred_forces, labeled) -> MetricsEntry:
    """Errors of predictions against reference labels.

    Energy residuals are per atom (meV/atom), aggregated over
    structures; force residuals are per component (meV/A), aggregated
    over every component of every atom.
    """
    labeled = list(labeled)
    if not labeled:
        raise ValidationError("empty test set")
    pred_energies = np.asarray(pred_energies, dtype=np.float64)
    if pred_energies.shape != (len(labeled),) or len(pred_forces) != len(labeled):
        raise ValidationError("prediction and label counts differ")
    e_res = 1e3 * np.array(
        [
            (e - item.energy) / item.n_atoms
            for e, item in zip(pred_energies, labeled)
        ]
    )
    f_res = 1e3 * np.concatenate(
        [
            (np.asarray(f) - item.forces).ravel()
            for f, item in zip(pred_forces, labeled)
        ]
    )
    return MetricsEntry(
        energy_rmse=float(np.sqrt(np.mean(e_res**2))),
        energy_mae=float(np.mean(np.abs(e_res))),
        force_rmse=float(np.sqrt(np.mean(f_res**2))),
        force_mae=float(np.mean(np.abs(f_res))),
    )


def auc(logs, metric) -> float:
    """Discrete sum of a per-round metric over the acquisition rounds."""
    return float(sum(getattr(log.metrics, metric) for log in logs))


# ---------------------------------------------------------------------------
# The offline active-learning loop


SELECTION_METHODS = ("lcmd", "greedy-pv", "random", "committee-e", "committee-f")


@dataclass(frozen=True)
class ALConfig:
    """One active-learning run: acquisition settings and student shape."""

    feature_map: str = "ntk-ef"
    subset: str = "all"
    w_energy: float = 1.0
    w_force: float = 1.0
    selection: str = "lcmd"
    ridge: float = 1e-4
    shortlist_size: int = 200
    chunk_size: int = 256
    batch_size: int = 20
    rounds: int = 10
    deterministic: bool = True
    committee_size: int = 3
    student_hidden: int = 16
    student_embed: int = 4


@dataclass(frozen=True)
class BenchmarkData:
    """Frozen data for one benchmark instance: labels, teacher, and splits."""

    spec: PathwaySpec
    labeled: list
    teacher: NeuralPotential
    train_idx: np.ndarray
    pool_idx: np.ndarray
    test_idx: np.ndarray

    def family_of(self, idx):
        return self.labeled[int(idx)].tags["family"]


def build_benchmark(
    spec: PathwaySpec,
    bias: BiasSpec,
    pool_size,
    n_initial,
    test_per_family,
    seed,
    teacher_hidden=None,
    student_hidden=16,
    student_embed=4,
) -> BenchmarkData:
    """Generate data and carve disjoint initial/pool/test index sets.

    The test set is balanced across families; the candidate pool is
    drawn from the remainder under the bias weights; the initial
    labelled set is a uniform draw from what is left. The teacher has
    twice the student's hidden width unless overridden.
    """
    teacher = NeuralPotential(
        n_species=spec.n_species,
        embed_dim=student_embed,
        hidden_dim=teacher_hidden or 2 * student_hidden,
        seed=named_seed(seed, "teacher"),
    ).initialize()
    labeled = generate_pathways(spec, teacher, named_seed(seed, "data"))
    split_rng = np.random.default_rng(named_seed(seed, "split"))

    by_family = {}
    for idx, item in enumerate(labeled):
        by_family.setdefault(item.tags["family"], []).append(idx)
    test_idx = []
    for family in sorted(by_family):
        members = np.asarray(by_family[family])
        if members.size < test_per_family:
            raise ValidationError(
                f"family {family} has {members.size} structures, "
                f"fewer than test_per_family={test_per_family}"
            )
        test_idx.extend(split_rng.choice(members, test_per_family, replace=False))
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))

    rest = [labeled[i] for i in range(len(labeled)) if i not in set(test_idx.tolist())]
    rest_ids = np.asarray(
        [i for i in range(len(labeled)) if i not in set(test_idx.tolist())]
    )
    pool_local = biased_pool(
        rest, bias, pool_size, named_seed(seed, "split", 1),
        families=spec.families, frames=spec.frames,
    )
    pool_idx = rest_ids[pool_local]
    leftovers = np.setdiff1d(rest_ids, pool_idx)
    if leftovers.size < n_initial:
        raise ValidationError(
            f"not enough structures left for an initial set of {n_initial}"
        )
    train_idx = np.sort(
        split_rng.choice(leftovers, n_initial, replace=False)
    )
    return BenchmarkData(spec, labeled, teacher, train_idx, pool_idx, test_idx)


@dataclass(frozen=True)
class RoundLog:
    """Per-round record: sizes, the selected batch, test metrics, cost."""

    round: int
    n_train: int
    n_pool: int
    selected: np.ndarray  # global structure ids, selection order
    metrics: MetricsEntry
    wall_time: float
    scratch_bytes: int
    selection_scores: np.ndarray | None = None
    cluster_mass: np.ndarray | None = None


def _extend_seed(seq: np.random.SeedSequence, *extra) -> np.random.SeedSequence:
    return np.random.SeedSequence([*seq.entropy, *map(int, extra)])


def _select_batch(config, student, train_set, pool_set, counter, selection_seed, t):
    """One acquisition step; returns (positions into pool_set, scores, masses)."""
    n_pool = len(pool_set)
    batch = min(config.batch_size, n_pool)
    if config.selection == "random":
        picked = random_select(n_pool, batch, _extend_seed(selection_seed, t))
        return picked.indices, None, None
    if config.selection in ("committee-e", "committee-f"):
        members = []
        for m in range(config.committee_size):
            member = NeuralPotential(
                n_species=student.n_species,
                embed_dim=student.embed_dim,
                hidden_dim=student.hidden_dim,
                seed=student.seed,
            )
            member.fit(train_set, shuffle_seed=_extend_seed(selection_seed, t, m + 1))
            energies, force_list = member.predict([s.structure for s in pool_set])
            members.append(list(zip(energies, force_list)))
        mode = "energy" if config.selection == "committee-e" else "force"
        scores = committee_scores(members, mode).scores
        picked = greedy_select(scores, batch)
        return picked.indices, picked.scores, None
    # feature-based selection
    fmap = make_feature_map(
        config.feature_map, student, config.subset, config.w_energy, config.w_force
    )
    phi_train = fmap.transform([s.structure for s in train_set])
    phi_pool = fmap.transform([s.structure for s in pool_set])
    scorer = PosteriorVarianceScorer(
        ridge=config.ridge, deterministic=config.deterministic, counter=counter
    )
    scorer.fit(phi_train, chunk_size=config.chunk_size)
    if config.selection == "greedy-pv":
        scores = scorer.score_samples(phi_pool)
        picked = greedy_select(scores, batch)
        return picked.indices, picked.scores, None
    k = min(max(config.shortlist_size, batch), n_pool)
    shortlist = stream_shortlist(
        ArrayFeatureSource(phi_pool), scorer, k, config.chunk_size, counter
    )
    picked = lcmd_select(phi_pool[shortlist.indices], phi_train, batch, counter)
    return (
        shortlist.indices[picked.indices],
        shortlist.scores[picked.indices],
        picked.cluster_mass,
    )


def al_loop(data: BenchmarkData, config: ALConfig, seed) -> list[RoundLog]:
    """Run the offline acquisition loop and log one record per round.

    Each round scores the pool with features from the current student,
    selects a batch, moves it (with its labels) from the pool to the
    training set, retrains the student from its fixed initial
    parameters, and evaluates on the fixed test set. A zero batch size
    degenerates to repeated identical retraining.
    """
    check_option(config.selection, "selection method", SELECTION_METHODS)
    if config.batch_size < 0 or config.rounds < 1:
        raise ValidationError("need batch_size >= 0 and rounds >= 1")
    train_ids = [int(i) for i in data.train_idx]
    pool_ids = [int(i) for i in data.pool_idx]
    if set(train_ids) & set(pool_ids) or set(train_ids + pool_ids) & set(
        data.test_idx.tolist()
    ):
        raise ValidationError("train, pool and test sets must be disjoint")

    shuffle_seed = named_seed(seed, "shuffle")
    selection_seed = named_seed(seed, "selection")
    student = NeuralPotential(
        n_species=data.spec.n_species,
        embed_dim=config.student_embed,
        hidden_dim=config.student_hidden,
        seed=named_seed(seed, "student"),
    ).initialize()
    test_set = [data.labeled[i] for i in data.test_idx]
    student.fit([data.labeled[i] for i in train_ids], shuffle_seed=shuffle_seed)

    logs = []
    for t in range(config.rounds):
        tic = time.perf_counter()
        counter = ScratchCounter()
        if config.batch_size > 0:
            if not pool_ids:
                warnings.warn(f"pool exhausted after round {t}; truncating run")
                break
            train_set = [data.labeled[i] for i in train_ids]
            pool_set = [data.labeled[i] for i in pool_ids]
            positions, scores, masses = _select_batch(
                config, student, train_set, pool_set, counter, selection_seed, t
            )
            batch_ids = np.asarray([pool_ids[p] for p in positions], dtype=np.int64)
            for p in sorted(positions.tolist(), reverse=True):
                pool_ids.pop(p)
            train_ids.extend(int(i) for i in batch_ids)
        else:
            batch_ids, scores, masses = np.empty(0, dtype=np.int64), None, None
        student.fit([data.labeled[i] for i in train_ids], shuffle_seed=shuffle_seed)
        energies, force_list = student.predict([s.structure for s in test_set])
        metrics = compute_metrics(energies, force_list, test_set)
        logs.append(
            RoundLog(
                round=t,
                n_train=len(train_ids),
                n_pool=len(pool_ids),
                selected=batch_ids,
                metrics=metrics,
                wall_time=time.perf_counter() - tic,
                scratch_bytes=counter.peak,
                selection_scores=scores,
                cluster_mass=masses,
            )
        )
    return logs


# ---------------------------------------------------------------------------
# CSV output


def write_round_logs(path, seed, logs):
    """Long-form per-round metrics: seed,round,n_train,metric,value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "round", "n_train", "metric", "value"])
        for log in logs:
            rows = dict(log.metrics.as_dict())
            rows["wall_time"] = log.wall_time
            rows["scratch_bytes"] = log.scratch_bytes
            for metric, value in rows.items():
                writer.writerow([seed, log.round, log.n_train, metric, repr(value)])


def write_selections(path, logs):
    """Per-pick selection records: round,rank,candidate_index,score,cluster_mass."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "rank", "candidate_index", "score", "cluster_mass"])
        for log in logs:
            for rank, idx in enumerate(log.selected):
                score = (
                    repr(float(log.selection_scores[rank]))
                    if log.selection_scores is not None
                    else ""
                )
                mass = (
                    repr(float(log.cluster_mass[rank]))
                    if log.cluster_mass is not None
                    else ""
                )
                writer.writerow([log.round, rank, int(idx), score, mass])


def write_summary(path, method_runs, metrics=("energy_rmse", "force_rmse")):
    """Per-method AUC mean and std over seeds: method,metric,auc_mean,auc_std."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "auc_mean", "auc_std"])
        for method, runs in method_runs.items():
            for metric in metrics:
                values = np.array([auc(logs, metric) for logs in runs])
                writer.writerow(
                    [method, metric, repr(values.mean()), repr(values.std())]
                )
