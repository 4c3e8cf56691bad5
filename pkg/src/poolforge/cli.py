"""Command-line entry point.

Subcommands:

* ``features``     extract a feature matrix from a structure file
* ``acquire``      one selection round from train/pool feature files
* ``al-run``       full active-learning runs on the synthetic benchmark
* ``oracle-check`` brute-force validation sweeps (exit 0 iff all pass)
* ``bench``        scaling measurements of the chunked scoring pass

Configuration is a flat ``key = value`` text file with ``#`` comments;
every key has a documented default (see DEFAULT_CONFIG below) and
unknown keys are rejected by name. All randomness flows from one root
seed through named sub-streams, and each command echoes its effective
configuration into the output directory, so runs are reproducible from
(config, seed) alone. Exit codes: 0 success, 1 validation error, 2
numerical failure. The POOLFORGE_THREADS environment variable caps the
number of worker processes used to fan out seeds in ``al-run``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .acquisition import (
    FeatureFileSource,
    GaussianFeatureSource,
    PosteriorVarianceScorer,
    ScratchCounter,
    dense_pv_scores,
    lcmd_select,
    random_select,
    stream_shortlist,
)
from .harness import (
    ALConfig,
    BiasSpec,
    PathwaySpec,
    al_loop,
    build_benchmark,
    write_round_logs,
    write_selections,
    write_summary,
)
from .kernels import load_features, make_feature_map, save_features
from .oracle import run_oracle_checks
from .potential import DescriptorConfig, NeuralPotential, load_params
from .structures import as_structure, load_xyz
from .validation import NumericalError, ValidationError

__all__ = ["RunConfig", "parse_config", "main"]


@dataclass
class RunConfig:
    """Every configuration key with its default value."""

    # feature map and model shape
    feature_map: str = "ntk-ef"
    subset: str = "all"
    energy_weight: float = 1.0
    force_weight: float = 1.0
    n_species: int = 4
    embed_dim: int = 4
    hidden_dim: int = 16
    cutoff: float = 5.0
    rbf_width: float = 0.5
    n_centers: int = 8
    model_seed: int = 0
    # selection
    selection: str = "lcmd"
    ridge: float = 1e-4
    shortlist: int = 200
    chunk: int = 256
    batch: int = 20
    rounds: int = 10
    deterministic: bool = True
    committee_size: int = 3
    # benchmark data
    families: int = 5
    instances_per_family: int = 80
    frames: int = 10
    atoms_min: int = 4
    atoms_max: int = 8
    endpoint_scale: float = 0.35
    jitter: float = 0.05
    min_distance: float = 0.5
    family_weights: tuple = ()
    frame_weights: tuple = ()
    pool_size: int = 2000
    n_initial: int = 20
    test_per_family: int = 40
    teacher_hidden: int = 0  # 0 means 2 * hidden_dim
    seeds: tuple = (0, 1, 2, 3, 4)
    # bench
    bench_pool_sizes: tuple = (1000, 10000, 100000)
    bench_dim: int = 256
    bench_train: int = 64
    bench_shortlist: int = 500
    bench_chunk: int = 512
    bench_repeats: int = 3
    dense: bool = False
    dense_pool_sizes: tuple = (1000, 2500, 5000, 10000, 20000)
    dense_max: int = 20000


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _parse_tuple(element):
    def parse(text):
        text = text.strip()
        if not text:
            return ()
        return tuple(element(tok.strip()) for tok in text.split(","))

    return parse


_PARSERS = {
    str: lambda s: s.strip(),
    int: lambda s: int(s.strip()),
    float: lambda s: float(s.strip()),
    bool: _parse_bool,
}

_TUPLE_ELEMENT = {
    "family_weights": float,
    "frame_weights": float,
    "seeds": int,
    "bench_pool_sizes": int,
    "dense_pool_sizes": int,
}


def parse_config(path=None, overrides=None) -> RunConfig:
    """Read a flat key = value config file, applying CLI overrides."""
    values = {}
    if path is not None:
        if not Path(path).is_file():
            raise ValidationError(f"config file not found: {path}")
        for lineno, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value
    values.update(overrides or {})
    defaults = RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    parsed = {}
    for key, value in values.items():
        if key not in known:
            raise ValidationError(f"unknown configuration key {key!r}")
        if isinstance(value, str):
            default = getattr(defaults, key)
            parser = (
                _parse_tuple(_TUPLE_ELEMENT[key])
                if key in _TUPLE_ELEMENT
                else _PARSERS[type(default)]
            )
            try:
                parsed[key] = parser(value)
            except ValueError as exc:
                raise ValidationError(f"bad value for key {key!r}: {value!r}") from exc
        else:
            parsed[key] = value
    return RunConfig(**parsed)


def echo_config(config: RunConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _descriptor(config: RunConfig) -> DescriptorConfig:
    centers = tuple(np.linspace(0.5, config.cutoff, config.n_centers))
    return DescriptorConfig(config.cutoff, centers, config.rbf_width)


def _model(config: RunConfig, params_path=None) -> NeuralPotential:
    model = NeuralPotential(
        n_species=config.n_species,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        descriptor=_descriptor(config),
        seed=config.model_seed,
    )
    if params_path:
        model.initial_params_ = load_params(params_path)
        model.params_ = model.initial_params_
    else:
        model.initialize()
    return model


def _al_config(config: RunConfig) -> ALConfig:
    return ALConfig(
        feature_map=config.feature_map,
        subset=config.subset,
        w_energy=config.energy_weight,
        w_force=config.force_weight,
        selection=config.selection,
        ridge=config.ridge,
        shortlist_size=config.shortlist,
        chunk_size=config.chunk,
        batch_size=config.batch,
        rounds=config.rounds,
        deterministic=config.deterministic,
        committee_size=config.committee_size,
        student_hidden=config.hidden_dim,
        student_embed=config.embed_dim,
    )


def _pathway_spec(config: RunConfig) -> PathwaySpec:
    return PathwaySpec(
        families=config.families,
        instances_per_family=config.instances_per_family,
        frames=config.frames,
        atoms_min=config.atoms_min,
        atoms_max=config.atoms_max,
        n_species=config.n_species,
        endpoint_scale=config.endpoint_scale,
        jitter=config.jitter,
        min_distance=config.min_distance,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_features(config: RunConfig, structures_path, out_dir, params_path=None):
    frames = load_xyz(structures_path)
    if not frames:
        raise ValidationError(f"{structures_path}: no structures found")
    model = _model(config, params_path)
    fmap = make_feature_map(
        config.feature_map, model, config.subset,
        config.energy_weight, config.force_weight,
    )
    X = fmap.transform([as_structure(f) for f in frames])
    out_dir = Path(out_dir)
    echo_config(config, out_dir)
    out_path = out_dir / "features.pffm"
    save_features(out_path, X)
    print(f"wrote {X.shape[0]} x {X.shape[1]} features to {out_path}")
    return 0


def cmd_acquire(config: RunConfig, train_path, pool_path, out_dir):
    train = load_features(train_path)
    pool = FeatureFileSource(pool_path)
    if pool.dim != train.shape[1]:
        raise ValidationError(
            f"feature dimensions differ: train {train.shape[1]}, pool {pool.dim}"
        )
    batch = min(config.batch, pool.n_rows)
    if config.selection == "lcmd" and config.shortlist < batch:
        raise ValidationError(
            f"shortlist size {config.shortlist} is smaller than batch size {batch}"
        )
    counter = ScratchCounter()
    tic = time.perf_counter()
    if config.selection == "random":
        result = random_select(pool.n_rows, batch, config.seeds[0])
        indices, scores, masses = result.indices, None, None
    else:
        scorer = PosteriorVarianceScorer(
            ridge=config.ridge, deterministic=config.deterministic, counter=counter
        )
        if train.shape[0]:
            scorer.fit(train, chunk_size=config.chunk)
        else:
            scorer.fit_empty(pool.dim)
        k = batch if config.selection == "greedy-pv" else min(config.shortlist, pool.n_rows)
        shortlist = stream_shortlist(pool, scorer, k, config.chunk, counter)
        if config.selection == "greedy-pv":
            indices, scores, masses = shortlist.indices, shortlist.scores, None
        else:
            picked = lcmd_select(
                pool.take(shortlist.indices), train, batch, counter
            )
            indices = shortlist.indices[picked.indices]
            scores = shortlist.scores[picked.indices]
            masses = picked.cluster_mass
    wall = time.perf_counter() - tic
    out_dir = Path(out_dir)
    echo_config(config, out_dir)
    with open(out_dir / "selection.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "rank", "candidate_index", "score", "cluster_mass"])
        for rank, idx in enumerate(indices):
            writer.writerow([
                0, rank, int(idx),
                repr(float(scores[rank])) if scores is not None else "",
                repr(float(masses[rank])) if masses is not None else "",
            ])
    with open(out_dir / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scores_computed", "scratch_bytes", "wall_time"])
        writer.writerow([pool.n_rows, counter.peak, repr(wall)])
    print(f"selected {len(indices)} of {pool.n_rows} candidates -> {out_dir}")
    return 0


def _run_one_seed(config: RunConfig, seed, out_dir):
    spec = _pathway_spec(config)
    bias = BiasSpec(config.family_weights, config.frame_weights)
    data = build_benchmark(
        spec, bias, config.pool_size, config.n_initial, config.test_per_family,
        seed=seed,
        teacher_hidden=config.teacher_hidden or 2 * config.hidden_dim,
        student_hidden=config.hidden_dim,
        student_embed=config.embed_dim,
    )
    logs = al_loop(data, _al_config(config), seed)
    out_dir = Path(out_dir)
    write_round_logs(out_dir / f"rounds_seed{seed}.csv", seed, logs)
    write_selections(out_dir / f"selections_seed{seed}.csv", logs)
    return logs


def cmd_al_run(config: RunConfig, out_dir):
    out_dir = Path(out_dir)
    echo_config(config, out_dir)
    workers = int(os.environ.get("POOLFORGE_THREADS", "1"))
    seeds = config.seeds
    if workers > 1 and len(seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(workers, len(seeds))
        ) as pool:
            runs = list(pool.map(_run_one_seed, [config] * len(seeds), seeds,
                                 [out_dir] * len(seeds)))
    else:
        runs = [_run_one_seed(config, seed, out_dir) for seed in seeds]
    method = (
        config.selection
        if config.selection in ("random", "committee-e", "committee-f")
        else f"{config.feature_map}-{config.selection}"
    )
    write_summary(
        out_dir / "summary.csv", {method: runs},
        metrics=("energy_rmse", "energy_mae", "force_rmse", "force_mae"),
    )
    print(f"finished {len(seeds)} run(s) -> {out_dir}")
    return 0


def cmd_bench(config: RunConfig, out_dir):
    out_dir = Path(out_dir)
    echo_config(config, out_dir)
    rows = []
    train = GaussianFeatureSource(
        config.bench_train, config.bench_dim, seed=1
    ).take(range(config.bench_train))
    for n_pool in config.bench_pool_sizes:
        source = GaussianFeatureSource(n_pool, config.bench_dim, seed=2)
        times = []
        counter = ScratchCounter()
        for _ in range(config.bench_repeats):
            counter.reset()
            scorer = PosteriorVarianceScorer(
                ridge=config.ridge, deterministic=False, counter=counter
            )
            scorer.fit(train, chunk_size=config.bench_chunk)
            tic = time.perf_counter()
            stream_shortlist(
                source, scorer,
                min(config.bench_shortlist, n_pool), config.bench_chunk, counter,
            )
            times.append(time.perf_counter() - tic)
        rows.append(("chunked", n_pool, float(np.median(times)), counter.peak))
        print(f"chunked n_pool={n_pool}: {rows[-1][2]:.3f}s, {counter.peak} scratch bytes")
    if config.dense:
        for n_pool in config.dense_pool_sizes:
            if n_pool > config.dense_max:
                continue
            pool = GaussianFeatureSource(n_pool, config.bench_dim, seed=2).take(
                range(n_pool)
            )
            counter = ScratchCounter()
            tic = time.perf_counter()
            dense_pv_scores(train, pool, config.ridge, counter)
            rows.append(("dense", n_pool, time.perf_counter() - tic, counter.peak))
            print(
                f"dense n_pool={n_pool}: {rows[-1][2]:.3f}s, "
                f"{counter.peak} scratch bytes"
            )
    with open(out_dir / "scaling.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "n_pool", "wall_time", "scratch_bytes"])
        for mode, n_pool, wall, scratch in rows:
            writer.writerow([mode, n_pool, repr(wall), scratch])
    print(f"wrote scaling table -> {out_dir / 'scaling.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="poolforge",
        description="Batch active-learning acquisition engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--config", type=str, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed list")
        p.add_argument("--out", type=str, required=out_required, help="output directory")
        p.add_argument(
            "--deterministic", action="store_true",
            help="force the fixed chunk-reduction order",
        )

    p = sub.add_parser("features", help="extract features from a structure file")
    add_common(p)
    p.add_argument("--structures", type=str, required=True, help="extended-XYZ input")
    p.add_argument("--params", type=str, default=None, help="binary parameter file")

    p = sub.add_parser("acquire", help="one selection round from feature files")
    add_common(p)
    p.add_argument("--train-features", type=str, required=True)
    p.add_argument("--pool-features", type=str, required=True)

    p = sub.add_parser("al-run", help="full active-learning benchmark runs")
    add_common(p)

    p = sub.add_parser("oracle-check", help="brute-force validation sweeps")
    add_common(p, out_required=False)

    p = sub.add_parser("bench", help="scaling measurements")
    add_common(p)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
        overrides["model_seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    try:
        config = parse_config(args.config, overrides)
        if args.command == "features":
            return cmd_features(config, args.structures, args.out, args.params)
        if args.command == "acquire":
            return cmd_acquire(config, args.train_features, args.pool_features, args.out)
        if args.command == "al-run":
            return cmd_al_run(config, args.out)
        if args.command == "oracle-check":
            return 0 if run_oracle_checks(seed=config.seeds[0]) else 1
        if args.command == "bench":
            return cmd_bench(config, args.out)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
