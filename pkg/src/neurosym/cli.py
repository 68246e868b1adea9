"""Command-line driver: ``neurosym gen-data | run | eval | show-program | export-latents``.

Exit codes: 0 success, 3 configuration error, 4 data error, 5 training failure
(2 is click's usage error).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import statistics
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .data import (DerivedChannel, Splits, TrajectoryFormatError, feature_augment,
                   generate_synthetic, read_schema, read_splits, write_splits)
from .dsl.ast import FeatureSchema
from .dsl.printing import ProgramSyntaxError, parse_program, pretty_print
from .dsl.semantics import Program
from .estimator import NeurosymbolicEncoder
from .metrics import (assign_clusters, bits_to_ids, evaluate_clustering, pca_project,
                      random_assignment)
from .vae import TrainingDivergence, write_history_csv

EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 3, 4, 5
log = logging.getLogger("neurosym")


class CliFailure(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _hash_file(path) -> str:
    with open(path, "rb") as fh:
        return git_blob_hash(fh.read())


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_cfg(path) -> ExperimentConfig:
    try:
        return load_config(path)
    except ConfigError as e:
        raise CliFailure(f"config error: {e}", EXIT_CONFIG) from None


def _data_error(e) -> CliFailure:
    return CliFailure(f"data error: {e}", EXIT_DATA)


def _load_splits(cfg: ExperimentConfig) -> Splits:
    try:
        if cfg.source == "files":
            return read_splits(cfg.data_path)
        return generate_synthetic(cfg.synthetic)
    except (OSError, ValueError, KeyError) as e:
        raise _data_error(e) from None


CONFIG_HELP = """\b
Config file (INI; every key optional, defaults in configs/synthetic.ini):
  [data]       source (synthetic|files), path, n_train, n_val, n_test,
               trajectory_length, seed
  [dsl]        derived_channels, library_channels, vae_channels, algebraic, ite
  [vae]        epochs, z_dim, h_dim, rnn_dim, adv_dim, disc_capacity,
               cont_capacity, gamma_neural, gamma_symb, adversary_weight,
               adversary_conditioning, adversary_learning_rate,
               learning_rate, program_learning_rate, batch_size
  [synthesis]  max_depth, penalty, neural_epochs, symbolic_epochs,
               frontier_size, learning_rate
  [run]        k, seeds, out

\b
Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 training failed on every seed.
"""


@click.group(epilog=CONFIG_HELP)
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
def main(verbose):
    """Neurosymbolic encoders for trajectory data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")


# gen-data ---------------------------------------------------------------------
@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(), help="INI config file.")
@click.option("--seed", type=int, help="Override [data] seed.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def gen_data(config_path, seed, out):
    """Write synthetic train/val/test JSONL splits, schema, labels and manifest."""
    cfg = _load_cfg(config_path)
    syn = cfg.synthetic
    if seed is not None:
        from dataclasses import replace
        syn = replace(syn, seed=seed)
    splits = generate_synthetic(syn)
    try:
        write_splits(out, splits, {"generator": "synthetic", "config": _synthetic_dict(syn)})
    except OSError as e:
        raise _data_error(e) from None
    click.echo(f"wrote {sum(len(d) for _, d in splits.items())} trajectories to {out}")


def _synthetic_dict(syn) -> dict:
    from dataclasses import asdict
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(syn).items()}


# run --------------------------------------------------------------------------
def run_seed(cfg: ExperimentConfig, splits: Splits, seed: int, out_dir: str) -> dict:
    """Fit one seed and write its artifacts; returns the per-seed summary."""
    os.makedirs(out_dir, exist_ok=True)
    raw = splits.train.schema
    est = NeurosymbolicEncoder(**cfg.estimator_params(), feature_names=list(raw.names),
                               random_state=seed)
    est.fit(splits.train.features, X_val=splits.val.features)
    texts = est.program_texts()
    for i, text in enumerate(texts):
        with open(os.path.join(out_dir, f"program_{i}.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    _write_json(os.path.join(out_dir, "program_features.json"),
                {"raw": raw.to_dict(), "derived": list(cfg.dsl.derived_channels)})
    est.save(os.path.join(out_dir, "model.npz"))
    _write_json(os.path.join(out_dir, "synthesis_log.json"), est.synthesis_log_)
    write_history_csv(os.path.join(out_dir, "history.csv"), est.history_)
    result = {"seed": seed, "programs": texts}
    if splits.test.labels is not None:
        report = evaluate_clustering(est.predict(splits.test.features), splits.test.labels,
                                     est.n_clusters_)
        report.to_json(os.path.join(out_dir, "metrics.json"))
        result["metrics"] = {k: getattr(report, k) for k in ("purity", "nmi", "ri")}
    return result


def _run_seed_safe(args):
    cfg, splits, seed, out_dir = args
    try:
        return run_seed(cfg, splits, seed, out_dir)
    except (TrainingDivergence, FloatingPointError, RuntimeError, ValueError) as e:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.txt"), "w", encoding="utf-8") as fh:
            fh.write(traceback.format_exc())
        return {"seed": seed, "error": f"{type(e).__name__}: {e}"}


def summarize(results: list) -> dict:
    ok = [r for r in results if "metrics" in r]
    median = {}
    if ok:
        median = {k: statistics.median(r["metrics"][k] for r in ok) for k in ("purity", "nmi", "ri")}
    return {"seeds": results, "median": median, "n_failed": len(results) - len(ok)}


@main.command("run")
@click.option("--config", "config_path", type=click.Path(), help="INI config file.")
@click.option("--seed", type=int, help="Run only this seed.")
@click.option("--out", type=click.Path(), help="Run directory (default [run] out).")
@click.option("--k", type=int, help="Number of programs (0 = plain trajectory VAE).")
@click.option("--max-depth", type=int, help="Override [synthesis] max_depth.")
@click.option("--parallel-seeds", is_flag=True, help="One worker process per seed.")
def run(config_path, seed, out, k, max_depth, parallel_seeds):
    """Learn programs for every seed; write per-seed artifacts and summary.json."""
    cfg = _load_cfg(config_path)
    try:
        cfg = cfg.with_overrides(seed=seed, out=out, k=k, max_depth=max_depth)
    except ConfigError as e:
        raise CliFailure(f"config error: {e}", EXIT_CONFIG) from None
    splits = _load_splits(cfg)
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as e:
        raise CliFailure(f"cannot create run directory: {e}", EXIT_CONFIG) from None
    with open(os.path.join(cfg.out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(cfg.text)
    inputs = {"config": git_blob_hash(cfg.text.encode()),
              "overrides": {"seed": seed, "k": k, "max_depth": max_depth},
              "data": _data_hashes(cfg)}
    inputs["content_hash"] = git_blob_hash(json.dumps(inputs, sort_keys=True).encode())
    _write_json(os.path.join(cfg.out, "inputs.json"), inputs)

    jobs = [(cfg, splits, s, os.path.join(cfg.out, f"seed_{s}")) for s in cfg.seeds]
    if parallel_seeds and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_run_seed_safe, jobs))
    else:
        results = [_run_seed_safe(j) for j in jobs]
    summary = summarize(results)
    _write_json(os.path.join(cfg.out, "summary.json"), summary)
    for r in results:
        status = r.get("error") or json.dumps(r.get("metrics", {}))
        click.echo(f"seed {r['seed']}: {status}")
    if summary["n_failed"] == len(results):
        raise CliFailure("training failed for every seed", EXIT_TRAINING)


def _data_hashes(cfg: ExperimentConfig) -> dict:
    if cfg.source == "synthetic":
        return {"synthetic": _synthetic_dict(cfg.synthetic)}
    return {name: _hash_file(os.path.join(cfg.data_path, name))
            for name in sorted(os.listdir(cfg.data_path))
            if os.path.isfile(os.path.join(cfg.data_path, name))}


# eval / show-program ------------------------------------------------------------
def _program_schema(features_path) -> tuple:
    with open(features_path, encoding="utf-8") as fh:
        info = json.load(fh)
    raw = FeatureSchema.from_dict(info["raw"])
    derived = [DerivedChannel.parse(d) for d in info.get("derived", [])]
    names = list(raw.names) + [d.name for d in derived]
    return raw, derived, FeatureSchema(tuple(names), raw.trajectory_length)


def _read_programs(programs_dir) -> tuple:
    features = os.path.join(programs_dir, "program_features.json")
    if not os.path.isfile(features):
        raise _data_error(f"{programs_dir} has no program_features.json")
    raw, derived, schema = _program_schema(features)
    files = sorted(f for f in os.listdir(programs_dir)
                   if f.startswith("program_") and f.endswith(".txt"))
    files.sort(key=lambda f: int(f[len("program_"):-4]))
    programs = []
    for f in files:
        with open(os.path.join(programs_dir, f), encoding="utf-8") as fh:
            text = fh.read().strip()
        try:
            arch, params = parse_program(text, None, schema)
        except ProgramSyntaxError as e:
            raise _data_error(f"{f}: {e}") from None
        programs.append(Program(arch, params, schema))
    return raw, derived, programs


@main.command("eval")
@click.option("--programs", "programs_dir", type=click.Path(exists=True, file_okay=False),
              help="Directory with program_<i>.txt and program_features.json.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory written by gen-data.")
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.option("--random", "random_k", type=int, help="Evaluate a random assignment into K clusters.")
@click.option("--seed", type=int, default=0, help="Seed for --random.")
@click.option("--out", type=click.Path(), help="Write the metrics JSON here.")
def eval_cmd(programs_dir, data_dir, split, random_k, seed, out):
    """Cluster a split with learned programs and score it against its labels."""
    try:
        ds = dict(read_splits(data_dir).items())[split]
    except (OSError, ValueError, KeyError) as e:
        raise _data_error(e) from None
    if ds.labels is None:
        raise _data_error(f"split {split!r} has no labels")
    if random_k is not None:
        clustering = random_assignment(len(ds), random_k, seed)
    else:
        if programs_dir is None:
            raise click.UsageError("give --programs or --random")
        raw, derived, programs = _read_programs(programs_dir)
        if raw != ds.schema:
            raise _data_error(f"data schema {ds.schema.names} does not match programs' {raw.names}")
        clustering = assign_clusters(programs, feature_augment(ds, derived).features)
    report = evaluate_clustering(clustering, ds.labels)
    text = json.dumps(report.to_dict(), indent=2)
    if out:
        report.to_json(out)
    click.echo(text)


_KIND_HELP = {"final": "last value of {0}, repeated over time",
              "initial": "first value of {0}, repeated over time",
              "delta": "per-step change of {0}",
              "speed": "per-step distance moved in ({0})",
              "zero": "constant 0"}


@main.command("show-program")
@click.argument("file", type=click.Path())
@click.option("--features", "features_path", type=click.Path(),
              help="program_features.json (default: next to FILE).")
def show_program(file, features_path):
    """Pretty-print a program file with a glossary of its channels."""
    if not os.path.isfile(file):
        raise _data_error(f"no such program file: {file}")
    features_path = features_path or os.path.join(os.path.dirname(file) or ".",
                                                  "program_features.json")
    if not os.path.isfile(features_path):
        raise _data_error(f"no feature description at {features_path}")
    raw, derived, schema = _program_schema(features_path)
    with open(file, encoding="utf-8") as fh:
        text = fh.read().strip()
    try:
        arch, params = parse_program(text, None, schema)
    except ProgramSyntaxError as e:
        raise _data_error(f"{file}: {e}") from None
    click.echo(pretty_print(arch, params, schema))
    used = sorted(arch.channels())
    click.echo("")
    click.echo("channels:")
    by_name = {d.name: d for d in derived}
    for c in used:
        name = schema.names[c]
        if name in by_name:
            d = by_name[name]
            desc = _KIND_HELP[d.kind].format(", ".join(d.sources))
        else:
            desc = "raw input channel"
        click.echo(f"  {name}: {desc}")
    click.echo("output: 1 when the expression exceeds the bracketed threshold")


# export-latents -----------------------------------------------------------------
@main.command("export-latents")
@click.option("--checkpoint", required=True, type=click.Path(), help="model.npz from a run.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.option("--out", required=True, type=click.Path(), help="Output CSV.")
def export_latents(checkpoint, data_dir, split, out):
    """Write z_neural, its 2-D principal projection, bits, cluster id and label."""
    try:
        est = NeurosymbolicEncoder.load(checkpoint)
    except (OSError, ValueError, KeyError) as e:
        raise _data_error(f"cannot load checkpoint: {e}") from None
    try:
        ds = dict(read_splits(data_dir).items())[split]
        code = est.encode(ds.features)
    except (OSError, ValueError, KeyError) as e:
        raise _data_error(e) from None
    proj = pca_project(code.z_neural, 2)
    ids = bits_to_ids(code.bits)
    header = (["index"] + [f"z{j}" for j in range(code.z_neural.shape[1])] + ["pc1", "pc2"]
              + [f"bit{j}" for j in range(code.bits.shape[1])] + ["cluster", "label"])
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds)):
            label = "" if ds.labels is None else int(ds.labels[i])
            w.writerow([i, *map(repr, code.z_neural[i].tolist()), *map(repr, proj[i].tolist()),
                        *code.bits[i].tolist(), int(ids[i]), label])
    click.echo(f"wrote {len(ds)} rows to {out}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
