"""Trajectory datasets: synthetic generation, JSONL persistence, derived channels."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dsl.ast import FeatureSchema


class TrajectoryFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class Dataset:
    """``features`` is (N, T, D); ``meta`` holds per-trajectory arrays."""

    features: np.ndarray
    schema: FeatureSchema
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ValueError(f"features must be (N, T, D), got {self.features.shape}")
        n, t, d = self.features.shape
        if d != self.schema.dim or t != self.schema.trajectory_length:
            raise ValueError(f"features {self.features.shape[1:]} do not match schema "
                             f"({self.schema.trajectory_length}, {self.schema.dim})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must have one entry per trajectory")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.schema,
                       None if self.labels is None else self.labels[index],
                       {k: v[index] for k, v in self.meta.items()})

    def channels(self, names) -> np.ndarray:
        return self.features[..., [self.schema.index(n) for n in names]]


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


@dataclass(frozen=True)
class SyntheticConfig:
    n_train: int = 10000
    n_val: int = 2000
    n_test: int = 2000
    trajectory_length: int = 25
    initial_mean: tuple = (10.0, 10.0)
    initial_std: tuple = (1.0, 1.0)
    velocity_norm_bounds: tuple = (0.05, 0.4)
    force: float = 0.4
    noise_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.velocity_norm_bounds
        if not 0 <= lo < hi:
            raise ValueError("velocity_norm_bounds must satisfy 0 <= low < high")
        if self.force < 0 or self.noise_scale < 0 or min(self.initial_std) < 0:
            raise ValueError("scales must be non-negative")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.trajectory_length < 1:
            raise ValueError("sizes must be non-negative and trajectory_length >= 1")


SYNTHETIC_SCHEMA_NAMES = ("x", "y")


def _sample_velocities(rng, n, lo, hi):
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        cand = rng.normal(0.0, 1.0, size=(max(n - filled, 16) * 8, 2))
        norms = np.linalg.norm(cand, axis=1)
        ok = cand[(norms > lo) & (norms < hi)][: n - filled]
        out[filled:filled + len(ok)] = ok
        filled += len(ok)
    return out


def generate_synthetic(config: SyntheticConfig = SyntheticConfig()) -> Splits:
    """Constant-velocity 2-D trajectories pushed by two binary forces.

    Label is ``2*c_x + c_y``.  ``meta`` keeps ``v``, ``v_prime``, ``c_x`` and
    ``c_y`` for checks; models only see positions.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_train + config.n_val + config.n_test
    T = config.trajectory_length
    x1 = rng.normal(config.initial_mean, config.initial_std, size=(n, 2))
    v = _sample_velocities(rng, n, *config.velocity_norm_bounds)
    c = rng.integers(0, 2, size=(n, 2))
    v_prime = v + config.force * (2 * c - 1)
    eps = rng.normal(size=(n, T - 1, 2))
    steps = v_prime[:, None, :] + config.noise_scale * eps
    pos = np.concatenate([x1[:, None, :], x1[:, None, :] + np.cumsum(steps, axis=1)], axis=1)
    labels = 2 * c[:, 0] + c[:, 1]
    schema = FeatureSchema(SYNTHETIC_SCHEMA_NAMES, T)
    full = Dataset(pos, schema, labels, {"v": v, "v_prime": v_prime,
                                         "c_x": c[:, 0], "c_y": c[:, 1]})
    a, b = config.n_train, config.n_train + config.n_val
    return Splits(full.subset(np.arange(a)), full.subset(np.arange(a, b)),
                  full.subset(np.arange(b, n)))


# derived channels -----------------------------------------------------------
@dataclass(frozen=True)
class DerivedChannel:
    """A channel computed from raw channels.

    ``kind`` is one of ``final``, ``initial`` (broadcast the last/first value
    of ``sources[0]``), ``delta`` (per-step change of ``sources[0]``),
    ``speed`` (per-step Euclidean norm of the change in ``sources``) or
    ``zero``.  The first step of ``delta``/``speed`` repeats the second.
    """

    name: str
    kind: str
    sources: tuple = ()

    KINDS = ("final", "initial", "delta", "speed", "zero")

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown derived channel kind {self.kind!r}")
        if self.kind != "zero" and not self.sources:
            raise ValueError(f"{self.kind} needs at least one source channel")

    @classmethod
    def parse(cls, text: str) -> "DerivedChannel":
        """``name=kind(a,b)`` or ``kind(a)``; default name ``kind_a``."""
        text = text.strip()
        name = None
        if "=" in text:
            name, text = (s.strip() for s in text.split("=", 1))
        if not text.endswith(")") or "(" not in text:
            raise ValueError(f"cannot parse derived channel {text!r}")
        kind, args = text[:-1].split("(", 1)
        sources = tuple(a.strip() for a in args.split(",") if a.strip())
        return cls(name or "_".join((kind.strip(),) + sources), kind.strip(), sources)

    def compute(self, features: np.ndarray, schema: FeatureSchema) -> np.ndarray:
        idx = [schema.index(s) for s in self.sources]
        n, T, _ = features.shape
        if self.kind == "zero":
            return np.zeros((n, T))
        if self.kind in ("final", "initial"):
            t = -1 if self.kind == "final" else 0
            return np.repeat(features[:, t, idx[0]][:, None], T, axis=1)
        diff = np.diff(features[..., idx], axis=1)
        if T > 1:
            diff = np.concatenate([diff[:, :1], diff], axis=1)
        else:
            diff = np.zeros((n, 1, len(idx)))
        if self.kind == "delta":
            return diff[..., 0]
        return np.linalg.norm(diff, axis=-1)


def feature_augment(dataset: Dataset, definitions) -> Dataset:
    """Append derived channels; raises on a name already in the schema."""
    feats, schema = dataset.features, dataset.schema
    new_names = list(schema.names)
    cols = [feats]
    for d in definitions:
        if isinstance(d, str):
            d = DerivedChannel.parse(d)
        if d.name in new_names:
            raise ValueError(f"derived channel {d.name!r} collides with an existing channel")
        cols.append(d.compute(feats, schema)[..., None])
        new_names.append(d.name)
    return Dataset(np.concatenate(cols, axis=-1),
                   FeatureSchema(tuple(new_names), schema.trajectory_length),
                   dataset.labels, dict(dataset.meta))


SYNTHETIC_PROGRAM_CHANNELS = ("final(x)", "final(y)")


# JSONL persistence ------------------------------------------------------------
def write_schema(path, schema: FeatureSchema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def read_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def write_trajectories(path, dataset: Dataset, include_meta: bool = True) -> None:
    """One JSON object per line: ``features`` (T x D), optional ``label``, ``meta``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            rec = {"features": dataset.features[i].tolist()}
            if dataset.labels is not None:
                rec["label"] = int(dataset.labels[i])
            if include_meta and dataset.meta:
                rec["meta"] = {k: np.asarray(v[i]).tolist() for k, v in dataset.meta.items()}
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path, schema: FeatureSchema) -> Dataset:
    feats, labels, metas = [], [], []
    T, D = schema.trajectory_length, schema.dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TrajectoryFormatError(f"invalid JSON ({e.msg})", lineno) from None
            if not isinstance(rec, dict) or "features" not in rec:
                raise TrajectoryFormatError("record has no 'features'", lineno)
            try:
                arr = np.asarray(rec["features"], dtype=np.float64)
            except (TypeError, ValueError):
                raise TrajectoryFormatError("features are not a numeric T x D array", lineno) from None
            if arr.shape != (T, D):
                raise TrajectoryFormatError(f"features have shape {arr.shape}, schema needs ({T}, {D})",
                                            lineno)
            if not np.all(np.isfinite(arr)):
                raise TrajectoryFormatError("features contain non-finite values", lineno)
            feats.append(arr)
            if "label" in rec:
                if not isinstance(rec["label"], int) or isinstance(rec["label"], bool):
                    raise TrajectoryFormatError("label must be an integer", lineno)
                labels.append(rec["label"])
            metas.append(rec.get("meta", {}))
    if labels and len(labels) != len(feats):
        raise TrajectoryFormatError("some records have labels and some do not")
    features = np.stack(feats) if feats else np.zeros((0, T, D))
    meta = {}
    if metas and all(metas) and all(m.keys() == metas[0].keys() for m in metas):
        meta = {k: np.asarray([m[k] for m in metas]) for k in metas[0]}
    return Dataset(features, schema, np.asarray(labels) if labels else None, meta)


def write_splits(out_dir, splits: Splits, extra: dict | None = None) -> dict:
    """Write ``{split}.jsonl``, ``schema.json``, ``labels.json``, ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    schema = splits.train.schema
    write_schema(os.path.join(out_dir, "schema.json"), schema)
    manifest = {"schema": "schema.json", "splits": {}, **(extra or {})}
    labels, start = {}, 0
    for name, ds in splits.items():
        fname = f"{name}.jsonl"
        write_trajectories(os.path.join(out_dir, fname), ds)
        manifest["splits"][name] = {"file": fname, "n": len(ds),
                                    "indices": list(range(start, start + len(ds)))}
        start += len(ds)
        if ds.labels is not None:
            labels[name] = ds.labels.tolist()
    with open(os.path.join(out_dir, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(labels, fh)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest


def read_splits(data_dir) -> Splits:
    with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    schema = read_schema(os.path.join(data_dir, manifest.get("schema", "schema.json")))
    parts = {name: load_trajectories(os.path.join(data_dir, entry["file"]), schema)
             for name, entry in manifest["splits"].items()}
    missing = {"train", "val", "test"} - set(parts)
    if missing:
        raise TrajectoryFormatError(f"manifest lacks splits {sorted(missing)}")
    return Splits(parts["train"], parts["val"], parts["test"])
