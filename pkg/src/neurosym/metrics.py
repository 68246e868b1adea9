"""Cluster assignment and external clustering metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import grad as G


@dataclass
class Clustering:
    ids: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError("cluster ids must be one-dimensional")
        if len(self.ids) and (self.ids.min() < 0 or self.ids.max() >= self.n_clusters):
            raise ValueError(f"cluster ids must lie in [0, {self.n_clusters})")

    def __len__(self):
        return len(self.ids)


def bits_to_ids(bits) -> np.ndarray:
    """Bit ``i`` contributes ``2**i``: column order is program order."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 2:
        raise ValueError("bits must be (n, k)")
    return (bits << np.arange(bits.shape[1])).sum(axis=1)


def assign_clusters(programs, x) -> Clustering:
    for i, p in enumerate(programs):
        if not p.is_complete:
            raise ValueError(f"program {i} is incomplete")
    x = np.asarray(x, dtype=np.float64)
    if programs:
        bits = np.stack([G.data_of(p.logits(x)) > 0 for p in programs], axis=1)
    else:
        bits = np.zeros((len(x), 0))
    return Clustering(bits_to_ids(bits), 2 ** len(programs))


def _ids(clustering):
    return clustering.ids if isinstance(clustering, Clustering) else np.asarray(clustering)


def contingency(clustering, labels) -> np.ndarray:
    """Rows: clusters, columns: labels (both relabeled to 0..m-1 in sorted order)."""
    c, y = _ids(clustering), np.asarray(labels)
    if len(c) != len(y):
        raise ValueError(f"{len(c)} cluster ids but {len(y)} labels")
    if len(c) == 0:
        raise ValueError("metrics need at least one item")
    _, ci = np.unique(c, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((ci.max() + 1, yi.max() + 1), dtype=np.int64)
    np.add.at(table, (ci, yi), 1)
    return table


def purity(clustering, labels) -> float:
    table = contingency(clustering, labels)
    return float(table.max(axis=1).sum() / table.sum())


def nmi(clustering, labels) -> float:
    """I(C; Y) / sqrt(H(C) H(Y)); 0 when either partition has one block."""
    table = contingency(clustering, labels).astype(np.float64)
    n = table.sum()
    pc, py = table.sum(1) / n, table.sum(0) / n
    hc = -np.sum(pc * np.log(pc))
    hy = -np.sum(py * np.log(py))
    if hc <= 0 or hy <= 0:
        return 0.0
    pj = table / n
    nz = pj > 0
    mi = np.sum(pj[nz] * np.log(pj[nz] / np.outer(pc, py)[nz]))
    return float(min(1.0, max(0.0, mi / math.sqrt(hc * hy))))


def rand_index(clustering, labels) -> float:
    c = _ids(clustering)
    n = len(c)
    if n < 2:
        raise ValueError("rand index needs at least two items")
    table = contingency(clustering, labels)
    pairs = lambda v: (v * (v - 1) // 2).sum()
    same_both = pairs(table)
    same_c, same_y = pairs(table.sum(1)), pairs(table.sum(0))
    total = n * (n - 1) // 2
    tn = total - same_c - same_y + same_both
    return float((same_both + tn) / total)


@dataclass
class MetricsReport:
    purity: float
    nmi: float
    ri: float
    n: int
    k_clusters: int
    contingency: list

    def to_dict(self) -> dict:
        return {"purity": self.purity, "nmi": self.nmi, "ri": self.ri, "n": self.n,
                "k_clusters": self.k_clusters, "contingency": self.contingency}

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def evaluate_clustering(clustering, labels, k_clusters: int | None = None) -> MetricsReport:
    ids = _ids(clustering)
    if k_clusters is None:
        k_clusters = clustering.n_clusters if isinstance(clustering, Clustering) else len(np.unique(ids))
    return MetricsReport(purity(ids, labels), nmi(ids, labels), rand_index(ids, labels),
                         len(ids), int(k_clusters), contingency(ids, labels).tolist())


def random_assignment(n: int, k_clusters: int, seed) -> Clustering:
    rng = np.random.default_rng(seed)
    return Clustering(rng.integers(0, k_clusters, size=n), k_clusters)


# k-means ----------------------------------------------------------------------
@dataclass
class KMeansResult:
    clustering: Clustering
    centers: np.ndarray
    inertia_history: list

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def kmeans(points, k: int, seed=0, max_iters: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    Stops at an assignment fixpoint.  An empty cluster is re-seeded at the
    point farthest from its current center.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else int(np.argmax(d2))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(1))

    assign = None
    history = []
    for _ in range(max_iters):
        dist = _sq_dists(x, centers)
        new = dist.argmin(1)
        history.append(float(dist[np.arange(n), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(0)
            else:
                far = int(np.argmax(_sq_dists(x, centers)[np.arange(n), assign]))
                centers[j] = x[far]
                assign[far] = j
    history.append(float(_sq_dists(x, centers)[np.arange(n), assign].sum()))
    return KMeansResult(Clustering(assign, k), centers, history)


# projection -------------------------------------------------------------------
def pca_project(points, n_components: int = 2) -> np.ndarray:
    """Scores on the leading principal components (SVD of the centered data)."""
    x = np.asarray(points, dtype=np.float64)
    xc = x - x.mean(0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    out = xc @ vt[:n_components].T
    if out.shape[1] < n_components:
        out = np.hstack([out, np.zeros((len(x), n_components - out.shape[1]))])
    return out
