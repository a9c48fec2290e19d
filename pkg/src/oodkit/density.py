"""Local Outlier Factor and Isolation Forest, fitted on in-distribution vectors."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import modelio
from .errors import InvalidArgumentError
from .rng import substream

LRD_CAP = 1e12
EULER_GAMMA = 0.5772156649
_CHUNK = 256


def _as_matrix(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contain NaN or Inf")
    return arr


# --------------------------------------------------------------------------
# Local Outlier Factor
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LofModel:
    reference_points: np.ndarray
    k: int
    k_distance: np.ndarray
    lrd: np.ndarray

    def save(self, path):
        modelio.save(path, modelio.KIND_LOF, {"k": self.k}, {"reference_points": self.reference_points})

    @classmethod
    def load(cls, path):
        _, meta, arrays = modelio.load(path, modelio.KIND_LOF)
        # caches are a deterministic function of the reference set
        return lof_fit(arrays["reference_points"], int(meta["k"]))


def _neighborhoods(dist, k):
    """k-distance per row plus a mask of all points within it (ties included)."""
    kdist = np.partition(dist, k - 1, axis=1)[:, k - 1]
    return kdist, dist <= kdist[:, None]


def _lrd(dist, mask, ref_kdist):
    reach = np.maximum(dist, ref_kdist[None, :])
    mean_reach = np.where(mask, reach, 0.0).sum(axis=1) / mask.sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.minimum(1.0 / mean_reach, LRD_CAP)


def lof_fit(train, k: int = 20) -> LofModel:
    x = _as_matrix(train, "train")
    n = x.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if n <= k:
        raise InvalidArgumentError(f"LOF needs more than k={k} training points, got {n}")

    def chunks():
        for start in range(0, n, _CHUNK):
            d = cdist(x[start:start + _CHUNK], x)
            rows = np.arange(d.shape[0])
            d[rows, start + rows] = np.inf  # a point is not its own neighbour
            yield start, d

    kdist = np.empty(n)
    for start, d in chunks():
        kdist[start:start + d.shape[0]] = _neighborhoods(d, k)[0]
    lrd = np.empty(n)
    for start, d in chunks():
        lrd[start:start + d.shape[0]] = _lrd(d, _neighborhoods(d, k)[1], kdist)
    return LofModel(x, k, kdist, lrd)


def lof_score(model: LofModel, queries):
    """LOF of each query against the training set; ~1 inside clusters, >1 for outliers."""
    q = _as_matrix(queries, "queries")
    if q.shape[1] != model.reference_points.shape[1]:
        raise InvalidArgumentError(
            f"queries have {q.shape[1]} dims, model has {model.reference_points.shape[1]}"
        )
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], _CHUNK):
        d = cdist(q[start:start + _CHUNK], model.reference_points)
        _, mask = _neighborhoods(d, model.k)
        lrd_q = _lrd(d, mask, model.k_distance)
        neigh_lrd = np.where(mask, model.lrd[None, :], 0.0).sum(axis=1) / mask.sum(axis=1)
        out[start:start + d.shape[0]] = neigh_lrd / lrd_q
    return out


# --------------------------------------------------------------------------
# Isolation Forest
# --------------------------------------------------------------------------


def average_path_length(n):
    """c(n): mean unsuccessful-search path length in a BST of n nodes."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    out[n == 2] = 1.0
    return out if out.ndim else float(out)


def anomaly_score_from_path_length(mean_path_length, subsample_size):
    """2 ** (-E[h(x)] / c(psi)); exactly 0.5 when E[h(x)] == c(psi)."""
    return np.exp2(-np.asarray(mean_path_length, dtype=np.float64) / average_path_length(subsample_size))


@dataclass
class IsolationTree:
    """Array-encoded tree; ``feature[i] == -1`` marks an external node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def depth(self):
        depths = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):  # children always follow parents
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def path_lengths(self, x):
        node = np.zeros(x.shape[0], dtype=np.int64)
        depth = np.zeros(x.shape[0])
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            depth[idx] += 1
            active = self.feature[node] >= 0
        return depth + average_path_length(self.size[node])


def _grow_tree(x, max_depth, rng):
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node(n):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        return len(feature) - 1

    root = new_node(x.shape[0])
    stack = [(root, np.arange(x.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or idx.size <= 1:
            continue
        sub = x[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.nonzero(hi > lo)[0]
        if splittable.size == 0:
            continue  # all points identical: external node of this size
        dim = int(splittable[rng.integers(splittable.size)])
        t = lo[dim]
        while not lo[dim] < t < hi[dim]:
            t = rng.uniform(lo[dim], hi[dim])
        goes_left = sub[:, dim] < t
        feature[node] = dim
        threshold[node] = t
        li = new_node(int(goes_left.sum()))
        ri = new_node(int((~goes_left).sum()))
        left[node], right[node] = li, ri
        stack.append((ri, idx[~goes_left], depth + 1))
        stack.append((li, idx[goes_left], depth + 1))
    return IsolationTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
    )


@dataclass
class IsolationForestModel:
    trees: list
    subsample_size: int
    tree_count: int
    rng_seed: int
    dim: int

    @property
    def max_depth(self):
        return math.ceil(math.log2(self.subsample_size))

    def save(self, path):
        arrays = {}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "size"):
                arrays[f"tree{i:05d}.{name}"] = getattr(t, name)
        meta = {
            "subsample_size": self.subsample_size,
            "tree_count": self.tree_count,
            "rng_seed": self.rng_seed,
            "dim": self.dim,
        }
        modelio.save(path, modelio.KIND_IFOREST, meta, arrays)

    @classmethod
    def load(cls, path):
        _, meta, arrays = modelio.load(path, modelio.KIND_IFOREST)
        trees = [
            IsolationTree(*(arrays[f"tree{i:05d}.{n}"] for n in ("feature", "threshold", "left", "right", "size")))
            for i in range(meta["tree_count"])
        ]
        return cls(trees, meta["subsample_size"], meta["tree_count"], meta["rng_seed"], meta["dim"])


def iforest_fit(train, tree_count: int = 100, subsample_size: int = 256, seed: int = 0) -> IsolationForestModel:
    """Grow ``tree_count`` isolation trees on subsamples drawn without replacement.

    Each tree has its own substream derived from ``seed`` and the tree index.
    """
    x = _as_matrix(train, "train")
    n = x.shape[0]
    if n < 2:
        raise InvalidArgumentError(f"Isolation Forest needs at least 2 points, got {n}")
    if tree_count < 1:
        raise InvalidArgumentError("tree_count must be >= 1")
    if subsample_size < 2:
        raise InvalidArgumentError("subsample_size must be >= 2")
    psi = min(subsample_size, n)
    max_depth = math.ceil(math.log2(psi))
    trees = []
    for i in range(tree_count):
        rng = substream(seed, f"iforest/tree/{i}")
        idx = np.sort(rng.choice(n, size=psi, replace=False))
        trees.append(_grow_tree(x[idx], max_depth, rng))
    return IsolationForestModel(trees, psi, tree_count, seed, x.shape[1])


def iforest_mean_path_length(model: IsolationForestModel, queries):
    q = _as_matrix(queries, "queries")
    if q.shape[1] != model.dim:
        raise InvalidArgumentError(f"queries have {q.shape[1]} dims, model has {model.dim}")
    return np.mean([t.path_lengths(q) for t in model.trees], axis=0)


def iforest_score(model: IsolationForestModel, queries):
    """Anomaly score in (0, 1); higher = isolated closer to the root."""
    return anomaly_score_from_path_length(iforest_mean_path_length(model, queries), model.subsample_size)
