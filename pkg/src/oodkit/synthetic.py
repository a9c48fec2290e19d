"""Synthetic OOD sources and class-structured in-distribution data.

Noise sources (Gaussian, Rademacher, Blobs) produce image-shaped tensors with
values in [-1, 1]. The mixture generator places well-separated class means on
a regular simplex and, optionally, splits some vertices into near-duplicate
pairs so that a classifier's posterior mass is shared between two classes on
those examples. Held-out anomalies come from means far from every class.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .rng import substream


def _shape(count, shape):
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise InvalidArgumentError(f"invalid sample shape {shape}")
    return (int(count),) + shape


def gen_gaussian_ood(count, shape, seed, std=0.5):
    """i.i.d. N(0, std**2) pixels clipped to [-1, 1]."""
    rng = substream(seed, "gaussian")
    x = rng.normal(0.0, std, size=_shape(count, shape))
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def gen_rademacher_ood(count, shape, seed):
    rng = substream(seed, "rademacher")
    bits = rng.integers(0, 2, size=_shape(count, shape), dtype=np.int8)
    return (2 * bits - 1).astype(np.float32)


def gen_blobs_ood(count, shape, seed, blur_sigma=2.0):
    """Binary blob images: blurred Rademacher noise thresholded at zero.

    ``shape`` is ``(H, W)`` or ``(H, W, C)``; the blur is spatial only, uses
    a Gaussian kernel truncated at 3 sigma and reflect padding. Each image
    draws from its own substream so images can be generated independently.
    """
    full = _shape(count, shape)
    if len(full) not in (3, 4):
        raise InvalidArgumentError("blob shape must be H x W or H x W x C")
    if blur_sigma <= 0:
        raise InvalidArgumentError("blur_sigma must be positive")
    sigma = (blur_sigma, blur_sigma) + ((0.0,) if len(full) == 4 else ())
    out = np.empty(full, dtype=np.float32)
    for i in range(full[0]):
        rng = substream(seed, f"blobs/{i}")
        noise = (2 * rng.integers(0, 2, size=full[1:]) - 1).astype(np.float64)
        smooth = ndimage.gaussian_filter(noise, sigma=sigma, mode="reflect", truncate=3.0)
        out[i] = np.where(smooth >= 0, 1.0, -1.0)
    return out


def mean_blob_size(image):
    """Mean connected-component size (4-connectivity) over both signs."""
    sizes = []
    for sign in (-1.0, 1.0):
        labelled, n = ndimage.label(image == sign)
        if n:
            sizes.extend(np.bincount(labelled.ravel())[1:])
    return float(np.mean(sizes))


def simplex_vertices(n_dims, edge):
    """The D+1 vertices of a regular simplex in R^D centred at the origin."""
    m = n_dims + 1
    centred = np.eye(m) - 1.0 / m
    # Helmert basis of the sum-zero subspace; explicit, so no sign ambiguity
    basis = np.zeros((n_dims, m))
    for i in range(1, m):
        basis[i - 1, :i] = 1.0 / math.sqrt(i * (i + 1))
        basis[i - 1, i] = -i / math.sqrt(i * (i + 1))
    return centred @ basis.T * (edge / math.sqrt(2.0))


@dataclass(frozen=True)
class MixtureSpec:
    """Layout of a Gaussian class mixture.

    ``class_count - fine_grained_pairs`` anchors sit on simplex vertices with
    edge ``base_separation``. The first ``fine_grained_pairs`` anchors are
    each split into two classes ``delta`` apart. Vertices left unused are
    reserved as directions for held-out anomaly means.
    """

    class_count: int
    feature_dim: int
    sigma: float = 1.0
    base_separation: float = 8.0
    fine_grained_pairs: int = 0
    delta: float = 1.0
    layout_seed: int = 0
    ood_distance: float = 3.0

    def __post_init__(self):
        if self.class_count < 2:
            raise InvalidArgumentError("class_count must be >= 2")
        if self.feature_dim < 1:
            raise InvalidArgumentError("feature_dim must be >= 1")
        if self.sigma <= 0 or self.base_separation <= 0:
            raise InvalidArgumentError("sigma and base_separation must be positive")
        if not 0 <= 2 * self.fine_grained_pairs <= self.class_count:
            raise InvalidArgumentError("too many fine-grained pairs for class_count")
        if self.fine_grained_pairs and not 0 < self.delta < self.base_separation:
            raise InvalidArgumentError("delta must lie in (0, base_separation)")
        if self.anchor_count > self.feature_dim + 1:
            raise InvalidArgumentError(
                f"{self.anchor_count} anchors do not fit on a simplex in {self.feature_dim} dims"
            )

    @property
    def anchor_count(self):
        return self.class_count - self.fine_grained_pairs

    @cached_property
    def _vertices(self):
        return simplex_vertices(self.feature_dim, self.base_separation)

    @cached_property
    def means(self):
        verts = self._vertices[: self.anchor_count]
        rng = substream(self.layout_seed, "mixture/pairs")
        means = []
        for a in range(self.anchor_count):
            if a < self.fine_grained_pairs:
                u = rng.normal(size=self.feature_dim)
                u *= 0.5 * self.delta / np.linalg.norm(u)
                means.extend([verts[a] - u, verts[a] + u])
            else:
                means.append(verts[a])
        return np.array(means)

    @cached_property
    def ood_means(self):
        """Anomaly means at least ``ood_distance * base_separation`` from every class mean.

        Directions are the unused simplex vertices, then random unit vectors
        if fewer than two remain.
        """
        dirs = [v / np.linalg.norm(v) for v in self._vertices[self.anchor_count:]]
        rng = substream(self.layout_seed, "mixture/ood")
        while len(dirs) < 2:
            u = rng.normal(size=self.feature_dim)
            dirs.append(u / np.linalg.norm(u))
        min_dist = self.ood_distance * self.base_separation
        out = []
        for u in dirs:
            proj = self.means @ u
            sq = (self.means**2).sum(axis=1)
            # smallest r with ||r u - mu||^2 >= min_dist^2 for every class mean
            disc = np.maximum(proj**2 - sq + min_dist**2, 0.0)
            r = float(np.max(proj + np.sqrt(disc))) * (1 + 1e-9)
            out.append(r * u)
        return np.array(out)


def gen_mixture_dataset(spec: MixtureSpec, per_class, seed):
    """``per_class`` spherical-normal samples around each class mean, shuffled."""
    if per_class < 1:
        raise InvalidArgumentError("per_class must be >= 1")
    rng = substream(seed, "mixture/samples")
    labels = np.repeat(np.arange(spec.class_count), per_class)
    feats = spec.means[labels] + spec.sigma * rng.normal(size=(labels.size, spec.feature_dim))
    order = rng.permutation(labels.size)
    return feats[order], labels[order]


def gen_ood_mixture(spec: MixtureSpec, count, seed):
    rng = substream(seed, "mixture/ood-samples")
    which = rng.integers(0, len(spec.ood_means), size=count)
    return spec.ood_means[which] + spec.sigma * rng.normal(size=(count, spec.feature_dim))


def gen_multilabel_dataset(spec: MixtureSpec, count, seed, max_labels=3):
    """Multi-label samples: each example is the sum of 1..max_labels class means plus noise.

    Returns features ``N x D`` and a multi-hot label matrix ``N x K``.
    """
    if not 1 <= max_labels <= spec.class_count:
        raise InvalidArgumentError("max_labels must be in [1, class_count]")
    rng = substream(seed, "multilabel/samples")
    targets = np.zeros((count, spec.class_count), dtype=np.int64)
    for i in range(count):
        n = rng.integers(1, max_labels + 1)
        targets[i, rng.choice(spec.class_count, size=n, replace=False)] = 1
    feats = targets @ spec.means + spec.sigma * rng.normal(size=(count, spec.feature_dim))
    return feats, targets
