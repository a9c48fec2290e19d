"""Closed-form anomaly scores computed from logits or posteriors.

All scorers follow one sign convention: higher score = more anomalous.
Class scores live on the last axis, so an ``N x K`` logit matrix gives ``N``
scores and an ``H x W x K`` logit map gives an ``H x W`` score map.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError, UnusableModelError

KL_FLOOR = 1e-12


def _finite(x, name="logits"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] < 1:
        raise InvalidArgumentError(f"{name} must have a non-empty class axis")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contain NaN or Inf")
    return arr


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    z = _finite(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = _finite(logits)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid_posteriors(logits):
    """Elementwise logistic sigmoid, as used by multi-label heads."""
    z = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def msp_score(logits):
    """Negative maximum softmax probability; lies in [-1, -1/K]."""
    z = _finite(logits)
    if z.shape[-1] < 2:
        raise InvalidArgumentError("MSP needs at least 2 classes")
    return -softmax(z).max(axis=-1)


def maxlogit_score(logits):
    return -_finite(logits).max(axis=-1)


def logit_avg_score(logits):
    return -_finite(logits).mean(axis=-1)


def temperature_scale(logits, T):
    if not T > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {T}")
    return _finite(logits) / T


@dataclass(frozen=True)
class PosteriorTemplateSet:
    """Mean posterior ``templates[k]`` of validation rows predicted as class k.

    Rows of ``templates`` belonging to classes with ``counts[k] == 0`` are
    zero and never used for scoring.
    """

    templates: np.ndarray
    counts: np.ndarray

    @property
    def populated(self):
        return self.counts > 0

    @property
    def num_classes(self):
        return self.templates.shape[0]


def fit_kl_templates(val_logits) -> PosteriorTemplateSet:
    """Group validation posteriors by predicted class and average each group.

    Ground-truth labels are not needed: grouping is by argmax prediction.
    """
    z = _finite(val_logits)
    if z.ndim != 2 or z.shape[0] < 1:
        raise InvalidArgumentError("val_logits must be N x K with N >= 1")
    post = softmax(z)
    k = post.shape[1]
    pred = post.argmax(axis=1)
    counts = np.bincount(pred, minlength=k).astype(np.int64)
    sums = np.zeros((k, k))
    np.add.at(sums, pred, post)
    templates = np.zeros((k, k))
    nz = counts > 0
    templates[nz] = sums[nz] / counts[nz, None]
    return PosteriorTemplateSet(templates, counts)


def kl_matching_score(logits, templates: PosteriorTemplateSet):
    """min over populated classes of KL(softmax(logits) || template)."""
    z = _finite(logits)
    if z.shape[-1] != templates.num_classes:
        raise InvalidArgumentError(
            f"logits have {z.shape[-1]} classes, templates have {templates.num_classes}"
        )
    if not np.any(templates.populated):
        raise UnusableModelError("no populated KL template")
    p = softmax(z)
    lead = p.shape[:-1]
    p = p.reshape(-1, p.shape[-1])
    logd = np.log(np.maximum(templates.templates[templates.populated], KL_FLOOR))
    logp = np.log(np.where(p > 0, p, 1.0))  # 0 * log 0 contributes 0
    out = np.empty(p.shape[0])
    step = max(1, 2**20 // max(1, logd.size))
    for start in range(0, p.shape[0], step):
        sl = slice(start, start + step)
        # elementwise log-ratio keeps KL(p||p) exactly 0
        kl = (p[sl, None, :] * (logp[sl, None, :] - logd[None])).sum(axis=-1)
        out[sl] = kl.min(axis=1)
    return np.maximum(out, 0.0).reshape(lead)


def background_score(posteriors, background_index: int):
    p = np.asarray(posteriors, dtype=np.float64)
    k = p.shape[-1]
    if not 0 <= background_index < k:
        raise InvalidArgumentError(f"background_index {background_index} out of range for K={k}")
    return p[..., background_index].copy()


def dropout_variance_score(posterior_stack):
    """Class-averaged population variance across M dropout passes (axis 0)."""
    s = np.asarray(posterior_stack, dtype=np.float64)
    if s.ndim < 2 or s.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 dropout passes on axis 0")
    return s.var(axis=0).mean(axis=-1)


def reconstruction_score(inputs, reconstruction):
    """Per-position mean squared error over the last (channel/feature) axis."""
    x = np.asarray(inputs, dtype=np.float64)
    xh = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != xh.shape:
        raise InvalidArgumentError(f"shape mismatch {x.shape} vs {xh.shape}")
    return ((x - xh) ** 2).mean(axis=-1)
