"""A small numpy multilayer perceptron with hand-written backpropagation.

The classifier has ReLU hidden layers, a softmax or sigmoid head, optional
(inverted) dropout after each hidden layer and an optional confidence head:
a logistic unit on the last hidden layer producing c_hat in (0, 1).
Parameters live in a flat ``dict`` (``W0, b0, ..., Wc, bc``) so gradient
checks and serialization can treat every model the same way.

Training is plain mini-batch gradient descent with a fixed learning rate.
"""

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import detectors, modelio
from .errors import DivergenceError, InvalidArgumentError, InvalidModelError, NumericError
from .rng import derive_seed, substream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.1
    batch_size: int = 64
    seed: int = 0
    lambda_init: float = 0.1
    budget: float = 0.3
    hint_probability: float = 0.5
    lambda_low_divisor: float = 0.99
    lambda_high_divisor: float = 1.01
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise InvalidArgumentError("epochs, batch_size and learning_rate must be positive")
        if not self.lambda_init > 0:
            raise InvalidArgumentError("lambda_init must be positive")
        if not 0.0 <= self.hint_probability <= 1.0:
            raise InvalidArgumentError("hint_probability must be in [0, 1]")


# --------------------------------------------------------------------------
# dense stack shared by classifier and autoencoder
# --------------------------------------------------------------------------


def _init_dense(widths, rng, params, prefix=""):
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"{prefix}b{i}"] = np.zeros(fan_out)


def _dense_forward(params, n_layers, x, relu, masks=None, keep=1.0):
    """Run the stack; ``relu[i]`` says whether layer i's output is rectified.

    Returns the output and a cache of layer inputs for the backward pass.
    """
    cache = []
    h = x
    for i in range(n_layers):
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        cache.append((h, z))
        if relu[i]:
            z = np.maximum(z, 0.0)
            if masks is not None and masks[i] is not None:
                z = z * masks[i] / keep
        h = z
    return h, cache


def _dense_backward(params, n_layers, cache, g_out, relu, masks=None, keep=1.0):
    grads = {}
    g = g_out
    for i in reversed(range(n_layers)):
        h_in, z = cache[i]
        if relu[i]:
            if masks is not None and masks[i] is not None:
                g = g * masks[i] / keep
            g = g * (z > 0)
        grads[f"W{i}"] = h_in.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"W{i}"].T
    return grads, g


# --------------------------------------------------------------------------
# classifier
# --------------------------------------------------------------------------


@dataclass
class ToyClassifier:
    widths: tuple
    params: dict
    head: str = "softmax"
    dropout_rate: float = 0.0
    has_confidence: bool = False

    def __post_init__(self):
        if self.head not in ("softmax", "sigmoid"):
            raise InvalidArgumentError(f"unknown head {self.head!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError("dropout_rate must be in [0, 1)")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def num_classes(self):
        return self.widths[-1]

    @property
    def relu(self):
        return [True] * (self.n_layers - 1) + [False]

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return copy.deepcopy(self)

    def save(self, path):
        meta = {
            "widths": list(self.widths),
            "head": self.head,
            "dropout_rate": self.dropout_rate,
            "has_confidence": self.has_confidence,
        }
        modelio.save(path, modelio.KIND_CLASSIFIER, meta, self.params)

    @classmethod
    def load(cls, path):
        _, meta, arrays = modelio.load(path, modelio.KIND_CLASSIFIER)
        return cls(tuple(meta["widths"]), arrays, meta["head"], meta["dropout_rate"], meta["has_confidence"])


def init_classifier(input_dim, hidden, num_classes, head="softmax", dropout_rate=0.0,
                    confidence=False, seed=0) -> ToyClassifier:
    widths = (int(input_dim), *map(int, hidden), int(num_classes))
    if min(widths) < 1:
        raise InvalidArgumentError(f"layer widths must be positive: {widths}")
    rng = substream(seed, "init/classifier")
    params = {}
    _init_dense(widths, rng, params)
    if confidence:
        params["Wc"] = np.zeros((widths[-2], 1))
        params["bc"] = np.zeros(1)
    return ToyClassifier(widths, params, head, dropout_rate, confidence)


def _check_features(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.widths[0]:
        raise InvalidArgumentError(f"expected N x {model.widths[0]} features, got {x.shape}")
    return x


def _dropout_masks(model, n, rng):
    if rng is None or model.dropout_rate == 0.0:
        return None
    keep = 1.0 - model.dropout_rate
    return [
        (rng.random((n, w)) < keep).astype(np.float64) if r else None
        for w, r in zip(model.widths[1:], model.relu)
    ]


def _run(model, x, masks):
    keep = 1.0 - model.dropout_rate
    logits, cache = _dense_forward(model.params, model.n_layers, x, model.relu, masks, keep)
    conf_logit = None
    if model.has_confidence:
        h_last = cache[-1][0]
        conf_logit = (h_last @ model.params["Wc"] + model.params["bc"])[:, 0]
    return logits, conf_logit, cache


def _backprop(model, x, cache, masks, g_logits, g_conf=None):
    keep = 1.0 - model.dropout_rate
    grads, g_in = {}, None
    if g_conf is not None:
        h_last = cache[-1][0]
        grads["Wc"] = h_last.T @ g_conf[:, None]
        grads["bc"] = np.array([g_conf.sum()])
        # route the confidence gradient into the last hidden activation
        extra = g_conf[:, None] @ model.params["Wc"].T
    else:
        extra = None
    g = g_logits
    for i in reversed(range(model.n_layers)):
        h_in, z = cache[i]
        if model.relu[i]:
            if masks is not None and masks[i] is not None:
                g = g * masks[i] / keep
            g = g * (z > 0)
        grads[f"W{i}"] = h_in.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ model.params[f"W{i}"].T
        if i == model.n_layers - 1 and extra is not None:
            g = g + extra
    g_in = g
    if model.has_confidence and "Wc" not in grads:
        grads["Wc"] = np.zeros_like(model.params["Wc"])
        grads["bc"] = np.zeros_like(model.params["bc"])
    return grads, g_in


def forward(model: ToyClassifier, features, dropout_seed=None, return_confidence=False):
    """Logits for ``features``; with ``dropout_seed`` a seeded dropout mask is applied.

    With ``return_confidence=True`` returns ``(logits, c_hat)``.
    """
    x = _check_features(model, features)
    rng = None if dropout_seed is None else substream(dropout_seed, "forward/dropout")
    logits, conf_logit, _ = _run(model, x, _dropout_masks(model, x.shape[0], rng))
    if return_confidence:
        if conf_logit is None:
            raise InvalidModelError("model has no confidence head")
        return logits, detectors.sigmoid_posteriors(conf_logit)
    return logits


def posteriors(model: ToyClassifier, features, dropout_seed=None):
    logits = forward(model, features, dropout_seed)
    if model.head == "softmax":
        return detectors.softmax(logits)
    return detectors.sigmoid_posteriors(logits)


def mc_dropout_posteriors(model: ToyClassifier, features, passes, seed):
    """Stack of ``passes`` posterior tensors under independent dropout masks."""
    if passes < 2:
        raise InvalidArgumentError("need at least 2 dropout passes")
    return np.stack([posteriors(model, features, dropout_seed=derive_seed(seed, f"mc/{p}"))
                     for p in range(passes)])


def _targets(model, labels, n):
    y = np.asarray(labels)
    if model.head == "softmax":
        y = y.reshape(-1).astype(np.int64)
        if y.size != n or y.min() < 0 or y.max() >= model.num_classes:
            raise InvalidArgumentError(f"class labels must be {n} ints in [0, {model.num_classes})")
        return y
    if y.shape != (n, model.num_classes) or not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError(f"sigmoid head needs a {n} x {model.num_classes} multi-hot matrix")
    return y.astype(np.float64)


def _head_loss(model, logits, y):
    """Mean loss and d(loss)/d(logits) for the model's head."""
    n = logits.shape[0]
    if not np.all(np.isfinite(logits)):
        return np.inf, np.zeros_like(logits)  # overflowed; training loops report divergence
    if model.head == "softmax":
        logp = detectors.log_softmax(logits)
        loss = -logp[np.arange(n), y].mean()
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        return loss, g / n
    # binary cross-entropy averaged over all N x K entries
    loss = (np.logaddexp(0.0, logits) - y * logits).mean()
    return loss, (detectors.sigmoid_posteriors(logits) - y) / y.size


def classifier_loss_and_grads(model: ToyClassifier, features, labels, masks=None):
    x = _check_features(model, features)
    y = _targets(model, labels, x.shape[0])
    logits, _, cache = _run(model, x, masks)
    loss, g = _head_loss(model, logits, y)
    grads, _ = _backprop(model, x, cache, masks, g)
    return loss, grads


def classifier_loss(model, features, labels):
    return classifier_loss_and_grads(model, features, labels)[0]


def _sgd(model, grads, config):
    for name, g in grads.items():
        if config.weight_decay and name.startswith("W"):
            g = g + config.weight_decay * model.params[name]
        model.params[name] -= config.learning_rate * g


def _batches(n, config, epoch):
    order = substream(config.seed, f"train/shuffle/{epoch}").permutation(n)
    return [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]


def train_classifier(model: ToyClassifier, features, labels, config: TrainConfig):
    """Mini-batch gradient descent on the head's loss.

    Returns ``(trained_model, trace)``; ``trace[0]`` is the loss before
    training and ``trace[e]`` the full-data loss after epoch ``e``.
    """
    model = model.copy()
    x = _check_features(model, features)
    y = _targets(model, labels, x.shape[0])
    trace = [{"epoch": 0, "loss": float(classifier_loss(model, x, labels))}]
    for epoch in range(1, config.epochs + 1):
        for b, idx in enumerate(_batches(x.shape[0], config, epoch)):
            rng = substream(config.seed, f"train/dropout/{epoch}/{b}")
            masks = _dropout_masks(model, idx.size, rng)
            loss, grads = classifier_loss_and_grads(model, x[idx], y[idx], masks)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            _sgd(model, grads, config)
        loss = classifier_loss(model, x, labels)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        trace.append({"epoch": epoch, "loss": float(loss)})
    return model, trace


# --------------------------------------------------------------------------
# confidence branch
# --------------------------------------------------------------------------


def update_lambda(lam, mean_confidence, budget=0.3, low_divisor=0.99, high_divisor=1.01):
    """Budget rule: lam / low_divisor if mean c_hat <= budget, else lam / high_divisor."""
    if mean_confidence <= budget:
        return lam / low_divisor
    return lam / high_divisor


def confidence_loss_and_grads(model: ToyClassifier, features, labels, hints, lam, masks=None):
    """Hint-gated confidence loss ``L_p + lam * L_c`` and its parameter gradients.

    With ``c = c_hat * b + (1 - b)`` the predicted posterior is pulled toward
    the one-hot label, ``P' = P * c + (1 - c) * y``. ``L_p`` is the mean of
    ``-log P'[true class]`` and ``L_c`` the mean of ``-log c_hat``. Returns
    ``(loss, grads, c_hat)``.
    """
    if not model.has_confidence or model.head != "softmax":
        raise InvalidModelError("confidence training needs a softmax model with a confidence head")
    x = _check_features(model, features)
    y = _targets(model, labels, x.shape[0])
    b = np.asarray(hints, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    rows = np.arange(n)
    logits, conf_logit, cache = _run(model, x, masks)
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(conf_logit))):
        zero = {k: np.zeros_like(v) for k, v in model.params.items()}
        return np.inf, zero, np.full(n, np.nan)
    p = detectors.softmax(logits)
    c_hat = detectors.sigmoid_posteriors(conf_logit)
    c = c_hat * b + (1.0 - b)
    p_true = p[rows, y]
    p_interp = p_true * c + (1.0 - c)
    log_c_hat = -np.logaddexp(0.0, -conf_logit)
    loss_p = -np.log(p_interp).mean()
    loss_c = -log_c_hat.mean()
    loss = loss_p + lam * loss_c

    g_interp = -1.0 / (n * p_interp)
    # d p_true / d logits = p_true * (onehot - p)
    g_logits = -p * (g_interp * c * p_true)[:, None]
    g_logits[rows, y] += g_interp * c * p_true
    g_c_hat = g_interp * (p_true - 1.0) * b - lam / (n * c_hat)
    g_conf = g_c_hat * c_hat * (1.0 - c_hat)
    grads, _ = _backprop(model, x, cache, masks, g_logits, g_conf)
    return loss, grads, c_hat


def train_confidence_branch(model: ToyClassifier, features, labels, config: TrainConfig):
    """Train classifier and confidence head jointly with the adaptive lambda rule.

    Per batch, each example's hint gate ``b`` is Bernoulli(hint_probability);
    after the step lambda is updated from the batch mean of c_hat. Returns
    ``(trained_model, trace)`` where ``trace["batches"]`` records
    ``lambda_before``, ``mean_confidence`` and ``lambda`` for every batch.
    """
    model = model.copy()
    x = _check_features(model, features)
    y = _targets(model, labels, x.shape[0])
    lam = config.lambda_init
    batches, epochs = [], []
    for epoch in range(1, config.epochs + 1):
        losses = []
        for bi, idx in enumerate(_batches(x.shape[0], config, epoch)):
            hints = (substream(config.seed, f"confidence/hints/{epoch}/{bi}").random(idx.size)
                     < config.hint_probability).astype(np.float64)
            masks = _dropout_masks(model, idx.size, substream(config.seed, f"train/dropout/{epoch}/{bi}"))
            loss, grads, c_hat = confidence_loss_and_grads(model, x[idx], y[idx], hints, lam, masks)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            _sgd(model, grads, config)
            mean_c = float(c_hat.mean())
            new_lam = update_lambda(lam, mean_c, config.budget,
                                    config.lambda_low_divisor, config.lambda_high_divisor)
            batches.append({"epoch": epoch, "batch": bi, "lambda_before": lam,
                            "mean_confidence": mean_c, "lambda": new_lam, "loss": float(loss)})
            lam = new_lam
            losses.append(float(loss))
        epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "lambda": lam,
                       "mean_confidence": float(np.mean([r["mean_confidence"] for r in batches
                                                         if r["epoch"] == epoch]))})
    return model, {"epochs": epochs, "batches": batches}


def confidence_score(model: ToyClassifier, features):
    """1 - c_hat, so low confidence means high anomaly score."""
    if not model.has_confidence:
        raise InvalidModelError("model has no confidence head")
    _, c_hat = forward(model, features, return_confidence=True)
    return 1.0 - c_hat


# --------------------------------------------------------------------------
# input gradients and ODIN
# --------------------------------------------------------------------------


def input_gradient(model: ToyClassifier, features, temperature=1.0):
    """d/dx of log max_k softmax(logits(x) / temperature)_k (argmax held fixed)."""
    x = _check_features(model, features)
    logits, _, cache = _run(model, x, None)
    p = detectors.softmax(logits / temperature)
    top = p.argmax(axis=1)
    g = -p
    g[np.arange(x.shape[0]), top] += 1.0
    _, g_in = _backprop(model, x, cache, None, g / temperature)
    if not np.all(np.isfinite(g_in)):
        raise NumericError("non-finite input gradient")
    return g_in


def odin_score(model: ToyClassifier, features, temperature=1000.0, epsilon=0.0, variant="msp"):
    """Perturb inputs toward higher max-softmax, then score temperature-scaled logits.

    ``variant="maxlogit"`` scores the perturbed, scaled logits with MaxLogit.
    """
    if not temperature > 0:
        raise InvalidArgumentError("temperature must be positive")
    if epsilon < 0:
        raise InvalidArgumentError("epsilon must be non-negative")
    x = _check_features(model, features)
    if epsilon > 0:
        x = x + epsilon * np.sign(input_gradient(model, x, temperature))
    scaled = detectors.temperature_scale(forward(model, x), temperature)
    if variant == "msp":
        return detectors.msp_score(scaled)
    if variant == "maxlogit":
        return detectors.maxlogit_score(scaled)
    raise InvalidArgumentError(f"unknown ODIN variant {variant!r}")


# --------------------------------------------------------------------------
# autoencoder
# --------------------------------------------------------------------------


@dataclass
class ToyAutoencoder:
    """Dense autoencoder; ReLU everywhere except the code layer and the output."""

    widths: tuple
    params: dict = field(repr=False)

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def bottleneck(self):
        return min(self.widths[1:-1])

    @property
    def relu(self):
        code = int(np.argmin(self.widths[1:-1]))
        return [i != code and i != self.n_layers - 1 for i in range(self.n_layers)]

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return copy.deepcopy(self)

    def save(self, path):
        modelio.save(path, modelio.KIND_AUTOENCODER, {"widths": list(self.widths)}, self.params)

    @classmethod
    def load(cls, path):
        _, meta, arrays = modelio.load(path, modelio.KIND_AUTOENCODER)
        return cls(tuple(meta["widths"]), arrays)


def init_autoencoder(input_dim, bottleneck, hidden=(), seed=0) -> ToyAutoencoder:
    if not 1 <= bottleneck < input_dim:
        raise InvalidArgumentError("bottleneck must be smaller than the input dimension")
    widths = (input_dim, *hidden, bottleneck, *reversed(tuple(hidden)), input_dim)
    params = {}
    _init_dense(widths, substream(seed, "init/autoencoder"), params)
    return ToyAutoencoder(tuple(int(w) for w in widths), params)


def _check_ae_input(ae, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != ae.widths[0]:
        raise InvalidArgumentError(f"expected N x {ae.widths[0]} features, got {x.shape}")
    return x


def reconstruct(ae: ToyAutoencoder, features):
    x = _check_ae_input(ae, features)
    return _dense_forward(ae.params, ae.n_layers, x, ae.relu)[0]


def autoencoder_loss_and_grads(ae: ToyAutoencoder, features):
    """Mean squared reconstruction error over all entries, with gradients."""
    x = _check_ae_input(ae, features)
    out, cache = _dense_forward(ae.params, ae.n_layers, x, ae.relu)
    diff = out - x
    loss = (diff**2).mean()
    grads, _ = _dense_backward(ae.params, ae.n_layers, cache, 2.0 * diff / diff.size, ae.relu)
    return loss, grads


def train_autoencoder(ae: ToyAutoencoder, features, config: TrainConfig):
    ae = ae.copy()
    x = _check_ae_input(ae, features)
    trace = [{"epoch": 0, "loss": float(autoencoder_loss_and_grads(ae, x)[0])}]
    for epoch in range(1, config.epochs + 1):
        for idx in _batches(x.shape[0], config, epoch):
            loss, grads = autoencoder_loss_and_grads(ae, x[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            _sgd(ae, grads, config)
        loss = autoencoder_loss_and_grads(ae, x)[0]
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        trace.append({"epoch": epoch, "loss": float(loss)})
    return ae, trace


def config_dict(config: TrainConfig):
    return asdict(config)
