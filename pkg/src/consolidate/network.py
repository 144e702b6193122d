"""Fully connected ReLU classifier with batch norm, dropout, and exact
hand-derived gradients.

Architecture: input -> dense -> [batch norm] -> ReLU -> [dropout]
            -> dense -> [batch norm] -> ReLU -> [dropout] -> dense -> logits

The training loss is mean cross-entropy over the batch. Dropout is
inverted (kept activations are scaled by 1/keep at train time), so
evaluation applies no rescaling and is a pure function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import Matrix, gaussian_fill, make_rng
from .dataset import LabeledDataset
from .errors import ConsistencyError, DomainError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1   # weight of the current batch in the running statistics

Gradients = dict[str, np.ndarray]


@dataclass
class NetConfig:
    hidden_width: int = 400
    use_batch_norm: bool = True
    dropout_input: float = 0.0
    dropout_hidden: float = 0.0
    init_seed: int = 0
    input_dim: int = 784
    n_classes: int = 10

    def __post_init__(self):
        if not (0.0 <= self.dropout_input < 1.0
                and 0.0 <= self.dropout_hidden < 1.0):
            raise DomainError("dropout probabilities must lie in [0, 1)")
        if self.hidden_width < 1 or self.input_dim < 1 or self.n_classes < 1:
            raise DomainError("layer widths must be positive")


@dataclass
class ModelParams:
    """Per-layer weights and biases, plus batch-norm state when enabled.

    Trainable leaves are exposed through ``trainable()`` as an ordered
    name -> array view; the arrays are live references, so in-place
    optimizer updates go through that dict. Running batch-norm statistics
    are state, not trainable parameters.
    """

    weights: list[Matrix]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray] | None = None
    bn_beta: list[np.ndarray] | None = None
    bn_mean: list[np.ndarray] | None = None
    bn_var: list[np.ndarray] | None = None

    @property
    def has_batch_norm(self) -> bool:
        return self.bn_gamma is not None

    def trainable(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for l in range(len(self.weights)):
            out[f"W{l + 1}"] = self.weights[l]
            out[f"b{l + 1}"] = self.biases[l]
            if self.has_batch_norm and l < len(self.weights) - 1:
                out[f"gamma{l + 1}"] = self.bn_gamma[l]
                out[f"beta{l + 1}"] = self.bn_beta[l]
        return out

    def copy(self) -> "ModelParams":
        cp = lambda lst: None if lst is None else [a.copy() for a in lst]
        return ModelParams(weights=cp(self.weights), biases=cp(self.biases),
                           bn_gamma=cp(self.bn_gamma), bn_beta=cp(self.bn_beta),
                           bn_mean=cp(self.bn_mean), bn_var=cp(self.bn_var))

    def with_bn_stats(self, bn_mean, bn_var) -> "ModelParams":
        """Read-only view sharing all arrays except the running statistics.

        Used to evaluate a past task with the statistics recorded when that
        task finished; the trainable arrays are shared, not copied.
        """
        return ModelParams(weights=self.weights, biases=self.biases,
                           bn_gamma=self.bn_gamma, bn_beta=self.bn_beta,
                           bn_mean=[a.copy() for a in bn_mean],
                           bn_var=[a.copy() for a in bn_var])

    def set_trainable(self, values: dict[str, np.ndarray]) -> None:
        """Copy values into the live trainable arrays (shapes must match)."""
        live = self.trainable()
        if set(values) != set(live):
            raise ConsistencyError(
                f"parameter tree mismatch: {sorted(values)} vs {sorted(live)}")
        for key, arr in live.items():
            np.copyto(arr, values[key])


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by backward()."""

    mode: str
    x_in: Matrix
    z: list[Matrix] = field(default_factory=list)
    xhat: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    pre_relu: list[Matrix] = field(default_factory=list)
    hidden: list[Matrix] = field(default_factory=list)
    masks: tuple = (None, None, None)
    logits: Matrix | None = None
    new_running: list | None = None


def init_params(config: NetConfig) -> ModelParams:
    """He-scaled gaussian weights, zero biases, identity batch norm."""
    rng = make_rng(config.init_seed)
    h, d, k = config.hidden_width, config.input_dim, config.n_classes
    dims = [(d, h), (h, h), (h, k)]
    weights = [gaussian_fill(dim, np.sqrt(2.0 / dim[0]), rng) for dim in dims]
    biases = [np.zeros(dim[1]) for dim in dims]
    params = ModelParams(weights=weights, biases=biases)
    if config.use_batch_norm:
        params.bn_gamma = [np.ones(h), np.ones(h)]
        params.bn_beta = [np.zeros(h), np.zeros(h)]
        params.bn_mean = [np.zeros(h), np.zeros(h)]
        params.bn_var = [np.ones(h), np.ones(h)]
    return params


def _draw_mask(shape, drop_p: float, rng: np.random.Generator) -> Matrix:
    keep = 1.0 - drop_p
    return (rng.random(shape) >= drop_p).astype(np.float64) / keep


def forward(params: ModelParams, batch: Matrix, mode: str, config: NetConfig,
            rng: np.random.Generator | None = None,
            dropout_masks: tuple | None = None) -> tuple[Matrix, ForwardCache]:
    """Run the network on a batch of rows.

    mode "train" uses batch statistics for batch norm and applies fresh
    dropout masks (drawn from ``rng`` unless ``dropout_masks`` pins them;
    pinned masks already carry the 1/keep scale). mode "eval" uses the
    running statistics and no dropout, and is deterministic.
    """
    if mode not in ("train", "eval"):
        raise DomainError(f"unknown mode {mode!r}")
    if batch.ndim != 2 or batch.shape[1] != config.input_dim:
        raise ShapeError(f"batch shape {batch.shape} incompatible with "
                         f"input dimension {config.input_dim}")
    train = mode == "train"

    masks: list = [None, None, None]
    if train and config.dropout_input > 0.0:
        if dropout_masks is not None and dropout_masks[0] is not None:
            masks[0] = dropout_masks[0]
        else:
            masks[0] = _draw_mask(batch.shape, config.dropout_input, rng)
    x_in = batch * masks[0] if masks[0] is not None else batch

    cache = ForwardCache(mode=mode, x_in=x_in)
    if train and params.has_batch_norm:
        cache.new_running = []

    h_prev = x_in
    n_hidden = len(params.weights) - 1
    for l in range(n_hidden):
        z = h_prev @ params.weights[l] + params.biases[l]
        cache.z.append(z)
        if params.has_batch_norm:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (z - mu) * inv
                cache.new_running.append((
                    (1.0 - BN_MOMENTUM) * params.bn_mean[l] + BN_MOMENTUM * mu,
                    (1.0 - BN_MOMENTUM) * params.bn_var[l] + BN_MOMENTUM * var,
                ))
            else:
                inv = 1.0 / np.sqrt(params.bn_var[l] + BN_EPS)
                xhat = (z - params.bn_mean[l]) * inv
            a = params.bn_gamma[l] * xhat + params.bn_beta[l]
            cache.xhat.append(xhat)
            cache.inv_std.append(inv)
        else:
            a = z
            cache.xhat.append(None)
            cache.inv_std.append(None)
        cache.pre_relu.append(a)
        h = np.maximum(a, 0.0)
        if train and config.dropout_hidden > 0.0:
            if dropout_masks is not None and dropout_masks[l + 1] is not None:
                masks[l + 1] = dropout_masks[l + 1]
            else:
                masks[l + 1] = _draw_mask(h.shape, config.dropout_hidden, rng)
            h = h * masks[l + 1]
        cache.hidden.append(h)
        h_prev = h

    logits = h_prev @ params.weights[-1] + params.biases[-1]
    cache.masks = tuple(masks)
    cache.logits = logits
    return logits, cache


def update_running_stats_in_place(params: ModelParams,
                                  cache: ForwardCache) -> None:
    """Commit the batch-norm running statistics computed by a train pass."""
    if cache.new_running is None:
        return
    for l, (mean, var) in enumerate(cache.new_running):
        np.copyto(params.bn_mean[l], mean)
        np.copyto(params.bn_var[l], var)


def softmax(logits: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: Matrix, labels: np.ndarray) -> float:
    """Mean of -log softmax(logits)[label], log-sum-exp stabilized."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DomainError("empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DomainError(
            f"labels must lie in 0..{logits.shape[1] - 1}")
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    picked = logits[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


def backward(params: ModelParams, cache: ForwardCache, labels: np.ndarray,
             config: NetConfig) -> Gradients:
    """Exact gradients of the mean cross-entropy w.r.t. every trainable leaf.

    Works on caches from either mode: train-mode caches differentiate
    through the batch statistics, eval-mode caches through the running
    ones (needed for Fisher estimation).
    """
    labels = np.asarray(labels)
    batch_n = cache.logits.shape[0]
    if len(labels) != batch_n:
        raise ConsistencyError(
            f"cache holds {batch_n} rows but got {len(labels)} labels")

    probs = softmax(cache.logits)
    delta = probs.copy()
    delta[np.arange(batch_n), labels] -= 1.0
    delta /= batch_n

    grads: Gradients = {}
    n_layers = len(params.weights)
    grads[f"W{n_layers}"] = cache.hidden[-1].T @ delta
    grads[f"b{n_layers}"] = delta.sum(axis=0)
    dh = delta @ params.weights[-1].T

    for l in range(n_layers - 2, -1, -1):
        if cache.masks[l + 1] is not None:
            dh = dh * cache.masks[l + 1]
        da = dh * (cache.pre_relu[l] > 0.0)
        if params.has_batch_norm:
            xhat = cache.xhat[l]
            inv = cache.inv_std[l]
            grads[f"gamma{l + 1}"] = (da * xhat).sum(axis=0)
            grads[f"beta{l + 1}"] = da.sum(axis=0)
            dxhat = da * params.bn_gamma[l]
            if cache.mode == "train":
                dz = (inv / batch_n) * (
                    batch_n * dxhat
                    - dxhat.sum(axis=0)
                    - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dz = dxhat * inv
        else:
            dz = da
        prev = cache.hidden[l - 1] if l > 0 else cache.x_in
        grads[f"W{l + 1}"] = prev.T @ dz
        grads[f"b{l + 1}"] = dz.sum(axis=0)
        if l > 0:
            dh = dz @ params.weights[l].T
    return grads


def predict_logits(params: ModelParams, images: Matrix, config: NetConfig,
                   chunk: int = 2048) -> Matrix:
    """Eval-mode logits computed in chunks to bound memory."""
    outputs = []
    for start in range(0, images.shape[0], chunk):
        logits, _ = forward(params, images[start:start + chunk], "eval", config)
        outputs.append(logits)
    return np.concatenate(outputs, axis=0)


def accuracy(params: ModelParams, data: LabeledDataset,
             config: NetConfig) -> float:
    """Fraction of correct argmax predictions (ties go to the lowest class)."""
    if data.n == 0:
        raise DomainError("cannot evaluate accuracy on an empty dataset")
    logits = predict_logits(params, data.images, config)
    predictions = logits.argmax(axis=1)
    return float(np.mean(predictions == data.labels))


def dataset_loss(params: ModelParams, data: LabeledDataset,
                 config: NetConfig) -> float:
    """Eval-mode mean cross-entropy over a dataset."""
    if data.n == 0:
        raise DomainError("cannot evaluate loss on an empty dataset")
    logits = predict_logits(params, data.images, config)
    return cross_entropy_loss(logits, data.labels)
