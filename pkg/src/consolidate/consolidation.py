"""Parameter anchoring and quadratic penalties for sequential training.

After each finished task the trainer stores an anchor (a frozen copy of
the trainable parameters) together with a diagonal Fisher information
estimate. Later tasks are trained under

    total loss = task loss + (lambda / 2) * sum_t sum_i F_t_i (theta_i - anchor_t_i)^2

with one quadratic term per completed task. Plain L2 anchoring is the
special case F = 1, and shares this code path bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import make_rng
from .dataset import LabeledDataset
from .errors import ConsistencyError, DomainError, StateError
from .network import ForwardCache, ModelParams, NetConfig, forward, softmax

FISHER_ESTIMATORS = ("exact_expectation", "sampled_label", "empirical_label")


@dataclass(frozen=True)
class Anchor:
    """Trainable parameters frozen at the end of a task.

    When the network uses batch norm, the running statistics at task end
    ride along (``bn_running`` as a (means, variances) pair). They carry
    no gradient, so the quadratic penalty never touches them; freezing a
    copy here is their consolidation analogue, and evaluation of this
    task uses them in place of the live, later-drifting ones.
    """

    task_id: int
    theta_star: dict[str, np.ndarray]
    bn_running: tuple | None = None


@dataclass(frozen=True)
class FisherDiagonal:
    """Per-parameter curvature proxy: expected squared log-likelihood grad."""

    task_id: int
    values: dict[str, np.ndarray]


@dataclass(frozen=True)
class ConsolidationState:
    """Anchors and Fisher diagonals of every completed task.

    mode "none" disables the penalty entirely, "l2" stores unit Fisher
    trees (plain parameter anchoring), "ewc" stores estimated ones.
    """

    mode: str = "none"
    lam: float = 0.0
    entries: tuple = ()

    def __post_init__(self):
        if self.mode not in ("none", "l2", "ewc"):
            raise DomainError(f"unknown consolidation mode {self.mode!r}")
        if self.lam < 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(anchor.task_id for anchor, _ in self.entries)


def tree_zeros_like(tree: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {key: np.zeros_like(arr) for key, arr in tree.items()}


def tree_ones_like(tree: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {key: np.ones_like(arr) for key, arr in tree.items()}


def snapshot_anchor(params: ModelParams, task_id: int) -> Anchor:
    """Deep-copy the trainable parameters; later updates cannot touch it."""
    bn_running = None
    if params.has_batch_norm:
        bn_running = ([a.copy() for a in params.bn_mean],
                      [a.copy() for a in params.bn_var])
    return Anchor(task_id=task_id,
                  theta_star={k: v.copy() for k, v in params.trainable().items()},
                  bn_running=bn_running)


def unit_fisher(anchor: Anchor) -> FisherDiagonal:
    """The all-ones Fisher that turns the penalty into plain L2 anchoring."""
    return FisherDiagonal(task_id=anchor.task_id,
                          values=tree_ones_like(anchor.theta_star))


def _check_same_tree(a: dict, b: dict, what: str) -> None:
    if set(a) != set(b):
        raise ConsistencyError(
            f"{what}: leaf names differ: {sorted(a)} vs {sorted(b)}")
    for key in a:
        if a[key].shape != b[key].shape:
            raise ConsistencyError(
                f"{what}: shape mismatch at {key}: "
                f"{a[key].shape} vs {b[key].shape}")


def _accumulate_squared_grads(accum: dict[str, np.ndarray],
                              params: ModelParams, cache: ForwardCache,
                              delta_logits: np.ndarray,
                              weights: np.ndarray) -> None:
    """Add weighted per-example squared gradients into ``accum``.

    ``delta_logits`` holds each example's gradient of its own -log p(class)
    with respect to the logits. Eval-mode passes keep examples independent
    (running batch-norm statistics, no dropout), so the per-example
    gradient of a weight matrix is the outer product of that example's
    layer input and delta; its square is the outer product of the squares.
    """
    w = weights
    n_layers = len(params.weights)
    d2 = delta_logits ** 2
    accum[f"W{n_layers}"] += (cache.hidden[-1] ** 2 * w[:, None]).T @ d2
    accum[f"b{n_layers}"] += w @ d2
    dh = delta_logits @ params.weights[-1].T

    for l in range(n_layers - 2, -1, -1):
        da = dh * (cache.pre_relu[l] > 0.0)
        if params.has_batch_norm:
            xhat = cache.xhat[l]
            accum[f"gamma{l + 1}"] += w @ (da * xhat) ** 2
            accum[f"beta{l + 1}"] += w @ da ** 2
            dz = da * (params.bn_gamma[l] * cache.inv_std[l])
        else:
            dz = da
        prev = cache.hidden[l - 1] if l > 0 else cache.x_in
        accum[f"W{l + 1}"] += (prev ** 2 * w[:, None]).T @ dz ** 2
        accum[f"b{l + 1}"] += w @ dz ** 2
        if l > 0:
            dh = dz @ params.weights[l].T


def fisher_diagonal(params: ModelParams, data: LabeledDataset,
                    config: NetConfig,
                    estimator: str = "exact_expectation",
                    max_examples: int = 2000,
                    rng: np.random.Generator | None = None,
                    task_id: int = -1) -> FisherDiagonal:
    """Diagonal Fisher estimate F_i = (1/N) sum_x E_y [(d log p(y|x) / d theta_i)^2].

    exact_expectation sums the inner expectation over all classes weighted
    by the predictive softmax; sampled_label draws one class per example
    from the model; empirical_label plugs in the ground-truth label.
    Forward passes run in eval mode (running batch-norm statistics, no
    dropout), which makes examples independent, so the batched computation
    here is exactly the example-at-a-time sum.
    """
    if data.n == 0:
        raise DomainError("cannot estimate Fisher on an empty dataset")
    if max_examples < 1:
        raise DomainError(f"max_examples must be >= 1, got {max_examples}")
    if estimator not in FISHER_ESTIMATORS:
        raise DomainError(f"unknown Fisher estimator {estimator!r}; "
                          f"choose one of {FISHER_ESTIMATORS}")
    if rng is None:
        rng = make_rng(0)

    if data.n > max_examples:
        idx = rng.choice(data.n, size=max_examples, replace=False)
        data = data.subset(idx)
    images, labels = data.images, data.labels
    n = data.n

    logits, cache = forward(params, images, "eval", config)
    probs = softmax(logits)
    accum = tree_zeros_like(params.trainable())

    if estimator == "exact_expectation":
        for cls in range(config.n_classes):
            delta = probs.copy()
            delta[:, cls] -= 1.0
            _accumulate_squared_grads(accum, params, cache, delta,
                                      weights=probs[:, cls])
    else:
        if estimator == "sampled_label":
            cdf = np.cumsum(probs, axis=1)
            draws = rng.random(n)
            ys = np.minimum((draws[:, None] >= cdf).sum(axis=1),
                            config.n_classes - 1)
        else:
            ys = labels
        delta = probs.copy()
        delta[np.arange(n), ys] -= 1.0
        _accumulate_squared_grads(accum, params, cache, delta,
                                  weights=np.ones(n))

    values = {key: arr / n for key, arr in accum.items()}
    return FisherDiagonal(task_id=task_id, values=values)


def penalty_value_and_grad(trainable: dict[str, np.ndarray],
                           state: ConsolidationState
                           ) -> tuple[float, dict[str, np.ndarray]]:
    """Quadratic anchoring penalty and its gradient.

    value = (lambda/2) * sum_t sum_i F_t_i (theta_i - anchor_t_i)^2
    grad  = lambda * sum_t F_t * (theta - anchor_t)
    """
    grad = tree_zeros_like(trainable)
    if state.mode == "none" or not state.entries:
        return 0.0, grad
    value = 0.0
    for anchor, fisher in state.entries:
        _check_same_tree(trainable, anchor.theta_star, "penalty vs anchor")
        for key, theta in trainable.items():
            diff = theta - anchor.theta_star[key]
            f = fisher.values[key]
            value += 0.5 * state.lam * float(np.sum(f * diff * diff))
            grad[key] += state.lam * (f * diff)
    return value, grad


def register_completed_task(state: ConsolidationState, anchor: Anchor,
                            fisher: FisherDiagonal | None = None
                            ) -> ConsolidationState:
    """Append one (anchor, Fisher) entry for a finished task.

    In mode "l2" the stored Fisher is all-ones regardless of the argument;
    in mode "none" registration is a no-op. Earlier entries are untouched.
    """
    if state.mode == "none":
        return state
    if anchor.task_id in state.task_ids:
        raise StateError(f"task {anchor.task_id} is already registered")
    if state.mode == "l2":
        fisher = unit_fisher(anchor)
    else:
        if fisher is None:
            raise StateError("ewc registration requires a Fisher diagonal")
        if fisher.task_id != anchor.task_id:
            raise ConsistencyError(
                f"anchor task {anchor.task_id} != fisher task {fisher.task_id}")
        _check_same_tree(anchor.theta_star, fisher.values, "anchor vs fisher")
    if np.any([np.any(v < 0) for v in fisher.values.values()]):
        raise DomainError("Fisher entries must be non-negative")
    entries = tuple(sorted(state.entries + ((anchor, fisher),),
                           key=lambda e: e[0].task_id))
    return ConsolidationState(mode=state.mode, lam=state.lam, entries=entries)
