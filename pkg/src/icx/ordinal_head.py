"""Linear class-score heads fitted by multinomial logistic regression."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, FitError, ParameterError
from .io_formats import LabelVector
from .metrics import confusion, qwk

INPUT_KINDS = ("features", "independent_components")
MAX_HALVINGS = 30


@dataclass(frozen=True)
class FitConfig:
    l2: float = 1e-4
    learning_rate: float = 0.1
    epochs: int = 500
    seed: int = 0  # gradient descent starts from zero, so the fit never draws from it
    standardize: bool = True

    def __post_init__(self):
        if self.l2 < 0:
            raise ParameterError("l2 must be >= 0")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")


@dataclass(frozen=True)
class LinearHead:
    weights: np.ndarray  # K x d
    bias: np.ndarray  # K
    input_kind: str = "features"

    def __post_init__(self):
        if self.input_kind not in INPUT_KINDS:
            raise ParameterError(f"unknown input_kind {self.input_kind!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError("head weights must be K x d with a K-vector bias")
        if self.weights.shape[0] < 2:
            raise ParameterError("a head needs K >= 2 classes")

    @property
    def K(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def to_section(self):
        return {
            "K": self.K,
            "d": self.dim,
            "input_kind": self.input_kind,
            "weights": self.weights,
            "bias": self.bias,
        }

    @classmethod
    def from_section(cls, sec):
        return cls(
            weights=np.atleast_2d(sec["weights"]),
            bias=np.ravel(sec["bias"]),
            input_kind=str(sec.get("input_kind", "features")),
        )


def _softmax_loss(Z, Y, W, b, l2):
    """Mean cross-entropy + l2/2 |W|^2 and its gradients."""
    S = Z @ W.T + b
    S -= S.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(S).sum(axis=1, keepdims=True))
    logp = S - logsum
    N = Z.shape[0]
    loss = -(Y * logp).sum() / N + 0.5 * l2 * (W * W).sum()
    R = (np.exp(logp) - Y) / N
    return loss, R.T @ Z + l2 * W, R.sum(axis=0)


def fit_head(inputs, labels, cfg=None, input_kind="features"):
    """Full-batch gradient descent on the L2-penalized softmax loss.

    A step that increases the loss is rejected and the step size halved,
    so the recorded loss trace (``head.loss_trace``) never increases.
    """
    cfg = cfg or FitConfig()
    X = np.asarray(inputs, dtype=np.float64)
    if not isinstance(labels, LabelVector):
        raise TypeError("labels must be a LabelVector")
    y = labels.values
    K = labels.K
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"inputs {X.shape} do not align with {y.size} labels")
    if X.shape[0] < K:
        raise FitError(f"need at least K={K} samples, got {X.shape[0]}")
    present = np.bincount(y, minlength=K)
    missing = np.flatnonzero(present == 0)
    if missing.size:
        raise FitError(f"class {int(missing[0])} absent from training labels")

    if cfg.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
    else:
        mu = np.zeros(X.shape[1])
        sd = np.ones(X.shape[1])
    Z = (X - mu) / sd
    Y = np.eye(K)[y]

    W = np.zeros((K, X.shape[1]))
    b = np.zeros(K)
    lr = cfg.learning_rate
    loss, gW, gb = _softmax_loss(Z, Y, W, b, cfg.l2)
    trace = [loss]
    for epoch in range(cfg.epochs):
        for _ in range(MAX_HALVINGS):
            W_try = W - lr * gW
            b_try = b - lr * gb
            new_loss, new_gW, new_gb = _softmax_loss(Z, Y, W_try, b_try, cfg.l2)
            if not np.isfinite(new_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            if new_loss <= loss:
                break
            lr *= 0.5
        else:
            break  # no decreasing step left: at a minimum to machine precision
        W, b, loss, gW, gb = W_try, b_try, new_loss, new_gW, new_gb
        trace.append(loss)

    # fold standardization back so the head applies to raw inputs
    W_raw = W / sd
    b_raw = b - W_raw @ mu
    head = LinearHead(weights=W_raw, bias=b_raw, input_kind=input_kind)
    object.__setattr__(head, "loss_trace", np.array(trace))
    return head


def predict(head, inputs):
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.dim:
        raise DimensionError(f"inputs {X.shape} do not match head dimension {head.dim}")
    scores = X @ head.weights.T + head.bias
    return scores, LabelVector(np.argmax(scores, axis=1), head.K)


def evaluate(head, inputs, labels):
    _, classes = predict(head, inputs)
    return qwk(confusion(labels, classes, K=head.K))
