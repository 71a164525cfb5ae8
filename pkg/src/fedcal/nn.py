"""Minimal dense classifier with an explicit extractor/head parameter split.

The model family is a feed-forward net: ReLU on every hidden layer, a
linear final layer producing logits, softmax cross-entropy loss, plain
SGD. Parameters live in two flat float64 vectors, ``base`` (feature
extractor) and ``head`` (projection head), so protocol code can freeze,
swap, or perturb either part independently.

Training dispatches to a compiled kernel when available (see
``fedcal._kernels``); everything else is numpy.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import sgd_train


class ShapeMismatchError(ValueError):
    """Input/parameter dimensions disagree with the model spec."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite mid-training (learning rate too large)."""


SCOPES = ("all", "head_only", "last_layer_only")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture: input width, extractor widths, head widths (last = class count)."""

    input_dim: int
    extractor_layers: tuple
    head_layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "extractor_layers", tuple(int(w) for w in self.extractor_layers))
        object.__setattr__(self, "head_layers", tuple(int(w) for w in self.head_layers))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.head_layers:
            raise ValueError("head needs at least one layer")
        if any(w < 1 for w in self.extractor_layers + self.head_layers):
            raise ValueError("all layer widths must be >= 1")
        if self.head_layers[-1] < 2:
            raise ValueError(f"class count must be >= 2, got {self.head_layers[-1]}")

    @property
    def num_classes(self):
        return self.head_layers[-1]

    @property
    def feature_dim(self):
        """Width of the representation handed from extractor to head."""
        return self.extractor_layers[-1] if self.extractor_layers else self.input_dim

    @property
    def extractor_dims(self):
        return (self.input_dim,) + self.extractor_layers

    @property
    def head_dims(self):
        return (self.feature_dim,) + self.head_layers

    @property
    def full_dims(self):
        return (self.input_dim,) + self.extractor_layers + self.head_layers

    @property
    def base_size(self):
        return _params_size(self.extractor_dims)

    @property
    def head_size(self):
        return _params_size(self.head_dims)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "extractor_layers": list(self.extractor_layers),
            "head_layers": list(self.head_layers),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_dim"], tuple(d["extractor_layers"]), tuple(d["head_layers"]))


@dataclass
class ModelParams:
    """Flat float64 parameter vectors for the extractor (base) and head."""

    base: np.ndarray
    head: np.ndarray

    def __post_init__(self):
        self.base = np.ascontiguousarray(self.base, dtype=np.float64)
        self.head = np.ascontiguousarray(self.head, dtype=np.float64)

    def copy(self):
        return ModelParams(self.base.copy(), self.head.copy())

    def as_vector(self):
        return np.concatenate([self.base, self.head])


@dataclass
class Batch:
    """A labelled sample block: inputs (n, d), integer labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"inputs must be a nonempty 2-D matrix, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.inputs.shape[0]} inputs"
            )
        if not np.isfinite(self.inputs).all():
            raise ValueError("inputs contain NaN or infinity")

    def __len__(self):
        return self.inputs.shape[0]


def _params_size(dims):
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def _param_views(vec, dims):
    """Split a flat vector into per-layer (W, b) views, no copies."""
    views = []
    off = 0
    for i in range(len(dims) - 1):
        din, dout = dims[i], dims[i + 1]
        w = vec[off : off + din * dout].reshape(din, dout)
        off += din * dout
        b = vec[off : off + dout]
        off += dout
        views.append((w, b))
    if off != vec.shape[0]:
        raise ShapeMismatchError(
            f"parameter vector has {vec.shape[0]} entries, layer dims {tuple(dims)} need {off}"
        )
    return views


def check_params(spec, params):
    """Validate a ModelParams container against its spec."""
    if params.base.shape != (spec.base_size,):
        raise ShapeMismatchError(
            f"base has {params.base.shape[0]} entries, spec {spec.extractor_dims} needs {spec.base_size}"
        )
    if params.head.shape != (spec.head_size,):
        raise ShapeMismatchError(
            f"head has {params.head.shape[0]} entries, spec {spec.head_dims} needs {spec.head_size}"
        )
    if not (np.isfinite(params.base).all() and np.isfinite(params.head).all()):
        raise ValueError("parameters contain non-finite entries")


def init_params(spec, rng):
    """He-style random init: W ~ N(0, 2/fan_in), zero biases."""
    def draw(dims):
        chunks = []
        for i in range(len(dims) - 1):
            din, dout = dims[i], dims[i + 1]
            chunks.append(rng.normal(0.0, np.sqrt(2.0 / din), size=din * dout))
            chunks.append(np.zeros(dout))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    return ModelParams(draw(spec.extractor_dims), draw(spec.head_dims))


def zeros_like_spec(spec):
    return ModelParams(np.zeros(spec.base_size), np.zeros(spec.head_size))


def _chain(x, views, relu_last):
    for i, (w, b) in enumerate(views):
        x = x @ w + b
        if relu_last or i < len(views) - 1:
            np.maximum(x, 0.0, out=x)
    return x


def _check_inputs(spec, inputs):
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ShapeMismatchError(
            f"inputs have shape {inputs.shape}, model expects (n, {spec.input_dim})"
        )
    return inputs


def extract_features(spec, params, inputs):
    """Run the frozen extractor only; ReLU applied after every extractor layer."""
    inputs = _check_inputs(spec, inputs)
    check_params(spec, params)
    return _chain(inputs, _param_views(params.base, spec.extractor_dims), relu_last=True)


def forward(spec, params, inputs):
    """Full forward pass to logits. Deterministic; rejects shape mismatches."""
    feats = extract_features(spec, params, inputs)
    return _chain(feats, _param_views(params.head, spec.head_dims), relu_last=False)


def head_forward(spec, head_vec, features):
    """Logits from precomputed features under an alternative head vector."""
    return _chain(features, _param_views(head_vec, spec.head_dims), relu_last=False)


def predict_probs(spec, params, inputs):
    """Softmax class probabilities for a batch of inputs."""
    return softmax(forward(spec, params, inputs))


def softmax(logits):
    """Row-wise softmax with max-shift; rows sum to 1 within 1e-12."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy(logits, labels):
    # log-sum-exp directly on logits; never log of a softmax output
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - shifted[np.arange(len(labels)), labels]))


def loss_and_grads(spec, params, batch, anchor=None):
    """Mean softmax cross-entropy and its gradient in ModelParams layout.

    ``anchor=(ref_params, mu)`` adds the proximal penalty
    (mu/2)*||theta - theta_ref||^2 over all parameters, contributing
    mu*(theta - theta_ref) to the gradients.
    """
    inputs = _check_inputs(spec, batch.inputs)
    check_params(spec, params)
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError(
            f"labels must lie in [0, {spec.num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )

    base_views = _param_views(params.base, spec.extractor_dims)
    head_views = _param_views(params.head, spec.head_dims)
    views = base_views + head_views

    acts = [inputs]
    x = inputs
    for i, (w, b) in enumerate(views):
        x = x @ w + b
        if i < len(views) - 1:
            np.maximum(x, 0.0, out=x)
        acts.append(x)
    logits = acts[-1]

    n = len(batch)
    loss = _cross_entropy(logits, labels)
    probs = softmax(logits)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = zeros_like_spec(spec)
    gbase = _param_views(grads.base, spec.extractor_dims)
    ghead = _param_views(grads.head, spec.head_dims)
    gviews = gbase + ghead
    for i in range(len(views) - 1, -1, -1):
        w, _ = views[i]
        gw, gb = gviews[i]
        gw += acts[i].T @ delta
        gb += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (acts[i] > 0)

    if anchor is not None:
        ref, mu = anchor
        if mu != 0.0:
            db = params.base - ref.base
            dh = params.head - ref.head
            loss += 0.5 * mu * (float(db @ db) + float(dh @ dh))
            grads.base += mu * db
            grads.head += mu * dh
    return loss, grads


def _subnet(spec, params, batch, scope, anchor):
    """Reduce (params, data) to the flat vector actually being trained.

    Frozen-scope modes precompute the frozen prefix once: head-only
    training runs on extracted features, last-layer training on the
    activations entering the final layer.
    """
    if scope == "all":
        vec = params.as_vector()
        dims = spec.full_dims
        x = _check_inputs(spec, batch.inputs)
        ref = anchor[0].as_vector() if anchor else None
    elif scope == "head_only":
        vec = params.head.copy()
        dims = spec.head_dims
        x = extract_features(spec, params, batch.inputs)
        ref = anchor[0].head if anchor else None
    elif scope == "last_layer_only":
        prev = spec.head_dims[-2]
        k = spec.num_classes
        tail = prev * k + k
        vec = params.head[-tail:].copy()
        dims = (prev, k)
        feats = extract_features(spec, params, batch.inputs)
        hidden = _param_views(params.head, spec.head_dims)[:-1]
        x = _chain(feats, hidden, relu_last=True) if hidden else feats
        ref = anchor[0].head[-tail:] if anchor else None
    else:
        raise ValueError(f"unknown scope {scope!r}, expected one of {SCOPES}")
    return vec, np.asarray(dims, dtype=np.int64), x, ref


def _reassemble(spec, params, scope, vec):
    if scope == "all":
        return ModelParams(vec[: spec.base_size], vec[spec.base_size :])
    if scope == "head_only":
        return ModelParams(params.base.copy(), vec)
    head = params.head.copy()
    head[-vec.shape[0] :] = vec
    return ModelParams(params.base.copy(), head)


def sgd_epochs(spec, params, batch, epochs, lr, scope="all", anchor=None,
               batch_size=64, rng=None):
    """Train for ``epochs`` full passes; returns (new params, per-epoch mean loss).

    The input params are never mutated. Out-of-scope parameters come back
    bit-identical. Mini-batch order reshuffles each epoch from ``rng``;
    batch_size >= n degenerates to full-batch steps. A non-finite loss
    aborts with TrainingDivergedError.
    """
    check_params(spec, params)
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes:
        raise ValueError(
            f"labels must lie in [0, {spec.num_classes}), got range "
            f"[{batch.labels.min()}, {batch.labels.max()}]"
        )
    if epochs == 0:
        return params.copy(), np.zeros(0)
    if rng is None:
        raise ValueError("an rng is required when epochs > 0 (mini-batch shuffling)")

    mu = float(anchor[1]) if anchor is not None else 0.0
    vec, dims, x, ref = _subnet(spec, params, batch, scope, anchor if mu != 0.0 else None)
    n = x.shape[0]
    perms = np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    x = np.ascontiguousarray(x)

    losses, bad_step = sgd_train(vec, dims, x, batch.labels, perms,
                                 int(batch_size), float(lr), ref, mu)
    if bad_step >= 0:
        steps_per_epoch = (n + batch_size - 1) // batch_size
        raise TrainingDivergedError(
            f"non-finite loss at step {bad_step} "
            f"(epoch {bad_step // steps_per_epoch}, scope={scope}, lr={lr}); "
            "reduce the learning rate"
        )
    return _reassemble(spec, params, scope, vec), losses
