"""Small fully-connected networks with hand-written backward passes.

Three fixed architectures are used throughout the package:

* feature extractor ``f``: input_dim -> hidden... -> d
* linear classifier ``g``: d -> C
* hallucinator ``h``: 2d -> hidden -> d

All of them are instances of :class:`MLP`.  Hidden layers use a leaky
rectifier, the output layer is affine.  A forward pass records what the
matching backward pass needs; calling ``backward`` without one raises
:class:`~anchornll.errors.UsageError`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError, UsageError, ValidationError

LEAKY_SLOPE = 0.01
PROB_FLOOR = 1e-12

GradientBundle = dict  # name -> ndarray, same keys and shapes as MLP.params()


def leaky_relu(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


class MLP:
    """Stack of affine layers, ``x @ W + b``, with leaky ReLU in between."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and weights[i - 1].shape[1] != W.shape[0]:
                raise ShapeError(
                    f"layer {i} expects {W.shape[0]} inputs, previous layer gives "
                    f"{weights[i - 1].shape[1]}"
                )
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self._cache = None

    @classmethod
    def init(cls, sizes, rng):
        """Fan-in scaled uniform weights (He bound), zero biases."""
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValidationError(f"invalid layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def params(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    def copy(self):
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def digest(self):
        h = hashlib.sha256()
        for name, arr in self.params().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected batch with {self.in_dim} columns, got shape {x.shape}")
        return x

    def __call__(self, x):
        """Forward pass without recording (inference)."""
        a = self._check_input(x)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if i == last else leaky_relu(z)
        return a

    def forward(self, x):
        """Forward pass that records activations for :meth:`backward`."""
        a = self._check_input(x)
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ W + b
            pre.append(z)
            a = z if i == last else leaky_relu(z)
        self._cache = (inputs, pre)
        return a

    def backward(self, dout):
        """Backpropagate ``dout`` (gradient w.r.t. the last forward output).

        Returns ``(grads, dx)``.  The recorded forward state is consumed.
        """
        if self._cache is None:
            raise UsageError("backward() called without a recorded forward pass")
        inputs, pre = self._cache
        self._cache = None
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != pre[-1].shape:
            raise ShapeError(f"upstream gradient {dout.shape} != output {pre[-1].shape}")
        grads = {}
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                delta = delta * leaky_relu_grad(pre[i])
            grads[f"W{i}"] = inputs[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return {k: grads[k] for k in self.params()}, delta


def feature_extractor(input_dim, d, hidden=(32,), rng=None):
    if d <= 0:
        raise ValidationError("feature dimension must be positive")
    return MLP.init([input_dim, *hidden, d], rng or np.random.default_rng())


def linear_classifier(d, num_classes, rng=None):
    return MLP.init([d, num_classes], rng or np.random.default_rng())


def hallucinator(d, hidden=None, rng=None):
    # hidden width defaults to 2d
    return MLP.init([2 * d, hidden or 2 * d, d], rng or np.random.default_rng())


def forward_features(f: MLP, batch, record=False):
    return f.forward(batch) if record else f(batch)


def classify(g: MLP, features, record=False):
    if len(g.weights) != 1:
        raise ShapeError("classifier must be a single affine layer")
    return g.forward(features) if record else g(features)


# -- normalisation --------------------------------------------------------

def l2_normalize(z):
    """Row-wise unit normalisation.  Returns ``(unit_rows, norms)``."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / np.maximum(norms, PROB_FLOOR), norms


def l2_normalize_backward(ds, s, norms):
    ds = np.asarray(ds, dtype=np.float64)
    return (ds - s * np.sum(ds * s, axis=-1, keepdims=True)) / np.maximum(norms, PROB_FLOOR)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("cosine similarity is undefined for a zero vector")
    return np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)


# -- losses -----------------------------------------------------------------

def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_backward(p, dp):
    """Vector-Jacobian product of softmax at output ``p``."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def _target_distribution(target, num_classes, batch):
    t = np.asarray(target)
    if np.issubdtype(t.dtype, np.integer):
        t = np.broadcast_to(t, (batch,)) if t.ndim == 0 else t
        if t.shape != (batch,):
            raise ShapeError(f"expected {batch} class indices, got {t.shape}")
        if np.any((t < 0) | (t >= num_classes)):
            raise ValidationError("class index out of range")
        return np.eye(num_classes)[t]
    t = np.atleast_2d(t.astype(np.float64))
    if t.shape != (batch, num_classes):
        raise ShapeError(f"target shape {t.shape} != {(batch, num_classes)}")
    if np.any(t < -1e-12) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("target rows must be probability vectors")
    return t


def per_sample_cross_entropy(logits, target):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = _target_distribution(target, logits.shape[1], logits.shape[0])
    return -np.sum(t * log_softmax(logits), axis=1)


def softmax_cross_entropy(logits, target):
    """Cross-entropy of softmax(logits) against a label or distribution.

    Scalar for a single C-vector, batch mean for a matrix.
    """
    return float(np.mean(per_sample_cross_entropy(logits, target)))


def cross_entropy_backward(logits, target):
    """Gradient of the batch-mean cross-entropy w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = _target_distribution(target, logits.shape[1], logits.shape[0])
    return (softmax(logits) - t) / logits.shape[0]


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        return 0.0
    return float(np.mean((pred - target) ** 2))


def mse_backward(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - np.asarray(target, dtype=np.float64)) / pred.size


# -- optimisation -----------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, net: MLP, lr, momentum=0.9):
        return cls(lr, momentum, {k: np.zeros_like(v) for k, v in net.params().items()})


def sgd_step(net: MLP, grads: GradientBundle, state: OptimizerState):
    """Heavy-ball SGD, updated in place: v <- m*v + g; p <- p - lr*v."""
    params = net.params()
    if set(grads) != set(params) or set(state.velocity) != set(params):
        raise ShapeError("gradient / velocity keys do not match parameters")
    for name, p in params.items():
        g, v = grads[name], state.velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"{name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g
        p -= state.lr * v
    return net, state


# -- model bundle and checkpoints ---------------------------------------------

@dataclass
class ModelBundle:
    f: MLP
    g: MLP
    h: MLP

    def __post_init__(self):
        d = self.f.out_dim
        if self.g.in_dim != d:
            raise ShapeError(f"classifier expects {self.g.in_dim} features, extractor gives {d}")
        if self.h.in_dim != 2 * d or self.h.out_dim != d:
            raise ShapeError(f"hallucinator must map {2 * d} -> {d}, got {self.h.sizes}")

    @classmethod
    def init(cls, input_dim, num_classes, d=16, hidden=(32,), hal_hidden=None, rng=None):
        rng = rng or np.random.default_rng()
        f = feature_extractor(input_dim, d, hidden, rng)
        g = linear_classifier(d, num_classes, rng)
        h = hallucinator(d, hal_hidden, rng)
        return cls(f, g, h)

    @property
    def d(self):
        return self.f.out_dim

    @property
    def num_classes(self):
        return self.g.out_dim

    def copy(self):
        return ModelBundle(self.f.copy(), self.g.copy(), self.h.copy())

    def features(self, x):
        """Unit-normalised features (inference)."""
        return l2_normalize(self.f(x))[0]

    def logits(self, x):
        return self.g(self.features(x))

    def predict_proba(self, x):
        return softmax(self.logits(x))


def classifier_forward(f: MLP, g: MLP, x):
    """Recorded forward through f -> normalise -> g.  Returns ``(logits, tape)``."""
    s, norms = l2_normalize(f.forward(x))
    logits = g.forward(s)
    return logits, (s, norms)


def classifier_backward(f: MLP, g: MLP, tape, dlogits):
    """Backward matching :func:`classifier_forward`.  Returns ``(grads_f, grads_g)``."""
    s, norms = tape
    grads_g, ds = g.backward(dlogits)
    grads_f, _ = f.backward(l2_normalize_backward(ds, s, norms))
    return grads_f, grads_g


def train_ce_epoch(f: MLP, g: MLP, x, targets, opt_f, opt_g, rng, batch_size=64):
    """One shuffled epoch of cross-entropy SGD on (f, g).  Returns mean batch loss."""
    n = len(x)
    order = rng.permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        logits, tape = classifier_forward(f, g, x[idx])
        losses.append(softmax_cross_entropy(logits, targets[idx]))
        gf, gg = classifier_backward(f, g, tape, cross_entropy_backward(logits, targets[idx]))
        sgd_step(f, gf, opt_f)
        sgd_step(g, gg, opt_g)
    return float(np.mean(losses)) if losses else 0.0


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: ModelBundle, config_hash="", extra=None):
    """Write an ``.npz`` with arrays ``<net>.<param>`` and a JSON ``meta`` entry."""
    arrays = {}
    for net_name, net in (("f", model.f), ("g", model.g), ("h", model.h)):
        for k, v in net.params().items():
            arrays[f"{net_name}.{k}"] = v
    meta = {
        "format": "anchornll-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "sizes": {"f": model.f.sizes, "g": model.g.sizes, "h": model.h.sizes},
        "extra": extra or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.  Returns ``(model, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "anchornll-checkpoint":
            raise ValidationError(f"{path} is not a checkpoint file")
        nets = {}
        for net_name in ("f", "g", "h"):
            n_layers = len(meta["sizes"][net_name]) - 1
            nets[net_name] = MLP(
                [z[f"{net_name}.W{i}"] for i in range(n_layers)],
                [z[f"{net_name}.b{i}"] for i in range(n_layers)],
            )
    return ModelBundle(**nets), meta
