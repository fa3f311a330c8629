"""
Small differentiable classifiers with exact input gradients.

A :class:`Model` is an architecture (a tuple of layer specs) plus one flat
float64 parameter vector. Forward and backward passes are written out by
hand for the four layer kinds used here (dense, 3x3-style "same" convolution,
relu, flatten); no autodiff library is involved.

Every differentiable object in this package (``Model``, ``Ensemble`` and the
toy losses used in tests) exposes the same three methods::

    logits(x) -> (num_classes,)
    loss(x, label) -> float
    input_gradient(x, label) -> array shaped like x
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import as_tensor

logger = logging.getLogger(__name__)

MAGIC = b"SSM1"


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int

    @property
    def n_params(self):
        return self.n_out * self.n_in + self.n_out

    def token(self):
        return f"dense={self.n_in},{self.n_out}"


@dataclass(frozen=True)
class Conv:
    c_in: int
    c_out: int
    k: int

    @property
    def n_params(self):
        return self.c_out * self.c_in * self.k * self.k + self.c_out

    def token(self):
        return f"conv={self.c_in},{self.c_out},{self.k}"


@dataclass(frozen=True)
class ReLU:
    n_params = 0

    def token(self):
        return "relu"


@dataclass(frozen=True)
class Flatten:
    n_params = 0

    def token(self):
        return "flatten"


def _fans(layer):
    if isinstance(layer, Dense):
        return layer.n_in, layer.n_out
    return layer.c_in * layer.k * layer.k, layer.c_out * layer.k * layer.k


# ---------------------------------------------------------------------------
# convolution helpers, batch-first (B, C, H, W)


def _im2col(x, k):
    b, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, c, k, k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(b, c * k * k, h * w)


def _col2im(cols, shape, k):
    b, c, h, w = shape
    p = (k - 1) // 2
    cols = cols.reshape(b, c, k, k, h, w)
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return xp[:, :, p:p + h, p:p + w]


class Model:
    """A feed-forward classifier over C x H x W inputs."""

    def __init__(self, layers, input_shape, num_classes, params=None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.n_params = sum(layer.n_params for layer in self.layers)
        if params is None:
            params = np.zeros(self.n_params)
        params = as_tensor(params).ravel().copy()
        if params.size != self.n_params:
            raise ValueError(
                f"parameter count {params.size} does not match architecture ({self.n_params})"
            )
        self.params = params
        self.history = []
        self._check_shapes()

    def _check_shapes(self):
        shape = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Conv):
                if len(shape) != 3 or shape[0] != layer.c_in:
                    raise ValueError(f"conv layer expects {layer.c_in} channels, got {shape}")
                shape = (layer.c_out,) + shape[1:]
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if shape != (layer.n_in,):
                    raise ValueError(f"dense layer expects ({layer.n_in},), got {shape}")
                shape = (layer.n_out,)
        if shape != (self.num_classes,):
            raise ValueError(f"architecture emits {shape}, expected ({self.num_classes},)")

    def _views(self, params=None):
        params = self.params if params is None else params
        views, offset = [], 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                n_w = layer.n_out * layer.n_in
                W = params[offset:offset + n_w].reshape(layer.n_out, layer.n_in)
                b = params[offset + n_w:offset + layer.n_params]
                views.append((W, b))
            elif isinstance(layer, Conv):
                n_w = layer.c_out * layer.c_in * layer.k * layer.k
                W = params[offset:offset + n_w].reshape(layer.c_out, layer.c_in * layer.k * layer.k)
                b = params[offset + n_w:offset + layer.n_params]
                views.append((W, b))
            else:
                views.append(None)
            offset += layer.n_params
        return views

    def descriptor(self) -> str:
        head = "input=" + "x".join(str(s) for s in self.input_shape)
        return ";".join([head] + [layer.token() for layer in self.layers])

    def copy(self):
        return Model(self.layers, self.input_shape, self.num_classes, self.params)

    # -- batched passes ----------------------------------------------------

    def forward_batch(self, X):
        """Logits for a batch (B, C, H, W); also returns the cache for backward."""
        a = X
        cache = []
        for layer, view in zip(self.layers, self._views()):
            cache.append(a)
            if isinstance(layer, Dense):
                W, b = view
                a = a @ W.T + b
            elif isinstance(layer, Conv):
                W, b = view
                cols = _im2col(a, layer.k)
                cache[-1] = (a.shape, cols)
                out = np.einsum("oc,bcp->bop", W, cols) + b[None, :, None]
                a = out.reshape(a.shape[0], layer.c_out, *a.shape[2:])
            elif isinstance(layer, ReLU):
                a = np.maximum(a, 0.0)
            elif isinstance(layer, Flatten):
                a = a.reshape(a.shape[0], -1)
        return a, cache

    def backward_batch(self, dlogits, cache, want_params=True):
        """Backpropagate dL/dlogits; returns (dL/dX, flat dL/dparams or None)."""
        grads = [None] * len(self.layers)
        d = dlogits
        views = self._views()
        for idx in range(len(self.layers) - 1, -1, -1):
            layer, view, inp = self.layers[idx], views[idx], cache[idx]
            if isinstance(layer, Dense):
                W, _ = view
                if want_params:
                    grads[idx] = np.concatenate([(d.T @ inp).ravel(), d.sum(axis=0)])
                d = d @ W
            elif isinstance(layer, Conv):
                W, _ = view
                shape, cols = inp
                dout = d.reshape(shape[0], layer.c_out, -1)
                if want_params:
                    dW = np.einsum("bop,bcp->oc", dout, cols)
                    grads[idx] = np.concatenate([dW.ravel(), dout.sum(axis=(0, 2))])
                dcols = np.einsum("oc,bop->bcp", W, dout)
                d = _col2im(dcols, shape, layer.k)
            elif isinstance(layer, ReLU):
                d = d * (inp > 0)
            elif isinstance(layer, Flatten):
                d = d.reshape(inp.shape)
        if not want_params:
            return d, None
        flat = [g for g in grads if g is not None]
        return d, (np.concatenate(flat) if flat else np.zeros(0))

    # -- single-sample interface -------------------------------------------

    def _check_input(self, x):
        x = as_tensor(x)
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x

    def logits(self, x):
        x = self._check_input(x)
        out, _ = self.forward_batch(x[None])
        return out[0]

    def loss(self, x, label):
        return cross_entropy(self.logits(x), label)

    def input_gradient(self, x, label):
        x = self._check_input(x)
        out, cache = self.forward_batch(x[None])
        dlogits = softmax(out[0]) - _onehot(label, self.num_classes)
        dx, _ = self.backward_batch(dlogits[None], cache, want_params=False)
        return dx[0]

    def predict_batch(self, X):
        return np.argmax(self.forward_batch(np.asarray(X, dtype=np.float64))[0], axis=1)


class Ensemble:
    """Weighted fusion of member logits, sum_m u_m * logits_m(x)."""

    def __init__(self, members):
        members = [(m, float(u)) for m, u in members]
        if not members:
            raise ValueError("ensemble needs at least one member")
        weights = np.array([u for _, u in members])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("ensemble weights must be positive and sum to 1")
        first = members[0][0]
        for m, _ in members:
            if m.input_shape != first.input_shape or m.num_classes != first.num_classes:
                raise ValueError("ensemble members disagree on input shape or class count")
        self.members = members
        self.input_shape = first.input_shape
        self.num_classes = first.num_classes

    @classmethod
    def uniform(cls, models):
        models = list(models)
        return cls([(m, 1.0 / len(models)) for m in models])

    def logits(self, x):
        return sum(u * m.logits(x) for m, u in self.members)

    def loss(self, x, label):
        return cross_entropy(self.logits(x), label)

    def input_gradient(self, x, label):
        passes = []
        fused = 0.0
        for m, u in self.members:
            out, cache = m.forward_batch(m._check_input(x)[None])
            passes.append((m, u, cache))
            fused = fused + u * out[0]
        dfused = softmax(fused) - _onehot(label, self.num_classes)
        grad = 0.0
        for m, u, cache in passes:
            dx, _ = m.backward_batch(u * dfused[None], cache, want_params=False)
            grad = grad + dx[0]
        return grad

    def predict_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        fused = sum(u * m.forward_batch(X)[0] for m, u in self.members)
        return np.argmax(fused, axis=1)


# ---------------------------------------------------------------------------
# losses and module-level entry points


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _onehot(label, n):
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    v = np.zeros(n)
    v[label] = 1.0
    return v


def cross_entropy(logits, label) -> float:
    """-log softmax(logits)[label], with max subtraction."""
    z = as_tensor(logits).ravel()
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    shifted = z - z.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def forward_logits(model, x):
    return model.logits(x)


def ensemble_logits(ensemble, x):
    return ensemble.logits(x)


def input_gradient(model, x, label):
    return model.input_gradient(x, label)


def finite_difference_gradient(model, x, label, h=1e-5):
    """Central differences of ``model.loss`` along every input coordinate."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = as_tensor(x)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (model.loss(xp.reshape(x.shape), label) - model.loss(xm.reshape(x.shape), label)) / (2 * h)
    return grad.reshape(x.shape)


# ---------------------------------------------------------------------------
# presets, initialization, training


def init_params(layers, rng):
    chunks = []
    for layer in layers:
        if isinstance(layer, (Dense, Conv)):
            fan_in, fan_out = _fans(layer)
            a = np.sqrt(6.0 / (fan_in + fan_out))
            n_b = layer.n_out if isinstance(layer, Dense) else layer.c_out
            chunks.append(rng.uniform(-a, a, layer.n_params - n_b))
            chunks.append(np.zeros(n_b))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def mlp(input_shape, num_classes, seed=0, hidden=64):
    """flatten -> dense(hidden) -> relu -> dense(num_classes)."""
    d = int(np.prod(input_shape))
    layers = [Flatten(), Dense(d, hidden), ReLU(), Dense(hidden, num_classes)]
    return Model(layers, input_shape, num_classes, init_params(layers, np.random.default_rng(seed)))


def convnet(input_shape, num_classes, seed=0, channels=8, k=3):
    """conv(k x k, channels, same padding) -> relu -> flatten -> dense(num_classes)."""
    c, h, w = input_shape
    layers = [Conv(c, channels, k), ReLU(), Flatten(), Dense(channels * h * w, num_classes)]
    return Model(layers, input_shape, num_classes, init_params(layers, np.random.default_rng(seed)))


PRESETS = {"mlp": mlp, "convnet": convnet}


def build_preset(name, input_shape, num_classes, seed=0):
    try:
        return PRESETS[name](input_shape, num_classes, seed=seed)
    except KeyError:
        raise ValueError(f"unknown architecture preset {name!r}") from None


def mean_loss(model, images, labels):
    out, _ = model.forward_batch(np.asarray(images, dtype=np.float64))
    shifted = out - out.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_norm - shifted[np.arange(len(labels)), labels]))


def accuracy(model, images, labels):
    return float(np.mean(model.predict_batch(images) == np.asarray(labels)))


def train_sgd(model, data, epochs, lr, seed, batch_size=32):
    """
    Plain minibatch SGD on mean cross-entropy. Works on a copy; the returned
    model carries per-epoch loss and training accuracy in ``history``.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    images = np.asarray(data.images, dtype=np.float64)
    labels = np.asarray(data.labels)
    n = len(labels)
    if n == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = model.forward_batch(images[idx])
            dlogits = softmax(out)
            dlogits[np.arange(len(idx)), labels[idx]] -= 1.0
            _, grad = model.backward_batch(dlogits / len(idx), cache)
            model.params -= lr * grad
        record = {
            "epoch": epoch + 1,
            "loss": mean_loss(model, images, labels),
            "accuracy": accuracy(model, images, labels),
        }
        model.history.append(record)
        logger.info("epoch %d loss %.4f acc %.4f", record["epoch"], record["loss"], record["accuracy"])
    return model


# ---------------------------------------------------------------------------
# persistence


def parse_descriptor(text):
    tokens = text.split(";")
    if not tokens[0].startswith("input="):
        raise ValueError("descriptor must start with input=CxHxW")
    input_shape = tuple(int(s) for s in tokens[0][len("input="):].split("x"))
    layers = []
    for tok in tokens[1:]:
        kind, _, args = tok.partition("=")
        nums = [int(a) for a in args.split(",")] if args else []
        if kind == "dense":
            layers.append(Dense(*nums))
        elif kind == "conv":
            layers.append(Conv(*nums))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise ValueError(f"unknown layer token {tok!r}")
    num_classes = layers[-1].n_out
    return layers, input_shape, num_classes


def save_model(model, path):
    desc = model.descriptor().encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        f.write(model.params.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError("not a model file (bad magic)")
    (n,) = struct.unpack("<I", blob[4:8])
    layers, input_shape, num_classes = parse_descriptor(blob[8:8 + n].decode("ascii"))
    params = np.frombuffer(blob[8 + n:], dtype="<f8").astype(np.float64)
    return Model(layers, input_shape, num_classes, params)
