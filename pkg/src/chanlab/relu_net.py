"""Fully connected ReLU networks in NumPy.

A network with widths ``(d0, d1, ..., dl, d_out)`` computes
``A_l o relu o A_{l-1} o ... o relu o A_0`` where ``A_i(v) = W_i v + b_i``;
no activation follows the last affine map.
"""

import struct
import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from chanlab.channel_model import gaussian, make_rng
from chanlab.estimators import AffineEstimator
from chanlab.linalg import LinAlgError, right_solve

CHECKPOINT_MAGIC = b"RELU-MLP-1"


class TrainingDiverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    widths: Tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("widths need >= 2 entries, all >= 1")
        object.__setattr__(self, "widths", widths)

    @classmethod
    def uniform(cls, d, width=40, hidden_layers=4):
        return cls((d,) + (width,) * hidden_layers + (d,))

    @property
    def hidden(self):
        return self.widths[1:-1]


@dataclass
class MlpParams:
    layers: List[Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in self.layers]
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i and W.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i} input width {W.shape[1]} != previous output")

    @property
    def widths(self):
        return (self.layers[0][0].shape[1],) + tuple(W.shape[0] for W, _ in self.layers)

    @property
    def spec(self):
        return MlpSpec(self.widths)

    @property
    def depth(self):
        """Number of hidden layers."""
        return len(self.layers) - 1

    @property
    def n_hidden_units(self):
        return sum(self.widths[1:-1])

    def copy(self):
        return MlpParams([(W.copy(), b.copy()) for W, b in self.layers])

    def __call__(self, x):
        return forward(self, x)


@dataclass
class TrainConfig:
    """Mini-batch training settings.

    ``lr_final`` sets the end point of a cosine learning-rate decay; leaving
    it ``None`` keeps the rate constant.
    """

    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_final: float = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainReport:
    final_train_loss: float
    loss_curve: List[float] = field(default_factory=list)
    wall_time: float = 0.0


def init_params(spec, seed=0):
    """He-normal weights (variance ``2 / fan_in``) and zero biases."""
    rng = make_rng(seed, 0)
    layers = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        W = gaussian(rng, (fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append((W, np.zeros(fan_out)))
    return MlpParams(layers)


def forward(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.widths[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.widths[0]}")
    a = x
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        a = a @ W.T + b
        if i < last:
            a = np.maximum(a, 0.0)
    return a


def _forward_trace(params, X):
    """Inputs to every layer plus the network output."""
    acts = [X]
    a = X
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        z = a @ W.T + b
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    return acts


def _backward(params, acts, H, grads):
    """Fill ``grads`` (list of (dW, db) arrays) in place; return the loss."""
    m = H.shape[0]
    err = acts[-1] - H
    loss = float(np.sum(err * err) / m)
    delta = (2.0 / m) * err
    for i in range(len(params.layers) - 1, -1, -1):
        W = params.layers[i][0]
        dW, db = grads[i]
        np.matmul(delta.T, acts[i], out=dW)
        np.sum(delta, axis=0, out=db)
        if i:
            # relu'(z) = 1 iff z > 0, i.e. iff the stored activation is > 0
            delta = (delta @ W) * (acts[i] > 0.0)
    return loss


def loss_and_gradient(params, batch):
    """Mean squared error of the network on ``batch`` and its exact gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads = [(np.empty_like(W), np.empty_like(b)) for W, b in params.layers]
    loss = _backward(params, _forward_trace(params, batch.x), batch.h, grads)
    return loss, grads


def dataset_loss(params, data):
    err = forward(params, data.x) - data.h
    return float(np.mean(np.sum(err * err, axis=1)))


def _flat_views(shapes, buf):
    views, offset = [], 0
    for wshape, bshape in shapes:
        nw, nb = int(np.prod(wshape)), int(np.prod(bshape))
        W = buf[offset:offset + nw].reshape(wshape)
        offset += nw
        b = buf[offset:offset + nb]
        offset += nb
        views.append((W, b))
    return views


def train(spec, train_set, config, init=None):
    """Minimize the empirical squared loss by mini-batch Adam or SGD.

    Returns ``(params, report)``; ``report.loss_curve`` holds the full
    training-set loss after every epoch.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    start = time.perf_counter()
    init = init_params(spec, config.seed) if init is None else init
    if init.widths != spec.widths:
        raise ValueError("initial parameters do not match spec")
    shapes = [(W.shape, b.shape) for W, b in init.layers]
    n_params = sum(W.size + b.size for W, b in init.layers)
    theta = np.empty(n_params)
    grad = np.empty(n_params)
    views = _flat_views(shapes, theta)
    for (W, b), (W0, b0) in zip(views, init.layers):
        W[...] = W0
        b[...] = b0
    params = MlpParams(views)
    grads = _flat_views(shapes, grad)

    m1 = np.zeros(n_params)
    m2 = np.zeros(n_params)
    rng = make_rng(config.seed, 1)
    n = len(train_set)
    bs = min(config.batch_size, n)
    steps_per_epoch = -(-n // bs)
    total_steps = steps_per_epoch * config.epochs
    X, H = train_set.x, train_set.h
    curve = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            _backward(params, _forward_trace(params, X[idx]), H[idx], grads)
            step += 1
            lr = config.learning_rate
            if config.lr_final is not None:
                frac = (step - 1) / max(total_steps - 1, 1)
                lr = config.lr_final + 0.5 * (config.learning_rate - config.lr_final) * (1 + np.cos(np.pi * frac))
            if config.optimizer == "sgd":
                theta -= lr * grad
            else:
                m1 *= config.beta1
                m1 += (1 - config.beta1) * grad
                m2 *= config.beta2
                m2 += (1 - config.beta2) * grad * grad
                c1 = 1 - config.beta1**step
                c2 = 1 - config.beta2**step
                theta -= (lr / c1) * m1 / (np.sqrt(m2 / c2) + config.eps)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = dataset_loss(params, train_set)
        if not np.isfinite(loss):
            raise TrainingDiverged("training diverged (reduce learning rate)")
        curve.append(loss)
    final = curve[-1] if curve else dataset_loss(params, train_set)
    report = TrainReport(final, curve, time.perf_counter() - start)
    return params.copy(), report


# ---------------------------------------------------------------------------
# exact constructions
# ---------------------------------------------------------------------------


def closed_form_affine_fit(train_set, ridge=0.0):
    """Least-squares affine map ``W (x - x_mean) + h_mean`` on ``train_set``.

    ``W = (sum hc xc^T)(sum xc xc^T + ridge I)^-1`` on centered samples.
    """
    d = train_set.dim
    if len(train_set) < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} samples")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    x_mean = train_set.x.mean(axis=0)
    h_mean = train_set.h.mean(axis=0)
    xc = train_set.x - x_mean
    hc = train_set.h - h_mean
    Sxx = xc.T @ xc + ridge * np.eye(d)
    Shx = hc.T @ xc
    eig = np.linalg.eigvalsh(Sxx)
    if eig[0] <= 1e-13 * max(eig[-1], 1e-300):
        raise LinAlgError("degenerate sample covariance")
    W = right_solve(Shx, Sxx)
    return AffineEstimator(W, h_mean - W @ x_mean)


def affine_to_relu(aff):
    """Two-layer ReLU network equal to ``aff`` everywhere.

    Uses ``v = relu(v) - relu(-v)`` with hidden width ``2 * d_out``.
    """
    W, b = aff.weight, aff.bias
    k = W.shape[0]
    eye = np.eye(k)
    return MlpParams([
        (np.vstack([W, -W]), np.concatenate([b, -b])),
        (np.hstack([eye, -eye]), np.zeros(k)),
    ])


def extend_depth_identity(params, extra_layers):
    """Deepen ``params`` by ``extra_layers`` hidden layers without changing its function."""
    if extra_layers < 1:
        raise ValueError("extra_layers must be positive")
    *body, (W, b) = [(W.copy(), b.copy()) for W, b in params.layers]
    k = W.shape[0]
    eye = np.eye(k)
    eye2 = np.eye(2 * k)
    layers = body + [(np.vstack([W, -W]), np.concatenate([b, -b]))]
    layers += [(eye2.copy(), np.zeros(2 * k)) for _ in range(extra_layers - 1)]
    layers.append((np.hstack([eye, -eye]), np.zeros(k)))
    return MlpParams(layers)


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------


def save_params(params, path):
    """Write the ``RELU-MLP-1`` binary checkpoint (see README for layout)."""
    widths = params.widths
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(widths)))
        fh.write(struct.pack(f"<{len(widths)}I", *widths))
        for W, b in params.layers:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a RELU-MLP-1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    widths = struct.unpack_from(f"<{count}I", blob, pos)
    pos += 4 * count
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=pos).reshape(fan_out, fan_in)
        pos += 8 * W.size
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * b.size
        layers.append((W.astype(np.float64), b.astype(np.float64)))
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return MlpParams(layers)
