"""The invariant network: conv head per direction, SGConv stack, pooling, linear map.

Forward and backward passes are written out by hand for this fixed
architecture. Activations are channels-last: a batch of curves is
``(nodes, length, channels)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.sparse as sps
from numpy.lib.stride_tricks import sliding_window_view

from .sphere import SphereGraph
from .topology import EctField

KERNEL = 5
STRIDE = 2
MIN_LENGTH = 29  # three valid stride-2 width-5 convolutions need 29 samples


class ShapeError(ValueError):
    pass


PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    lr_drop_epoch: int = 200
    lr_after_drop: float = 1e-4
    beta: float = 0.1
    k: int = 39
    slope: float = 0.01
    channels: int = 128
    optimizer: str = "adam"
    seed: int = 0
    # arithmetic of the conv head; the graph stack, parameters and optimizer stay float64
    precision: str = "float64"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lr_after_drop", "beta", "channels", "lr_drop_epoch"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 0 or self.slope < 0:
            raise ValueError("k and slope must be non-negative")
        if self.lr_drop_epoch >= self.epochs:
            raise ValueError("lr_drop_epoch must be smaller than epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.precision not in PRECISIONS:
            raise ValueError("precision must be 'float64' or 'float32'")

    def learning_rate(self, epoch: int) -> float:
        return self.lr if epoch < self.lr_drop_epoch else self.lr_after_drop


@dataclass
class ModelParams:
    conv1_w: np.ndarray   # (C, 1, 5)
    conv1_b: np.ndarray   # (C,)
    conv2_w: np.ndarray   # (C, C, 5)
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    sg1_weight: np.ndarray  # (C, C)
    sg2_weight: np.ndarray
    fc_weight: np.ndarray   # (2, C)
    fc_bias: np.ndarray     # (2,)

    @classmethod
    def init(cls, channels: int = 128, seed: int = 0) -> "ModelParams":
        """Uniform in +-1/sqrt(fan_in) for every tensor, biases included."""
        rng = np.random.default_rng(seed)
        C = channels

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            conv1_w=u((C, 1, KERNEL), KERNEL), conv1_b=u((C,), KERNEL),
            conv2_w=u((C, C, KERNEL), C * KERNEL), conv2_b=u((C,), C * KERNEL),
            conv3_w=u((C, C, KERNEL), C * KERNEL), conv3_b=u((C,), C * KERNEL),
            sg1_weight=u((C, C), C), sg2_weight=u((C, C), C),
            fc_weight=u((2, C), C), fc_bias=u((2,), C),
        )

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[0]

    def names(self):
        return [f.name for f in fields(self)]

    def tensors(self):
        return [getattr(self, n) for n in self.names()]

    def map(self, fn, *others) -> "ModelParams":
        return ModelParams(*[fn(*xs) for xs in zip(self.tensors(), *[o.tensors() for o in others])])

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    def check(self) -> None:
        C = self.channels
        want = {"conv1_w": (C, 1, KERNEL), "conv1_b": (C,), "conv2_w": (C, C, KERNEL), "conv2_b": (C,),
                "conv3_w": (C, C, KERNEL), "conv3_b": (C,), "sg1_weight": (C, C), "sg2_weight": (C, C),
                "fc_weight": (2, C), "fc_bias": (2,)}
        for name, shape in want.items():
            x = getattr(self, name)
            if x.shape != shape:
                raise ShapeError(f"{name} has shape {x.shape}, expected {shape}")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name} has non-finite entries")

    # checkpoint I/O ---------------------------------------------------------

    def to_bytes(self, cfg: TrainConfig) -> bytes:
        parts = [b"ECTW", struct.pack("<IIdII", CHECKPOINT_VERSION, cfg.k, cfg.slope,
                                      self.channels, len(self.names()))]
        for x in self.tensors():
            parts.append(struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape))
        for x in self.tensors():
            parts.append(np.ascontiguousarray(x, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["ModelParams", dict]:
        if data[:4] != b"ECTW":
            raise ValueError("not an ECTW checkpoint")
        version, k, slope, channels, count = struct.unpack_from("<IIdII", data, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 4 + struct.calcsize("<IIdII")
        shapes = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shapes.append(struct.unpack_from(f"<{ndim}I", data, off))
            off += 4 * ndim
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
            off += 8 * size
        if off != len(data):
            raise ValueError("trailing bytes in checkpoint")
        params = cls(*arrays)
        params.check()
        return params, {"k": k, "slope": slope, "channels": channels}

    def save(self, path, cfg: TrainConfig) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(cfg))

    @classmethod
    def load(cls, path) -> tuple["ModelParams", dict]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# graph operators


def normalized_adjacency(G: SphereGraph) -> sps.csr_matrix:
    """D^-1/2 A D^-1/2 without self-loops; isolated nodes give zero rows."""
    A = G.adjacency()
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    Dm = sps.diags(inv)
    return sps.csr_matrix(Dm @ A @ Dm)


def sgconv_layer(A_norm, X: np.ndarray, W: np.ndarray, k: int) -> np.ndarray:
    """A_norm^k X W via k sparse products followed by the dense projection."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or W.shape[0] != X.shape[1] or A_norm.shape[1] != X.shape[0]:
        raise ShapeError(f"cannot apply SGConv to X{X.shape} with W{W.shape}")
    for _ in range(int(k)):
        X = A_norm @ X
    return X @ W


_PROPAGATORS: dict = {}


def propagation_matrix(G: SphereGraph, k: int) -> np.ndarray:
    """Dense A_norm^k, cached per (graph, k)."""
    key = (id(G), G.num_nodes, len(G.edges), int(k))
    hit = _PROPAGATORS.get(key)
    if hit is not None and hit[0] is G:
        return hit[1]
    A = normalized_adjacency(G)
    P = np.eye(G.num_nodes)
    for _ in range(int(k)):
        P = A @ P
    P = np.asarray(P)
    P.setflags(write=False)
    if len(_PROPAGATORS) > 16:
        _PROPAGATORS.clear()
    _PROPAGATORS[key] = (G, P)
    return P


# ---------------------------------------------------------------------------
# building blocks


def _lrelu(z, slope):
    if 0 <= slope <= 1:
        return np.maximum(z, slope * z)
    return np.where(z > 0, z, slope * z)


def _lrelu_grad(z, slope):
    one = z.dtype.type(1)
    return np.where(z > 0, one, one * slope)


def _conv_forward(X, W, b):
    """Valid stride-2 conv; X (n, L, Cin), W (Cout, Cin, 5) -> (n, Lout, Cout), patches."""
    n, L, Cin = X.shape
    Lout = (L - KERNEL) // STRIDE + 1
    patches = sliding_window_view(X, KERNEL, axis=1)[:, ::STRIDE][:, :Lout]  # (n, Lout, Cin, 5)
    patches = patches.reshape(n * Lout, Cin * KERNEL)
    out = patches @ W.reshape(W.shape[0], -1).T + b
    return out.reshape(n, Lout, -1), patches


def _conv_backward(dout, patches, W, L, need_input_grad=True):
    n, Lout, Cout = dout.shape
    Cin = W.shape[1]
    d2 = dout.reshape(n * Lout, Cout)
    dW = (d2.T @ patches).reshape(W.shape)
    db = d2.sum(axis=0)
    if not need_input_grad:
        return dW, db, None
    dp = (d2 @ W.reshape(Cout, -1)).reshape(n, Lout, Cin, KERNEL)
    dX = np.zeros((n, L, Cin), dtype=dout.dtype)
    for j in range(KERNEL):
        dX[:, j:j + STRIDE * (Lout - 1) + 1:STRIDE, :] += dp[:, :, :, j]
    return dW, db, dX


def conv_lengths(t: int) -> tuple[int, int, int]:
    L1 = (t - KERNEL) // STRIDE + 1
    L2 = (L1 - KERNEL) // STRIDE + 1
    L3 = (L2 - KERNEL) // STRIDE + 1
    return L1, L2, L3


def active_window(curves: np.ndarray) -> tuple[int, int]:
    """Input slice [start, stop) whose head output has the same channelwise max.

    Final-layer position j reads samples 8j..8j+28. Positions whose window
    lies entirely in a row's constant prefix (or suffix) repeat each other,
    so all but one of them can be cut. The slice stays aligned to the total
    stride, keeping every surviving activation identical to the full pass.
    """
    n, t = curves.shape
    L3 = conv_lengths(t)[2]
    span = STRIDE ** 3
    reach = MIN_LENGTH - 1
    if n == 0 or L3 < 1:
        return 0, t
    changes_left = curves != curves[:, :1]
    changes_right = curves != curves[:, -1:]
    has = changes_left.any(axis=1)
    if not has.any():
        return 0, MIN_LENGTH
    first = np.where(has, changes_left.argmax(axis=1), t).min()
    last = np.where(has, t - 1 - changes_right[:, ::-1].argmax(axis=1), -1).max()
    j_lo = max((first - reach - 1) // span, 0) if first > reach else 0
    j_hi = min(last // span + 1, L3 - 1)
    if j_lo > j_hi:
        j_lo = j_hi = 0
    return span * j_lo, span * j_hi + MIN_LENGTH


# ---------------------------------------------------------------------------
# head


def translation_head_forward(curves: np.ndarray, P: ModelParams, slope: float = 0.01,
                             crop: bool = True, return_cache: bool = False, precision: str = "float64"):
    """Conv-LReLU-Conv-LReLU-Conv then max over positions; one vector per curve.

    ``curves`` is (t,) or (n, t). Cropping to :func:`active_window` does not
    change the result. ``precision`` selects the arithmetic; the output is float64.
    """
    dt = PRECISIONS[precision]
    X = np.asarray(curves, dtype=dt)
    single = X.ndim == 1
    if single:
        X = X[None]
    if X.shape[1] < MIN_LENGTH:
        raise ShapeError(f"curve length {X.shape[1]} < {MIN_LENGTH}")
    start, stop = active_window(X) if crop else (0, X.shape[1])
    x0 = X[:, start:stop, None]
    w = [np.asarray(x, dtype=dt) for x in (P.conv1_w, P.conv1_b, P.conv2_w, P.conv2_b, P.conv3_w, P.conv3_b)]
    z1, p1 = _conv_forward(x0, w[0], w[1])
    a1 = _lrelu(z1, slope)
    z2, p2 = _conv_forward(a1, w[2], w[3])
    a2 = _lrelu(z2, slope)
    z3, p3 = _conv_forward(a2, w[4], w[5])
    arg = z3.argmax(axis=1)  # (n, C)
    h = np.take_along_axis(z3, arg[:, None, :], axis=1)[:, 0, :].astype(np.float64)
    if single:
        h = h[0]
    if not return_cache:
        return h
    cache = dict(x0=x0, z1=z1, p1=p1, z2=z2, p2=p2, a1=a1, a2=a2, p3=p3, L3=z3.shape[1], arg=arg,
                 w1=w[0], w2=w[2], w3=w[4])
    return h, cache


def _head_backward(dh, cache, P: ModelParams, slope, grads: dict):
    n, C = dh.shape
    dz3 = np.zeros((n, cache["L3"], C), dtype=cache["a2"].dtype)
    np.put_along_axis(dz3, cache["arg"][:, None, :], dh[:, None, :].astype(dz3.dtype), axis=1)
    dW, db, da2 = _conv_backward(dz3, cache["p3"], cache["w3"], cache["a2"].shape[1])
    grads["conv3_w"] += dW
    grads["conv3_b"] += db
    dz2 = da2 * _lrelu_grad(cache["z2"], slope)
    dW, db, da1 = _conv_backward(dz2, cache["p2"], cache["w2"], cache["a1"].shape[1])
    grads["conv2_w"] += dW
    grads["conv2_b"] += db
    dz1 = da1 * _lrelu_grad(cache["z1"], slope)
    dW, db, _ = _conv_backward(dz1, cache["p1"], cache["w1"], cache["x0"].shape[1], need_input_grad=False)
    grads["conv1_w"] += dW
    grads["conv1_b"] += db


# ---------------------------------------------------------------------------
# full model


def _curves_of(E) -> np.ndarray:
    return E.curves if isinstance(E, EctField) else np.asarray(E)


def _forward(E, G_or_prop, P: ModelParams, cfg: TrainConfig, crop=True):
    curves = _curves_of(E)
    prop = G_or_prop if isinstance(G_or_prop, np.ndarray) else propagation_matrix(G_or_prop, cfg.k)
    if curves.shape[0] != prop.shape[0]:
        raise ShapeError(f"field has {curves.shape[0]} directions, graph has {prop.shape[0]} nodes")
    h, hc = translation_head_forward(curves, P, cfg.slope, crop=crop, return_cache=True,
                                     precision=cfg.precision)
    u1 = prop @ h
    s1 = u1 @ P.sg1_weight
    b1 = _lrelu(s1, cfg.slope)
    u2 = prop @ b1
    s2 = u2 @ P.sg2_weight
    b2 = _lrelu(s2, cfg.slope)
    g = b2.mean(axis=0)
    y = P.fc_weight @ g + P.fc_bias
    cache = dict(head=hc, prop=prop, u1=u1, s1=s1, u2=u2, s2=s2, g=g)
    return y, cache


def model_forward(E, G, P: ModelParams, cfg: TrainConfig | None = None, crop: bool = True) -> np.ndarray:
    """2-vector embedding of one EctField over the sphere graph ``G``.

    ``G`` may also be a precomputed dense propagation matrix.
    """
    return _forward(E, G, P, cfg or TrainConfig(), crop=crop)[0]


def _backward(dy, cache, P: ModelParams, cfg: TrainConfig, grads: dict):
    slope = cfg.slope
    prop = cache["prop"]
    n = prop.shape[0]
    grads["fc_weight"] += np.outer(dy, cache["g"])
    grads["fc_bias"] += dy
    dg = P.fc_weight.T @ dy
    ds2 = np.broadcast_to(dg / n, (n, dg.shape[0])) * _lrelu_grad(cache["s2"], slope)
    grads["sg2_weight"] += cache["u2"].T @ ds2
    db1 = prop.T @ (ds2 @ P.sg2_weight.T)
    ds1 = db1 * _lrelu_grad(cache["s1"], slope)
    grads["sg1_weight"] += cache["u1"].T @ ds1
    dh = prop.T @ (ds1 @ P.sg1_weight.T)
    _head_backward(dh, cache["head"], P, slope, grads)


def smooth_l1_loss(pred, target, beta: float = 0.1) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 over coordinates; returns (loss, d loss / d pred)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    ad = np.abs(d)
    quad = ad < beta
    per = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d)) / d.size
    return float(per.mean()), grad


def compute_gradients(batch, G, P: ModelParams, cfg: TrainConfig, crop: bool = True):
    """Mean smooth-L1 loss over ``batch`` of (field, target) pairs and its gradient.

    Items are accumulated in batch order, so the result does not depend on scheduling.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    prop = G if isinstance(G, np.ndarray) else propagation_matrix(G, cfg.k)
    acc = {name: np.zeros_like(x) for name, x in zip(P.names(), P.tensors())}
    total = 0.0
    for E, target in batch:
        y, cache = _forward(E, prop, P, cfg, crop=crop)
        loss, dy = smooth_l1_loss(y, target, cfg.beta)
        total += loss
        _backward(dy, cache, P, cfg, acc)
    scale = 1.0 / len(batch)
    grads = ModelParams(*[acc[name] * scale for name in P.names()])
    return total * scale, grads


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.steps = 0

    def step(self, P: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        self.m = self.m.map(lambda m, g: b1 * m + (1 - b1) * g, grads)
        self.v = self.v.map(lambda v, g: b2 * v + (1 - b2) * g * g, grads)
        c1 = 1 - b1 ** self.steps
        c2 = 1 - b2 ** self.steps
        return P.map(lambda p, m, v: p - lr * (m / c1) / (np.sqrt(v / c2) + self.eps), self.m, self.v)


class SGD:
    def __init__(self, params: ModelParams):
        self.steps = 0

    def step(self, P: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
        self.steps += 1
        return P.map(lambda p, g: p - lr * g, grads)


def make_optimizer(params: ModelParams, cfg: TrainConfig):
    return Adam(params) if cfg.optimizer == "adam" else SGD(params)


def optimizer_step(P: ModelParams, grads: ModelParams, epoch: int, cfg: TrainConfig, state=None):
    """One update with the scheduled learning rate; ``state`` carries optimiser moments."""
    if state is None:
        state = make_optimizer(P, cfg)
    return state.step(P, grads, cfg.learning_rate(epoch)), state


# ---------------------------------------------------------------------------
# class targets


def octagon_targets(num_classes: int = 8) -> np.ndarray:
    """First ``num_classes`` vertices of the regular octagon on the unit circle."""
    if not 1 <= num_classes <= 8:
        raise ValueError("between 1 and 8 classes are supported")
    ang = 2.0 * np.pi * np.arange(num_classes) / 8.0
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)
