"""Fully connected sigma_s network with the width scaling sqrt(c_s / m).

    f1 = W1 x,   f_l = W_l h_{l-1},   h_l = sqrt(c_s/m) sigma_s(f_l),   f(x) = W_{L+1} h_L

Gradients follow the backward recursion

    b_{L+1} = 1,   b_l = sqrt(c_s/m) diag(sigma_s'(f_l)) W_{l+1}^T b_{l+1},
    df/dW_l = b_l h_{l-1}^T.

Under this scaling g(x)^T g(x') already tends to the NTK as m grows, with no
further 1/m factor.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .activation import norm_const, sigma, sigma_prime

__all__ = [
    "NetConfig",
    "Weights",
    "TrainSpec",
    "TrainingDiverged",
    "init",
    "draw_gaussian",
    "forward",
    "forward_batch",
    "gradient",
    "gradients",
    "empirical_kernel",
    "loss",
    "train",
    "save_weights",
    "load_weights",
]

UNIT_TOL = 1e-6
_MAGIC = b"NBLW"
_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    L: int
    m: int
    s: int
    d: int

    def __post_init__(self):
        if self.L < 1 or self.d < 1 or self.s < 1:
            raise ValueError(f"need L, d, s >= 1, got {self}")
        if self.m < 2 or self.m % 2:
            raise ValueError(f"width m must be a positive even integer, got {self.m}")

    @property
    def shapes(self):
        m = self.m
        return [(m, self.d)] + [(m, m)] * (self.L - 1) + [(1, m)]

    @property
    def n_params(self):
        return self.m * self.d + (self.L - 1) * self.m**2 + self.m

    @property
    def scale(self):
        return np.sqrt(norm_const(self.s) / self.m)


@dataclass(frozen=True, eq=False)
class Weights:
    """L+1 weight matrices; arrays are read-only so values can be shared."""

    layers: tuple

    def __post_init__(self):
        frozen = []
        for a in self.layers:
            a = np.array(a, dtype=float)
            a.setflags(write=False)
            frozen.append(a)
        object.__setattr__(self, "layers", tuple(frozen))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.layers])

    @classmethod
    def from_flat(cls, cfg, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (cfg.n_params,):
            raise ValueError(f"expected {cfg.n_params} parameters, got {vec.shape}")
        out, pos = [], 0
        for r, c in cfg.shapes:
            out.append(vec[pos : pos + r * c].reshape(r, c))
            pos += r * c
        return cls(tuple(out))

    def check(self, cfg):
        if [a.shape for a in self.layers] != cfg.shapes:
            raise ValueError(
                f"weight shapes {[a.shape for a in self.layers]} do not match {cfg.shapes}"
            )
        if not all(np.isfinite(a).all() for a in self.layers):
            raise ValueError("weights contain non-finite entries")

    def __eq__(self, other):
        if not isinstance(other, Weights) or len(self.layers) != len(other.layers):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers))

    __hash__ = None


@dataclass(frozen=True)
class TrainSpec:
    lam: float
    eta: float
    epochs: int

    def __post_init__(self):
        if not self.lam > 0 or not self.eta > 0:
            raise ValueError("lam and eta must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"training loss became non-finite ({value}) at epoch {epoch}")
        self.epoch = epoch
        self.value = value


def draw_gaussian(cfg, seed):
    """Raw i.i.d. N(0, 1) draws for every layer, before the zero-output pairing."""
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(shape) for shape in cfg.shapes]


def init(cfg, seed):
    """Gaussian initialisation with f(x; W0) = 0 for every x.

    Hidden rows i and i + m/2 are duplicated and the matching output weights
    negated, so the two halves of the last hidden layer cancel exactly.
    """
    half = cfg.m // 2
    layers = draw_gaussian(cfg, seed)
    for a in layers[:-1]:
        a[half:] = a[:half]
    layers[-1][0, half:] = -layers[-1][0, :half]
    return Weights(tuple(layers))


def _as_batch(cfg, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != cfg.d:
        raise ValueError(f"inputs must have dimension {cfg.d}, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError(f"inputs must lie on the unit sphere (norms {norms.min()}..{norms.max()})")
    return X


def _forward_cache(cfg, W, X):
    """Pre-activations f_1..f_L and post-activations h_0..h_L for a batch (rows = samples)."""
    scale = cfg.scale
    hs = [X]
    pre = []
    for Wl in W.layers[:-1]:
        f = hs[-1] @ Wl.T
        pre.append(f)
        hs.append(scale * sigma(cfg.s, f))
    out = hs[-1] @ W.layers[-1][0]
    return out, pre, hs


def forward_batch(cfg, W, X):
    X = _as_batch(cfg, X)
    out, _, _ = _forward_cache(cfg, W, X)
    return out


def forward(cfg, W, x, return_preactivations=False):
    X = _as_batch(cfg, x)
    if X.shape[0] != 1:
        raise ValueError("forward takes a single input; use forward_batch")
    out, pre, _ = _forward_cache(cfg, W, X)
    if return_preactivations:
        return float(out[0]), [f[0] for f in pre]
    return float(out[0])


def _backward(cfg, W, pre, weight_rows):
    """b_l for l = 1..L as (n, m) arrays; weight_rows is b_{L+1} per sample."""
    scale = cfg.scale
    b = weight_rows[:, None] * W.layers[-1]  # (n, m): W_{L+1}^T b_{L+1}
    bs = [None] * cfg.L
    for l in range(cfg.L - 1, -1, -1):
        bl = scale * sigma_prime(cfg.s, pre[l]) * b
        bs[l] = bl
        if l > 0:
            b = bl @ W.layers[l]
    return bs


def gradients(cfg, W, X, cache=None):
    """Per-sample parameter gradients as an (n, p) array, layer order, row-major."""
    X = _as_batch(cfg, X)
    _, pre, hs = cache if cache is not None else _forward_cache(cfg, W, X)
    n = X.shape[0]
    bs = _backward(cfg, W, pre, np.ones(n))
    blocks = [(bl[:, :, None] * hs[l][:, None, :]).reshape(n, -1) for l, bl in enumerate(bs)]
    blocks.append(hs[-1])
    return np.concatenate(blocks, axis=1)


def gradient(cfg, W, x):
    return gradients(cfg, W, x)[0]


def empirical_kernel(cfg, W0, x, x2):
    """g(x; W0) . g(x2; W0); converges to the analytic NTK as m grows."""
    G = gradients(cfg, W0, np.stack([np.asarray(x, float), np.asarray(x2, float)]))
    # order the product so that swapping arguments is bitwise symmetric
    return float(np.sum(G[0] * G[1]))


def loss(cfg, W, W0, X, y, lam):
    out = forward_batch(cfg, W, X) if len(y) else np.zeros(0)
    reg = sum(float(np.sum((a - a0) ** 2)) for a, a0 in zip(W.layers, W0.layers))
    return float(np.sum((out - y) ** 2)) + cfg.m * lam * reg


def _loss_and_grad(cfg, layers, layers0, X, y, lam):
    W = _RawWeights(layers)
    out, pre, hs = _forward_cache(cfg, W, X)
    resid = out - y
    reg_coef = cfg.m * lam
    diffs = [a - a0 for a, a0 in zip(layers, layers0)]
    value = float(resid @ resid) + reg_coef * sum(float(np.sum(d * d)) for d in diffs)
    bs = _backward(cfg, W, pre, 2.0 * resid)
    grads = [bl.T @ hs[l] for l, bl in enumerate(bs)]
    grads.append((2.0 * resid @ hs[-1])[None, :])
    grads = [g + 2.0 * reg_coef * dl for g, dl in zip(grads, diffs)]
    return value, grads


class _RawWeights:
    # mutable stand-in for Weights inside the training loop
    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = layers


def train(cfg, W0, data, spec, strict_descent=False):
    """Full-batch gradient descent on sum (f - y)^2 + m*lam*||W - W0||^2, from W0.

    ``data`` is ``(X, y)`` with X of shape (n, d).  Raises TrainingDiverged when
    the loss stops being finite; with ``strict_descent`` also raises
    AssertionError if an epoch increases the loss by more than 1e-9.
    """
    if spec.epochs == 0:
        return W0
    X, y = data
    X = _as_batch(cfg, X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("training data is empty")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    layers0 = [np.asarray(a) for a in W0.layers]
    layers = [a.copy() for a in layers0]
    prev = np.inf
    for epoch in range(spec.epochs):
        # overflow is detected below through the loss value
        with np.errstate(over="ignore", invalid="ignore"):
            value, grads = _loss_and_grad(cfg, layers, layers0, X, y, spec.lam)
        if not np.isfinite(value):
            raise TrainingDiverged(epoch, value)
        if strict_descent and value > prev + 1e-9:
            raise AssertionError(f"loss increased at epoch {epoch}: {prev} -> {value}")
        prev = value
        for a, g in zip(layers, grads):
            a -= spec.eta * g
    if not all(np.isfinite(a).all() for a in layers):
        raise TrainingDiverged(spec.epochs, np.nan)
    return Weights(tuple(layers))


def save_weights(path, cfg, W):
    W.check(cfg)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, cfg.L, cfg.m, cfg.s, cfg.d))
        for a in W.layers:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_weights(path):
    """Read a weights file; returns (NetConfig, Weights)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not a weights file (bad magic)")
    version, L, m, s, d = struct.unpack_from("<5I", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported weights version {version}")
    cfg = NetConfig(L=L, m=m, s=s, d=d)
    body = np.frombuffer(blob, dtype="<f8", offset=24)
    W = Weights.from_flat(cfg, body.astype(float))
    return cfg, W
