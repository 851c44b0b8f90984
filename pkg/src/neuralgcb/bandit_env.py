"""Contextual bandit environments and regret bookkeeping."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ContextSet",
    "RewardModel",
    "Round",
    "sample_contexts",
    "make_synthetic_model",
    "reward",
    "observe",
    "SyntheticEnv",
    "ClassificationEnv",
    "classification_to_bandit",
    "load_uci",
    "regret_update",
]

UNIT_TOL = 1e-9
SYNTHETIC_KINDS = ("h1", "h2", "h3")


@dataclass(frozen=True, eq=False)
class ContextSet:
    vectors: np.ndarray  # (K, d), one unit vector per action
    t: int

    def __post_init__(self):
        V = np.asarray(self.vectors, dtype=float)
        if V.ndim != 2:
            raise ValueError("contexts must be a (K, d) array")
        if np.any(np.abs(np.linalg.norm(V, axis=1) - 1.0) > UNIT_TOL):
            raise ValueError("every context vector must have unit norm")
        V.setflags(write=False)
        object.__setattr__(self, "vectors", V)

    @property
    def K(self):
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class RewardModel:
    kind: str
    a: np.ndarray | None = None
    A: np.ndarray | None = None
    label: int | None = None  # classification: correct block index, 1-based
    n_classes: int | None = None
    nu: float = 0.0
    rescale: bool = False  # divide h1/h2 by 4 so means lie in [0, 1]

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("noise scale must be non-negative")
        if self.kind in ("h1", "h2"):
            if self.a is None or abs(np.linalg.norm(self.a) - 1.0) > 1e-9:
                raise ValueError(f"{self.kind} needs a unit vector a")
        elif self.kind == "h3":
            if self.A is None or np.ndim(self.A) != 2:
                raise ValueError("h3 needs a matrix A")
        elif self.kind == "classification":
            if self.n_classes is None:
                raise ValueError("classification needs n_classes")
        else:
            raise ValueError(f"unknown reward kind {self.kind!r}")


@dataclass(frozen=True)
class Round:
    t: int
    action: int
    y: float
    regret: float

    def __post_init__(self):
        if self.regret < -1e-12:
            raise ValueError(f"negative instantaneous regret {self.regret}")


def sample_contexts(d, K, rng, t=0):
    """K i.i.d. uniform points on the unit sphere in R^d."""
    if d < 1 or K < 1:
        raise ValueError("need d >= 1 and K >= 1")
    while True:
        V = rng.standard_normal((K, d))
        norms = np.linalg.norm(V, axis=1, keepdims=True)
        if np.all(norms > 0):
            return ContextSet(V / norms, t)


def make_synthetic_model(kind, d, rng, nu=0.1, rescale=False):
    """Draw the parameters of h1/h2 (a on the sphere) or h3 (A_ij ~ N(0, 0.25))."""
    if kind in ("h1", "h2"):
        a = rng.standard_normal(d)
        return RewardModel(kind, a=a / np.linalg.norm(a), nu=nu, rescale=rescale)
    if kind == "h3":
        return RewardModel(kind, A=0.5 * rng.standard_normal((d, d)), nu=nu, rescale=rescale)
    raise ValueError(f"unknown synthetic reward {kind!r}")


def _block_index(x, n_classes):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] // n_classes
    blocks = np.abs(x.reshape(*x.shape[:-1], n_classes, d)).sum(axis=-1)
    return np.argmax(blocks, axis=-1) + 1


def reward(model, x):
    """Noiseless mean reward; ``x`` may be one vector or a (K, d) stack."""
    x = np.asarray(x, dtype=float)
    if model.kind == "h1":
        out = 4.0 * (x @ model.a) ** 2
    elif model.kind == "h2":
        out = 4.0 * np.sin(x @ model.a) ** 2
    elif model.kind == "h3":
        out = np.linalg.norm(x @ model.A.T, axis=-1)
    else:
        if model.label is None:
            raise ValueError("classification model has no label for this round")
        if x.shape[-1] % model.n_classes:
            raise ValueError("context dimension is not a multiple of the class count")
        out = (_block_index(x, model.n_classes) == model.label).astype(float)
    if model.rescale and model.kind in ("h1", "h2"):
        out = out / 4.0
    return out if np.ndim(out) else float(out)


def observe(model, x, rng):
    mean = reward(model, x)
    if model.nu == 0:
        return mean
    noise = rng.standard_normal(np.shape(mean))
    return mean + model.nu * (noise if np.ndim(mean) else float(noise))


class SyntheticEnv:
    """Fresh uniform contexts each round, reward h1/h2/h3 plus Gaussian noise.

    Context and noise streams are independent generators derived from ``seed``.
    """

    def __init__(self, model, d, K, seed):
        self.model = model
        self.d = d
        self.K = K
        ctx_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
        self._ctx_rng = np.random.default_rng(ctx_seq)
        self._noise_rng = np.random.default_rng(noise_seq)

    @property
    def dim(self):
        return self.d

    def contexts(self, t):
        return sample_contexts(self.d, self.K, self._ctx_rng, t)

    def means(self, ctx):
        return np.asarray(reward(self.model, ctx.vectors), dtype=float)

    def observe(self, ctx, action):
        mean = float(reward(self.model, ctx.vectors[action]))
        return mean + self.model.nu * float(self._noise_rng.standard_normal())


def _embed(x, k, n_classes):
    d = x.shape[0]
    out = np.zeros(n_classes * d)
    out[k * d : (k + 1) * d] = x
    return out


class ClassificationEnv:
    """Each round shows the K block embeddings of one datapoint; reward 1 for the right block."""

    def __init__(self, features, labels, n_classes, nu=0.0, seed=0):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if features.ndim != 2 or len(features) != len(labels) or len(labels) == 0:
            raise ValueError("features must be (n, d) with one label per row")
        if np.any(labels < 1) or np.any(labels > n_classes):
            raise ValueError(f"labels must lie in 1..{n_classes}")
        norms = np.linalg.norm(features, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("features must be unit-normalised")
        self.features = features
        self.labels = labels
        self.K = n_classes
        self.model = RewardModel("classification", n_classes=n_classes, nu=nu)
        order_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
        self._order_rng = np.random.default_rng(order_seq)
        self._noise_rng = np.random.default_rng(noise_seq)
        self._order = self._order_rng.permutation(len(labels))
        self._labels_by_t = {}

    @property
    def dim(self):
        return self.features.shape[1] * self.K

    def _index(self, t):
        n = len(self.labels)
        if t and t % n == 0:
            # reshuffle at the start of each pass over the data
            self._order = self._order_rng.permutation(n)
        return self._order[t % n]

    def contexts(self, t):
        i = self._index(t)
        x = self.features[i]
        self._labels_by_t[t] = int(self.labels[i])
        vecs = np.stack([_embed(x, k, self.K) for k in range(self.K)])
        return ContextSet(vecs, t)

    def _model_for(self, ctx):
        return replace(self.model, label=self._labels_by_t[ctx.t])

    def means(self, ctx):
        return np.asarray(reward(self._model_for(ctx), ctx.vectors), dtype=float)

    def observe(self, ctx, action):
        mean = float(reward(self._model_for(ctx), ctx.vectors[action]))
        return mean + self.model.nu * float(self._noise_rng.standard_normal())


def classification_to_bandit(features, labels, K, nu=0.0, seed=0):
    return ClassificationEnv(features, labels, K, nu=nu, seed=seed)


# -- UCI ingestion ---------------------------------------------------------

MUSHROOM_COLUMNS = 23
MUSHROOM_VEIL_TYPE = 16  # column index including the leading label
STATLOG_COLUMNS = 10


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    if "," in lines[0]:
        return [row for row in csv.reader(lines)]
    return [ln.split() for ln in lines]


def _minmax_then_unit(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    X = (X - lo) / span
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("a preprocessed row is all zeros and cannot be normalised")
    return X / norms[:, None]


def _subsample(X, y, per_class, seed):
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < per_class:
            raise ValueError(f"class {c} has {len(idx)} rows, fewer than {per_class}")
        keep.append(np.sort(rng.choice(idx, per_class, replace=False)))
    keep = np.concatenate(keep)
    return X[keep], y[keep]


def _load_mushroom(rows):
    if rows and rows[0][0].strip().lower() in ("class", "label", "poisonous"):
        rows = rows[1:]
    bad = [i for i, r in enumerate(rows) if len(r) != MUSHROOM_COLUMNS]
    if bad:
        raise ValueError(f"mushroom rows must have {MUSHROOM_COLUMNS} columns (row {bad[0]})")
    raw = np.array([[c.strip() for c in r] for r in rows], dtype=object)
    classes = sorted(set(raw[:, 0]))
    if len(classes) != 2:
        raise ValueError(f"expected 2 mushroom classes, found {classes}")
    y = np.array([classes.index(v) + 1 for v in raw[:, 0]])
    attrs = np.delete(raw[:, 1:], MUSHROOM_VEIL_TYPE - 1, axis=1)
    X = np.empty(attrs.shape)
    for j in range(attrs.shape[1]):
        cats = sorted(set(attrs[:, j]))
        lookup = {c: i for i, c in enumerate(cats)}
        X[:, j] = [lookup[v] for v in attrs[:, j]]
    return X, y


def _load_statlog(rows):
    bad = [i for i, r in enumerate(rows) if len(r) != STATLOG_COLUMNS]
    if bad:
        raise ValueError(f"statlog rows must have {STATLOG_COLUMNS} columns (row {bad[0]})")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric statlog entry: {exc}") from exc
    raw_y = data[:, -1].astype(int)
    keep = raw_y != 4
    X = data[keep, 1:-1]  # drop time (first column) and the label
    y = np.where(raw_y[keep] == 1, 1, 2)
    return X, y


def load_uci(path, kind, subsample_per_class=1000, seed=0):
    """Preprocess Mushroom or Statlog (Shuttle) into unit-norm features and labels 1/2."""
    rows = _read_rows(path)
    if kind == "mushroom":
        X, y = _load_mushroom(rows)
    elif kind == "statlog":
        X, y = _load_statlog(rows)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    X = _minmax_then_unit(X)
    return _subsample(X, y, subsample_per_class, seed)


def regret_update(trace, rnd):
    """Append the new cumulative regret to ``trace`` (a list) and return it."""
    prev = trace[-1] if trace else 0.0
    trace.append(prev + rnd.regret)
    return trace
