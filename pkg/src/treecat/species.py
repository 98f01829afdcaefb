"""Species classification from concatenated per-view feature vectors.

Features for each tree come from four views (aerial plus street-level crops
at zoom 40, 80 and 110) and are concatenated in that fixed order. A
one-vs-rest linear SVM (L2-regularized hinge loss, minibatch stochastic
subgradient descent) maps them to species.

Feature files are a JSON header plus a raw little-endian float32 payload of
shape (count, total dimension); models are a JSON header plus raw float64
weights.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyData, MissingView, ParseError, SingleClass
from .store import normalize_species

log = logging.getLogger(__name__)

VIEW_ORDER = ("aerial", "street_40", "street_80", "street_110")


@dataclass(frozen=True)
class FeatureVector:
    tree_id: str
    views: dict  # view name -> 1-D array


def concat_features(fv: FeatureVector, dims: dict | None = None) -> np.ndarray:
    parts = []
    for view in VIEW_ORDER:
        if view not in fv.views:
            raise MissingView(f"tree {fv.tree_id}: missing {view} features")
        v = np.asarray(fv.views[view], dtype=float).ravel()
        if dims is not None and v.size != dims[view]:
            raise DimensionMismatch(f"tree {fv.tree_id}: {view} has {v.size} dims, expected {dims[view]}")
        parts.append(v)
    return np.concatenate(parts)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    reg: float = 1e-4
    batch_size: int = 16
    seed: int = 0


@dataclass
class SpeciesModel:
    classes: list
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    mean: np.ndarray
    scale: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {X.shape[1]}")
        return ((X - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict(self, X) -> list:
        s = self.decision(X)
        return [self.classes[i] for i in np.argmax(s, axis=1)]  # first max = class order

    def save(self, path) -> None:
        path = Path(path)
        blob = np.concatenate(
            [self.weights.ravel(), self.bias, self.mean, self.scale]
        ).astype("<f8")
        path.with_suffix(".bin").write_bytes(blob.tobytes())
        header = {
            "classes": self.classes,
            "dim": self.dim,
            "config": asdict(self.config),
            "history": self.history,
            "weights_file": path.with_suffix(".bin").name,
        }
        path.write_text(json.dumps(header, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> SpeciesModel:
        path = Path(path)
        header = json.loads(path.read_text(encoding="utf-8"))
        c, d = len(header["classes"]), int(header["dim"])
        raw = np.fromfile(path.parent / header["weights_file"], dtype="<f8")
        if raw.size != c * d + c + 2 * d:
            raise ParseError("weight payload does not match header", path=path)
        w = raw[: c * d].reshape(c, d)
        b = raw[c * d: c * d + c]
        mean = raw[c * d + c: c * d + c + d]
        scale = raw[c * d + c + d:]
        return cls(list(header["classes"]), w, b, mean, scale, TrainConfig(**header["config"]), header.get("history", []))


def _objective(Xs, Y, W, b, reg):
    margins = 1.0 - Y * (Xs @ W.T + b)
    hinge = np.maximum(margins, 0.0).mean(axis=0)
    return float(np.mean(hinge + 0.5 * reg * np.sum(W * W, axis=1)))


def train_linear(features, labels, config: TrainConfig | None = None) -> SpeciesModel:
    """One-vs-rest linear SVM.

    Features are standardized with training statistics. The learning rate
    decays as 1/(1 + epoch); an epoch that would raise the training
    objective is rolled back and the rate halved, so the recorded objective
    never increases.
    """
    config = config or TrainConfig()
    X = np.asarray(features, dtype=float)
    labels = list(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyData("no training samples")
    if len(labels) != X.shape[0]:
        raise ValueError("features and labels differ in length")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SingleClass("need at least two species to train")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    idx = {c: i for i, c in enumerate(classes)}
    y = np.array([idx[c] for c in labels])
    Y = -np.ones((X.shape[0], len(classes)))
    Y[np.arange(X.shape[0]), y] = 1.0

    rng = np.random.default_rng(config.seed)
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    n = X.shape[0]
    bs = max(1, int(config.batch_size))
    boost = 1.0
    history = [_objective(Xs, Y, W, b, config.reg)]
    for epoch in range(config.epochs):
        lr = boost * config.learning_rate / (1.0 + epoch)
        W_new, b_new = W.copy(), b.copy()
        perm = rng.permutation(n)
        for s in range(0, n, bs):
            sel = perm[s:s + bs]
            xb, yb = Xs[sel], Y[sel]
            active = (yb * (xb @ W_new.T + b_new)) < 1.0  # (batch, classes)
            coef = np.where(active, yb, 0.0)
            grad_w = config.reg * W_new - coef.T @ xb / sel.size
            grad_b = -coef.mean(axis=0)
            W_new -= lr * grad_w
            b_new -= lr * grad_b
        obj = _objective(Xs, Y, W_new, b_new, config.reg)
        if obj <= history[-1]:
            W, b = W_new, b_new
            history.append(obj)
        else:
            boost *= 0.5
            history.append(history[-1])
    return SpeciesModel(classes, W, b, mean, scale, config, history)


def predict_species(model: SpeciesModel, fv) -> tuple:
    """Label with the highest linear score, plus all class scores."""
    x = concat_features(fv) if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=float)
    scores = model.decision(x)[0]
    return model.classes[int(np.argmax(scores))], dict(zip(model.classes, scores.tolist()))


# ---------------------------------------------------------------------------
# feature files


@dataclass
class FeatureSet:
    ids: list
    labels: list
    dims: dict
    matrix: np.ndarray  # (count, total dim), views concatenated in VIEW_ORDER

    def vectors(self):
        offsets = np.cumsum([0] + [self.dims[v] for v in VIEW_ORDER])
        for tid, row in zip(self.ids, self.matrix):
            yield FeatureVector(tid, {v: row[offsets[i]:offsets[i + 1]] for i, v in enumerate(VIEW_ORDER)})


def write_features(fs: FeatureSet, path) -> None:
    path = Path(path)
    payload = path.with_suffix(".bin")
    payload.write_bytes(np.ascontiguousarray(fs.matrix, dtype="<f4").tobytes())
    header = {
        "views": list(VIEW_ORDER),
        "dims": {v: int(fs.dims[v]) for v in VIEW_ORDER},
        "count": len(fs.ids),
        "ids": list(fs.ids),
        "labels": list(fs.labels),
        "classes": sorted({lab for lab in fs.labels if lab is not None}),
        "payload": payload.name,
    }
    path.write_text(json.dumps(header, indent=2), encoding="utf-8")


def read_features(path) -> FeatureSet:
    path = Path(path)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
        views = header["views"]
        dims = {v: int(header["dims"][v]) for v in views}
        count = int(header["count"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad feature header: {exc}", path=path) from None
    if tuple(views) != VIEW_ORDER:
        raise ParseError(f"feature views must be {VIEW_ORDER}, got {views}", path=path)
    total = sum(dims.values())
    raw = np.fromfile(path.parent / header.get("payload", path.with_suffix(".bin").name), dtype="<f4")
    if raw.size != count * total:
        raise ParseError("feature payload size does not match header", path=path)
    labels = [normalize_species(lab) for lab in header.get("labels", [None] * count)]
    return FeatureSet(list(header["ids"]), labels, dims, raw.reshape(count, total).astype(float))
