"""Regression models under test and the external-model wire protocol.

Built-in models predict the minimum pressure of a pumping event from the
pressures observed during the first minute (60 values at 1 Hz). All three
built-ins standardize features with statistics taken from the training data
only, and none of them clamps predictions: infeasible (negative) outputs
must stay visible to the feasibility scenario.

External models plug in over line-delimited JSON on stdin/stdout of a child
process, making the test harness model-agnostic.
"""

from __future__ import annotations

import json
import math
import os
import selectors
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .augmentation import AugmentedSet, first_minute_features
from .dataio import GroundTruthSet

__all__ = [
    "FEATURE_DIM",
    "Dataset",
    "TrainedModel",
    "ExternalModelSpec",
    "ProtocolError",
    "split_classic",
    "train",
    "wrap_external",
    "predict",
    "predict_batch",
    "grid_search",
    "mlp_loss_and_grad",
    "dataset_from_ground_truth",
    "dataset_from_augmented",
]

FEATURE_DIM = 60
BUILTIN_KINDS = ("ridge", "knn", "mlp")


@dataclass(frozen=True)
class Dataset:
    """Feature rows and their regression targets."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        if X.ndim != 2 or y.ndim != 1:
            raise ValueError("features must be 2-D and targets 1-D")
        if len(X) != len(y):
            raise ValueError(f"{len(X)} feature rows vs {len(y)} targets")
        if len(X) < 1:
            raise ValueError("dataset must contain at least one row")

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class TrainedModel:
    """A fitted model: kind, opaque parameters, and training metadata."""

    kind: str
    params: dict
    training_label: str
    feature_mean: np.ndarray
    feature_std: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.feature_mean)


@dataclass(frozen=True)
class ExternalModelSpec:
    """How to launch and talk to an external model process."""

    argv: tuple
    timeout_s: float = 30.0
    batch_size: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "argv", tuple(self.argv))
        if not self.argv:
            raise ValueError("argv must not be empty")
        if self.timeout_s <= 0 or self.batch_size < 1:
            raise ValueError("invalid timeout or batch size")


class ProtocolError(RuntimeError):
    """External model violated the wire protocol."""


def dataset_from_ground_truth(gts: GroundTruthSet) -> Dataset:
    """First-minute features and minimum-pressure targets of a corpus.

    Events shorter than one minute carry no usable feature window and are
    skipped.
    """
    feats, targets = [], []
    for curve in gts.curves:
        if curve.duration_s < FEATURE_DIM:
            continue
        feats.append(first_minute_features(curve))
        targets.append(curve.min_pressure)
    if not feats:
        raise ValueError("no events of at least 60 s in the corpus")
    return Dataset(np.stack(feats), np.array(targets))


def dataset_from_augmented(aset: AugmentedSet) -> Dataset:
    return Dataset(aset.feature_matrix(), aset.targets())


def split_classic(data: Dataset, ratio: float, seed: int):
    """Seeded random split into (train, test) with ceil(ratio*n) training rows."""
    n = len(data)
    if n < 5:
        raise ValueError(f"need at least 5 rows to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n_train = math.ceil(ratio * n)
    if n_train in (0, n):
        raise ValueError(f"split ratio {ratio} leaves an empty side for n={n}")
    order = np.random.default_rng(seed).permutation(n)
    tr, te = order[:n_train], order[n_train:]
    return (
        Dataset(data.features[tr], data.targets[tr]),
        Dataset(data.features[te], data.targets[te]),
    )


def _standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant columns pass through
    return mean, std


def train(kind: str, data: Dataset, hyperparams: dict | None = None,
          seed: int = 0, training_label: str = "") -> TrainedModel:
    """Fit a built-in model; deterministic for a fixed seed."""
    hp = dict(hyperparams or {})
    if kind not in BUILTIN_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    mean, std = _standardizer(data.features)
    Xs = (data.features - mean) / std
    y = data.targets

    if kind == "ridge":
        params = _fit_ridge(Xs, y, lam=max(float(hp.get("lambda", 1e-2)), 1e-8))
    elif kind == "knn":
        params = {"k": int(hp.get("k", 5)), "X": Xs.copy(), "y": y.copy()}
        if params["k"] < 1:
            raise ValueError("k must be >= 1")
    else:
        params = _fit_mlp(
            Xs,
            y,
            hidden=int(hp.get("hidden", 10)),
            lr=float(hp.get("lr", 0.05)),
            epochs=int(hp.get("epochs", 200)),
            batch_size=int(hp.get("batch_size", 32)),
            seed=seed,
        )
    return TrainedModel(
        kind=kind,
        params=params,
        training_label=training_label,
        feature_mean=mean,
        feature_std=std,
    )


def wrap_external(spec: ExternalModelSpec, training_label: str = "",
                  n_features: int = FEATURE_DIM) -> TrainedModel:
    """Adapter presenting an external process as a TrainedModel."""
    return TrainedModel(
        kind="external",
        params={"endpoint": spec},
        training_label=training_label,
        feature_mean=np.zeros(n_features),
        feature_std=np.ones(n_features),
    )


def _fit_ridge(Xs: np.ndarray, y: np.ndarray, lam: float) -> dict:
    # minimizes mean((Xs w + b - y)^2) + lam * ||w||^2; standardized columns
    # have zero mean, so the intercept decouples to mean(y)
    n, d = Xs.shape
    intercept = float(np.mean(y))
    A = Xs.T @ Xs / n + lam * np.eye(d)
    rhs = Xs.T @ (y - intercept) / n
    w = np.linalg.solve(A, rhs)
    return {"w": w, "intercept": intercept, "lambda": lam}


def _fit_mlp(Xs, y, hidden, lr, epochs, batch_size, seed) -> dict:
    rng = np.random.default_rng(seed)
    n, d = Xs.shape
    y_mean, y_std = float(np.mean(y)), float(np.std(y)) or 1.0
    ys = (y - y_mean) / y_std
    params = {
        "W1": rng.normal(0.0, math.sqrt(2.0 / d), size=(d, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0.0, math.sqrt(2.0 / hidden), size=(hidden, 1)),
        "b2": np.zeros(1),
    }
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, grads = mlp_loss_and_grad(params, Xs[idx], ys[idx])
            for key in params:
                params[key] = params[key] - lr * grads[key]
    params["y_mean"] = y_mean
    params["y_std"] = y_std
    return params


def mlp_loss_and_grad(params: dict, X: np.ndarray, y: np.ndarray):
    """Half-MSE loss of the one-hidden-layer ReLU net and its gradients."""
    n = len(X)
    pre = X @ params["W1"] + params["b1"]
    h = np.maximum(pre, 0.0)
    out = (h @ params["W2"] + params["b2"]).ravel()
    err = out - y
    loss = 0.5 * float(np.mean(err**2))

    d_out = (err / n)[:, None]
    grads = {
        "W2": h.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    d_h = d_out @ params["W2"].T
    d_pre = d_h * (pre > 0)
    grads["W1"] = X.T @ d_pre
    grads["b1"] = d_pre.sum(axis=0)
    return loss, grads


def _mlp_forward(params: dict, Xs: np.ndarray) -> np.ndarray:
    h = np.maximum(Xs @ params["W1"] + params["b1"], 0.0)
    out = (h @ params["W2"] + params["b2"]).ravel()
    return out * params["y_std"] + params["y_mean"]


def predict_batch(model: TrainedModel, X) -> np.ndarray:
    """Predictions for a batch of feature rows, order-preserving."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected feature rows of length {model.n_features}, got {X.shape}"
        )
    if model.kind == "external":
        return external_predict_batch(model.params["endpoint"], X)
    Xs = (X - model.feature_mean) / model.feature_std
    if model.kind == "ridge":
        return Xs @ model.params["w"] + model.params["intercept"]
    if model.kind == "knn":
        return _knn_predict(model.params, Xs)
    if model.kind == "mlp":
        return _mlp_forward(model.params, Xs)
    raise ValueError(f"unknown model kind {model.kind!r}")


def predict(model: TrainedModel, x) -> float:
    """Prediction for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ValueError(f"expected a feature vector of length {model.n_features}")
    return float(predict_batch(model, x[None, :])[0])


def _knn_predict(params: dict, Xs: np.ndarray) -> np.ndarray:
    train_X, train_y, k = params["X"], params["y"], params["k"]
    k = min(k, len(train_y))
    d2 = (
        np.sum(Xs**2, axis=1)[:, None]
        - 2.0 * Xs @ train_X.T
        + np.sum(train_X**2, axis=1)[None, :]
    )
    # stable argsort keeps ties deterministic by training index
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return train_y[nearest].mean(axis=1)


def grid_search(kind: str, data: Dataset, grid: dict, seed: int = 0,
                folds: int = 3) -> dict:
    """Deterministic k-fold search over a small hyperparameter grid.

    Returns the best single-parameter assignment by mean absolute error;
    ties resolve to the earliest grid entry.
    """
    if not grid:
        return {}
    (name, values), = grid.items()
    n = len(data)
    folds = min(folds, n)
    order = np.random.default_rng(seed).permutation(n)
    best_value, best_score = None, math.inf
    for value in values:
        errors = []
        for f in range(folds):
            val_idx = order[f::folds]
            tr_idx = np.setdiff1d(order, val_idx)
            if len(tr_idx) == 0 or len(val_idx) == 0:
                continue
            model = train(
                kind,
                Dataset(data.features[tr_idx], data.targets[tr_idx]),
                {name: value},
                seed=seed,
            )
            pred = predict_batch(model, data.features[val_idx])
            errors.append(float(np.mean(np.abs(pred - data.targets[val_idx]))))
        score = float(np.mean(errors)) if errors else math.inf
        if score < best_score:
            best_value, best_score = value, score
    return {name: best_value}


# ---------------------------------------------------------------------------
# external-model wire protocol: one JSON object per line on stdin/stdout.
# request  {"id": <int>, "features": [...]}     (harness -> model)
# response {"id": <int>, "prediction": <num>}   (model -> harness)
# both sides terminate a batch with {"end": true}.
# ---------------------------------------------------------------------------


def external_predict_batch(spec: ExternalModelSpec, inputs) -> np.ndarray:
    """Run every input through an external model process, order-preserving.

    Inputs are sent in batches of at most `spec.batch_size`; each batch must
    be answered within `spec.timeout_s`. Any protocol violation (malformed
    line, unknown/duplicate id, non-finite prediction, early exit, timeout)
    raises ProtocolError; there are never silent partial results.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("inputs must be a non-empty 2-D array")
    proc = subprocess.Popen(
        list(spec.argv),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
    )
    results = np.full(len(X), np.nan)
    try:
        next_id = 0
        while next_id < len(X):
            batch_ids = range(next_id, min(next_id + spec.batch_size, len(X)))
            _run_batch(proc, spec, X, batch_ids, results)
            next_id = batch_ids.stop
    finally:
        _shutdown(proc)
    return results


def _run_batch(proc, spec, X, batch_ids, results) -> None:
    expected = set(batch_ids)
    deadline = time.monotonic() + spec.timeout_s

    def send():
        try:
            for i in batch_ids:
                line = json.dumps({"id": i, "features": X[i].tolist()})
                proc.stdin.write(line.encode() + b"\n")
            proc.stdin.write(b'{"end": true}\n')
            proc.stdin.flush()
        except OSError:
            pass  # reader notices EOF / missing responses

    writer = threading.Thread(target=send, daemon=True)
    writer.start()

    for line in _read_lines(proc, deadline):
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line {line!r}: {exc}") from exc
        if msg.get("end") is True:
            break
        if "id" not in msg or "prediction" not in msg:
            raise ProtocolError(f"response missing id/prediction: {line!r}")
        rid = msg["id"]
        if rid not in expected:
            raise ProtocolError(f"unexpected or duplicate response id {rid}")
        value = msg["prediction"]
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ProtocolError(f"non-finite prediction for request id {rid}")
        expected.discard(rid)
        results[rid] = float(value)
        if not expected:
            break
    if expected:
        missing = min(expected)
        raise ProtocolError(
            f"model terminated batch early; first missing request id {missing}"
        )


def _read_lines(proc, deadline):
    """Yield decoded stdout lines until EOF, raising on deadline expiry."""
    sel = selectors.DefaultSelector()
    sel.register(proc.stdout, selectors.EVENT_READ)
    buffer = b""
    try:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolError("external model timed out answering a batch")
            if not sel.select(timeout=min(remaining, 0.25)):
                continue
            chunk = os.read(proc.stdout.fileno(), 65536)
            if not chunk:
                return  # EOF: process closed stdout or died
            buffer += chunk
            while b"\n" in buffer:
                line, buffer = buffer.split(b"\n", 1)
                if line.strip():
                    yield line.decode()
    finally:
        sel.close()


def _shutdown(proc) -> None:
    try:
        if proc.stdin:
            proc.stdin.close()
    except OSError:
        pass
    try:
        proc.wait(timeout=2.0)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()
