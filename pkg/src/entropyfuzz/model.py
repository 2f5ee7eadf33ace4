"""Forward model from input bytes to execution-path labels.

Inputs are featurized as byte-bigram count histograms (index
``first * 256 + second``). One binary logistic regression per observed
path (class vs rest, no penalty) gives independent sigmoid scores, which
are normalized by their sum into a distribution over paths. Candidates are
ranked by the Shannon entropy of that distribution.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .coverage import PathId

log = logging.getLogger(__name__)

N_BIGRAMS = 1 << 16
REL_TOL = 1e-6
GRAD_TOL = 1e-5
MAX_PASSES = 500
MODEL_FORMAT = "entropyfuzz-pathmodel/1"

FeatureVector = dict  # bigram index -> count, absent means zero


def bigram_counts(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct bigram indices of ``data`` and their counts."""
    if len(data) < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    a = np.frombuffer(data, np.uint8).astype(np.int64)
    return np.unique(a[:-1] * 256 + a[1:], return_counts=True)


def featurize(data: bytes) -> FeatureVector:
    idx, cnt = bigram_counts(data)
    return dict(zip(idx.tolist(), cnt.tolist()))


# -- training store -------------------------------------------------------------


@dataclass(frozen=True)
class TrainingStore:
    """Append-only (features, path) examples, kept as a CSR matrix.

    Columns and classes are numbered in order of first appearance so a
    grown store extends, never reorders, an earlier one. Instances are
    immutable; ``extended`` returns a new store.
    """

    col_of: np.ndarray = field(default_factory=lambda: np.full(N_BIGRAMS, -1, np.int64))
    columns: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    labels: tuple[PathId, ...] = ()
    indptr: np.ndarray = field(default_factory=lambda: np.zeros(1, np.int64))
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    data: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def n_examples(self) -> int:
        return len(self.y)

    def extended(self, examples: Sequence[tuple[Mapping[int, int], PathId]]) -> "TrainingStore":
        if not examples:
            return self
        col_of = self.col_of.copy()
        columns = self.columns.tolist()
        labels = list(self.labels)
        label_of = {p: i for i, p in enumerate(labels)}
        idx_parts, cnt_parts, lens, ys = [], [], [], []
        for feats, path in examples:
            idx = np.fromiter(feats.keys(), np.int64, len(feats))
            cnt = np.fromiter(feats.values(), np.float64, len(feats))
            order = np.argsort(idx, kind="stable")
            idx, cnt = idx[order], cnt[order]
            for b in idx[col_of[idx] < 0].tolist():
                col_of[b] = len(columns)
                columns.append(b)
            idx_parts.append(col_of[idx])
            cnt_parts.append(cnt)
            lens.append(len(idx))
            if path not in label_of:
                label_of[path] = len(labels)
                labels.append(path)
            ys.append(label_of[path])
        indptr = np.concatenate([self.indptr, self.indptr[-1] + np.cumsum(lens)])
        return TrainingStore(
            col_of=col_of,
            columns=np.asarray(columns, np.int64),
            labels=tuple(labels),
            indptr=indptr,
            indices=np.concatenate([self.indices, *idx_parts]),
            data=np.concatenate([self.data, *cnt_parts]),
            y=np.concatenate([self.y, np.asarray(ys, np.int64)]),
        )

    def matrix(self, bias: bool = False) -> sp.csr_matrix:
        """Examples as rows. With ``bias`` a leading column of ones is added."""
        n, d = self.n_examples, len(self.columns)
        if not bias:
            return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(n, d))
        indptr = self.indptr + np.arange(n + 1)
        lead = indptr[:-1]
        rest = np.ones(len(self.indices) + n, bool)
        rest[lead] = False
        indices = np.zeros(len(rest), np.int64)
        indices[rest] = self.indices + 1
        data = np.ones(len(rest))
        data[rest] = self.data
        return sp.csr_matrix((data, indices, indptr), shape=(n, d + 1))

    def examples(self) -> list[tuple[FeatureVector, PathId]]:
        out = []
        for r in range(self.n_examples):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            feats = {int(self.columns[c]): int(v) for c, v in zip(self.indices[lo:hi], self.data[lo:hi])}
            out.append((feats, self.labels[self.y[r]]))
        return out


# -- loss and optimizer -------------------------------------------------------------


def ova_loss_grad(W: np.ndarray, X: sp.csr_matrix, XT: sp.csr_matrix, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class unpenalized log loss and gradient of every class-vs-rest problem.

    ``X`` carries a leading column of ones, so the first row of the
    (d + 1, P) matrix ``W`` holds the biases; ``y`` holds class indices.
    Returns (losses of shape (P,), gradient shaped like ``W``).
    """
    Z = X @ W
    return _losses(Z, y), XT @ _residual(Z, y)


def _losses(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, P = Z.shape
    pos = np.bincount(y, weights=Z[np.arange(n), y], minlength=P)
    return _softplus_colsum(Z) - pos


def _softplus_colsum(Z: np.ndarray) -> np.ndarray:
    """Column sums of log(1 + exp(z)), stable for either sign of z."""
    sp_ = np.log1p(np.exp(-np.abs(Z)))
    sp_ += np.maximum(Z, 0)
    return sp_.sum(axis=0, dtype=np.float64)


def _residual(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    R = expit(Z)  # keeps float32 input in float32
    R[np.arange(len(y)), y] -= 1.0
    return R


def _coldot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # float32 accumulation is accurate enough for step-size scalars
    return np.einsum("ij,ij->j", A, B).astype(np.float64)


def with_bias_column(X: sp.csr_matrix) -> sp.csr_matrix:
    return sp.hstack([np.ones((X.shape[0], 1)), X], format="csr")


def fit_ova(
    X: sp.csr_matrix,
    y: np.ndarray,
    P: int,
    W0: Optional[np.ndarray] = None,
    max_passes: int = MAX_PASSES,
    tol: float = REL_TOL,
    memory: int = 5,
) -> tuple[np.ndarray, int]:
    """Fit P independent class-vs-rest logistic regressions by L-BFGS.

    Every class keeps its own curvature pairs, step length and stopping
    test: a class stops once its loss changes by less than ``tol``
    relative to max(|loss|, 1) between passes, or once its line search
    fails. The line search runs along ``X @ direction`` in logit space, so
    a pass costs one product with ``X`` and one with its transpose however
    many step halvings it takes. ``X`` must already carry the bias column.
    Returns the (d + 1, P) weights and the number of passes made.
    """
    fit = _fit(X, y, P, W0, max_passes, tol, memory)
    return fit.W, fit.passes


@dataclass(frozen=True)
class _FitState:
    """Weights, the logits, gradient and losses they produce, and L-BFGS pairs."""

    W: np.ndarray
    Z: np.ndarray
    G: np.ndarray
    f: np.ndarray
    passes: int = 0
    hist: tuple = ()


def _fit(
    X: sp.csr_matrix,
    y: np.ndarray,
    P: int,
    W0: Optional[np.ndarray] = None,
    max_passes: int = MAX_PASSES,
    tol: float = REL_TOL,
    memory: int = 5,
    start: Optional[_FitState] = None,
    dtype=np.float64,
) -> _FitState:
    dt = np.dtype(dtype)
    X = X.astype(dt, copy=False)
    n, d1 = X.shape
    XT = X.T.tocsr()
    # Jacobi preconditioner: inverse of the bound 0.25 * sum_i x_ij^2 on
    # each diagonal Hessian entry, shared by all classes
    inv_h = (1.0 / np.maximum(0.25 * np.asarray(XT.multiply(XT).sum(axis=1)).ravel(), 1e-12)).astype(dt)[:, None]
    if start is not None:
        # the caller hands over fresh arrays, so update them in place
        W, Z, G, f = start.W, start.Z, start.G, start.f
    else:
        W = np.zeros((d1, P), dt) if W0 is None else np.array(W0, dtype=dt)
        Z = X @ W
        f = _losses(Z, y)
        G = XT @ _residual(Z, y)
    active = np.ones(P, bool)
    hist: list[tuple] = list(start.hist[len(start.hist) - memory :]) if start is not None and memory else []
    passes = 0
    while passes < max_passes and active.any():
        passes += 1
        # two-loop recursion with one scalar per class; a pair stored
        # before the model grew acts on the leading block only
        D = -G
        alphas = []
        for S, Yd, rho, _ in reversed(hist):
            Db = D[: S.shape[0], : S.shape[1]]
            a = rho * _coldot(S, Db)
            Db -= a.astype(dt) * Yd
            alphas.append(a)
        gamma = np.zeros(P)
        if hist:
            g = hist[-1][3]
            gamma[: len(g)] = g
        gamma[gamma <= 0.0] = 1.0
        D *= inv_h
        D *= gamma.astype(dt)
        for (S, Yd, rho, _), a in zip(hist, reversed(alphas)):
            Db = D[: S.shape[0], : S.shape[1]]
            Db += (a - rho * _coldot(Yd, Db)).astype(dt) * S
        slope = _coldot(G, D)
        bad = active & (slope >= 0.0)
        if bad.any():
            Gb = G[:, bad]
            D[:, bad] = -Gb * inv_h
            slope[bad] = _coldot(Gb, D[:, bad])
        if not active.all():
            D[:, ~active] = 0.0
            slope[~active] = 0.0
        # backtracking Armijo search per class, in logit space
        XD = X @ D
        step = np.where(active, 1.0, 0.0)
        f_new = _losses(Z + XD, y)
        fail = active & ~(f_new <= f + 1e-4 * step * slope)
        for _ in range(40):
            if not fail.any():
                break
            step[fail] *= 0.5
            cols = np.flatnonzero(fail)
            f_new[cols] = _sub_losses(Z[:, cols] + step[cols].astype(dt) * XD[:, cols], y, cols)
            fail[cols] = ~(f_new[cols] <= f[cols] + 1e-4 * step[cols] * slope[cols])
        step[fail] = 0.0
        f_new[~active | fail] = f[~active | fail]
        step_dt = step.astype(dt)
        XD *= step_dt
        Z += XD
        D *= step_dt
        W += D
        G_new = XT @ _residual(Z, y)
        rel = (f - f_new) / np.maximum(np.abs(f), 1.0)
        # a small loss change alone also happens on ill-conditioned stretches
        # far from the optimum, so a class must have a small gradient too
        settled = (rel < tol) & (np.abs(G_new).max(axis=0) <= GRAD_TOL)
        active &= ~fail & ~settled
        f = f_new
        S, Yd = D, G_new - G
        sy = _coldot(S, Yd)
        yy = _coldot(Yd * inv_h, Yd)
        good = (sy > 1e-12) & (yy > 0.0)
        rho = np.where(good, 1.0 / np.where(good, sy, 1.0), 0.0)
        gamma = np.where(good, sy / np.where(good, yy, 1.0), 0.0)
        if not good.all():
            S[:, ~good] = 0.0
            Yd[:, ~good] = 0.0
        hist.append((S, Yd, rho, gamma))
        del hist[: max(len(hist) - memory, 0)]
        G = G_new
    return _FitState(W, Z, G, f, passes, tuple(hist))


def _sub_losses(Zc: np.ndarray, y: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Losses of the classes ``cols`` given their logit columns ``Zc``."""
    pos_col = np.full(int(cols.max()) + 1, -1)
    pos_col[cols] = np.arange(len(cols))
    k = pos_col[np.minimum(y, len(pos_col) - 1)]
    rows = np.flatnonzero((y < len(pos_col)) & (k >= 0))
    pos = np.bincount(k[rows], weights=Zc[rows, k[rows]], minlength=len(cols))
    return _softplus_colsum(Zc) - pos


# -- model ------------------------------------------------------------------------


@dataclass(frozen=True)
class PathModel:
    """One-vs-rest logistic regression over the paths seen so far.

    ``coef`` has a leading bias row followed by one row per known bigram
    column (``store.columns``), and one column per class label. P = 0 is the cold-start
    model.
    """

    store: TrainingStore = field(default_factory=TrainingStore)
    coef: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))
    passes: int = 0
    fit_state: Optional[_FitState] = field(default=None, repr=False, compare=False)

    @property
    def class_labels(self) -> tuple[PathId, ...]:
        return self.store.labels

    @property
    def P(self) -> int:
        return len(self.store.labels)

    @property
    def trained_on(self) -> int:
        return self.store.n_examples

    @property
    def weights(self) -> np.ndarray:
        return self.coef[1:]

    @property
    def biases(self) -> np.ndarray:
        return self.coef[0]

    def class_weights(self, label: PathId) -> tuple[dict[int, float], float]:
        """Sparse bigram weights and bias of one class."""
        c = self.class_labels.index(label)
        w = self.weights[:, c]
        nz = np.flatnonzero(w)
        return {int(self.store.columns[i]): float(w[i]) for i in nz}, float(self.biases[c])

    def retrain(
        self,
        new_examples: Sequence[tuple[Mapping[int, int], PathId]],
        warm_start: bool = True,
        max_passes: int = MAX_PASSES,
        dtype=np.float64,
        memory: int = 5,
    ) -> "PathModel":
        """Fit on every example seen so far plus ``new_examples``.

        With ``warm_start`` the optimizer resumes from the current weights
        (new bigrams and new paths start at zero); otherwise it restarts from
        zero exactly as :func:`train` would. ``max_passes`` bounds the
        optimizer passes of this call, ``dtype`` sets the working precision
        of the weights, logits and gradients, and ``memory`` is the number of
        L-BFGS curvature pairs kept (they carry over between warm retrains).
        """
        if not new_examples:
            return self
        store = self.store.extended(new_examples)
        d, P = len(store.columns), len(store.labels)
        if P <= 1:
            # a lone class normalizes to probability 1 whatever its score
            return PathModel(store, np.zeros((d + 1, P)), 0)
        X = store.matrix(bias=True).astype(dtype)
        if not warm_start or self.P <= 1:
            fit = _fit(X, store.y, P, None, max_passes, memory=memory, dtype=dtype)
        elif self.fit_state is not None:
            start = self._extend_fit(store, X)
            fit = _fit(X, store.y, P, None, max_passes, memory=memory, start=start, dtype=dtype)
        else:
            W0 = np.zeros((d + 1, P))
            W0[: self.coef.shape[0], : self.P] = self.coef
            fit = _fit(X, store.y, P, W0, max_passes, memory=memory, dtype=dtype)
        return PathModel(store, fit.W, fit.passes, fit)

    def _extend_fit(self, store: TrainingStore, X: sp.csr_matrix) -> _FitState:
        """This model's fit state carried over to the grown ``store`` exactly.

        Old rows keep their logits for old classes and score 0 for new ones
        (whose weights start at 0), so only the new rows need products. New
        bigram columns and classes only append rows and columns, so stored
        curvature pairs stay valid on the leading block.
        """
        old = self.fit_state
        dt = X.dtype
        n0, P0 = self.trained_on, self.P
        r0 = old.W.shape[0]
        n, d1, P = store.n_examples, X.shape[1], len(store.labels)
        W = np.zeros((d1, P), dt)
        W[:r0, :P0] = old.W
        X_new = X[n0:]
        y_new = store.y[n0:]
        Z = np.zeros((n, P), dt)
        Z[:n0, :P0] = old.Z
        Z_new = X_new @ W
        Z[n0:] = Z_new
        G = np.zeros((d1, P), dt)
        G[:r0, :P0] = old.G
        if P > P0:
            # residual sigma(0) - 0 on every old row for every new class
            G[:, P0:] = (0.5 * np.asarray(X[:n0].sum(axis=0)).ravel()).astype(dt)[:, None]
        G += X_new.T @ _residual(Z_new, y_new)
        f = np.empty(P)
        f[:P0] = old.f
        f[P0:] = n0 * math.log(2.0)
        f += _losses(Z_new, y_new)
        return _FitState(W, Z, G, f, 0, old.hist)

    # -- inference --

    def feature_matrix(self, inputs: Sequence[bytes]) -> sp.csr_matrix:
        """Bigram counts of ``inputs`` over this model's known columns."""
        col_of = self.store.col_of
        d = len(self.store.columns)
        if not inputs:
            return sp.csr_matrix((0, d))
        rows, cols, vals = [], [], []
        for r, data in enumerate(inputs):
            idx, cnt = bigram_counts(data)
            c = col_of[idx]
            keep = c >= 0
            rows.append(np.full(int(keep.sum()), r))
            cols.append(c[keep])
            vals.append(cnt[keep])
        return sp.csr_matrix(
            (np.concatenate(vals).astype(np.float64), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(inputs), d),
        )

    def predict_many(self, inputs: Sequence[bytes]) -> np.ndarray:
        """Path distributions for a batch of raw inputs, one row each."""
        if self.P == 0:
            raise ValueError("cold start: use cold_start_predict")
        Z = self.feature_matrix(inputs) @ self.weights + self.biases
        return normalize_sigmoids(np.atleast_2d(Z))


def normalize_sigmoids(Z: np.ndarray) -> np.ndarray:
    """Rows of sigma(z_i) / sum_j sigma(z_j), evaluated in log space."""
    log_sig = -np.logaddexp(0.0, -Z)
    log_sig -= log_sig.max(axis=1, keepdims=True)
    probs = np.exp(log_sig)
    probs /= probs.sum(axis=1, keepdims=True)
    # keep every entry strictly positive without disturbing the sum at 1e-9
    return np.maximum(probs, np.finfo(float).tiny)


def train(dataset: Sequence[tuple[Mapping[int, int], PathId]]) -> PathModel:
    """Fit from zero weights on ``dataset`` (may be empty)."""
    return PathModel().retrain(list(dataset), warm_start=False) if dataset else PathModel()


def retrain(model: PathModel, new_examples, warm_start: bool = True) -> PathModel:
    return model.retrain(new_examples, warm_start=warm_start)


def predict(model: PathModel, x: Mapping[int, int]) -> np.ndarray:
    if model.P == 0:
        raise ValueError("cold start: use cold_start_predict")
    z = model.biases.copy()
    if model.P == 1:
        return np.ones(1)
    for bigram, count in x.items():
        c = model.store.col_of[bigram]
        if c >= 0:
            z += count * model.weights[c]
    return normalize_sigmoids(z[None, :])[0]


def cold_start_predict() -> np.ndarray:
    """The degenerate distribution over the single synthetic null path."""
    return np.ones(1)


def entropy(dist) -> float:
    """Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    s = 0.0
    for p in dist:
        if p > 0.0:
            s -= p * math.log(p)
    return s


def entropies(probs: np.ndarray) -> np.ndarray:
    """Row-wise :func:`entropy` for a probability matrix."""
    p = np.asarray(probs, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


def rank_indices(scores: Sequence[float], rng: random.Random) -> list[int]:
    """Indices by descending score; exact ties fall in seeded random order."""
    order = list(range(len(scores)))
    rng.shuffle(order)
    order.sort(key=lambda i: -scores[i])
    return order


def rank(candidates: Sequence[tuple[bytes, float]], rng: random.Random) -> list[tuple[bytes, float]]:
    order = rank_indices([s for _, s in candidates], rng)
    return [candidates[i] for i in order]


# -- checkpoints ------------------------------------------------------------------


def model_to_json(model: PathModel) -> dict:
    classes = []
    for c, label in enumerate(model.class_labels):
        w = model.weights[:, c] if model.weights.size else np.zeros(0)
        nz = np.flatnonzero(w)
        order = nz[np.argsort(model.store.columns[nz], kind="stable")]
        classes.append(
            {
                "label": f"{label:016x}",
                "bias": float(model.biases[c]) if model.biases.size else 0.0,
                "weights": [[int(model.store.columns[i]), float(w[i])] for i in order],
            }
        )
    return {"format": MODEL_FORMAT, "trained_on": model.trained_on, "n_classes": model.P, "classes": classes}


def save_model(model: PathModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_json(model), fh, indent=1)
        fh.write("\n")


@dataclass(frozen=True)
class LoadedModel:
    """Inference-only model restored from a checkpoint."""

    class_labels: tuple[PathId, ...]
    biases: np.ndarray
    weights: list[dict[int, float]]
    trained_on: int = 0

    def predict(self, x: Mapping[int, int]) -> np.ndarray:
        z = self.biases.copy()
        for c, w in enumerate(self.weights):
            z[c] += sum(w.get(k, 0.0) * v for k, v in x.items())
        return normalize_sigmoids(z[None, :])[0]


def load_model(path) -> LoadedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    classes = doc["classes"]
    return LoadedModel(
        tuple(int(c["label"], 16) for c in classes),
        np.array([c["bias"] for c in classes], float),
        [{int(k): float(v) for k, v in c["weights"]} for c in classes],
        doc.get("trained_on", 0),
    )
