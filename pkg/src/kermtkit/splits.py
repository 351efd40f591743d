"""Train/test split protocols and training-set downsampling."""

from __future__ import annotations

import datetime as _dt
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConvergenceFailure,
    CorruptFile,
    InsufficientEligibleRows,
    MissingDate,
    TooSmall,
    UnknownTask,
    UnparseableDate,
)

log = logging.getLogger(__name__)

TRAIN, TEST = "train", "test"


def dataset_hash(smiles: Sequence[str]) -> str:
    h = hashlib.sha256()
    for s in smiles:
        h.update(s.encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


@dataclass
class SplitManifest:
    smiles: list[str]
    folds: list[str]
    method: str
    seed: int | None = None
    parameters: dict = field(default_factory=dict)
    data_hash: str = ""
    cluster_ids: list[int] | None = None
    dates: list[str] | None = None

    def indices(self, fold: str) -> np.ndarray:
        return np.array([i for i, f in enumerate(self.folds) if f == fold], dtype=np.int64)

    @property
    def train_indices(self) -> np.ndarray:
        return self.indices(TRAIN)

    @property
    def test_indices(self) -> np.ndarray:
        return self.indices(TEST)

    def validate(self) -> None:
        """Folds are exhaustive, and no SMILES appears in both folds."""
        if len(self.folds) != len(self.smiles):
            raise ValueError("manifest fold list does not cover the dataset")
        if set(self.folds) - {TRAIN, TEST}:
            raise ValueError(f"unknown fold labels {set(self.folds) - {TRAIN, TEST}}")
        train = {s for s, f in zip(self.smiles, self.folds) if f == TRAIN}
        test = {s for s, f in zip(self.smiles, self.folds) if f == TEST}
        overlap = train & test
        if overlap:
            raise ValueError(f"{len(overlap)} SMILES appear in both folds")

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        params = ";".join(f"{k}={v}" for k, v in sorted(self.parameters.items()))
        buf.write(f"# method={self.method} seed={self.seed} data_hash={self.data_hash} params={params}\n")
        cols = ["smiles", "fold"]
        if self.cluster_ids is not None:
            cols.append("cluster_id")
        if self.dates is not None:
            cols.append("date")
        buf.write(",".join(cols) + "\n")
        for i, (s, f) in enumerate(zip(self.smiles, self.folds)):
            row = [s, f]
            if self.cluster_ids is not None:
                row.append(str(self.cluster_ids[i]))
            if self.dates is not None:
                row.append(self.dates[i])
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def save(self, path, header_lines: Sequence[str] = ()) -> None:
        Path(path).write_text(self.to_csv(header_lines))

    @classmethod
    def load(cls, path) -> "SplitManifest":
        meta: dict[str, str] = {}
        rows = []
        columns = None
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                if "method=" in line:
                    for part in line[1:].split():
                        if "=" in part:
                            k, v = part.split("=", 1)
                            meta[k] = v
                continue
            if not line.strip():
                continue
            if columns is None:
                columns = line.split(",")
                continue
            rows.append(dict(zip(columns, line.split(","))))
        if columns is None or "smiles" not in columns or "fold" not in columns:
            raise CorruptFile(f"{path}: manifest lacks smiles/fold columns")
        params = {}
        if meta.get("params"):
            params = dict(p.split("=", 1) for p in meta["params"].split(";") if p)
        seed = meta.get("seed")
        return cls(
            smiles=[r["smiles"] for r in rows],
            folds=[r["fold"] for r in rows],
            method=meta.get("method", "unknown"),
            seed=None if seed in (None, "None") else int(seed),
            parameters=params,
            data_hash=meta.get("data_hash", ""),
            cluster_ids=[int(r["cluster_id"]) for r in rows] if "cluster_id" in columns else None,
            dates=[r["date"] for r in rows] if "date" in columns else None,
        )


# -- temporal -----------------------------------------------------------------


def _parse_date(text) -> _dt.date:
    if text is None or (isinstance(text, float) and np.isnan(text)) or str(text).strip() == "":
        raise MissingDate("molecule without a date")
    try:
        return _dt.date.fromisoformat(str(text).strip()[:10])
    except ValueError:
        raise UnparseableDate(f"cannot parse date {text!r}") from None


def temporal_split(smiles: Sequence[str], dates: Sequence[str], test_fraction: float = 0.2) -> SplitManifest:
    """Newest molecules go to test.

    The cutoff is the latest date such that at least ``test_fraction`` of
    the molecules are strictly newer; molecules on the cutoff date train.
    """
    parsed = [_parse_date(d) for d in dates]
    n = len(parsed)
    need = int(np.ceil(test_fraction * n - 1e-12))
    distinct = sorted(set(parsed))
    cutoff = None
    for d in reversed(distinct):
        if sum(1 for p in parsed if p > d) >= need:
            cutoff = d
            break
    params = {"test_fraction": test_fraction}
    if len(distinct) == 1 or cutoff is None or need == 0:
        log.warning("temporal split is degenerate: no date variation, every molecule goes to train")
        folds = [TRAIN] * n
        params["degenerate"] = True
        cutoff = distinct[-1] if distinct else None
    else:
        folds = [TEST if p > cutoff else TRAIN for p in parsed]
        if not any(f == TRAIN for f in folds):
            log.warning("temporal split is degenerate: no molecule on or before the cutoff")
    params["cutoff"] = cutoff.isoformat() if cutoff else ""
    folds = _resolve_duplicates(smiles, folds)
    return SplitManifest(list(smiles), folds, "temporal", None, params, dataset_hash(smiles), dates=[str(d) for d in dates])


def _resolve_duplicates(smiles: Sequence[str], folds: list[str]) -> list[str]:
    """Duplicated SMILES follow their first occurrence's fold."""
    first: dict[str, str] = {}
    out = []
    for s, f in zip(smiles, folds):
        out.append(first.setdefault(s, f))
    return out


# -- PCA / k-means ----------------------------------------------------------


@dataclass
class ClusterModel:
    mean: np.ndarray  # [p]
    components: np.ndarray  # [d, p], rows orthonormal
    explained_variance: np.ndarray  # [d]
    total_variance: float = 0.0
    centroids: np.ndarray | None = None  # [k, d]
    assignments: np.ndarray | None = None  # [n]

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        return self.explained_variance / self.total_variance if self.total_variance > 0 else np.zeros_like(self.explained_variance)


def pca_reduce(X, d: int = 32, seed: int = 0, tol: float = 1e-9, max_iter: int = 1000) -> tuple[ClusterModel, np.ndarray]:
    """Top-``d`` principal components by blocked orthogonal power iteration.

    The covariance is formed over non-constant columns only. A block of
    ``d + 8`` seeded start vectors is iterated with QR re-orthonormalization
    and Rayleigh-Ritz rotation until every leading Ritz pair has residual
    ``||C v - l v|| <= tol * l_max`` (at most ``max_iter`` sweeps per
    requested component).
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n <= d:
        raise TooSmall(f"need more rows ({n}) than components ({d})")
    mean = X.mean(axis=0)
    Xc = X - mean
    active = np.flatnonzero(Xc.var(axis=0) > 0)
    components = np.zeros((d, p))
    if active.size == 0:
        model = ClusterModel(mean, components, np.zeros(d), 0.0)
        return model, np.zeros((n, d))
    A = Xc[:, active]
    C = A.T @ A / (n - 1)
    total = float(np.trace(C))
    q = C.shape[0]
    d_eff = min(d, q)
    block = min(q, d_eff + 8)
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((q, block)))
    scale = max(np.abs(C).sum(axis=1).max(), 1e-300)
    theta = np.zeros(block)
    converged = False
    for _ in range(max_iter * d_eff):
        W = C @ V
        V, _ = np.linalg.qr(W)
        T = V.T @ C @ V
        theta, S = np.linalg.eigh((T + T.T) / 2)
        order = np.argsort(theta)[::-1]
        theta, S = theta[order], S[:, order]
        V = V @ S
        R = C @ V[:, :d_eff] - V[:, :d_eff] * theta[:d_eff]
        if np.linalg.norm(R, axis=0).max() <= tol * scale:
            converged = True
            break
    if not converged:
        raise ConvergenceFailure(f"PCA did not converge in {max_iter} iterations per component")
    vecs = V[:, :d_eff]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(d_eff)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    components[:d_eff, active] = vecs.T
    explained = np.zeros(d)
    explained[:d_eff] = np.maximum(theta[:d_eff], 0.0)
    model = ClusterModel(mean, components, explained, total)
    return model, model.transform(X)


def _sq_dists(X, centroids):
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans(X, k: int = 5, seed: int = 0, max_iter: int = 300, history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding followed by Lloyd iterations to an assignment fixpoint.

    Empty clusters are repaired by moving in the point farthest from its
    centroid. Appends the inertia after each iteration to ``history`` if given.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise TooSmall(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest = ((X - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centroids[c] = X[idx]
        closest = np.minimum(closest, ((X - centroids[c]) ** 2).sum(axis=1))

    assign = _sq_dists(X, centroids).argmin(axis=1)
    for _ in range(max_iter):
        assign = _repair_empty(X, assign, centroids, k)
        for c in range(k):
            centroids[c] = X[assign == c].mean(axis=0)
        dist = _sq_dists(X, centroids)
        new = dist.argmin(axis=1)
        # keep the current label on exact ties so the loop reaches a fixpoint
        keep = dist[np.arange(n), assign] <= dist[np.arange(n), new]
        new = np.where(keep, assign, new)
        if history is not None:
            history.append(float(dist[np.arange(n), new].sum()))
        if np.array_equal(new, assign):
            break
        assign = new
    assign = _repair_empty(X, assign, centroids, k)
    for c in range(k):
        centroids[c] = X[assign == c].mean(axis=0)
    return assign, centroids


def _repair_empty(X, assign, centroids, k):
    assign = assign.copy()
    for c in range(k):
        if np.any(assign == c):
            continue
        d = ((X - centroids[assign]) ** 2).sum(axis=1)
        counts = np.bincount(assign, minlength=k)
        d[counts[assign] <= 1] = -1.0  # never empty another cluster
        far = int(d.argmax())
        assign[far] = c
        centroids[c] = X[far]
    return assign


def kmeans_inertia(X, assign, centroids) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(((X - centroids[assign]) ** 2).sum())


def cluster_split(
    smiles: Sequence[str],
    k: int = 5,
    seed: int = 0,
    pca_dim: int = 32,
    test_fraction: float = 0.2,
    fingerprints: np.ndarray | None = None,
) -> tuple[SplitManifest, ClusterModel]:
    """Hold out the k-means cluster whose size is closest to ``test_fraction`` of the data.

    Clustering runs on PCA-reduced 2048-bit radius-2 Morgan fingerprints;
    duplicated SMILES share a fingerprint and therefore a cluster.
    """
    from .fingerprints import morgan_fingerprint
    from .smiles import parse_smiles

    if fingerprints is None:
        fingerprints = np.stack(
            [np.unpackbits(morgan_fingerprint(parse_smiles(s), 2, 2048).words.view(np.uint8), bitorder="little") for s in smiles]
        ).astype(np.float64)
    n = len(smiles)
    d = min(pca_dim, n - 1)
    model, reduced = pca_reduce(fingerprints, d=d, seed=seed)
    assign, centroids = kmeans(reduced, k=k, seed=seed)
    model.centroids, model.assignments = centroids, assign
    sizes = np.bincount(assign, minlength=k)
    target = test_fraction * n
    test_cluster = int(np.argmin(np.abs(sizes - target)))  # argmin picks the lower index on ties
    folds = [TEST if a == test_cluster else TRAIN for a in assign]
    params = {
        "k": k,
        "pca_dim": d,
        "test_cluster": test_cluster,
        "cluster_sizes": "/".join(str(s) for s in sizes),
        "init": "kmeans++",
    }
    manifest = SplitManifest(list(smiles), folds, "cluster", seed, params, dataset_hash(smiles), cluster_ids=[int(a) for a in assign])
    return manifest, model


def random_split(smiles: Sequence[str], test_fraction: float = 0.2, seed: int = 0) -> SplitManifest:
    """Seeded random split over unique SMILES (duplicates stay together)."""
    unique = list(dict.fromkeys(smiles))
    rng = np.random.default_rng(seed)
    n_test = int(round(test_fraction * len(unique)))
    test = set(np.asarray(unique, dtype=object)[rng.permutation(len(unique))[:n_test]].tolist())
    folds = [TEST if s in test else TRAIN for s in smiles]
    return SplitManifest(list(smiles), folds, "random", seed, {"test_fraction": test_fraction}, dataset_hash(smiles))


# -- downsampling -----------------------------------------------------------

DOWNSAMPLE_FRACTIONS = (0.002, 0.005, 0.01, 0.02, 0.10)


def downsample_rows(train_indices, observed: np.ndarray, p: float, min_tasks_observed: int = 1, seed: int = 0) -> np.ndarray:
    """Uniformly sample ``round(p * |train|)`` train rows among those with enough observed tasks.

    ``observed`` is the boolean mask of the full table; only train rows are touched.
    """
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    if p == 1.0 and min_tasks_observed <= 0:
        return train_indices.copy()
    size = int(round(p * len(train_indices)))
    eligible = train_indices[observed[train_indices].sum(axis=1) >= min_tasks_observed]
    if p == 1.0 and len(eligible) == len(train_indices):
        return train_indices.copy()
    if len(eligible) < size:
        raise InsufficientEligibleRows(f"{len(eligible)} eligible rows, need {size}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(eligible, size=size, replace=False))


def select_tasks(table, tasks: Sequence[str], train_indices=None):
    """Project ``table`` onto ``tasks``.

    Returns ``(reduced_table, kept_train_indices)``; train rows left without
    any observation are dropped, test rows are kept as they are.
    """
    missing = [t for t in tasks if t not in table.task_names]
    if missing:
        raise UnknownTask(f"unknown task(s): {missing}")
    cols = [table.task_names.index(t) for t in tasks]
    reduced = table.select_columns(cols)
    if train_indices is None:
        return reduced, None
    train_indices = np.asarray(train_indices, dtype=np.int64)
    keep = reduced.observed[train_indices].any(axis=1)
    return reduced, train_indices[keep]


def train_val_split(train_indices, fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform split of the train fold into (train, validation)."""
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if len(train_indices) < 10:
        raise TooSmall(f"train fold has {len(train_indices)} rows; at least 10 needed")
    rng = np.random.default_rng(seed)
    n_val = int(round(fraction * len(train_indices)))
    perm = rng.permutation(len(train_indices))
    val = np.sort(train_indices[perm[:n_val]])
    train = np.sort(train_indices[perm[n_val:]])
    return train, val
