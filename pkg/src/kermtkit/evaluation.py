"""Regression metrics, ensemble error bars and the similarity/potency breakdowns."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateVariance, EmptyTrainSet, TaskMismatch, TooFewCoObserved
from .fingerprints import Fingerprint, max_similarity_many, morgan_fingerprint
from .smiles import parse_smiles

DEFAULT_SIMILARITY_EDGES = (0.0, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0)
DEFAULT_POTENCY_EDGES = (2.0, 3.0)
POTENCY_BINS = ("high", "medium", "low")
ENSEMBLE_SIZE = 4


def _vectors(y_true, y_pred, min_n: int = 2):
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_n:
        raise DegenerateVariance(f"need at least {min_n} points, got {a.size}")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    sa = float(np.dot(da, da))
    sb = float(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise DegenerateVariance("one of the vectors is constant")
    return float(np.dot(da, db) / np.sqrt(sa * sb))


def pearson_r2(y_true, y_pred) -> float:
    """Squared Pearson correlation between measurements and predictions."""
    a, b = _vectors(y_true, y_pred)
    r = _pearson(a, b)
    return min(1.0, r * r)


def regression_metrics(y_true, y_pred) -> tuple[float, float, float]:
    """(coefficient of determination, MAE, RMSE) in the target's own units."""
    a, b = _vectors(y_true, y_pred)
    resid = a - b
    sst = float(((a - a.mean()) ** 2).sum())
    if sst == 0.0:
        raise DegenerateVariance("targets are constant; R^2 undefined")
    r2 = 1.0 - float((resid**2).sum()) / sst
    return r2, float(np.abs(resid).mean()), float(np.sqrt((resid**2).mean()))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with tied values sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sx[stop] == sx[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def spearman(y_a, y_b) -> float:
    a = np.asarray(y_a, dtype=np.float64).ravel()
    b = np.asarray(y_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 3:
        raise TooFewCoObserved(f"spearman needs at least 3 points, got {a.size}")
    return _pearson(average_ranks(a), average_ranks(b))


@dataclass
class CrossTaskCorrelation:
    task_names: list[str]
    rho: np.ndarray  # NaN where the pair has too few co-observed molecules
    overlap: np.ndarray
    max_abs: np.ndarray  # per task, excluding itself; NaN if no valid partner


def cross_task_correlation(table, min_overlap: int = 30) -> CrossTaskCorrelation:
    """Pairwise Spearman over co-observed molecules of a sparse task table."""
    values = np.asarray(table.values, dtype=np.float64)
    obs = np.isfinite(values)
    T = values.shape[1]
    if T < 2:
        raise ValueError("cross-task correlation needs at least two tasks")
    rho = np.full((T, T), np.nan)
    overlap = np.zeros((T, T), dtype=np.int64)
    for i in range(T):
        for j in range(i, T):
            m = obs[:, i] & obs[:, j]
            overlap[i, j] = overlap[j, i] = int(m.sum())
            if m.sum() < max(min_overlap, 3):
                continue
            try:
                r = spearman(values[m, i], values[m, j])
            except DegenerateVariance:
                continue
            rho[i, j] = rho[j, i] = r
    max_abs = np.full(T, np.nan)
    for i in range(T):
        others = np.abs(np.delete(rho[i], i))
        others = others[np.isfinite(others)]
        if others.size:
            max_abs[i] = others.max()
    return CrossTaskCorrelation(list(table.task_names), rho, overlap, max_abs)


# -- breakdowns ------------------------------------------------------------


def assign_bins(values, edges: Sequence[float]) -> np.ndarray:
    """Bin index per value for half-open bins [e_i, e_{i+1}); the last bin is closed."""
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass
class BinMetrics:
    lower: float
    upper: float
    n: int
    pearson_r2: float | None
    flagged: bool  # fewer than the minimum count; r2 is reported for information only


def fingerprints_for(smiles: Sequence[str], nbits: int = 1024, radius: int = 2) -> list[Fingerprint]:
    return [morgan_fingerprint(parse_smiles(s), radius=radius, nbits=nbits) for s in smiles]


def similarity_binned_metrics(
    test_fps: Sequence[Fingerprint],
    y_true,
    y_pred,
    train_fps: Sequence[Fingerprint],
    edges: Sequence[float] = DEFAULT_SIMILARITY_EDGES,
    min_count: int = 10,
) -> tuple[list[BinMetrics], np.ndarray]:
    """Per-bin Pearson r2 by each test molecule's max Tanimoto similarity to the train set.

    Returns the bins and each test molecule's bin index. Rows with a NaN
    target are binned but excluded from the metric.
    """
    if len(train_fps) == 0:
        raise EmptyTrainSet("similarity binning needs a non-empty train set")
    sims = max_similarity_many(test_fps, train_fps)
    bins = assign_bins(sims, edges)
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    out = []
    for b in range(len(edges) - 1):
        m = (bins == b) & np.isfinite(y_true)
        n = int(m.sum())
        try:
            r2 = pearson_r2(y_true[m], y_pred[m]) if n >= 2 else None
        except DegenerateVariance:
            r2 = None
        out.append(BinMetrics(float(edges[b]), float(edges[b + 1]), n, r2, n < min_count))
    return out, bins


def categorical_enrichment(y_true, y_pred, edges: Sequence[float] = DEFAULT_POTENCY_EDGES) -> np.ndarray:
    """3x3 fractions F[experimental_bin, predicted_bin], each populated column summing to 1.

    Bins are high potency (< e1), medium ([e1, e2)) and low (>= e2).
    """
    e1, e2 = edges
    true_bin = np.digitize(np.asarray(y_true, dtype=np.float64), [e1, e2])
    pred_bin = np.digitize(np.asarray(y_pred, dtype=np.float64), [e1, e2])
    counts = np.zeros((3, 3))
    np.add.at(counts, (true_bin, pred_bin), 1.0)
    col = counts.sum(axis=0)
    return np.divide(counts, col, out=np.zeros_like(counts), where=col > 0)


# -- reports ----------------------------------------------------------------


@dataclass
class TaskMetrics:
    task: str
    n_test: int
    pearson_r2: float | None
    r2: float | None
    mae: float | None
    rmse: float | None
    member_pearson_r2: list[float | None]
    member_std: float | None
    member_se: float | None

    @property
    def member_mean(self) -> float | None:
        vals = [v for v in self.member_pearson_r2 if v is not None]
        return float(np.mean(vals)) if len(vals) == len(self.member_pearson_r2) and vals else None


@dataclass
class MetricReport:
    tasks: list[TaskMetrics]
    similarity_bins: dict[str, list[BinMetrics]] = field(default_factory=dict)
    enrichment: dict[str, list[list[float]]] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def task_names(self) -> list[str]:
        return [t.task for t in self.tasks]

    def task(self, name: str) -> TaskMetrics:
        for t in self.tasks:
            if t.task == name:
                return t
        raise KeyError(name)

    def to_json(self) -> str:
        doc = {
            "settings": self.settings,
            "tasks": [{**asdict(t), "member_mean": t.member_mean} for t in self.tasks],
            "similarity_bins": {k: [asdict(b) for b in v] for k, v in self.similarity_bins.items()},
            "enrichment": {k: {"bins": list(POTENCY_BINS), "fractions": v} for k, v in self.enrichment.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        tasks = []
        for t in doc["tasks"]:
            t = dict(t)
            t.pop("member_mean", None)
            tasks.append(TaskMetrics(**t))
        bins = {k: [BinMetrics(**b) for b in v] for k, v in doc.get("similarity_bins", {}).items()}
        enrich = {k: v["fractions"] for k, v in doc.get("enrichment", {}).items()}
        return cls(tasks, bins, enrich, doc.get("settings", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_members = max((len(t.member_pearson_r2) for t in self.tasks), default=0)
        w.writerow(
            ["task", "n_test", "pearson_r2", "r2", "mae", "rmse", "member_mean", "member_std", "member_se"]
            + [f"member_{i}_pearson_r2" for i in range(n_members)]
        )
        for t in self.tasks:
            row = [t.task, t.n_test, t.pearson_r2, t.r2, t.mae, t.rmse, t.member_mean, t.member_std, t.member_se]
            w.writerow([_fmt(v) for v in row] + [_fmt(v) for v in t.member_pearson_r2])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _safe(fn, *args):
    try:
        return fn(*args)
    except DegenerateVariance:
        return None


def task_metrics(name: str, y_true, member_preds) -> TaskMetrics:
    """Metrics of the ensemble-mean prediction plus the spread of member Pearson r2.

    ``member_preds`` is [n_members, n]; rows with a NaN target are dropped.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    member_preds = np.atleast_2d(np.asarray(member_preds, dtype=np.float64))
    m = np.isfinite(y_true)
    y = y_true[m]
    per = member_preds[:, m]
    mean_pred = per.mean(axis=0)
    n = int(m.sum())
    if n >= 2:
        reg = _safe(regression_metrics, y, mean_pred)
        r2, mae, rmse = reg if reg is not None else (None, None, None)
        if reg is None:
            resid = y - mean_pred
            mae, rmse = float(np.abs(resid).mean()), float(np.sqrt((resid**2).mean()))
        pr2 = _safe(pearson_r2, y, mean_pred)
        members = [_safe(pearson_r2, y, p) for p in per]
    else:
        r2 = mae = rmse = pr2 = None
        members = [None] * per.shape[0]
    std = se = None
    if len(members) > 1 and all(v is not None for v in members):
        std = float(np.std(members, ddof=1))
        se = float(std / np.sqrt(len(members)))
    return TaskMetrics(name, n, pr2, r2, mae, rmse, members, std, se)


def build_report(
    task_names: Sequence[str],
    y_true: np.ndarray,
    member_preds: np.ndarray,
    test_fps: Sequence[Fingerprint] | None = None,
    train_fps: Sequence[Fingerprint] | None = None,
    similarity_edges: Sequence[float] = DEFAULT_SIMILARITY_EDGES,
    potency_edges: Sequence[float] | None = None,
    min_bin_count: int = 10,
) -> MetricReport:
    """Full report from truth [n, T] and member predictions [M, n, T]."""
    y_true = np.asarray(y_true, dtype=np.float64)
    member_preds = np.asarray(member_preds, dtype=np.float64)
    tasks = [task_metrics(name, y_true[:, t], member_preds[:, :, t]) for t, name in enumerate(task_names)]
    settings = {"n_members": int(member_preds.shape[0])}
    report = MetricReport(tasks, settings=settings)
    if test_fps is not None:
        settings["similarity_edges"] = [float(e) for e in similarity_edges]
        settings["min_bin_count"] = min_bin_count
        mean_pred = member_preds.mean(axis=0)
        for t, name in enumerate(task_names):
            bins, _ = similarity_binned_metrics(test_fps, y_true[:, t], mean_pred[:, t], train_fps, similarity_edges, min_bin_count)
            report.similarity_bins[name] = bins
    if potency_edges is not None:
        settings["potency_edges"] = [float(e) for e in potency_edges]
        mean_pred = member_preds.mean(axis=0)
        for t, name in enumerate(task_names):
            m = np.isfinite(y_true[:, t])
            report.enrichment[name] = categorical_enrichment(y_true[m, t], mean_pred[m, t], potency_edges).tolist()
    return report


@dataclass
class TaskDelta:
    task: str
    delta: float
    standard_error: float
    a_better: bool
    b_better: bool


def delta_report(report_a: MetricReport, report_b: MetricReport) -> list[TaskDelta]:
    """Per-task difference of mean member Pearson r2 (a minus b) with its standard error.

    A model is flagged better on a task when its mean exceeds the other
    model's mean plus that model's member standard deviation.
    """
    if report_a.task_names != report_b.task_names:
        raise TaskMismatch(f"{report_a.task_names} vs {report_b.task_names}")
    out = []
    for ta, tb in zip(report_a.tasks, report_b.tasks):
        if len(ta.member_pearson_r2) != ENSEMBLE_SIZE or len(tb.member_pearson_r2) != ENSEMBLE_SIZE:
            raise TaskMismatch(f"task {ta.task}: both reports need {ENSEMBLE_SIZE} members")
        a = np.asarray(ta.member_pearson_r2, dtype=np.float64)
        b = np.asarray(tb.member_pearson_r2, dtype=np.float64)
        sa, sb = a.std(ddof=1), b.std(ddof=1)
        se = float(np.sqrt(sa**2 / a.size + sb**2 / b.size))
        ma, mb = float(a.mean()), float(b.mean())
        out.append(TaskDelta(ta.task, ma - mb, se, ma > mb + sb, mb > ma + sa))
    return out
