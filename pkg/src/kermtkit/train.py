"""Losses, optimizer, training loops and simulated data-parallel gradients.

Loss contract: workers return *summed* losses together with their entry
counts, and the aggregated gradient is divided by the global count. This
makes sharded (data-parallel) gradients equal to the full-batch gradient up
to floating-point reassociation.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, ConstantTask, EmptyFold, NoObservedEntries, VocabMismatch
from .featurize import FeatureBatch, MoleculeDataset, collate
from .model import (
    ModelConfig,
    ModelParams,
    encode,
    init_params,
    load_checkpoint,
    multitask_head,
    predict_standardized,
    pretrain_heads,
    save_checkpoint,
    transfer_encoder,
)
from .pretrain_labels import BUILTIN_MOTIFS, ContextVocab, PretrainTargets, pretrain_targets
from .smiles import parse_smiles
from .splits import train_val_split

log = logging.getLogger(__name__)


# -- targets ----------------------------------------------------------------


@dataclass
class SparseTaskTable:
    """Molecules x tasks regression targets; NaN marks an unobserved entry."""

    values: np.ndarray
    task_names: list[str]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.values), len(self.task_names))

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)

    def __len__(self) -> int:
        return self.values.shape[0]

    def fit_standardization(self, rows) -> None:
        """Per-task mean/std over observed entries of ``rows``."""
        sub = self.values[np.asarray(rows, dtype=np.int64)]
        mean = np.zeros(self.n_tasks)
        std = np.ones(self.n_tasks)
        for t, name in enumerate(self.task_names):
            col = sub[:, t][np.isfinite(sub[:, t])]
            if col.size < 2 or np.std(col) == 0:
                raise ConstantTask(f"task {name!r} has {col.size} training observations and no variance to learn")
            mean[t], std[t] = col.mean(), col.std()
        self.mean, self.std = mean, std

    def standardize(self, values=None) -> np.ndarray:
        values = self.values if values is None else values
        return (values - self.mean) / self.std

    def destandardize(self, z) -> np.ndarray:
        return np.asarray(z) * self.std + self.mean

    def select_columns(self, cols: Sequence[int]) -> "SparseTaskTable":
        cols = list(cols)
        return SparseTaskTable(
            self.values[:, cols].copy(),
            [self.task_names[c] for c in cols],
            None if self.mean is None else self.mean[cols].copy(),
            None if self.std is None else self.std[cols].copy(),
        )


def masked_multitask_loss(pred: Tensor, target_std: np.ndarray, observed: np.ndarray) -> tuple[Tensor, int]:
    """Summed squared error over observed entries, and how many there were."""
    count = int(np.asarray(observed, dtype=bool).sum())
    if count == 0:
        raise NoObservedEntries("batch has no observed targets")
    return ad.masked_sse(pred, target_std, observed), count


@dataclass
class PretrainNormalizers:
    atoms: int
    edges: int
    motif_entries: int


def pretrain_loss(logits, targets: PretrainTargets, norm: PretrainNormalizers | None = None) -> Tensor:
    """Mean atom-context CE + mean bond-context CE + mean motif BCE, equally weighted.

    ``targets`` holds batch-concatenated ids. ``norm`` overrides the
    denominators, which lets each data-parallel shard use global counts.
    """
    if norm is None:
        norm = PretrainNormalizers(len(targets.atom_context_ids), len(targets.bond_context_ids), targets.motif_labels.size)
    terms = [ad.scale(ad.cross_entropy_sum(logits.atom, targets.atom_context_ids), 1.0 / norm.atoms)]
    if norm.edges and len(targets.bond_context_ids):
        terms.append(ad.scale(ad.cross_entropy_sum(logits.bond, targets.bond_context_ids), 1.0 / norm.edges))
    terms.append(ad.scale(ad.bce_with_logits_sum(logits.motif, targets.motif_labels), 1.0 / norm.motif_entries))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


# -- optimizer --------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None
    workers_sim: int = 1
    ddp_backend: str = "thread"
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.workers_sim < 1:
            raise ConfigError("workers_sim must be >= 1")
        if self.ddp_backend not in ("thread", "process"):
            raise ConfigError("ddp_backend must be 'thread' or 'process'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in tensors.items()}, {k: np.zeros_like(a) for k, a in tensors.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


# -- data-parallel simulation ---------------------------------------------


def _finetune_shard(tensors: dict[str, np.ndarray], config: ModelConfig, batch: FeatureBatch, target_std, observed):
    """SSE gradient of one shard on its own tape."""
    if batch.n_molecules == 0 or not observed.any():
        return {}, 0.0, 0
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    with Tape() as tape:
        enc = encode(batch, params, config)
        pred = multitask_head(enc.graph_embedding, batch.descriptors, params, config)
        loss, count = masked_multitask_loss(pred, target_std, observed)
    grads = ad.backward(tape, loss)
    return {k: grads[t] for k, t in params.items()}, loss.item(), count


def _pretrain_shard(tensors, config: ModelConfig, batch: FeatureBatch, targets: PretrainTargets, norm: PretrainNormalizers):
    if batch.n_molecules == 0:
        return {}, 0.0, 0
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    with Tape() as tape:
        enc = encode(batch, params, config)
        logits = pretrain_heads(enc, batch, params)
        loss = pretrain_loss(logits, targets, norm)
    grads = ad.backward(tape, loss)
    return {k: grads[t] for k, t in params.items()}, loss.item(), batch.n_molecules


def _call(job):
    fn, args = job
    return fn(*args)


class ShardRunner:
    """Runs shard jobs concurrently (threads or processes) or inline."""

    def __init__(self, workers: int = 1, backend: str = "thread"):
        self.workers = workers
        self.backend = backend
        self._pool = None
        if workers > 1:
            if backend == "thread":
                self._pool = ThreadPoolExecutor(max_workers=workers)
            else:
                self._pool = ProcessPoolExecutor(max_workers=workers)

    def map(self, fn: Callable, arg_list: list[tuple]):
        if self._pool is None:
            return [fn(*args) for args in arg_list]
        return list(self._pool.map(_call, [(fn, args) for args in arg_list]))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _aggregate(results, names, denominator: float):
    """Sum worker gradients in worker-index order, then divide by ``denominator``."""
    total = {}
    for name in names:
        acc = None
        for grads, _, _ in results:
            g = grads.get(name)
            if g is None:
                continue
            acc = g.copy() if acc is None else acc + g
        if acc is not None:
            total[name] = acc / denominator
    return total


def shard_indices(n: int, workers: int) -> list[np.ndarray]:
    """Contiguous, possibly uneven shards (some may be empty when n < workers)."""
    return [a for a in np.array_split(np.arange(n), workers)]


def ddp_sim_step(
    items: Sequence,
    target_std: np.ndarray,
    observed: np.ndarray,
    params: ModelParams,
    workers_sim: int = 1,
    runner: ShardRunner | None = None,
) -> tuple[dict[str, np.ndarray], float, int]:
    """Mean-squared-error gradient of a minibatch computed over ``workers_sim`` shards.

    ``items`` are per-molecule :class:`~kermtkit.featurize.MolFeatures`.
    Returns ``(gradient, mean loss, observed count)``; the gradient is
    (sum of shard SSE gradients) / (sum of shard observed counts).
    """
    total = int(np.asarray(observed, dtype=bool).sum())
    if total == 0:
        raise NoObservedEntries("batch has no observed targets")
    jobs = []
    for sh in shard_indices(len(items), workers_sim):
        batch = collate([items[i] for i in sh])
        jobs.append((params.tensors, params.config, batch, target_std[sh], observed[sh]))
    own = runner is None
    runner = runner or ShardRunner(workers_sim, "thread")
    try:
        results = runner.map(_finetune_shard, jobs)
    finally:
        if own:
            runner.close()
    count = sum(r[2] for r in results)
    grads = _aggregate(results, list(params.tensors), float(count))
    return grads, sum(r[1] for r in results) / count, count


def pretrain_grad_step(
    items: Sequence,
    targets: Sequence[PretrainTargets],
    params: ModelParams,
    workers_sim: int = 1,
    runner: ShardRunner | None = None,
) -> tuple[dict[str, np.ndarray], float]:
    norm = PretrainNormalizers(
        atoms=sum(len(t.atom_context_ids) for t in targets),
        edges=sum(len(t.bond_context_ids) for t in targets),
        motif_entries=sum(t.motif_labels.size for t in targets),
    )
    jobs = []
    for sh in shard_indices(len(items), workers_sim):
        batch = collate([items[i] for i in sh])
        jobs.append((params.tensors, params.config, batch, concat_targets([targets[i] for i in sh]), norm))
    own = runner is None
    runner = runner or ShardRunner(workers_sim, "thread")
    try:
        results = runner.map(_pretrain_shard, jobs)
    finally:
        if own:
            runner.close()
    grads = _aggregate(results, list(params.tensors), 1.0)
    return grads, sum(r[1] for r in results)


def concat_targets(targets: Sequence[PretrainTargets]) -> PretrainTargets:
    if not targets:
        return PretrainTargets(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 0), np.int8))
    return PretrainTargets(
        np.concatenate([t.atom_context_ids for t in targets]),
        np.concatenate([t.bond_context_ids for t in targets]),
        np.stack([t.motif_labels for t in targets]),
    )


# -- finetuning -------------------------------------------------------------


@dataclass
class LabeledData:
    """Molecules with their sparse task table; features cached per molecule."""

    smiles: list[str]
    table: SparseTaskTable
    dataset: MoleculeDataset = None

    def __post_init__(self):
        if self.dataset is None:
            self.dataset = MoleculeDataset(self.smiles, cache=True)

    def items(self, indices) -> list:
        return [self.dataset.features(int(i)) for i in indices]

    def batch(self, indices) -> FeatureBatch:
        return self.dataset.batch(indices)


@dataclass
class FinetuneResult:
    params: ModelParams
    history: list[dict]
    train_indices: np.ndarray
    val_indices: np.ndarray
    best_epoch: int

    def history_csv(self) -> str:
        return history_to_csv(self.history, self.params.meta.get("task_names", []))


def history_to_csv(history: list[dict], task_names: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss"] + [f"val_r2_{t}" for t in task_names])
    for row in history:
        writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])] + [repr(v) for v in row["val_r2"]])
    return buf.getvalue()


def _r2_or_nan(y, p) -> float:
    from .evaluation import pearson_r2
    from .errors import DegenerateVariance

    try:
        return pearson_r2(y, p)
    except DegenerateVariance:
        return float("nan")


def evaluate_standardized(data: LabeledData, indices, params: ModelParams, batch_size: int = 256):
    """(SSE, count, predictions[standardized]) over ``indices``."""
    indices = np.asarray(indices, dtype=np.int64)
    preds = np.zeros((len(indices), params.config.n_tasks))
    for start in range(0, len(indices), batch_size):
        idx = indices[start : start + batch_size]
        preds[start : start + len(idx)] = predict_standardized(data.batch(idx), params)
    observed = data.table.observed[indices]
    target = np.where(observed, data.table.standardize(data.table.values[indices]), 0.0)
    sse = float(np.where(observed, (preds - target) ** 2, 0.0).sum())
    return sse, int(observed.sum()), preds


def train_finetune(
    data: LabeledData,
    train_indices,
    model_config: ModelConfig,
    config: TrainConfig,
    pretrained: ModelParams | None = None,
    val_seed: int | None = None,
    init_seed: int | None = None,
    runner: ShardRunner | None = None,
) -> FinetuneResult:
    """Finetune encoder + regression head with best-epoch selection on a 90/10 split."""
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if len(train_indices) == 0:
        raise EmptyFold("train fold is empty")
    val_seed = config.seed if val_seed is None else val_seed
    init_seed = config.seed if init_seed is None else init_seed
    tr, val = train_val_split(train_indices, config.val_fraction, val_seed)
    if len(val) == 0 or not data.table.observed[val].any():
        raise EmptyFold("validation split has no observed targets")
    table = data.table
    table.fit_standardization(tr)
    if model_config.n_tasks != table.n_tasks:
        raise ConfigError(f"model has {model_config.n_tasks} outputs, table has {table.n_tasks} tasks")

    params = transfer_encoder(pretrained, model_config, init_seed) if pretrained is not None else init_params(model_config, init_seed)
    params.meta = {
        "task_names": list(table.task_names),
        "target_mean": table.mean.tolist(),
        "target_std": table.std.tolist(),
        "init_seed": int(init_seed),
        "val_seed": int(val_seed),
        "pretrained_init": pretrained is not None,
    }
    state = AdamState.zeros_like(params.tensors)
    target_std = np.where(table.observed, table.standardize(), 0.0)
    history: list[dict] = []
    best = (np.inf, None, -1)
    stale = 0
    own = runner is None
    runner = runner or ShardRunner(config.workers_sim, config.ddp_backend)
    try:
        for epoch in range(config.epochs):
            rng = np.random.default_rng([init_seed, val_seed, epoch])
            order = tr[rng.permutation(len(tr))]
            sse_sum = 0.0
            count_sum = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                obs = table.observed[idx]
                if not obs.any():
                    continue
                grads, loss, count = ddp_sim_step(data.items(idx), target_std[idx], obs, params, config.workers_sim, runner)
                adam_step(params.tensors, grads, state, config)
                sse_sum += loss * count
                count_sum += count
            val_sse, val_count, val_pred = evaluate_standardized(data, val, params)
            val_loss = val_sse / val_count
            val_true = table.values[val]
            r2 = []
            for t in range(table.n_tasks):
                m = np.isfinite(val_true[:, t])
                r2.append(_r2_or_nan(val_true[m, t], val_pred[m, t]) if m.sum() >= 2 else float("nan"))
            history.append(
                {"epoch": epoch, "train_loss": sse_sum / max(count_sum, 1), "val_loss": val_loss, "val_r2": r2}
            )
            if val_loss < best[0]:
                best = (val_loss, params.copy(), epoch)
                stale = 0
            else:
                stale += 1
                if config.patience is not None and stale > config.patience:
                    break
    finally:
        if own:
            runner.close()
    best_params = best[1] if best[1] is not None else params
    best_params.meta["best_epoch"] = best[2]
    return FinetuneResult(best_params, history, tr, val, best[2])


def predict(data_or_batch, params: ModelParams) -> np.ndarray:
    """De-standardized predictions for a batch or (LabeledData, indices)."""
    if isinstance(data_or_batch, FeatureBatch):
        z = predict_standardized(data_or_batch, params)
    else:
        data, indices = data_or_batch
        _, _, z = evaluate_standardized(data, indices, params)
    return z * np.asarray(params.meta["target_std"]) + np.asarray(params.meta["target_mean"])


# -- ensembles --------------------------------------------------------------

N_SPLITS = 2
N_INITS = 2


def ensemble_seeds(seed: int) -> tuple[list[int], list[int]]:
    """Two validation-split seeds and two initialization seeds derived from ``seed``."""
    s = np.random.SeedSequence(seed).generate_state(N_SPLITS + N_INITS)
    return [int(x) for x in s[:N_SPLITS]], [int(x) for x in s[N_SPLITS:]]


@dataclass
class Ensemble:
    members: list[ModelParams]
    histories: list[list[dict]] = field(default_factory=list)

    @property
    def task_names(self) -> list[str]:
        return list(self.members[0].meta["task_names"])

    def member_predictions(self, batch: FeatureBatch) -> np.ndarray:
        """[n_members, n_molecules, n_tasks] de-standardized predictions."""
        return np.stack([predict(batch, m) for m in self.members])

    def predict(self, batch: FeatureBatch) -> tuple[np.ndarray, np.ndarray]:
        per = self.member_predictions(batch)
        return per.mean(axis=0), per

    def save(self, directory) -> None:
        import json

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for i, m in enumerate(self.members):
            name = f"member_{i}.ckpt"
            save_checkpoint(m, directory / name)
            names.append(name)
            if i < len(self.histories):
                (directory / f"member_{i}_history.csv").write_text(history_to_csv(self.histories[i], m.meta["task_names"]))
        (directory / "ensemble.json").write_text(json.dumps({"members": names, "task_names": self.task_names}, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Ensemble":
        import json

        directory = Path(directory)
        manifest = json.loads((directory / "ensemble.json").read_text())
        return cls([load_checkpoint(directory / n) for n in manifest["members"]])


def train_ensemble(
    data: LabeledData,
    train_indices,
    model_config: ModelConfig,
    config: TrainConfig,
    pretrained: ModelParams | None = None,
) -> Ensemble:
    """Four members: 2 validation splits x 2 weight initializations."""
    split_seeds, init_seeds = ensemble_seeds(config.seed)
    members, histories = [], []
    with ShardRunner(config.workers_sim, config.ddp_backend) as runner:
        for vs in split_seeds:
            for iseed in init_seeds:
                res = train_finetune(data, train_indices, model_config, config, pretrained, vs, iseed, runner)
                members.append(res.params)
                histories.append(res.history)
    return Ensemble(members, histories)


# -- pretraining ------------------------------------------------------------


@dataclass
class PretrainResult:
    params: ModelParams
    optimizer: AdamState
    history: list[dict]
    epochs_done: int


def prepare_pretraining(smiles: Sequence[str], atom_vocab: ContextVocab, bond_vocab: ContextVocab, motifs=BUILTIN_MOTIFS):
    """Per-molecule features and targets for a pretraining corpus."""
    from .featurize import featurize_graph

    items, targets = [], []
    for s in smiles:
        g = parse_smiles(s)
        items.append(featurize_graph(g))
        targets.append(pretrain_targets(g, atom_vocab, bond_vocab, motifs))
    return items, targets


def run_pretraining(
    items: Sequence,
    targets: Sequence[PretrainTargets],
    model_config: ModelConfig,
    config: TrainConfig,
    atom_vocab: ContextVocab | None = None,
    bond_vocab: ContextVocab | None = None,
    resume: PretrainResult | None = None,
    epochs: int | None = None,
    runner: ShardRunner | None = None,
) -> PretrainResult:
    """Train encoder + pretraining heads; ``resume`` continues a previous run exactly."""
    if atom_vocab is not None and model_config.atom_vocab_size != len(atom_vocab):
        raise VocabMismatch(f"model atom vocab {model_config.atom_vocab_size} != vocabulary size {len(atom_vocab)}")
    if bond_vocab is not None and model_config.bond_vocab_size != len(bond_vocab):
        raise VocabMismatch(f"model bond vocab {model_config.bond_vocab_size} != vocabulary size {len(bond_vocab)}")
    for t in targets:
        if t.atom_context_ids.size and t.atom_context_ids.max() >= model_config.atom_vocab_size:
            raise VocabMismatch("atom context id outside the model's vocabulary")
        if t.bond_context_ids.size and t.bond_context_ids.max() >= model_config.bond_vocab_size:
            raise VocabMismatch("bond context id outside the model's vocabulary")
        if t.motif_labels.size != model_config.n_motifs:
            raise VocabMismatch("motif label length differs from the model's motif head")
    if resume is None:
        params = init_params(model_config, config.seed)
        state = AdamState.zeros_like(params.tensors)
        history: list[dict] = []
        start_epoch = 0
    else:
        params, state = resume.params.copy(), AdamState(
            {k: v.copy() for k, v in resume.optimizer.m.items()},
            {k: v.copy() for k, v in resume.optimizer.v.items()},
            resume.optimizer.step,
        )
        history = list(resume.history)
        start_epoch = resume.epochs_done
    end_epoch = start_epoch + (config.epochs if epochs is None else epochs)
    own = runner is None
    runner = runner or ShardRunner(config.workers_sim, config.ddp_backend)
    n = len(items)
    try:
        for epoch in range(start_epoch, end_epoch):
            t0 = time.perf_counter()
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                grads, loss = pretrain_grad_step([items[i] for i in idx], [targets[i] for i in idx], params, config.workers_sim, runner)
                adam_step(params.tensors, grads, state, config)
                losses.append(loss)
            history.append({"epoch": epoch, "loss": float(np.mean(losses)), "batch_losses": losses, "seconds": time.perf_counter() - t0})
            log.info("pretrain epoch %d loss %.6f", epoch, history[-1]["loss"])
    finally:
        if own:
            runner.close()
    params.meta = {**params.meta, "pretrain_epochs": end_epoch}
    return PretrainResult(params, state, history, end_epoch)


def save_pretraining(result: PretrainResult, path) -> None:
    """Checkpoint holding encoder, heads and optimizer moments (``optim.*`` tensors)."""
    p = result.params.copy()
    for k in list(result.params.tensors):
        p.tensors[f"optim.m.{k}"] = result.optimizer.m[k].copy()
        p.tensors[f"optim.v.{k}"] = result.optimizer.v[k].copy()
    p.meta = {
        **p.meta,
        "optimizer_step": result.optimizer.step,
        "epochs_done": result.epochs_done,
        "history": [{"epoch": h["epoch"], "loss": h["loss"]} for h in result.history],
    }
    save_checkpoint(p, path)


def load_pretraining(path) -> PretrainResult:
    raw = load_checkpoint(path)
    tensors = {k: v for k, v in raw.tensors.items() if not k.startswith("optim.")}
    m = {k: raw.tensors[f"optim.m.{k}"] for k in tensors if f"optim.m.{k}" in raw.tensors}
    v = {k: raw.tensors[f"optim.v.{k}"] for k in tensors if f"optim.v.{k}" in raw.tensors}
    if len(m) != len(tensors):
        m, v = AdamState.zeros_like(tensors).m, AdamState.zeros_like(tensors).v
    meta = dict(raw.meta)
    step = int(meta.pop("optimizer_step", 0))
    epochs_done = int(meta.pop("epochs_done", 0))
    history = meta.pop("history", [])
    params = ModelParams(tensors, raw.config, raw.schema_version, meta)
    return PretrainResult(params, AdamState(m, v, step), history, epochs_done)
