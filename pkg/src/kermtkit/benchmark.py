"""Desk-scale benchmark suites run on the synthetic multitask data."""

from __future__ import annotations

import time

import numpy as np

from .data import SyntheticBenchmark
from .evaluation import pearson_r2
from .errors import DegenerateVariance
from .featurize import MoleculeDataset
from .model import ModelConfig, init_params
from .pretrain_labels import BUILTIN_MOTIFS, build_context_vocab
from .smiles import parse_smiles
from .splits import random_split, select_tasks
from .train import (
    LabeledData,
    ShardRunner,
    SparseTaskTable,
    TrainConfig,
    ddp_sim_step,
    predict,
    prepare_pretraining,
    run_pretraining,
    train_finetune,
)

SUITE_MODEL = {"hidden_dim": 32, "mp_layers": 3, "attention_heads": 4, "ffn_layers": 2}
SUITE_TRAIN = {"epochs": 15, "batch_size": 32, "learning_rate": 1e-3}


def _fresh_table(table: SparseTaskTable) -> SparseTaskTable:
    return SparseTaskTable(table.values.copy(), list(table.task_names))


def _task_r2(data: LabeledData, rows, params, column: int) -> float:
    pred = predict((data, rows), params)[:, column]
    y = data.table.values[rows, column]
    m = np.isfinite(y)
    try:
        return pearson_r2(y[m], pred[m])
    except DegenerateVariance:
        return float("nan")


def mt_vs_st(bench: SyntheticBenchmark, seeds=(0, 1, 2, 3, 4), task: str = "task_1", model: dict | None = None, train: dict | None = None) -> dict:
    """Test-set Pearson r2 on ``task`` for a multitask model and a single-task model per seed."""
    model = {**SUITE_MODEL, **(model or {})}
    train = {**SUITE_TRAIN, **(train or {})}
    dataset = MoleculeDataset(bench.smiles, cache=True)
    col = bench.table.task_names.index(task)
    mt_r2, st_r2 = [], []
    for seed in seeds:
        split = random_split(bench.smiles, 0.2, seed)
        tr, te = split.train_indices, split.test_indices
        cfg = TrainConfig(seed=seed, **train)

        mt_data = LabeledData(bench.smiles, _fresh_table(bench.table), dataset)
        mt = train_finetune(mt_data, tr, ModelConfig(n_tasks=mt_data.table.n_tasks, seed=seed, **model), cfg)
        mt_r2.append(_task_r2(mt_data, te, mt.params, col))

        st_table, st_tr = select_tasks(_fresh_table(bench.table), [task], tr)
        st_data = LabeledData(bench.smiles, st_table, dataset)
        st = train_finetune(st_data, st_tr, ModelConfig(n_tasks=1, seed=seed, **model), cfg)
        st_r2.append(_task_r2(st_data, te, st.params, 0))
    return {
        "task": task,
        "seeds": list(seeds),
        "mt_pearson_r2": mt_r2,
        "st_pearson_r2": st_r2,
        "median_mt": float(np.median(mt_r2)),
        "median_st": float(np.median(st_r2)),
        "passed": bool(np.median(mt_r2) >= np.median(st_r2)),
    }


def ddp_exactness(bench: SyntheticBenchmark, worker_counts=(2, 4, 8), n_batches: int = 20, batch_size: int = 32, seed: int = 0, tol: float = 1e-10) -> dict:
    """Largest |g_w - g_1| over random minibatches for each simulated worker count."""
    rng = np.random.default_rng(seed)
    table = _fresh_table(bench.table)
    rows_all = np.arange(len(bench.smiles))
    table.fit_standardization(rows_all)
    target = np.where(table.observed, table.standardize(), 0.0)
    dataset = MoleculeDataset(bench.smiles)
    params = init_params(ModelConfig(n_tasks=table.n_tasks, seed=seed, **SUITE_MODEL))
    for arr in params.tensors.values():
        arr += 0.05 * rng.normal(size=arr.shape)
    worst = {w: 0.0 for w in worker_counts}
    runners = {w: ShardRunner(w, "thread") for w in worker_counts}
    try:
        for _ in range(n_batches):
            idx = rng.choice(rows_all, size=batch_size, replace=False)
            items = [dataset.features(int(i)) for i in idx]
            g1, _, _ = ddp_sim_step(items, target[idx], table.observed[idx], params, 1)
            for w in worker_counts:
                gw, _, _ = ddp_sim_step(items, target[idx], table.observed[idx], params, w, runners[w])
                diff = max(float(np.abs(gw[k] - g1[k]).max()) for k in g1)
                worst[w] = max(worst[w], diff)
    finally:
        for r in runners.values():
            r.close()
    return {"max_abs_diff": {str(w): d for w, d in worst.items()}, "tolerance": tol, "passed": all(d <= tol for d in worst.values())}


def pretraining_corpus(smiles, k: int = 1, min_frequency: int = 1):
    graphs = [parse_smiles(s) for s in smiles]
    atom_vocab = build_context_vocab(graphs, k=k, min_frequency=min_frequency, kind="atom")
    bond_vocab = build_context_vocab(graphs, k=k, min_frequency=min_frequency, kind="bond")
    items, targets = prepare_pretraining(smiles, atom_vocab, bond_vocab)
    return atom_vocab, bond_vocab, items, targets


def pretraining_throughput(smiles, workers: int = 4, backend: str = "thread", batch_size: int = 64, seed: int = 0) -> dict:
    """Molecules per second of one pretraining epoch at 1 and ``workers`` simulated workers."""
    atom_vocab, bond_vocab, items, targets = pretraining_corpus(smiles)
    mc = ModelConfig(atom_vocab_size=len(atom_vocab), bond_vocab_size=len(bond_vocab), n_motifs=len(BUILTIN_MOTIFS), seed=seed, **SUITE_MODEL)
    rates = {}
    for w in (1, workers):
        cfg = TrainConfig(epochs=1, batch_size=batch_size, workers_sim=w, ddp_backend=backend, seed=seed)
        with ShardRunner(w, backend) as runner:
            t0 = time.perf_counter()
            run_pretraining(items, targets, mc, cfg, atom_vocab, bond_vocab, runner=runner)
            rates[w] = len(items) / (time.perf_counter() - t0)
    return {"backend": backend, "workers": workers, "mol_per_s": {str(k): v for k, v in rates.items()}, "speedup": rates[workers] / rates[1]}


def pretrain_benefit(
    bench: SyntheticBenchmark,
    n_labeled: int = 200,
    n_test: int = 400,
    seeds=(0, 1, 2, 3, 4),
    pretrain_epochs: int = 10,
    model: dict | None = None,
    train: dict | None = None,
) -> dict:
    """Finetuning from a pretrained encoder versus random init with few labels.

    The pool is split into ``n_labeled`` training molecules, ``n_test``
    held-out labeled molecules, and the rest as an unlabeled pretraining
    corpus. The score per run is the mean Pearson r2 over tasks on the
    held-out molecules; validation r2 at the selected epoch is recorded too.
    """
    model = {**SUITE_MODEL, **(model or {})}
    train = {**SUITE_TRAIN, "epochs": 30, **(train or {})}
    rng = np.random.default_rng(12345)
    perm = rng.permutation(len(bench.smiles))
    labeled, test, corpus_idx = perm[:n_labeled], perm[n_labeled : n_labeled + n_test], perm[n_labeled + n_test :]
    corpus = [bench.smiles[i] for i in corpus_idx]
    atom_vocab, bond_vocab, items, targets = pretraining_corpus(corpus)
    pmc = ModelConfig(atom_vocab_size=len(atom_vocab), bond_vocab_size=len(bond_vocab), n_motifs=len(BUILTIN_MOTIFS), **model)
    pre = run_pretraining(items, targets, pmc, TrainConfig(epochs=pretrain_epochs, batch_size=32), atom_vocab, bond_vocab)

    dataset = MoleculeDataset(bench.smiles, cache=True)
    scores = {"pretrained": [], "random": []}
    val_scores = {"pretrained": [], "random": []}
    for seed in seeds:
        for mode in ("pretrained", "random"):
            data = LabeledData(bench.smiles, _fresh_table(bench.table), dataset)
            mc = ModelConfig(n_tasks=data.table.n_tasks, **model)
            res = train_finetune(data, labeled, mc, TrainConfig(seed=seed, **train), pre.params if mode == "pretrained" else None)
            per_task = [_task_r2(data, test, res.params, t) for t in range(data.table.n_tasks)]
            scores[mode].append(float(np.nanmean(per_task)))
            val_scores[mode].append(float(np.nanmean(res.history[res.best_epoch]["val_r2"])))
    med_p, med_r = float(np.median(scores["pretrained"])), float(np.median(scores["random"]))
    return {
        "n_labeled": n_labeled,
        "pretrain_loss": [h["loss"] for h in pre.history],
        "heldout_r2": scores,
        "val_r2": val_scores,
        "median_pretrained": med_p,
        "median_random": med_r,
        "passed": bool(med_p >= med_r),
    }

