"""Command-line entry point: ``kermtkit <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error. Runtime errors print
one JSON object ``{"error": <category>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, KermtError, MissingDate, TaskMismatch

log = logging.getLogger("kermtkit")

# -- run configuration ------------------------------------------------------

_DERIVED_MODEL_KEYS = {"n_tasks", "atom_vocab_size", "bond_vocab_size", "n_motifs", "descriptor_dim"}


def default_config() -> dict:
    from .evaluation import DEFAULT_SIMILARITY_EDGES
    from .model import ModelConfig
    from .train import TrainConfig

    model = {f.name: f.default for f in fields(ModelConfig) if f.name not in _DERIVED_MODEL_KEYS}
    train = {f.name: f.default for f in fields(TrainConfig)}
    train["ensemble"] = True
    return {
        "data": {"workers": 1},
        "split": {"method": "cluster", "seed": 0, "k": 5, "pca_dim": 32, "test_fraction": 0.2},
        "model": model,
        "train": train,
        "eval": {
            "similarity_edges": list(DEFAULT_SIMILARITY_EDGES),
            "simbins": False,
            "potency_edges": None,
            "min_bin_count": 10,
        },
    }


def resolve_config(user: dict | None) -> dict:
    """Overlay ``user`` on the defaults; unknown sections or keys are rejected."""
    resolved = default_config()
    for section, values in (user or {}).items():
        if section not in resolved:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        unknown = set(values) - set(resolved[section])
        if unknown:
            raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
        resolved[section].update(copy.deepcopy(values))
    return resolved


def load_config(path) -> dict:
    if path is None:
        return resolve_config(None)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve_config(doc)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def header_line(config: dict) -> str:
    return f"kermtkit {__version__} config_sha256={config_hash(config)}"


def save_resolved(config: dict, out: Path) -> Path:
    """Write the resolved config next to ``out`` (inside it when ``out`` is a directory)."""
    path = out / "resolved_config.json" if out.is_dir() else out.with_name(out.name + ".config.json")
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path


def _model_config(config: dict, **derived):
    from .model import ModelConfig

    try:
        return ModelConfig.from_dict({**config["model"], **derived})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _train_config(config: dict, **overrides):
    from .train import TrainConfig

    values = {k: v for k, v in config["train"].items() if k != "ensemble"}
    values.update(overrides)
    return TrainConfig.from_dict(values)


def _comment(text: str) -> str:
    return f"# {text}\n"


# -- subcommands --------------------------------------------------------------


def cmd_featurize(args) -> int:
    from .data import read_smiles_column
    from .featurize import MoleculeDataset, featurize_batch, serialize_batch

    config = load_config(args.config)
    config["data"]["workers"] = args.workers
    smiles = read_smiles_column(args.input)
    if args.cache:
        dataset = MoleculeDataset(smiles, cache=True, workers=args.workers)
        batch = dataset.batch(range(len(smiles)))
    else:
        batch = featurize_batch(smiles, workers=args.workers)
    for i, cat, msg in batch.failed:
        print(json.dumps({"skipped_row": i, "error": cat, "message": msg}), file=sys.stderr)
    out = Path(args.out)
    out.write_bytes(serialize_batch(batch))
    save_resolved(config, out)
    print(f"featurized {batch.n_molecules} molecules ({len(batch.failed)} skipped) -> {out}")
    return 0


def cmd_split(args) -> int:
    from .data import ingest_csv
    from .splits import cluster_split, temporal_split

    config = load_config(args.config)
    sp = config["split"]
    sp["method"] = args.method
    for key, flag in (("seed", "seed"), ("k", "k"), ("pca_dim", "pca_dim"), ("test_fraction", "test_frac")):
        value = getattr(args, flag)
        if value is not None:
            sp[key] = value
    ds = ingest_csv(args.input)
    if args.method == "temporal":
        if ds.dates is None:
            raise MissingDate("input has no 'date' column")
        manifest = temporal_split(ds.smiles, ds.dates, sp["test_fraction"])
    else:
        manifest, _ = cluster_split(ds.smiles, k=sp["k"], seed=sp["seed"], pca_dim=sp["pca_dim"], test_fraction=sp["test_fraction"])
    out = Path(args.out)
    manifest.save(out, [header_line(config)])
    save_resolved(config, out)
    print(f"{args.method} split: {len(manifest.train_indices)} train / {len(manifest.test_indices)} test -> {out}")
    return 0


def cmd_build_vocab(args) -> int:
    from .data import read_smiles_column
    from .pretrain_labels import build_context_vocab, save_vocabs
    from .smiles import parse_smiles

    graphs = [parse_smiles(s) for s in read_smiles_column(args.input)]
    atom = build_context_vocab(graphs, k=args.k, min_frequency=args.min_freq, kind="atom", workers=args.workers)
    bond = build_context_vocab(graphs, k=args.k, min_frequency=args.min_freq, kind="bond", workers=args.workers)
    config = {"build_vocab": {"k": args.k, "min_frequency": args.min_freq}}
    save_vocabs(args.out, atom, bond, header_lines=[header_line(config)])
    print(f"atom vocabulary {len(atom)} classes, bond vocabulary {len(bond)} classes -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .data import read_smiles_column
    from .errors import VocabMismatch
    from .pretrain_labels import BUILTIN_MOTIFS, load_vocabs
    from .train import load_pretraining, prepare_pretraining, run_pretraining, save_pretraining

    config = load_config(args.config)
    if args.workers_sim is not None:
        config["train"]["workers_sim"] = args.workers_sim
    vocabs = load_vocabs(args.vocab)
    if "atom" not in vocabs or "bond" not in vocabs:
        raise VocabMismatch(f"{args.vocab} must hold both atom and bond vocabularies")
    atom, bond = vocabs["atom"], vocabs["bond"]
    smiles = read_smiles_column(args.corpus)
    items, targets = prepare_pretraining(smiles, atom, bond, BUILTIN_MOTIFS)
    mc = _model_config(config, atom_vocab_size=len(atom), bond_vocab_size=len(bond), n_motifs=len(BUILTIN_MOTIFS))
    tc = _train_config(config)
    resume = load_pretraining(args.resume) if args.resume else None
    result = run_pretraining(items, targets, mc, tc, atom, bond, resume=resume)
    result.params.meta["config_sha256"] = config_hash(config)
    out = Path(args.out)
    save_pretraining(result, out)
    save_resolved(config, out)
    for h in result.history:
        print(f"epoch {h['epoch']} loss {h['loss']:.6f}")
    return 0


def cmd_finetune(args) -> int:
    from .data import ingest_csv
    from .model import load_checkpoint
    from .splits import SplitManifest
    from .train import Ensemble, LabeledData, train_ensemble, train_finetune

    config = load_config(args.config)
    if args.single:
        config["train"]["ensemble"] = False
    if args.workers_sim is not None:
        config["train"]["workers_sim"] = args.workers_sim
    ds = ingest_csv(args.data)
    manifest = SplitManifest.load(args.manifest)
    train_idx = _manifest_rows(manifest, ds.smiles, "train")
    data = LabeledData(ds.smiles, ds.table)
    mc = _model_config(config, n_tasks=ds.table.n_tasks)
    tc = _train_config(config)
    pretrained = load_checkpoint(args.init) if args.init else None
    if config["train"]["ensemble"]:
        ensemble = train_ensemble(data, train_idx, mc, tc, pretrained)
    else:
        res = train_finetune(data, train_idx, mc, tc, pretrained)
        ensemble = Ensemble([res.params], [res.history])
    for m in ensemble.members:
        m.meta["config_sha256"] = config_hash(config)
    out = Path(args.out)
    ensemble.save(out)
    save_resolved(config, out)
    print(f"trained {len(ensemble.members)} member(s) on {len(train_idx)} molecules -> {out}")
    return 0


def _manifest_rows(manifest, smiles: list[str], fold: str) -> np.ndarray:
    """Indices into ``smiles`` of the manifest's ``fold`` molecules."""
    from .errors import EmptyFold

    wanted = {s for s, f in zip(manifest.smiles, manifest.folds) if f == fold}
    rows = np.array([i for i, s in enumerate(smiles) if s in wanted], dtype=np.int64)
    if len(rows) == 0:
        raise EmptyFold(f"no {fold} molecules of the manifest are in the dataset")
    return rows


def cmd_predict(args) -> int:
    import csv
    import io

    from .data import read_smiles_column
    from .featurize import featurize_batch
    from .train import Ensemble

    model_dir = Path(args.model)
    ensemble = Ensemble.load(model_dir)
    config_path = model_dir / "resolved_config.json"
    config = json.loads(config_path.read_text()) if config_path.exists() else {}
    smiles = read_smiles_column(args.input)
    batch = featurize_batch(smiles)
    if batch.failed:
        i, cat, msg = batch.failed[0]
        raise KermtError(f"row {i} ({smiles[i]!r}) failed to featurize: {cat}: {msg}")
    mean, per = ensemble.predict(batch)
    tasks = ensemble.task_names
    buf = io.StringIO()
    buf.write(_comment(header_line(config)))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["smiles"] + tasks + [f"{t}__member_{m}" for m in range(per.shape[0]) for t in tasks])
    for i, s in enumerate(smiles):
        w.writerow([s] + [repr(float(v)) for v in mean[i]] + [repr(float(per[m, i, t])) for m in range(per.shape[0]) for t in range(len(tasks))])
    Path(args.out).write_text(buf.getvalue())
    print(f"predicted {len(smiles)} molecules x {len(tasks)} tasks -> {args.out}")
    return 0


def read_predictions(path) -> tuple[list[str], list[str], np.ndarray]:
    """(smiles, task names, member predictions [M, n, T]) from a predictions CSV."""
    import csv

    lines = [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]
    rows = list(csv.reader(lines))
    header = rows[0]
    member_cols = [c for c in header if "__member_" in c]
    tasks = [c for c in header[1:] if "__member_" not in c]
    n_members = len({c.rsplit("__member_", 1)[1] for c in member_cols})
    col = {c: i for i, c in enumerate(header)}
    smiles = [r[0] for r in rows[1:]]
    per = np.zeros((n_members, len(smiles), len(tasks)))
    for i, r in enumerate(rows[1:]):
        for m in range(n_members):
            for t, name in enumerate(tasks):
                per[m, i, t] = float(r[col[f"{name}__member_{m}"]])
    return smiles, tasks, per


def cmd_evaluate(args) -> int:
    from .data import ingest_csv
    from .evaluation import build_report, fingerprints_for
    from .splits import SplitManifest

    config = resolve_config({"eval": {}})
    ev = config["eval"]
    ev["simbins"] = bool(args.simbins)
    if args.potency_bins:
        try:
            edges = [float(x) for x in args.potency_bins.split(",")]
        except ValueError:
            raise ConfigError(f"--potency-bins expects two numbers, got {args.potency_bins!r}") from None
        if len(edges) != 2 or edges[0] >= edges[1]:
            raise ConfigError("--potency-bins expects two increasing numbers")
        ev["potency_edges"] = edges
    smiles, tasks, per = read_predictions(args.preds)
    truth = ingest_csv(args.truth)
    if tasks != truth.task_names:
        raise TaskMismatch(f"prediction tasks {tasks} differ from truth tasks {truth.task_names}")
    manifest = SplitManifest.load(args.manifest)
    test_set = {s for s, f in zip(manifest.smiles, manifest.folds) if f == "test"}
    pred_row = {s: i for i, s in enumerate(smiles)}
    truth_row = {s: i for i, s in enumerate(truth.smiles)}
    test_smiles = [s for s in manifest.smiles if s in test_set and s in pred_row and s in truth_row]
    if not test_smiles:
        raise KermtError("no test-fold molecules appear in both predictions and truth")
    y = truth.table.values[[truth_row[s] for s in test_smiles]]
    p = per[:, [pred_row[s] for s in test_smiles], :]
    test_fps = train_fps = None
    if ev["simbins"]:
        train_smiles = [s for s, f in zip(manifest.smiles, manifest.folds) if f == "train"]
        test_fps = fingerprints_for(test_smiles)
        train_fps = fingerprints_for(train_smiles)
    report = build_report(tasks, y, p, test_fps, train_fps, ev["similarity_edges"], ev["potency_edges"], ev["min_bin_count"])
    report.settings.update({"header": header_line(config), "n_test_molecules": len(test_smiles)})
    out = Path(args.out)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    csv_path.write_text(_comment(header_line(config)) + report.to_csv())
    json_path.write_text(report.to_json())
    save_resolved(config, csv_path)
    for t in report.tasks:
        print(f"{t.task}: pearson_r2={t.pearson_r2} n={t.n_test} member_std={t.member_std}")
    return 0


def cmd_benchmark(args) -> int:
    from .benchmark import ddp_exactness, mt_vs_st
    from .data import synthetic_benchmark

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = synthetic_benchmark(args.seed)
    bench.write(out)
    seeds = tuple(range(args.seed, args.seed + args.n_seeds))
    results = {
        "seed": args.seed,
        "mt_vs_st": mt_vs_st(bench, seeds=seeds),
        "ddp_exactness": ddp_exactness(bench, seed=args.seed),
    }
    config = {"benchmark": {"seed": args.seed, "n_seeds": args.n_seeds}}
    results["header"] = header_line(config)
    (out / "benchmark_results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    mt = results["mt_vs_st"]
    print(f"MT vs ST on {mt['task']}: median MT r2 {mt['median_mt']:.4f} vs ST {mt['median_st']:.4f} -> {'pass' if mt['passed'] else 'FAIL'}")
    dd = results["ddp_exactness"]
    print(f"DDP-sim exactness: max |diff| {max(dd['max_abs_diff'].values()):.3e} -> {'pass' if dd['passed'] else 'FAIL'}")
    return 0 if mt["passed"] and dd["passed"] else 1


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kermtkit", description="Molecular graph encoder pretraining, finetuning and evaluation.")
    p.add_argument("--version", action="version", version=f"kermtkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("featurize", help="featurize a CSV of SMILES into a binary batch file")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--cache", action="store_true", help="precompute through the cached dataset path")
    s.add_argument("--config")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("split", help="write a train/test manifest")
    s.add_argument("method", choices=["temporal", "cluster"])
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--pca-dim", dest="pca_dim", type=int)
    s.add_argument("--test-frac", dest="test_frac", type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("build-vocab", help="build atom and bond context vocabularies")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=1, choices=[1, 2])
    s.add_argument("--min-freq", dest="min_freq", type=int, default=5)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("pretrain", help="self-supervised pretraining of the encoder")
    s.add_argument("--corpus", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--workers-sim", dest="workers_sim", type=int)
    s.add_argument("--resume", help="continue from a pretraining checkpoint")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="train the 4-member ensemble (or one model with --single)")
    s.add_argument("--data", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--init", help="pretraining checkpoint for the encoder")
    s.add_argument("--single", action="store_true", help="train one model instead of the ensemble")
    s.add_argument("--workers-sim", dest="workers_sim", type=int)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("predict", help="predict with a trained model directory")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metric report on the test fold")
    s.add_argument("--preds", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--simbins", action="store_true", help="add Tanimoto-similarity bins")
    s.add_argument("--potency-bins", dest="potency_bins", help="potency bin edges, e.g. 2,3")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("benchmark", help="synthetic benchmark suites")
    s.add_argument("suite", choices=["synthetic"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--n-seeds", dest="n_seeds", type=int, default=5)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except KermtError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
