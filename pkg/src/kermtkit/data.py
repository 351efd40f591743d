"""CSV dataset ingestion and the seeded synthetic multitask benchmark."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import MissingSmilesColumn, NonNumericCell
from .featurize import DESCRIPTOR_NAMES, molecule_descriptors
from .pretrain_labels import MOTIF_NAMES, motif_labels
from .smiles import parse_smiles
from .train import SparseTaskTable


@dataclass
class Dataset:
    smiles: list[str]
    table: SparseTaskTable
    dates: list[str] | None = None
    merged: list[tuple[str, list[int]]] = field(default_factory=list)  # (smiles, source line numbers)

    def __len__(self):
        return len(self.smiles)

    @property
    def task_names(self) -> list[str]:
        return self.table.task_names


def _data_lines(text: str):
    """Yield (physical line number, line) skipping '#' comment lines."""
    for no, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield no, line


def read_csv_text(text: str) -> Dataset:
    lines = list(_data_lines(text))
    if not lines:
        raise MissingSmilesColumn("file has no header row")
    header = next(csv.reader([lines[0][1]]))
    header = [h.strip() for h in header]
    if "smiles" not in header:
        raise MissingSmilesColumn(f"no 'smiles' column in header {header}")
    s_col = header.index("smiles")
    d_col = header.index("date") if "date" in header else None
    task_cols = [i for i, h in enumerate(header) if i not in (s_col, d_col)]
    task_names = [header[i] for i in task_cols]

    order: list[str] = []
    rows: dict[str, list[np.ndarray]] = {}
    lines_of: dict[str, list[int]] = {}
    date_of: dict[str, str] = {}
    for no, line in lines[1:]:
        cells = next(csv.reader([line]))
        cells += [""] * (len(header) - len(cells))
        smi = cells[s_col].strip()
        vals = np.full(len(task_cols), np.nan)
        for j, c in enumerate(task_cols):
            cell = cells[c].strip()
            if cell == "":
                continue
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(no, header[c], cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(no, header[c], cell)
            vals[j] = v
        if smi not in rows:
            order.append(smi)
            rows[smi] = []
            lines_of[smi] = []
            if d_col is not None:
                date_of[smi] = cells[d_col].strip()
        rows[smi].append(vals)
        lines_of[smi].append(no)

    values = np.full((len(order), len(task_cols)), np.nan)
    merged = []
    for i, smi in enumerate(order):
        stack = np.vstack(rows[smi])
        obs = np.isfinite(stack)
        n = obs.sum(axis=0)
        total = np.where(obs, stack, 0.0).sum(axis=0)
        values[i] = np.where(n > 0, total / np.maximum(n, 1), np.nan)
        if len(rows[smi]) > 1:
            merged.append((smi, lines_of[smi]))
    dates = [date_of[s] for s in order] if d_col is not None else None
    return Dataset(order, SparseTaskTable(values, task_names), dates, merged)


def ingest_csv(path) -> Dataset:
    """Load a ``smiles[,date],task...`` CSV; empty cells are unobserved, duplicates averaged."""
    return read_csv_text(Path(path).read_text())


def write_csv(path, smiles: Sequence[str], table: SparseTaskTable, dates=None, header_comment: str | None = None) -> None:
    Path(path).write_text(dataset_csv_text(smiles, table, dates, header_comment))


def dataset_csv_text(smiles, table: SparseTaskTable, dates=None, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["smiles"] + (["date"] if dates is not None else []) + list(table.task_names))
    for i, s in enumerate(smiles):
        cells = ["" if not np.isfinite(v) else f"{v:.6f}" for v in table.values[i]]
        w.writerow([s] + ([dates[i]] if dates is not None else []) + cells)
    return buf.getvalue()


def read_smiles_column(path) -> list[str]:
    """SMILES of a CSV (header with a ``smiles`` column) or of a one-per-line text file."""
    text = Path(path).read_text()
    lines = list(_data_lines(text))
    if not lines:
        return []
    header = [h.strip() for h in next(csv.reader([lines[0][1]]))]
    if "smiles" not in header:
        raise MissingSmilesColumn(f"no 'smiles' column in {path}")
    col = header.index("smiles")
    return [next(csv.reader([line]))[col].strip() for _, line in lines[1:]]


# -- synthetic benchmark ---------------------------------------------------

# Cores carry up to three substituent slots written as branches after an atom.
CORES = (
    "c1cc{0}cc{1}c1{2}",
    "c1cc{0}ncc1{1}",
    "c1ccc2cc{0}ccc2c1{1}",
    "c1csc{0}c1{1}",
    "C1CC{0}CCN1{1}",
    "C1CCC{0}C1{1}",
    "C1CC{0}C{1}O1",
    "O=C{0}N{1}C{2}",
    "C{0}C{1}C{2}",
    "OC(=O)C{0}c1ccc{1}cc1",
    "N{0}C(=O)c1ccc{1}cc1",
    "c1ccc(cc1)C(=O)N{0}C{1}",
    "NC{0}C(=O)NC{1}C(=O)O",
    "c1ccc(cc1)S(=O)(=O)N{0}C{1}",
    "c1cnc{0}nc1{1}",
    "CC(=O)N{0}C{1}c1ccccc1",
)

SUBSTITUENTS = (
    "", "", "", "C", "CC", "CCC", "C(C)C", "O", "OC", "N", "NC", "N(C)C", "F", "Cl", "Br",
    "C(F)(F)F", "C#N", "C(=O)O", "C(=O)OC", "C(=O)N", "C(=O)NC", "NC(=O)C", "S(=O)(=O)N",
    "S(=O)(=O)C", "SC", "[N+](=O)[O-]", "OCC", "CO", "CN", "c1ccccc1", "C1CC1", "N1CCOCC1",
    "N1CCCC1", "C(=O)C", "NC(=O)N", "NC(=N)N", "S", "OCCO", "c1ccncc1", "CCN(C)C",
)

TASK_NAMES = ("task_1", "task_2", "task_3", "task_4", "task_5")
OBSERVATION_RATES = (0.25, 0.90, 0.65, 0.65, 0.55)
N_MOLECULES = 2000
START_DATE = _dt.date(2015, 1, 1)


def generate_molecules(n: int, rng: np.random.Generator) -> list[str]:
    """``n`` unique SMILES assembled from cores and substituents."""
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        core = CORES[rng.integers(len(CORES))]
        slots = core.count("{")
        subs = []
        for _ in range(slots):
            s = SUBSTITUENTS[rng.integers(len(SUBSTITUENTS))]
            subs.append(f"({s})" if s else "")
        smi = core.format(*subs)
        if smi in seen:
            continue
        seen.add(smi)
        out.append(smi)
    return out


@dataclass
class SyntheticBenchmark:
    smiles: list[str]
    table: SparseTaskTable  # observed values only (60% of entries)
    dates: list[str]
    full_values: np.ndarray  # noise-free-of-masking ground truth for every entry
    record: dict

    def csv_text(self, header_comment: str | None = None) -> str:
        return dataset_csv_text(self.smiles, self.table, self.dates, header_comment)

    def write(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        data_path = directory / "synthetic.csv"
        rec_path = directory / "generator.json"
        comment = f"kermtkit {__version__} synthetic benchmark seed={self.record['seed']}"
        data_path.write_text(self.csv_text(comment))
        rec_path.write_text(json.dumps(self.record, indent=2, sort_keys=True) + "\n")
        return data_path, rec_path


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def synthetic_benchmark(seed: int = 0, n: int = N_MOLECULES) -> SyntheticBenchmark:
    """Seeded 5-task sparse regression benchmark built from descriptor and motif signals.

    task_1 and task_2 share a latent signal (task_1 is the sparse one),
    task_3 is a saturating function, task_4 a quadratic and task_5 a count-like
    endpoint. Exactly ``round(rate * n)`` rows are observed per task.
    """
    rng = np.random.default_rng(seed)
    smiles = generate_molecules(n, rng)
    graphs = [parse_smiles(s) for s in smiles]
    desc = np.array([molecule_descriptors(g) for g in graphs])
    motifs = np.array([motif_labels(g) for g in graphs], dtype=np.float64)
    D = _zscore(desc)
    name_idx = {name: i for i, name in enumerate(DESCRIPTOR_NAMES)}
    m_idx = {name: i for i, name in enumerate(MOTIF_NAMES)}

    w_shared = {"mol_weight": 0.6, "hbond_donors": -0.5, "aromatic_rings": 0.7, "halogens": 0.4}
    shared = sum(w * D[:, name_idx[k]] for k, w in w_shared.items())
    shared = shared + 0.8 * motifs[:, m_idx["amide"]] - 0.6 * motifs[:, m_idx["carboxylic_acid"]]
    private_2 = 0.5 * D[:, name_idx["rotatable_bonds"]]
    sat = np.tanh(D[:, name_idx["hbond_acceptors"]] - D[:, name_idx["fraction_aromatic"]]) + 0.7 * motifs[:, m_idx["ether"]]
    quad = 0.5 * D[:, name_idx["heavy_atoms"]] ** 2 - 0.8 * D[:, name_idx["rings"]] + 0.6 * motifs[:, m_idx["nitrile"]]
    count = 0.6 * desc[:, name_idx["hbond_donors"]] + 0.4 * motifs[:, m_idx["aromatic_six_ring"]] - 0.5 * motifs[:, m_idx["hydroxyl"]]

    noise = (0.25, 0.3, 0.2, 0.2, 0.2)
    full = np.column_stack([
        shared + noise[0] * rng.normal(size=n),
        shared + private_2 + noise[1] * rng.normal(size=n),
        sat + noise[2] * rng.normal(size=n),
        quad + noise[3] * rng.normal(size=n),
        count + noise[4] * rng.normal(size=n),
    ])
    full = np.round(full, 6)

    values = np.full_like(full, np.nan)
    for t, rate in enumerate(OBSERVATION_RATES):
        rows = rng.choice(n, size=int(round(rate * n)), replace=False)
        values[rows, t] = full[rows, t]
    days = np.sort(rng.integers(0, 10 * 365, size=n))
    dates = [(START_DATE + _dt.timedelta(days=int(d))).isoformat() for d in days]

    record = {
        "seed": seed,
        "n_molecules": n,
        "tasks": list(TASK_NAMES),
        "observation_rates": list(OBSERVATION_RATES),
        "noise_sd": list(noise),
        "descriptor_standardization": "z-score over the generated set",
        "functions": {
            "shared": {"descriptors": w_shared, "motifs": {"amide": 0.8, "carboxylic_acid": -0.6}},
            "task_1": "shared + noise",
            "task_2": "shared + 0.5*z(rotatable_bonds) + noise",
            "task_3": "tanh(z(hbond_acceptors) - z(fraction_aromatic)) + 0.7*ether + noise",
            "task_4": "0.5*z(heavy_atoms)^2 - 0.8*z(rings) + 0.6*nitrile + noise",
            "task_5": "0.6*hbond_donors - 0.5*hydroxyl + 0.4*aromatic_six_ring + noise",
        },
        "dates": "sorted uniform days from 2015-01-01 over ten years",
    }
    record["sha256"] = hashlib.sha256(json.dumps(record, sort_keys=True).encode()).hexdigest()
    return SyntheticBenchmark(smiles, SparseTaskTable(values, list(TASK_NAMES)), dates, full, record)
