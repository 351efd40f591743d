"""Self-supervised pretraining targets.

Node/edge-level targets are classes of k-hop context keys; the graph-level
target is a multi-label vector of functional-group (motif) presence.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptFile, EmptyCorpus, VersionMismatch
from .smiles import HALOGENS, BondOrder, MoleculeGraph

UNK = "<UNK>"
UNK_ID = 0
VOCAB_FORMAT_VERSION = 1


def atom_context_key(graph: MoleculeGraph, atom_index: int, k: int = 1) -> str:
    """Context key of one atom, e.g. ``"O_C-SINGLE1"`` for the ethanol oxygen.

    For ``k >= 2`` the element counts of atoms at exactly 2 bonds distance are
    appended after a ``;``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter()
    for nbr, b in graph.adjacency[atom_index]:
        counts[(graph.atoms[nbr].element, graph.bonds[b].order.name)] += 1
    key = graph.atoms[atom_index].element + "_" + ",".join(
        f"{el}-{order}{c}" for (el, order), c in sorted(counts.items())
    )
    if k >= 2:
        first = {nbr for nbr, _ in graph.adjacency[atom_index]}
        second = {
            nn for nbr in first for nn, _ in graph.adjacency[nbr] if nn != atom_index and nn not in first
        }
        hop2 = Counter(graph.atoms[a].element for a in second)
        key += ";" + ",".join(f"{el}{c}" for el, c in sorted(hop2.items()))
    return key


def bond_context_key(graph: MoleculeGraph, bond_index: int, k: int = 1) -> str:
    bond = graph.bonds[bond_index]
    a = atom_context_key(graph, bond.begin, k)
    b = atom_context_key(graph, bond.end, k)
    lo, hi = sorted((a, b))
    return f"{lo}~{bond.order.name}~{hi}"


@dataclass
class ContextVocab:
    ids: dict[str, int]
    counts: dict[str, int]
    k: int = 1
    min_frequency: int = 1
    kind: str = "atom"

    @property
    def unk_id(self) -> int:
        return UNK_ID

    def __len__(self) -> int:
        return len(self.ids) + 1

    @property
    def size(self) -> int:
        return len(self)

    def lookup(self, key: str) -> int:
        return self.ids.get(key, UNK_ID)

    def to_lines(self) -> list[str]:
        lines = [f"# kermtkit-vocab v{VOCAB_FORMAT_VERSION} kind={self.kind} k={self.k} min_frequency={self.min_frequency}"]
        lines.append(f"{UNK}\t{UNK_ID}\t0")
        for key, idx in sorted(self.ids.items(), key=lambda kv: kv[1]):
            lines.append(f"{key}\t{idx}\t{self.counts[key]}")
        return lines


def _count_keys(args) -> Counter:
    graphs, k, kind = args
    counter: Counter = Counter()
    for graph in graphs:
        if kind == "atom":
            counter.update(atom_context_key(graph, i, k) for i in range(graph.n_atoms))
        else:
            counter.update(bond_context_key(graph, i, k) for i in range(graph.n_bonds))
    return counter


def build_context_vocab(
    corpus: Sequence[MoleculeGraph], k: int = 1, min_frequency: int = 1, kind: str = "atom", workers: int = 1
) -> ContextVocab:
    """Frequency-filtered vocabulary; ids sorted by count desc, then key; id 0 is UNK.

    With ``workers > 1`` contiguous corpus chunks are counted in worker
    processes and merged sequentially.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    if kind not in ("atom", "bond"):
        raise ValueError(f"unknown vocab kind {kind!r}")
    from .featurize import resolve_workers

    workers = resolve_workers(workers)
    corpus = list(corpus)
    if workers == 1:
        counter = _count_keys((corpus, k, kind))
    else:
        bounds = np.linspace(0, len(corpus), workers + 1).astype(int)
        jobs = [(corpus[a:b], k, kind) for a, b in zip(bounds[:-1], bounds[1:])]
        counter = Counter()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_count_keys, jobs):
                counter.update(part)
    kept = sorted(((key, c) for key, c in counter.items() if c >= min_frequency), key=lambda kc: (-kc[1], kc[0]))
    ids = {key: i + 1 for i, (key, _) in enumerate(kept)}
    return ContextVocab(ids=ids, counts=dict(kept), k=k, min_frequency=min_frequency, kind=kind)


def save_vocabs(path, *vocabs: ContextVocab, header_lines: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header_lines]
    for v in vocabs:
        lines.extend(v.to_lines())
    Path(path).write_text("\n".join(lines) + "\n")


def load_vocabs(path) -> dict[str, ContextVocab]:
    """Read a vocabulary file; returns vocabularies keyed by kind."""
    out: dict[str, ContextVocab] = {}
    current = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line:
            continue
        if line.startswith("# kermtkit-vocab"):
            parts = line.split()
            version = int(parts[2].lstrip("v"))
            if version != VOCAB_FORMAT_VERSION:
                raise VersionMismatch(f"vocabulary format v{version} not supported")
            meta = dict(p.split("=", 1) for p in parts[3:])
            current = ContextVocab(ids={}, counts={}, k=int(meta["k"]), min_frequency=int(meta["min_frequency"]), kind=meta["kind"])
            out[current.kind] = current
            continue
        if line.startswith("#"):
            continue
        if current is None:
            raise CorruptFile(f"vocabulary row before header at line {lineno}")
        try:
            key, idx, count = line.split("\t")
        except ValueError:
            raise CorruptFile(f"malformed vocabulary row at line {lineno}") from None
        if key == UNK:
            continue
        current.ids[key] = int(idx)
        current.counts[key] = int(count)
    return out


# -- motifs -----------------------------------------------------------------


@dataclass(frozen=True)
class AtomSpec:
    elements: frozenset[str] | None = None  # None = any element
    aromatic: bool | None = None
    h: int | None = None  # exact hydrogen count
    min_h: int | None = None
    degree: int | None = None
    no_multiple: bool = False  # no double or triple bonds (aromatic allowed)
    saturated: bool = False  # single bonds only

    def to_json(self):
        d = {}
        if self.elements is not None:
            d["elements"] = sorted(self.elements)
        for name in ("aromatic", "h", "min_h", "degree"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.no_multiple:
            d["no_multiple"] = True
        if self.saturated:
            d["saturated"] = True
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "elements" in d:
            d["elements"] = frozenset(d["elements"])
        return cls(**d)


@dataclass(frozen=True)
class MotifPattern:
    name: str
    atoms: tuple[AtomSpec, ...]
    bonds: tuple[tuple[int, int, BondOrder | None], ...]  # None = any order

    def __post_init__(self):
        n = len(self.atoms)
        if not 1 <= n <= 8:
            raise ValueError(f"motif {self.name!r} must have 1..8 atoms")
        seen = {0}
        changed = True
        while changed:
            changed = False
            for a, b, _ in self.bonds:
                if (a in seen) != (b in seen):
                    seen |= {a, b}
                    changed = True
        if len(seen) != n:
            raise ValueError(f"motif {self.name!r} template is not connected")

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "atoms": [a.to_json() for a in self.atoms],
                "bonds": [[a, b, None if o is None else o.name] for a, b, o in self.bonds],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MotifPattern":
        d = json.loads(text)
        return cls(
            name=d["name"],
            atoms=tuple(AtomSpec.from_json(a) for a in d["atoms"]),
            bonds=tuple((a, b, None if o is None else BondOrder[o]) for a, b, o in d["bonds"]),
        )


def _atom_ok(graph: MoleculeGraph, idx: int, spec: AtomSpec) -> bool:
    atom = graph.atoms[idx]
    if spec.elements is not None and atom.element not in spec.elements:
        return False
    if spec.aromatic is not None and atom.aromatic != spec.aromatic:
        return False
    if spec.h is not None and atom.implicit_h != spec.h:
        return False
    if spec.min_h is not None and atom.implicit_h < spec.min_h:
        return False
    if spec.degree is not None and atom.degree != spec.degree:
        return False
    if spec.no_multiple or spec.saturated:
        for _, b in graph.adjacency[idx]:
            order = graph.bonds[b].order
            if order in (BondOrder.DOUBLE, BondOrder.TRIPLE):
                return False
            if spec.saturated and order is BondOrder.AROMATIC:
                return False
    return True


def match_pattern(graph: MoleculeGraph, pattern: MotifPattern) -> list[tuple[int, ...]]:
    """All embeddings of ``pattern`` in ``graph``, one per distinct matched atom set.

    Backtracking over template atoms in a connected order; each mapping is a
    tuple giving the graph atom for each template atom.
    """
    n_t = len(pattern.atoms)
    t_adj: list[list[tuple[int, BondOrder | None]]] = [[] for _ in range(n_t)]
    for a, b, o in pattern.bonds:
        t_adj[a].append((b, o))
        t_adj[b].append((a, o))

    # visit template atoms so each one (after the first) touches an already-placed atom
    order = [0]
    while len(order) < n_t:
        for t in range(n_t):
            if t not in order and any(nb in order for nb, _ in t_adj[t]):
                order.append(t)
                break
    candidates = [[g for g in range(graph.n_atoms) if _atom_ok(graph, g, spec)] for spec in pattern.atoms]

    results: dict[frozenset, tuple[int, ...]] = {}
    mapping = [-1] * n_t
    used: set[int] = set()

    def bond_ok(g1: int, g2: int, want: BondOrder | None) -> bool:
        bond = graph.bond_between(g1, g2)
        return bond is not None and (want is None or bond.order is want)

    def extend(depth: int):
        if depth == n_t:
            key = frozenset(mapping)
            if key not in results:
                results[key] = tuple(mapping)
            return
        t = order[depth]
        for g in candidates[t]:
            if g in used:
                continue
            if all(mapping[nb] < 0 or bond_ok(g, mapping[nb], o) for nb, o in t_adj[t]):
                mapping[t] = g
                used.add(g)
                extend(depth + 1)
                used.discard(g)
                mapping[t] = -1

    extend(0)
    return sorted(results.values())


def _s(*elements, **kw) -> AtomSpec:
    return AtomSpec(elements=frozenset(elements) if elements else None, **kw)


S, D, T, A = BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.TRIPLE, BondOrder.AROMATIC
_HAL = tuple(sorted(HALOGENS))

BUILTIN_MOTIFS: tuple[MotifPattern, ...] = (
    MotifPattern("carbonyl", (_s("C"), _s("O")), ((0, 1, D),)),
    MotifPattern("carboxylic_acid", (_s("C"), _s("O"), _s("O", h=1, degree=1)), ((0, 1, D), (0, 2, S))),
    MotifPattern("ester", (_s("C"), _s("O"), _s("O", degree=2), _s("C")), ((0, 1, D), (0, 2, S), (2, 3, S))),
    MotifPattern("amide", (_s("C"), _s("O"), _s("N", aromatic=False)), ((0, 1, D), (0, 2, S))),
    MotifPattern("primary_amine", (_s("N", aromatic=False, h=2, degree=1), _s("C", saturated=True)), ((0, 1, S),)),
    MotifPattern(
        "secondary_amine",
        (_s("N", aromatic=False, h=1, degree=2), _s("C", saturated=True), _s("C", saturated=True)),
        ((0, 1, S), (0, 2, S)),
    ),
    MotifPattern(
        "tertiary_amine",
        (_s("N", aromatic=False, h=0, degree=3), _s("C", saturated=True), _s("C", saturated=True), _s("C", saturated=True)),
        ((0, 1, S), (0, 2, S), (0, 3, S)),
    ),
    MotifPattern("hydroxyl", (_s("O", h=1, degree=1), _s("C", saturated=True)), ((0, 1, S),)),
    MotifPattern(
        "ether",
        (_s("O", h=0, degree=2, aromatic=False), _s("C", no_multiple=True), _s("C", no_multiple=True)),
        ((0, 1, S), (0, 2, S)),
    ),
    MotifPattern("nitro", (_s("N"), _s("O"), _s("O")), ((0, 1, D), (0, 2, S))),
    MotifPattern("nitrile", (_s("C"), _s("N")), ((0, 1, T),)),
    MotifPattern("aryl_halide", (_s(*_HAL), _s("C", aromatic=True)), ((0, 1, S),)),
    MotifPattern("alkyl_halide", (_s(*_HAL), _s("C", aromatic=False)), ((0, 1, S),)),
    MotifPattern("thiol", (_s("S", h=1, degree=1), _s("C")), ((0, 1, S),)),
    MotifPattern(
        "thioether",
        (_s("S", h=0, degree=2, aromatic=False), _s("C", no_multiple=True), _s("C", no_multiple=True)),
        ((0, 1, S), (0, 2, S)),
    ),
    MotifPattern(
        "sulfone",
        (_s("S"), _s("O"), _s("O"), _s("C"), _s("C")),
        ((0, 1, D), (0, 2, D), (0, 3, S), (0, 4, S)),
    ),
    MotifPattern("sulfonamide", (_s("S"), _s("O"), _s("O"), _s("N")), ((0, 1, D), (0, 2, D), (0, 3, S))),
    MotifPattern(
        "aromatic_six_ring",
        tuple(_s(aromatic=True) for _ in range(6)),
        tuple((i, (i + 1) % 6, A) for i in range(6)),
    ),
    MotifPattern("phenol", (_s("O", h=1, degree=1), _s("C", aromatic=True)), ((0, 1, S),)),
    MotifPattern("urea", (_s("N"), _s("C"), _s("O"), _s("N")), ((0, 1, S), (1, 2, D), (1, 3, S))),
    MotifPattern("guanidine", (_s("N"), _s("C"), _s("N"), _s("N")), ((0, 1, S), (1, 2, D), (1, 3, S))),
)

MOTIF_NAMES = tuple(m.name for m in BUILTIN_MOTIFS)


def motif_labels(graph: MoleculeGraph, motifs: Sequence[MotifPattern] = BUILTIN_MOTIFS) -> np.ndarray:
    return np.array([1 if match_pattern(graph, m) else 0 for m in motifs], dtype=np.int8)


def save_motifs(path, motifs: Iterable[MotifPattern] = BUILTIN_MOTIFS) -> None:
    Path(path).write_text("".join(m.to_json() + "\n" for m in motifs))


def load_motifs(path) -> tuple[MotifPattern, ...]:
    return tuple(MotifPattern.from_json(line) for line in Path(path).read_text().splitlines() if line.strip())


@dataclass
class PretrainTargets:
    atom_context_ids: np.ndarray  # [n_atoms]
    bond_context_ids: np.ndarray  # [2 * n_bonds], one per directed bond
    motif_labels: np.ndarray  # [n_motifs]


def pretrain_targets(
    graph: MoleculeGraph,
    atom_vocab: ContextVocab,
    bond_vocab: ContextVocab,
    motifs: Sequence[MotifPattern] = BUILTIN_MOTIFS,
) -> PretrainTargets:
    k = atom_vocab.k
    atom_ids = np.array([atom_vocab.lookup(atom_context_key(graph, i, k)) for i in range(graph.n_atoms)], dtype=np.int64)
    bond_ids = np.empty(2 * graph.n_bonds, dtype=np.int64)
    for i in range(graph.n_bonds):
        bond_ids[2 * i] = bond_ids[2 * i + 1] = bond_vocab.lookup(bond_context_key(graph, i, bond_vocab.k))
    return PretrainTargets(atom_ids, bond_ids, motif_labels(graph, motifs))


def unk_fraction(corpus: Sequence[MoleculeGraph], vocab: ContextVocab) -> float:
    """Fraction of atoms (or bonds) of ``corpus`` that map to UNK."""
    total = unk = 0
    for graph in corpus:
        n = graph.n_atoms if vocab.kind == "atom" else graph.n_bonds
        keyfn = atom_context_key if vocab.kind == "atom" else bond_context_key
        for i in range(n):
            total += 1
            unk += vocab.lookup(keyfn(graph, i, vocab.k)) == UNK_ID
    return unk / total if total else 0.0
