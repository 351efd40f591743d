"""Atom, bond and molecule features, batching and the binary batch format.

Atom feature layout (``ATOM_DIM`` = 34)::

    [0:13]   element one-hot over ELEMENT_VOCAB (last slot = other)
    [13:20]  degree 0..5, slot 19 = 6 or more
    [20:26]  formal charge -2..+2, slot 25 = anything else
    [26:32]  hydrogen count 0..4, slot 31 = 5 or more
    [32]     aromatic
    [33]     in ring

Bond feature layout (``BOND_DIM`` = 5): order one-hot (single, double,
triple, aromatic) followed by in-ring.

Descriptors (``DESCRIPTOR_NAMES``) are a fixed in-house set of 12 values.
"""

from __future__ import annotations

import io
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AllMoleculesInvalid, CorruptFile, KermtError, SchemaMismatch
from .smiles import (
    ELEMENT_VOCAB,
    HALOGENS,
    MONOISOTOPIC_MASS,
    Atom,
    Bond,
    BondOrder,
    MoleculeGraph,
    aromatic_ring_count,
    count_peptide_bonds,
    parse_smiles,
    ring_count,
)

SCHEMA_VERSION = 1
ATOM_DIM = 34
BOND_DIM = 5
DESCRIPTOR_NAMES = (
    "heavy_atoms",
    "mol_weight",
    "rings",
    "aromatic_rings",
    "hbond_donors",
    "hbond_acceptors",
    "rotatable_bonds",
    "halogens",
    "formal_charge",
    "peptide_bonds",
    "fraction_aromatic",
    "branching_index",
)
DESCRIPTOR_DIM = len(DESCRIPTOR_NAMES)

_ELEMENT_SLOT = {e: i for i, e in enumerate(ELEMENT_VOCAB)}
_DEGREE_OFFSET = 13
_CHARGE_OFFSET = 20
_H_OFFSET = 26
_AROMATIC_SLOT = 32
_RING_SLOT = 33


@dataclass(frozen=True)
class FeatureSchema:
    atom_dim: int = ATOM_DIM
    bond_dim: int = BOND_DIM
    descriptor_dim: int = DESCRIPTOR_DIM
    version: int = SCHEMA_VERSION


SCHEMA = FeatureSchema()


def atom_features(atom: Atom, graph: MoleculeGraph | None = None) -> np.ndarray:
    vec = np.zeros(ATOM_DIM, dtype=np.float32)
    vec[_ELEMENT_SLOT.get(atom.element, len(ELEMENT_VOCAB) - 1)] = 1
    vec[_DEGREE_OFFSET + min(atom.degree, 6)] = 1
    charge_slot = atom.formal_charge + 2 if -2 <= atom.formal_charge <= 2 else 5
    vec[_CHARGE_OFFSET + charge_slot] = 1
    vec[_H_OFFSET + min(atom.implicit_h, 5)] = 1
    vec[_AROMATIC_SLOT] = float(atom.aromatic)
    vec[_RING_SLOT] = float(atom.in_ring)
    return vec


def bond_features(bond: Bond) -> np.ndarray:
    vec = np.zeros(BOND_DIM, dtype=np.float32)
    vec[int(bond.order)] = 1
    vec[4] = float(bond.in_ring)
    return vec


def _rotatable(graph: MoleculeGraph, bond: Bond) -> bool:
    if bond.order is not BondOrder.SINGLE or bond.in_ring:
        return False
    a, b = graph.atoms[bond.begin], graph.atoms[bond.end]
    return a.degree >= 2 and b.degree >= 2


def molecule_descriptors(graph: MoleculeGraph) -> np.ndarray:
    atoms = graph.atoms
    n = len(atoms)
    mass = sum(MONOISOTOPIC_MASS[a.element] + a.implicit_h * MONOISOTOPIC_MASS["H"] for a in atoms)
    donors = sum(1 for a in atoms if a.element in ("N", "O") and a.implicit_h > 0)
    acceptors = sum(1 for a in atoms if a.element in ("N", "O"))
    n_aromatic = sum(1 for a in atoms if a.aromatic)
    values = (
        n,
        mass,
        ring_count(graph),
        aromatic_ring_count(graph),
        donors,
        acceptors,
        sum(1 for b in graph.bonds if _rotatable(graph, b)),
        sum(1 for a in atoms if a.element in HALOGENS),
        sum(a.formal_charge for a in atoms),
        count_peptide_bonds(graph)[0],
        n_aromatic / n,
        sum(a.degree**2 for a in atoms) / n,
    )
    return np.array(values, dtype=np.float64)


@dataclass
class MolFeatures:
    """Features of one molecule with molecule-local indices."""

    atom_features: np.ndarray  # [n_atoms, ATOM_DIM] float32
    bond_features: np.ndarray  # [2 * n_bonds, BOND_DIM] float32, directed
    edge_index: np.ndarray  # [2, 2 * n_bonds] int64 (src, dst)
    descriptors: np.ndarray  # [DESCRIPTOR_DIM] float64

    @property
    def n_atoms(self) -> int:
        return self.atom_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_index.shape[1]


def featurize_graph(graph: MoleculeGraph) -> MolFeatures:
    n_atoms, n_bonds = graph.n_atoms, graph.n_bonds
    atom_feats = np.stack([atom_features(a, graph) for a in graph.atoms])
    bond_feats = np.zeros((2 * n_bonds, BOND_DIM), dtype=np.float32)
    edge_index = np.zeros((2, 2 * n_bonds), dtype=np.int64)
    for i, b in enumerate(graph.bonds):
        f = bond_features(b)
        bond_feats[2 * i] = f
        bond_feats[2 * i + 1] = f
        edge_index[:, 2 * i] = (b.begin, b.end)
        edge_index[:, 2 * i + 1] = (b.end, b.begin)
    return MolFeatures(atom_feats.reshape(n_atoms, ATOM_DIM), bond_feats, edge_index, molecule_descriptors(graph))


def featurize_smiles(smiles: str) -> MolFeatures:
    return featurize_graph(parse_smiles(smiles))


@dataclass
class FeatureBatch:
    atom_features: np.ndarray  # [total_atoms, ATOM_DIM] float32
    bond_features: np.ndarray  # [total_edges, BOND_DIM] float32
    edge_index: np.ndarray  # [2, total_edges] int64
    reverse_edge: np.ndarray  # [total_edges] int64
    graph_offsets: np.ndarray  # [n_molecules + 1] int64
    descriptors: np.ndarray  # [n_molecules, DESCRIPTOR_DIM] float64
    source_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    failed: list = field(default_factory=list)  # (input index, error category, message)
    schema_version: int = SCHEMA_VERSION

    @property
    def n_molecules(self) -> int:
        return len(self.graph_offsets) - 1

    @property
    def n_atoms(self) -> int:
        return int(self.graph_offsets[-1])

    @property
    def n_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def atom_to_mol(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_molecules), np.diff(self.graph_offsets))

    @property
    def atoms_per_mol(self) -> np.ndarray:
        return np.diff(self.graph_offsets)

    def edge_mol(self) -> np.ndarray:
        return self.atom_to_mol[self.edge_index[0]] if self.n_edges else np.zeros(0, dtype=np.int64)

    def check_schema(self, version: int = SCHEMA_VERSION) -> None:
        if self.schema_version != version:
            raise SchemaMismatch(f"batch schema v{self.schema_version}, expected v{version}")


def collate(items: Sequence[MolFeatures], source_indices=None) -> FeatureBatch:
    """Assemble per-molecule features into one batch.

    Row ranges are sized in a sequential pre-pass and filled into preallocated
    arrays, so output order is the input order.
    """
    n_mol = len(items)
    atom_counts = np.array([it.n_atoms for it in items], dtype=np.int64)
    edge_counts = np.array([it.n_edges for it in items], dtype=np.int64)
    offsets = np.zeros(n_mol + 1, dtype=np.int64)
    np.cumsum(atom_counts, out=offsets[1:])
    eoffsets = np.zeros(n_mol + 1, dtype=np.int64)
    np.cumsum(edge_counts, out=eoffsets[1:])

    atom_feats = np.empty((offsets[-1], ATOM_DIM), dtype=np.float32)
    bond_feats = np.empty((eoffsets[-1], BOND_DIM), dtype=np.float32)
    edge_index = np.empty((2, eoffsets[-1]), dtype=np.int64)
    descriptors = np.empty((n_mol, DESCRIPTOR_DIM), dtype=np.float64)
    for m, it in enumerate(items):
        a0, a1 = offsets[m], offsets[m + 1]
        e0, e1 = eoffsets[m], eoffsets[m + 1]
        atom_feats[a0:a1] = it.atom_features
        bond_feats[e0:e1] = it.bond_features
        edge_index[:, e0:e1] = it.edge_index + a0
        descriptors[m] = it.descriptors
    # directed edges come in (u->v, v->u) pairs
    reverse = np.arange(eoffsets[-1], dtype=np.int64) ^ 1
    if source_indices is None:
        source_indices = np.arange(n_mol, dtype=np.int64)
    return FeatureBatch(
        atom_features=atom_feats,
        bond_features=bond_feats,
        edge_index=edge_index,
        reverse_edge=reverse,
        graph_offsets=offsets,
        descriptors=descriptors,
        source_indices=np.asarray(source_indices, dtype=np.int64),
    )


def _featurize_chunk(args):
    start, smiles_chunk = args
    out = []
    for k, s in enumerate(smiles_chunk):
        try:
            out.append((start + k, featurize_smiles(s), None))
        except KermtError as exc:
            out.append((start + k, None, (exc.category, str(exc))))
    return out


def resolve_workers(workers: int) -> int:
    cap = os.environ.get("KERMTKIT_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def featurize_many(smiles_list: Sequence[str], workers: int = 1):
    """Featurize molecules; returns ``[(index, MolFeatures | None, error | None)]`` in input order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    workers = resolve_workers(workers)
    smiles_list = list(smiles_list)
    if workers == 1 or len(smiles_list) < 2:
        return _featurize_chunk((0, smiles_list))
    bounds = np.linspace(0, len(smiles_list), 4 * workers + 1).astype(int)
    chunks = [(int(a), smiles_list[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    results = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_featurize_chunk, chunks):
            results.extend(part)
    return results


def featurize_batch(smiles_list: Sequence[str], workers: int = 1) -> FeatureBatch:
    """Featurize and batch ``smiles_list``; unparseable molecules are reported and dropped."""
    results = featurize_many(smiles_list, workers)
    items = [f for _, f, _ in results if f is not None]
    if not items:
        raise AllMoleculesInvalid(f"none of the {len(results)} molecules could be parsed")
    kept = [i for i, f, _ in results if f is not None]
    batch = collate(items, kept)
    batch.failed = [(i, err[0], err[1]) for i, f, err in results if f is None]
    return batch


class MoleculeDataset:
    """Indexable molecule collection that yields collated batches.

    In the default on-the-fly mode only the SMILES are held and features are
    generated when a batch is requested; ``cache=True`` precomputes and keeps
    every molecule's features.
    """

    def __init__(self, smiles: Sequence[str], cache: bool = False, workers: int = 1):
        self.smiles = list(smiles)
        self.cache = cache
        self._features = None
        if cache:
            results = featurize_many(self.smiles, workers)
            bad = [(i, e) for i, f, e in results if f is None]
            if bad:
                i, (cat, msg) = bad[0]
                raise KermtError(f"molecule {i} failed to featurize: {cat}: {msg}")
            self._features = [f for _, f, _ in results]

    def __len__(self):
        return len(self.smiles)

    def features(self, index: int) -> MolFeatures:
        if self._features is not None:
            return self._features[index]
        return featurize_smiles(self.smiles[index])

    def batch(self, indices: Sequence[int]) -> FeatureBatch:
        return collate([self.features(int(i)) for i in indices], indices)

    def iter_batches(self, batch_size: int, order=None):
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield idx, self.batch(idx)


# -- binary batch format --------------------------------------------------
# header: magic, schema version, n_molecules, total_atoms, total_edges,
# atom_dim, bond_dim, descriptor_dim (all little-endian uint32), then
# float32 atom/bond/descriptor payloads and int32 index arrays.
_MAGIC = b"KFB1"
_HEADER = struct.Struct("<4s7I")


def serialize_batch(batch: FeatureBatch) -> bytes:
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            _MAGIC,
            batch.schema_version,
            batch.n_molecules,
            batch.n_atoms,
            batch.n_edges,
            ATOM_DIM,
            BOND_DIM,
            DESCRIPTOR_DIM,
        )
    )
    for arr in (batch.atom_features, batch.bond_features, batch.descriptors):
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    for arr in (batch.edge_index, batch.reverse_edge, batch.graph_offsets, batch.source_indices):
        buf.write(np.ascontiguousarray(arr, dtype="<i4").tobytes())
    return buf.getvalue()


def deserialize_batch(data: bytes) -> FeatureBatch:
    if len(data) < _HEADER.size:
        raise CorruptFile("batch file shorter than its header")
    magic, version, n_mol, n_atoms, n_edges, adim, bdim, ddim = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise CorruptFile("bad batch magic")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"batch schema v{version}, expected v{SCHEMA_VERSION}")
    pos = _HEADER.size

    def take(count, dtype, shape):
        nonlocal pos
        size = count * 4
        if pos + size > len(data):
            raise CorruptFile("batch file truncated")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += size
        return arr

    atom = take(n_atoms * adim, "<f4", (n_atoms, adim)).astype(np.float32)
    bond = take(n_edges * bdim, "<f4", (n_edges, bdim)).astype(np.float32)
    desc = take(n_mol * ddim, "<f4", (n_mol, ddim)).astype(np.float64)
    edge_index = take(2 * n_edges, "<i4", (2, n_edges)).astype(np.int64)
    reverse = take(n_edges, "<i4", (n_edges,)).astype(np.int64)
    offsets = take(n_mol + 1, "<i4", (n_mol + 1,)).astype(np.int64)
    source = take(n_mol, "<i4", (n_mol,)).astype(np.int64)
    if pos != len(data):
        raise CorruptFile("trailing bytes after batch payload")
    return FeatureBatch(atom, bond, edge_index, reverse, offsets, desc, source, schema_version=version)
