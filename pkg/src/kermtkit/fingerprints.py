"""Morgan (ECFP-style) fingerprints and Tanimoto similarity.

Hashing is 64-bit FNV-1a over little-endian encodings, so fingerprints are
reproducible across platforms. Bits are not RDKit-compatible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import EmptyReference, LengthMismatch
from .smiles import MoleculeGraph

ATOMIC_NUMBER = {
    "H": 1, "Li": 3, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Na": 11, "Mg": 12,
    "Al": 13, "Si": 14, "P": 15, "S": 16, "Cl": 17, "K": 19, "Ca": 20, "Mn": 25,
    "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29, "Zn": 30, "Ge": 32, "As": 33, "Se": 34,
    "Br": 35, "Sr": 38, "Ag": 47, "Sn": 50, "Te": 52, "I": 53, "Cs": 55, "Ba": 56,
    "Gd": 64, "Pt": 78, "Au": 79, "Hg": 80, "Bi": 83,
}


@dataclass(frozen=True)
class Fingerprint:
    words: np.ndarray  # packed uint64, bit i lives in words[i >> 6] at position i & 63
    radius: int
    nbits: int

    @property
    def bits(self) -> np.ndarray:
        return np.unpackbits(self.words.view(np.uint8), bitorder="little").astype(bool)

    @property
    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    @classmethod
    def from_bits(cls, bits, radius: int = 0) -> "Fingerprint":
        bits = np.asarray(bits, dtype=bool)
        if bits.size % 64:
            raise ValueError("bit length must be a multiple of 64")
        words = np.packbits(bits, bitorder="little").view(np.uint64).copy()
        return cls(words=words, radius=radius, nbits=bits.size)

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.words, other.words))

    def __hash__(self):
        return hash((self.nbits, self.words.tobytes()))


def atom_invariant_table(graph: MoleculeGraph) -> np.ndarray:
    """Initial invariant fields: (atomic number, degree, charge, H, in_ring, aromatic)."""
    return np.array(
        [
            (ATOMIC_NUMBER.get(a.element, 0), a.degree, a.formal_charge, a.implicit_h, int(a.in_ring), int(a.aromatic))
            for a in graph.atoms
        ],
        dtype=np.int64,
    ).reshape(-1, 6)


def _csr(graph: MoleculeGraph):
    indptr = np.zeros(graph.n_atoms + 1, dtype=np.int64)
    nbrs, orders = [], []
    for i, adj in enumerate(graph.adjacency):
        for nbr, b in adj:
            nbrs.append(nbr)
            orders.append(int(graph.bonds[b].order) + 1)
        indptr[i + 1] = len(nbrs)
    return indptr, np.array(nbrs, dtype=np.int64), np.array(orders, dtype=np.int64)


def environment_invariants(graph: MoleculeGraph, radius: int) -> np.ndarray:
    """Every atom's invariant for rounds 0..radius (round-major)."""
    init = kernels.atom_hashes(atom_invariant_table(graph))
    indptr, nbrs, orders = _csr(graph)
    return kernels.morgan_environments(init, indptr, nbrs, orders, radius)


def morgan_fingerprint(graph: MoleculeGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if nbits not in (1024, 2048):
        raise ValueError("nbits must be 1024 or 2048")
    invariants = environment_invariants(graph, radius)
    return Fingerprint(words=kernels.fold_bits(invariants, nbits), radius=radius, nbits=nbits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint lengths differ: {a.nbits} vs {b.nbits}")
    return float(kernels.tanimoto_words(a.words, b.words))


def stack_words(fps: Sequence[Fingerprint]) -> np.ndarray:
    return np.stack([fp.words for fp in fps]) if fps else np.zeros((0, 0), dtype=np.uint64)


def max_similarity_to_set(query: Fingerprint, reference: Sequence[Fingerprint]) -> float:
    if len(reference) == 0:
        raise EmptyReference("reference set is empty")
    if any(r.nbits != query.nbits for r in reference):
        raise LengthMismatch("reference fingerprints differ in length from the query")
    return float(kernels.max_tanimoto(query.words[None, :], stack_words(reference))[0])


def max_similarity_many(queries: Sequence[Fingerprint], reference: Sequence[Fingerprint]) -> np.ndarray:
    """Max Tanimoto to ``reference`` for each query."""
    if len(reference) == 0:
        raise EmptyReference("reference set is empty")
    if not queries:
        return np.zeros(0)
    return kernels.max_tanimoto(stack_words(queries), stack_words(reference))
