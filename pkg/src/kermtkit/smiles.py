"""SMILES subset parser producing heavy-atom molecular graphs.

Supported grammar: organic-subset atoms (B C N O P S F Cl Br I and aromatic
b c n o p s), bracket atoms with isotope/element/chirality/H-count/charge/
atom-class, bonds ``- = # : / \\``, branches, ring closures (``1``..``9`` and
``%nn``) and ``.``-separated fragments. Stereo and isotope information is
accepted and discarded. Aromaticity is taken verbatim from lowercase input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import IntEnum

from .errors import (
    EmptyInput,
    InvalidAromaticity,
    SmilesSyntaxError,
    UnbalancedParenthesis,
    UnknownAtomSymbol,
    UnmatchedRingClosure,
)


class BondOrder(IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def valence(self) -> float:
        return _BOND_VALENCE[self]


_BOND_VALENCE = {
    BondOrder.SINGLE: 1.0,
    BondOrder.DOUBLE: 2.0,
    BondOrder.TRIPLE: 3.0,
    BondOrder.AROMATIC: 1.5,
}

# Element vocabulary used by featurizers; anything else maps to "other".
ELEMENT_VOCAB = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "Si", "Se", "other")
HALOGENS = frozenset({"F", "Cl", "Br", "I"})

DEFAULT_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
    "F": 1, "Cl": 1, "Br": 1, "I": 1, "Si": 4, "Se": 2,
}

# Monoisotopic masses (Da) of the most abundant isotope.
MONOISOTOPIC_MASS = {
    "H": 1.00782503207, "Li": 7.0160040, "B": 11.0093055, "C": 12.0,
    "N": 14.0030740048, "O": 15.99491461956, "F": 18.99840322,
    "Na": 22.9897692809, "Mg": 23.985041700, "Al": 26.98153863,
    "Si": 27.9769265325, "P": 30.97376163, "S": 31.97207100,
    "Cl": 34.96885268, "K": 38.96370668, "Ca": 39.96259098,
    "Mn": 54.9380451, "Fe": 55.9349375, "Co": 58.9331950, "Ni": 57.9353429,
    "Cu": 62.9295975, "Zn": 63.9291422, "Ge": 73.9211778, "As": 74.9215965,
    "Se": 79.9165213, "Br": 78.9183371, "Sr": 87.9056121, "Ag": 106.905097,
    "Sn": 119.9021947, "Te": 129.9062244, "I": 126.904473, "Pt": 194.9647911,
    "Au": 196.9665687, "Hg": 201.970643, "Gd": 157.9241039, "Ba": 137.9052472,
    "Bi": 208.9803987, "Cs": 132.905451933,
}

_ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_AROMATIC_BRACKET = {**_AROMATIC_ORGANIC, "se": "Se", "as": "As", "te": "Te"}

_BRACKET_RE = re.compile(
    r"""^\[
    (?P<isotope>\d+)?
    (?P<symbol>[A-Z][a-z]?|se|as|te|[bcnops])
    (?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?
    (?P<hcount>H\d*)?
    (?P<charge>[+-]{1,4}|[+-]\d{1,2})?
    (?::\d+)?
    \]$""",
    re.VERBOSE,
)

_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True, slots=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int | None = None
    implicit_h: int = 0
    in_ring: bool = False
    degree: int = 0

    @property
    def element_class(self) -> str:
        return self.element if self.element in DEFAULT_VALENCE else "other"

    @property
    def total_h(self) -> int:
        return self.implicit_h


@dataclass(frozen=True, slots=True)
class Bond:
    begin: int
    end: int
    order: BondOrder
    in_ring: bool = False

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin


@dataclass(frozen=True, slots=True)
class MoleculeGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    source_smiles: str = ""
    n_fragments: int = 1
    valence_clamps: int = 0

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def multi_fragment(self) -> bool:
        return self.n_fragments > 1

    def neighbors(self, atom: int) -> list[int]:
        return [nbr for nbr, _ in self.adjacency[atom]]

    def bond_between(self, a: int, b: int) -> Bond | None:
        for nbr, bidx in self.adjacency[a]:
            if nbr == b:
                return self.bonds[bidx]
        return None


def _build_adjacency(n_atoms: int, bonds) -> tuple:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for i, b in enumerate(bonds):
        adj[b.begin].append((b.end, i))
        adj[b.end].append((b.begin, i))
    return tuple(tuple(a) for a in adj)


def _count_components(n_atoms: int, adjacency) -> int:
    seen = [False] * n_atoms
    count = 0
    for start in range(n_atoms):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            v = stack.pop()
            for w, _ in adjacency[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
    return count


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    if len(text) > 1 and text[1].isdigit():
        return sign * int(text[1:])
    return sign * len(text)


def _bracket_atom(token: str) -> Atom:
    m = _BRACKET_RE.match(token)
    if m is None:
        raise UnknownAtomSymbol(f"malformed bracket atom {token!r}")
    symbol = m.group("symbol")
    if symbol in _AROMATIC_BRACKET:
        element, aromatic = _AROMATIC_BRACKET[symbol], True
    else:
        element, aromatic = symbol, False
    if element not in MONOISOTOPIC_MASS or element == "H":
        raise UnknownAtomSymbol(f"unsupported element {symbol!r} in {token!r}")
    hcount = m.group("hcount")
    explicit_h = 0 if not hcount else (int(hcount[1:]) if len(hcount) > 1 else 1)
    charge = _parse_charge(m.group("charge"))
    if not -4 <= charge <= 4:
        raise SmilesSyntaxError(f"formal charge {charge} out of range in {token!r}")
    return Atom(element=element, formal_charge=charge, aromatic=aromatic, explicit_h=explicit_h)


def _tokenize_graph(smiles: str):
    """Return raw atoms and (begin, end, order) bonds with orders still unresolved."""
    atoms: list[Atom] = []
    bonds: list[list] = []  # [begin, end, order or None]
    pair_seen: set[tuple[int, int]] = set()
    branch_stack: list[int] = []
    open_rings: dict[int, tuple[int, BondOrder | None]] = {}
    prev: int | None = None
    pending: BondOrder | None = None
    pending_set = False
    n_fragments = 1
    i, n = 0, len(smiles)

    def add_bond(a: int, b: int, order: BondOrder | None, where: int):
        if a == b:
            raise SmilesSyntaxError(f"self bond at position {where}")
        key = (min(a, b), max(a, b))
        if key in pair_seen:
            raise SmilesSyntaxError(f"duplicate bond between atoms {a} and {b}")
        pair_seen.add(key)
        bonds.append([a, b, order])

    def add_atom(atom: Atom, where: int):
        nonlocal prev, pending, pending_set
        idx = len(atoms)
        atoms.append(atom)
        if prev is not None:
            add_bond(prev, idx, pending, where)
        elif pending_set:
            raise SmilesSyntaxError(f"bond without preceding atom at position {where}")
        prev = idx
        pending, pending_set = None, False

    while i < n:
        ch = smiles[i]
        if ch == "[":
            j = smiles.find("]", i)
            if j < 0:
                raise SmilesSyntaxError(f"unterminated bracket atom at position {i}")
            add_atom(_bracket_atom(smiles[i : j + 1]), i)
            i = j + 1
            continue
        if ch in "BCNOPSFI":
            two = smiles[i : i + 2]
            if two in ("Cl", "Br"):
                add_atom(Atom(element=two), i)
                i += 2
                continue
            add_atom(Atom(element=ch), i)
            i += 1
            continue
        if ch in _AROMATIC_ORGANIC:
            add_atom(Atom(element=_AROMATIC_ORGANIC[ch], aromatic=True), i)
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending_set:
                raise SmilesSyntaxError(f"two consecutive bond symbols at position {i}")
            pending, pending_set = _BOND_SYMBOLS[ch], True
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise UnbalancedParenthesis(f"branch opened without an atom at position {i}")
            branch_stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise UnbalancedParenthesis(f"unmatched ')' at position {i}")
            if pending_set:
                raise SmilesSyntaxError(f"dangling bond before ')' at position {i}")
            prev = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if ch == "%":
                digits = smiles[i + 1 : i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError(f"bad %nn ring closure at position {i}")
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise UnmatchedRingClosure(f"ring closure {label} without an atom")
            if label in open_rings:
                other, order = open_rings.pop(label)
                if pending_set and order is not None and order != pending:
                    raise SmilesSyntaxError(f"conflicting bond orders on ring closure {label}")
                add_bond(other, prev, pending if pending_set else order, i)
            else:
                open_rings[label] = (prev, pending if pending_set else None)
            pending, pending_set = None, False
            i += width
            continue
        if ch == ".":
            if pending_set:
                raise SmilesSyntaxError(f"dangling bond before '.' at position {i}")
            if branch_stack:
                raise UnbalancedParenthesis(f"'.' inside an open branch at position {i}")
            prev = None
            n_fragments += 1
            i += 1
            continue
        if ch.isspace():
            raise SmilesSyntaxError(f"whitespace inside SMILES at position {i}")
        raise UnknownAtomSymbol(f"unknown symbol {ch!r} at position {i}")

    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('")
    if open_rings:
        raise UnmatchedRingClosure(f"unclosed ring closure(s) {sorted(open_rings)}")
    if pending_set:
        raise SmilesSyntaxError("SMILES ends with a bond symbol")
    if not atoms:
        raise EmptyInput("no atoms in SMILES")
    return atoms, bonds, n_fragments


def perceive_rings(graph: MoleculeGraph) -> MoleculeGraph:
    """Flag ring atoms and bonds; a bond is in a ring iff it is not a bridge."""
    n = graph.n_atoms
    adj = graph.adjacency
    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * graph.n_bonds
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # (vertex, bond index used to enter, neighbor iterator position)
        stack = [(root, -1, 0)]
        while stack:
            v, parent_bond, pos = stack[-1]
            if pos < len(adj[v]):
                stack[-1] = (v, parent_bond, pos + 1)
                w, bidx = adj[v][pos]
                if bidx == parent_bond:
                    continue
                if disc[w] < 0:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, bidx, 0))
                else:
                    low[v] = min(low[v], disc[w])
            else:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        is_bridge[parent_bond] = True

    bonds = tuple(replace(b, in_ring=not is_bridge[i]) for i, b in enumerate(graph.bonds))
    ring_atom = [False] * n
    for b in bonds:
        if b.in_ring:
            ring_atom[b.begin] = ring_atom[b.end] = True
    atoms = tuple(replace(a, in_ring=ring_atom[i]) for i, a in enumerate(graph.atoms))
    return replace(graph, atoms=atoms, bonds=bonds)


def assign_implicit_hydrogens(graph: MoleculeGraph) -> MoleculeGraph:
    """Fill ``implicit_h`` from the default-valence table.

    Aromatic bonds count 1.5 and the per-atom bond-order sum is rounded down.
    Negative provisional counts clamp to zero; clamps on non-aromatic atoms
    are tallied in ``valence_clamps``.
    """
    clamps = 0
    atoms = []
    for i, atom in enumerate(graph.atoms):
        if atom.explicit_h is not None:
            atoms.append(replace(atom, implicit_h=atom.explicit_h))
            continue
        valence = DEFAULT_VALENCE.get(atom.element)
        if valence is None:
            atoms.append(replace(atom, implicit_h=0))
            continue
        order_sum = int(sum(graph.bonds[b].order.valence for _, b in graph.adjacency[i]))
        neg = -atom.formal_charge if atom.formal_charge < 0 else 0
        h = valence - order_sum - neg
        if h < 0:
            if not atom.aromatic:
                clamps += 1
            h = 0
        atoms.append(replace(atom, implicit_h=h))
    return replace(graph, atoms=tuple(atoms), valence_clamps=graph.valence_clamps + clamps)


def parse_smiles(smiles: str) -> MoleculeGraph:
    """Parse ``smiles`` into a :class:`MoleculeGraph` with rings and hydrogens assigned."""
    if smiles is None or not smiles.strip():
        raise EmptyInput("empty SMILES")
    smiles = smiles.strip()
    raw_atoms, raw_bonds, n_fragments = _tokenize_graph(smiles)

    bonds = []
    for a, b, order in raw_bonds:
        if order is None:
            both_aromatic = raw_atoms[a].aromatic and raw_atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        bonds.append(Bond(a, b, order))
    adjacency = _build_adjacency(len(raw_atoms), bonds)
    atoms = tuple(replace(atom, degree=len(adjacency[i])) for i, atom in enumerate(raw_atoms))
    graph = MoleculeGraph(
        atoms=atoms,
        bonds=tuple(bonds),
        adjacency=adjacency,
        source_smiles=smiles,
        n_fragments=_count_components(len(atoms), adjacency),
    )
    graph = perceive_rings(graph)

    # An implicit aromatic bond outside any ring (e.g. biaryl written without '-')
    # is a single bond.
    if any(b.order is BondOrder.AROMATIC and not b.in_ring for b in graph.bonds):
        fixed = tuple(
            replace(b, order=BondOrder.SINGLE) if b.order is BondOrder.AROMATIC and not b.in_ring else b
            for b in graph.bonds
        )
        graph = replace(graph, bonds=fixed)

    for i, atom in enumerate(graph.atoms):
        if atom.aromatic and not atom.in_ring:
            raise InvalidAromaticity(f"aromatic atom {i} ({atom.element}) is not in a ring")

    return assign_implicit_hydrogens(graph)


def count_peptide_bonds(graph: MoleculeGraph) -> tuple[int, bool]:
    """Count distinct C(=O)-N motifs; a molecule with six or more is a peptide."""
    count = 0
    for c, atom in enumerate(graph.atoms):
        if atom.element != "C":
            continue
        has_carbonyl = any(
            graph.atoms[nbr].element == "O" and graph.bonds[b].order is BondOrder.DOUBLE
            for nbr, b in graph.adjacency[c]
        )
        if not has_carbonyl:
            continue
        for nbr, b in graph.adjacency[c]:
            other = graph.atoms[nbr]
            if other.element == "N" and not other.aromatic and graph.bonds[b].order is BondOrder.SINGLE:
                count += 1
    return count, count >= 6


def ring_count(graph: MoleculeGraph) -> int:
    """Cyclomatic number |E| - |V| + components."""
    return graph.n_bonds - graph.n_atoms + graph.n_fragments


def aromatic_ring_count(graph: MoleculeGraph) -> int:
    """Cyclomatic number of the subgraph spanned by aromatic bonds."""
    arom = [b for b in graph.bonds if b.order is BondOrder.AROMATIC]
    if not arom:
        return 0
    nodes = sorted({i for b in arom for i in b.endpoints})
    index = {v: k for k, v in enumerate(nodes)}
    parent = list(range(len(nodes)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = len(nodes)
    for b in arom:
        ra, rb = find(index[b.begin]), find(index[b.end])
        if ra != rb:
            parent[ra] = rb
            components -= 1
    return len(arom) - len(nodes) + components
