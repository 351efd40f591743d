import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kermtkit.errors import (
    EmptyInput,
    InvalidAromaticity,
    UnbalancedParenthesis,
    UnknownAtomSymbol,
    UnmatchedRingClosure,
)
from kermtkit.smiles import BondOrder, count_peptide_bonds, parse_smiles, ring_count

from conftest import DRUGS


def test_ethanol():
    g = parse_smiles("CCO")
    assert [a.element for a in g.atoms] == ["C", "C", "O"]
    assert g.n_bonds == 2
    assert all(b.order == BondOrder.SINGLE for b in g.bonds)
    assert not any(a.in_ring for a in g.atoms)
    assert ring_count(g) == 0


def test_benzene():
    g = parse_smiles("c1ccccc1")
    assert g.n_atoms == 6 and g.n_bonds == 6
    assert all(a.aromatic and a.in_ring and a.implicit_h == 1 for a in g.atoms)
    assert all(b.order == BondOrder.AROMATIC and b.in_ring for b in g.bonds)


@pytest.mark.parametrize(
    "smiles,exc",
    [
        ("C1CC", UnmatchedRingClosure),
        ("", EmptyInput),
        ("   ", EmptyInput),
        ("CC(C", UnbalancedParenthesis),
        ("CC)C", UnbalancedParenthesis),
        ("CXC", UnknownAtomSymbol),
        ("[Xx]", UnknownAtomSymbol),
        ("cc", InvalidAromaticity),
    ],
)
def test_parse_errors(smiles, exc):
    with pytest.raises(exc):
        parse_smiles(smiles)


def test_implicit_hydrogens():
    assert parse_smiles("C").atoms[0].implicit_h == 4
    assert parse_smiles("O=C=O").atoms[1].implicit_h == 0
    nh4 = parse_smiles("[NH4+]").atoms[0]
    assert nh4.implicit_h == 4 and nh4.formal_charge == 1
    assert parse_smiles("[O-]C").atoms[0].implicit_h == 0
    assert parse_smiles("FC(F)(F)F").atoms[1].implicit_h == 0


def test_valence_clamp_counted():
    g = parse_smiles("CS(C)(C)(C)C")
    assert g.atoms[1].implicit_h == 0
    assert g.valence_clamps >= 1


def test_stereo_and_isotopes_discarded():
    a = parse_smiles("F/C=C/F")
    b = parse_smiles("FC=CF")
    assert [x.element for x in a.atoms] == [x.element for x in b.atoms]
    assert [x.order for x in a.bonds] == [x.order for x in b.bonds]
    iso = parse_smiles("[13CH4]").atoms[0]
    assert iso.element == "C" and iso.implicit_h == 4
    chiral = parse_smiles("N[C@@H](C)C(=O)O")
    assert chiral.atoms[1].implicit_h == 1


def test_percent_ring_closure_and_fragments():
    g = parse_smiles("C%10CC%10")
    assert all(a.in_ring for a in g.atoms)
    salt = parse_smiles("CC(=O)[O-].[Na+]")
    assert salt.n_fragments == 2 and salt.multi_fragment


def test_ring_perception_bridge_example():
    g = parse_smiles("C1CC1CC2CC2")
    assert sum(a.in_ring for a in g.atoms) == 6
    assert sum(b.in_ring for b in g.bonds) == 6
    assert parse_smiles("C1CCC1").bonds[0].in_ring


def _brute_force_ring_bonds(g):
    """A bond is in a ring iff its endpoints stay connected after removing it."""
    out = []
    for i, b in enumerate(g.bonds):
        seen = {b.begin}
        stack = [b.begin]
        while stack:
            x = stack.pop()
            for j, other in enumerate(g.bonds):
                if j == i:
                    continue
                if x in (other.begin, other.end):
                    y = other.other(x)
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
        out.append(b.end in seen)
    return out


@pytest.mark.parametrize("smiles", list(DRUGS.values()) + ["C1CC1CC2CC2", "C12CCC1CC2", "c1ccc2ccccc2c1"])
def test_ring_flags_match_cut_edge_oracle(smiles):
    g = parse_smiles(smiles)
    assert [b.in_ring for b in g.bonds] == _brute_force_ring_bonds(g)


def test_peptide_bonds():
    assert count_peptide_bonds(parse_smiles("CC(=O)NC")) == (1, False)
    assert count_peptide_bonds(parse_smiles("CCO")) == (0, False)
    assert count_peptide_bonds(parse_smiles(DRUGS["glycine_hexapeptide"])) == (6, True)
    # amide to an aromatic nitrogen does not count
    assert count_peptide_bonds(parse_smiles("O=C(C)n1cccc1"))[0] == 0


@pytest.mark.parametrize("smiles", list(DRUGS.values()))
def test_graph_invariants(smiles):
    g = parse_smiles(smiles)
    assert sum(a.degree for a in g.atoms) == 2 * g.n_bonds
    for i, nbrs in enumerate(g.adjacency):
        assert len(nbrs) == g.atoms[i].degree
        for j, bi in nbrs:
            assert any(k == i for k, _ in g.adjacency[j])
            assert set(g.bonds[bi].endpoints) == {i, j}
    pairs = [frozenset(b.endpoints) for b in g.bonds]
    assert len(pairs) == len(set(pairs))
    assert all(a.in_ring for a in g.atoms if a.aromatic)


def test_parse_is_deterministic():
    s = DRUGS["diazepam"]
    assert parse_smiles(s) == parse_smiles(s)


_CHAIN_ATOMS = st.sampled_from(["C", "N", "O", "S", "Cl", "F", "c1ccccc1", "C(=O)", "C#N"])


@given(st.lists(_CHAIN_ATOMS, min_size=1, max_size=8))
def test_random_chains_satisfy_handshake(parts):
    smiles = "".join(parts)
    g = parse_smiles(smiles)
    assert sum(a.degree for a in g.atoms) == 2 * g.n_bonds
    assert all(a.implicit_h >= 0 for a in g.atoms)


@given(st.lists(st.sampled_from(["C", "O", "N", "Cl", "CC"]), min_size=2, max_size=4))
def test_branch_order_does_not_change_counts(subs):
    # the same labeled graph written with permuted branch order
    counts = set()
    for perm in itertools.islice(itertools.permutations(subs), 6):
        g = parse_smiles("C" + "".join(f"({x})" for x in perm[:-1]) + perm[-1])
        counts.add((g.n_atoms, g.n_bonds, sum(a.implicit_h for a in g.atoms)))
    assert len(counts) == 1
