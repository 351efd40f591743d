"""Parser counts versus frozen reference-toolkit counts (see tests/data/PARSER_CORPUS.md)."""

import csv
from pathlib import Path

import pytest

from kermtkit.smiles import parse_smiles

DATA = Path(__file__).parent / "data"


def _rows():
    with open(DATA / "parser_corpus.tsv") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def test_corpus_size():
    rows = _rows()
    assert len(rows) >= 500
    assert len({r["smiles"] for r in rows}) == len(rows)


def test_exclusions_are_documented():
    lines = (DATA / "parser_exclusions.tsv").read_text().splitlines()
    assert lines[0] == "smiles\tsource\treason"
    assert all(len(l.split("\t")) == 3 for l in lines[1:])


def test_counts_match_reference():
    mismatches = []
    for r in _rows():
        g = parse_smiles(r["smiles"])
        got = (
            g.n_atoms,
            g.n_bonds,
            sum(a.aromatic for a in g.atoms),
            sum(b.in_ring for b in g.bonds),
            sum(a.implicit_h for a in g.atoms),
        )
        want = tuple(int(r[k]) for k in ("atoms", "bonds", "aromatic_atoms", "ring_bonds", "hydrogens"))
        if got != want:
            mismatches.append((r["smiles"], got, want))
    assert mismatches == []


def test_live_reference_when_available():
    Chem = pytest.importorskip("rdkit.Chem")
    for r in _rows()[::25]:
        mol = Chem.MolFromSmiles(r["smiles"])
        g = parse_smiles(r["smiles"])
        assert g.n_atoms == mol.GetNumAtoms()
        assert [a.implicit_h for a in g.atoms] == [a.GetTotalNumHs() for a in mol.GetAtoms()]
