"""Offline oracle: freeze reference-toolkit graph counts for the parser agreement corpus.

Run once with RDKit installed (``pip install rdkit``):

    python3 tests/data/build_parser_corpus.py

Writes ``parser_corpus.tsv`` (smiles, source, atoms, bonds, aromatic_atoms,
ring_bonds, hydrogens) and ``parser_exclusions.tsv``. Molecules are canonicalized by RDKit
without stereo/isotopes, so inputs are aromatic SMILES of the parser's subset.
"""

from __future__ import annotations

import random
from pathlib import Path

from rdkit import Chem, RDConfig, RDLogger

from kermtkit.errors import KermtError
from kermtkit.smiles import parse_smiles

RDLogger.DisableLog("rdApp.*")

HERE = Path(__file__).parent
SOURCES = [
    # (label, path, smiles column, max molecules)
    ("chembl_11265_actives", Path(RDConfig.RDContribDir) / "fraggle/data/ChEMBL_11265_actives.smi", 0, 100),
    ("chembl2321810", Path(RDConfig.RDContribDir) / "FreeWilson/data/CHEMBL2321810.smi", 0, 250),
    ("zinc_cdk2", Path(RDConfig.RDContribDir) / "Fastcluster/cdk2.smi", 1, 47),
    ("nci_first_5k", Path(RDConfig.RDDataDir) / "NCI/first_5K.smi", 0, 250),
]
ALLOWED = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "Si", "Se"}


def reference_counts(mol) -> tuple[int, int, int, int, int]:
    return (
        mol.GetNumAtoms(),
        mol.GetNumBonds(),
        sum(a.GetIsAromatic() for a in mol.GetAtoms()),
        sum(b.IsInRing() for b in mol.GetBonds()),
        sum(a.GetTotalNumHs() for a in mol.GetAtoms()),
    )


def ours(smiles: str) -> tuple[int, int, int, int, int]:
    g = parse_smiles(smiles)
    return (
        g.n_atoms,
        g.n_bonds,
        sum(a.aromatic for a in g.atoms),
        sum(b.in_ring for b in g.bonds),
        sum(a.implicit_h for a in g.atoms),
    )


def main() -> None:
    rng = random.Random(0)
    rows, exclusions = [], []
    seen = set()
    for label, path, col, limit in SOURCES:
        lines = [l.split() for l in path.read_text().splitlines() if l.strip()]
        rng.shuffle(lines)
        taken = 0
        for parts in lines:
            if taken >= limit:
                break
            mol = Chem.MolFromSmiles(parts[col])
            if mol is None:
                continue
            if any(a.GetSymbol() not in ALLOWED for a in mol.GetAtoms()):
                continue
            smi = Chem.MolToSmiles(mol, isomericSmiles=False)
            if smi in seen:
                continue
            seen.add(smi)
            ref = reference_counts(Chem.MolFromSmiles(smi))
            try:
                got = ours(smi)
            except KermtError as exc:
                exclusions.append((smi, label, f"parser error {exc.category}: {exc}"))
                continue
            if got != ref:
                exclusions.append((smi, label, f"count mismatch ours={got} reference={ref}"))
                continue
            rows.append((smi, label) + ref)
            taken += 1
    with open(HERE / "parser_corpus.tsv", "w") as fh:
        fh.write("smiles\tsource\tatoms\tbonds\taromatic_atoms\tring_bonds\thydrogens\n")
        for r in rows:
            fh.write("\t".join(str(x) for x in r) + "\n")
    with open(HERE / "parser_exclusions.tsv", "w") as fh:
        fh.write("smiles\tsource\treason\n")
        for r in exclusions:
            fh.write("\t".join(r) + "\n")
    print(f"{len(rows)} molecules kept, {len(exclusions)} excluded")


if __name__ == "__main__":
    main()
