import json

import numpy as np
import pytest

import oracles
from kermtkit.data import ingest_csv, read_csv_text, read_smiles_column, synthetic_benchmark
from kermtkit.errors import MissingSmilesColumn, NonNumericCell


def test_minimal_csv():
    ds = read_csv_text("smiles,LogD,Sol\nCCO,1.5,\nc1ccccc1,,2.0\n")
    assert ds.smiles == ["CCO", "c1ccccc1"]
    assert ds.table.values.shape == (2, 2)
    assert ds.task_names == ["LogD", "Sol"]
    assert ds.table.values[0, 0] == 1.5 and np.isnan(ds.table.values[0, 1])
    assert ds.dates is None and ds.merged == []


def test_duplicates_merged_by_mean_per_task():
    text = "smiles,date,a,b\nCCO,2020-01-01,1.0,\nCCN,2020-01-02,5,5\nCCO,2021-01-01,3.0,4.0\nCCO,2022-01-01,,8\n"
    ds = read_csv_text(text)
    assert ds.smiles == ["CCO", "CCN"]
    assert ds.table.values[0].tolist() == [2.0, 6.0]
    assert ds.dates == ["2020-01-01", "2020-01-02"]
    assert ds.merged == [("CCO", [2, 4, 5])]


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("# produced by a tool\nsmiles,y\n\nC,1\n# note\nCC,2\n")
    ds = ingest_csv(path)
    assert ds.smiles == ["C", "CC"] and ds.table.values[:, 0].tolist() == [1.0, 2.0]
    assert read_smiles_column(path) == ["C", "CC"]


def test_non_numeric_cell_names_row_and_column():
    with pytest.raises(NonNumericCell) as err:
        read_csv_text("smiles,LogD\nCCO,1.2\nCCN,abc\n")
    assert err.value.row == 3 and err.value.column == "LogD"
    with pytest.raises(NonNumericCell):
        read_csv_text("smiles,LogD\nCCO,nan\n")


def test_missing_smiles_column():
    with pytest.raises(MissingSmilesColumn):
        read_csv_text("mol,LogD\nCCO,1\n")
    with pytest.raises(MissingSmilesColumn):
        read_csv_text("# only a comment\n")


def test_synthetic_benchmark_statistics(synthetic):
    assert len(synthetic.smiles) == 2000 and len(set(synthetic.smiles)) == 2000
    observed = np.isfinite(synthetic.table.values)
    assert abs(observed.mean() - 0.60) <= 0.02
    assert synthetic.dates == sorted(synthetic.dates)
    both = observed[:, 0] & observed[:, 1]
    rho = oracles.spearman(synthetic.table.values[both, 0].tolist(), synthetic.table.values[both, 1].tolist())
    assert rho >= 0.6
    full = synthetic.full_values
    assert oracles.spearman(full[:, 0].tolist(), full[:, 1].tolist()) >= 0.7
    assert np.array_equal(synthetic.table.values[observed], full[observed])


def test_synthetic_benchmark_byte_stable(tmp_path, synthetic):
    a, rec = synthetic.write(tmp_path / "a")
    b, _ = synthetic_benchmark(0).write(tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    record = json.loads(rec.read_text())
    assert record["seed"] == 0 and record["tasks"] == ["task_1", "task_2", "task_3", "task_4", "task_5"]
    assert synthetic_benchmark(1, n=200).smiles != synthetic_benchmark(0, n=200).smiles


def test_written_csv_reingests(tmp_path, synthetic):
    path, _ = synthetic.write(tmp_path)
    ds = ingest_csv(path)
    assert ds.smiles == synthetic.smiles and ds.dates == synthetic.dates
    assert np.array_equal(ds.table.values, synthetic.table.values, equal_nan=True)
