"""Compiled and pure-Python kernels must agree bit for bit."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kermtkit import _kernels_py as py

ck = pytest.importorskip("kermtkit._ckernels")


def test_fnv1a64_reference_vectors():
    # published FNV-1a 64-bit test vectors
    for impl in (py, ck):
        assert impl.fnv1a64(b"") == 0xCBF29CE484222325
        assert impl.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert impl.fnv1a64(b"foobar") == 0x85944171F73967E8


@given(st.binary(max_size=64))
def test_fnv_backends_agree(data):
    assert py.fnv1a64(data) == ck.fnv1a64(data)


@given(hnp.arrays(np.int64, st.tuples(st.integers(1, 12), st.just(6)), elements=st.integers(-4, 60)))
def test_atom_hashes_agree(props):
    assert np.array_equal(py.atom_hashes(props), ck.atom_hashes(props))


def _random_graph(rng, n):
    edges = {(i, int(rng.integers(0, i))) for i in range(1, n)}
    for _ in range(n // 3):
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((b, a))
    adj = [[] for _ in range(n)]
    for a, b in edges:
        order = int(rng.integers(1, 5))
        adj[a].append((b, order))
        adj[b].append((a, order))
    indptr = np.zeros(n + 1, dtype=np.int64)
    nbrs, orders = [], []
    for i in range(n):
        for b, o in adj[i]:
            nbrs.append(b)
            orders.append(o)
        indptr[i + 1] = len(nbrs)
    return indptr, np.array(nbrs, dtype=np.int64), np.array(orders, dtype=np.int64)


@pytest.mark.parametrize("seed", range(10))
def test_morgan_environments_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    init = rng.integers(0, 2**63, size=n, dtype=np.uint64) * np.uint64(2) + np.uint64(seed)
    indptr, nbrs, orders = _random_graph(rng, n)
    for radius in (0, 1, 2, 3):
        a = py.morgan_environments(init, indptr, nbrs, orders, radius)
        b = ck.morgan_environments(init, indptr, nbrs, orders, radius)
        assert a.dtype == b.dtype == np.uint64
        assert np.array_equal(a, b)


@given(hnp.arrays(np.uint64, st.integers(0, 40), elements=st.integers(0, 2**64 - 1)), st.sampled_from([1024, 2048]))
def test_fold_bits_agree(invariants, nbits):
    assert np.array_equal(py.fold_bits(invariants, nbits), ck.fold_bits(invariants, nbits))


@given(st.integers(0, 2**32 - 1))
def test_tanimoto_agree(seed):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 2**64, size=(3, 16), dtype=np.uint64) & rng.integers(0, 2**64, size=(3, 16), dtype=np.uint64)
    r = rng.integers(0, 2**64, size=(7, 16), dtype=np.uint64) & rng.integers(0, 2**64, size=(7, 16), dtype=np.uint64)
    assert py.tanimoto_words(q[0], r[0]) == ck.tanimoto_words(q[0], r[0])
    assert np.array_equal(py.max_tanimoto(q, r), ck.max_tanimoto(q, r))


def test_tanimoto_empty_pair_is_one():
    z = np.zeros(16, dtype=np.uint64)
    assert py.tanimoto_words(z, z) == ck.tanimoto_words(z, z) == 1.0


@given(st.integers(0, 2**32 - 1))
def test_scatter_add_agree(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(20, 3))
    index = rng.integers(0, 5, size=20)
    assert np.array_equal(py.scatter_add_rows(src, index, 5), ck.scatter_add_rows(src, index, 5))


def test_scatter_add_rejects_out_of_range():
    for impl in (py, ck):
        with pytest.raises(IndexError):
            impl.scatter_add_rows(np.ones((2, 2)), np.array([0, 5]), 3)
        with pytest.raises(IndexError):
            impl.scatter_add_rows(np.ones((2, 2)), np.array([0, -1]), 3)
