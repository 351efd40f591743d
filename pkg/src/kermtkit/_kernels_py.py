"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` and must return
bit-identical results.
"""

import struct

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int | None = None) -> int:
    h = FNV_OFFSET if seed is None else seed
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def atom_hashes(props):
    """Hash each row of an int matrix, encoded as little-endian int32s."""
    props = np.ascontiguousarray(props, dtype=np.int64)
    out = np.empty(props.shape[0], dtype=np.uint64)
    fmt = "<%di" % props.shape[1]
    for i, row in enumerate(props.tolist()):
        out[i] = fnv1a64(struct.pack(fmt, *row))
    return out


def morgan_environments(init, indptr, nbrs, orders, radius):
    """All atom invariants for rounds 0..radius, round-major.

    Round r invariant of atom a hashes ``int32 r, uint64 own`` followed by the
    sorted ``(int32 bond order, uint64 neighbor invariant)`` pairs.
    """
    n = len(init)
    current = [int(x) for x in init]
    indptr = [int(x) for x in indptr]
    nbrs = [int(x) for x in nbrs]
    orders = [int(x) for x in orders]
    out = list(current)
    for r in range(1, radius + 1):
        nxt = []
        for a in range(n):
            pairs = sorted((orders[e], current[nbrs[e]]) for e in range(indptr[a], indptr[a + 1]))
            buf = bytearray(struct.pack("<iQ", r, current[a]))
            for order, inv in pairs:
                buf += struct.pack("<iQ", order, inv)
            nxt.append(fnv1a64(bytes(buf)))
        current = nxt
        out.extend(current)
    return np.array(out, dtype=np.uint64)


def fold_bits(invariants, nbits):
    words = np.zeros(nbits // 64, dtype=np.uint64)
    for inv in np.asarray(invariants, dtype=np.uint64).tolist():
        bit = inv % nbits
        words[bit >> 6] |= np.uint64(1 << (bit & 63))
    return words


def _popcount(words):
    return int(np.bitwise_count(words).sum())


def tanimoto_words(a, b):
    union = _popcount(a | b)
    if union == 0:
        return 1.0
    return _popcount(a & b) / union


def max_tanimoto(queries, refs):
    queries = np.atleast_2d(np.asarray(queries, dtype=np.uint64))
    refs = np.atleast_2d(np.asarray(refs, dtype=np.uint64))
    out = np.empty(queries.shape[0], dtype=np.float64)
    for q in range(queries.shape[0]):
        inter = np.bitwise_count(refs & queries[q]).sum(axis=1, dtype=np.int64)
        union = np.bitwise_count(refs | queries[q]).sum(axis=1, dtype=np.int64)
        sims = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
        out[q] = sims.max()
    return out


def scatter_add_rows(src, index, n_out):
    src = np.asarray(src, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= n_out):
        raise IndexError(f"index out of range for {n_out} rows")
    out = np.zeros((n_out,) + src.shape[1:], dtype=np.float64)
    np.add.at(out, index, src)
    return out
