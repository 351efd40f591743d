"""Kernel backend selection.

The compiled extension is used when it imports; ``KERMTKIT_PURE_PYTHON=1``
forces the numpy fallback. Both backends produce bit-identical results.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("KERMTKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

fnv1a64 = _impl.fnv1a64
atom_hashes = _impl.atom_hashes
morgan_environments = _impl.morgan_environments
fold_bits = _impl.fold_bits
tanimoto_words = _impl.tanimoto_words
max_tanimoto = _impl.max_tanimoto
scatter_add_rows = _impl.scatter_add_rows

__all__ = [
    "BACKEND",
    "fnv1a64",
    "atom_hashes",
    "morgan_environments",
    "fold_bits",
    "tanimoto_words",
    "max_tanimoto",
    "scatter_add_rows",
]
