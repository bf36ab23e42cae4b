"""Hot inner loops for trajectory-pair accumulation.

The exact trajectory sums reduce to one kernel shape: for every ordered
pair of left/right index sequences that share the same final eigenindex,
add ``amp_L * conj(amp_R) * rho[first_L, first_R]`` into an accumulator
cell addressed by ``rowkey[L] + colkey[R]``. The pair count grows like
d^(2N), so this loop dominates the runtime of everything downstream.

Two interchangeable implementations are provided:

* a numba ``@njit`` loop (default when numba is importable), and
* a vectorized pure-numpy path.

Set the environment variable ``KQPD_PURE_NUMPY=1`` to force the numpy
path; ``benchmarks/bench_kernels.py`` compares the two. Both paths
produce the same sums up to floating-point association order.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "KQPD_PURE_NUMPY"

# Resolved lazily so that importing the package (e.g. for CLI validation)
# does not pay the numba import cost.
_BACKEND = None
_NUMBA_KERNEL = None

# numpy path processes pair blocks of at most this many entries at a time
_NUMPY_BLOCK = 1 << 20


def _accumulate_pairs_py(amp, first, rowkey, colkey, starts, rho, out):
    """Reference pair loop. Shapes: amp (n,), rho (d, d), out flat complex."""
    for g in range(starts.shape[0] - 1):
        lo = starts[g]
        hi = starts[g + 1]
        for ia in range(lo, hi):
            wa = amp[ia]
            ra = rowkey[ia]
            fa = first[ia]
            for ib in range(lo, hi):
                out[ra + colkey[ib]] += wa * np.conj(amp[ib]) * rho[fa, first[ib]]


def _accumulate_pairs_numpy(amp, first, rowkey, colkey, starts, rho, out):
    camp = np.conj(amp)
    for g in range(starts.shape[0] - 1):
        lo = int(starts[g])
        hi = int(starts[g + 1])
        m = hi - lo
        if m == 0:
            continue
        block_rows = max(1, _NUMPY_BLOCK // m)
        for r0 in range(lo, hi, block_rows):
            r1 = min(r0 + block_rows, hi)
            w = amp[r0:r1, None] * camp[None, lo:hi]
            w *= rho[np.ix_(first[r0:r1], first[lo:hi])]
            cells = rowkey[r0:r1, None] + colkey[None, lo:hi]
            np.add.at(out, cells.ravel(), w.ravel())


def use_backend(name):
    """Force a backend: 'numba', 'numpy', or None to re-resolve from env."""
    global _BACKEND
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    _BACKEND = name
    if name == "numba":
        _load_numba()


def _load_numba():
    global _NUMBA_KERNEL, _BACKEND
    if _NUMBA_KERNEL is not None:
        return True
    try:
        from numba import njit
    except ImportError:
        _BACKEND = "numpy"
        return False
    _NUMBA_KERNEL = njit(cache=True)(_accumulate_pairs_py)
    return True


def backend():
    """Name of the active backend, resolving env and numba availability."""
    global _BACKEND
    if _BACKEND is None:
        if os.environ.get(_ENV_FLAG, "").strip() not in ("", "0"):
            _BACKEND = "numpy"
        else:
            _BACKEND = "numba" if _load_numba() else "numpy"
    return _BACKEND


def accumulate_pairs(amp, first, rowkey, colkey, starts, rho, n_cells):
    """Run the pair accumulation and return the flat complex cell array.

    ``amp``/``first``/``rowkey``/``colkey`` are parallel arrays over kept
    sequences, already permuted so that each final-index group occupies
    ``starts[g]:starts[g+1]``. Sequences in different groups never pair.
    """
    out = np.zeros(int(n_cells), dtype=np.complex128)
    amp = np.ascontiguousarray(amp, dtype=np.complex128)
    first = np.ascontiguousarray(first, dtype=np.int64)
    rowkey = np.ascontiguousarray(rowkey, dtype=np.int64)
    colkey = np.ascontiguousarray(colkey, dtype=np.int64)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    if backend() == "numba":
        _NUMBA_KERNEL(amp, first, rowkey, colkey, starts, rho, out)
    else:
        _accumulate_pairs_numpy(amp, first, rowkey, colkey, starts, rho, out)
    return out


def path_amplitudes(transfer_mats, dim, n_steps):
    """Amplitudes of every index sequence (i_1 .. i_n), C-order flattened.

    ``transfer_mats[l][a, b]`` is the amplitude for hopping from index b
    at slot l to index a at slot l+1; the product over slots gives the
    sequence amplitude. Returns a flat complex array of length
    ``dim**n_steps`` where the last index varies fastest.
    """
    amp = np.ones((dim,), dtype=np.complex128)
    for t in transfer_mats:
        # amp[..., i_l] * T[i_{l+1}, i_l] -> amp[..., i_l, i_{l+1}]
        amp = amp[..., :, None] * t.T[(np.newaxis,) * (amp.ndim - 1)]
    return amp.reshape(-1)
