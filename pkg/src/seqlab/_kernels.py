"""Hot lattice kernels: Viterbi decoding and the log-partition recursion.

Two interchangeable backends: numba ``@njit`` (default when numba imports)
and pure numpy.  Selection via the ``SEQLAB_BACKEND`` environment variable
(``numba`` or ``numpy``), read once at import.

Both Viterbi paths perform the same float64 additions in the same order and
break score ties toward the lowest label index, so decoded labels agree
bitwise across backends.  ``emission`` is (n, L); ``transition`` is
(L+1, L) with row L holding the start scores.
"""

from __future__ import annotations

import logging
import os

import numpy as np

log = logging.getLogger(__name__)


def _viterbi_numpy(emission, transition):
    n, L = emission.shape
    alpha = transition[L] + emission[0]
    back = np.zeros((n, L), dtype=np.int64)
    for i in range(1, n):
        scores = alpha[:, None] + transition[:L]
        best_prev = np.argmax(scores, axis=0)
        alpha = scores[best_prev, np.arange(L)] + emission[i]
        back[i] = best_prev
    labels = np.zeros(n, dtype=np.int64)
    labels[n - 1] = int(np.argmax(alpha))
    for i in range(n - 1, 0, -1):
        labels[i - 1] = back[i, labels[i]]
    return labels


def _logz_numpy(emission, transition):
    n, L = emission.shape
    alpha = transition[L] + emission[0]
    for i in range(1, n):
        scores = alpha[:, None] + transition[:L]
        shift = scores.max(axis=0)
        alpha = shift + np.log(np.exp(scores - shift).sum(axis=0)) + emission[i]
    shift = alpha.max()
    return float(shift + np.log(np.exp(alpha - shift).sum()))


_BACKEND = "numpy"
viterbi_path = _viterbi_numpy
log_partition = _logz_numpy

_requested = os.environ.get("SEQLAB_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise RuntimeError(f"SEQLAB_BACKEND must be 'numpy' or 'numba', not {_requested!r}")

if _requested != "numpy":
    try:
        from numba import njit
    except ImportError:
        if _requested == "numba":
            raise
        log.info("numba unavailable; lattice kernels fall back to numpy")
    else:

        @njit("int64[:](float64[:, :], float64[:, :])", cache=True)
        def _viterbi_numba(emission, transition):  # pragma: no cover - numba
            n, L = emission.shape
            alpha = np.empty(L, dtype=np.float64)
            back = np.zeros((n, L), dtype=np.int64)
            for y in range(L):
                alpha[y] = transition[L, y] + emission[0, y]
            for i in range(1, n):
                new = np.empty(L, dtype=np.float64)
                for y in range(L):
                    best = alpha[0] + transition[0, y]
                    arg = 0
                    for yp in range(1, L):
                        s = alpha[yp] + transition[yp, y]
                        if s > best:
                            best = s
                            arg = yp
                    new[y] = best + emission[i, y]
                    back[i, y] = arg
                alpha = new
            best = alpha[0]
            arg = 0
            for y in range(1, L):
                if alpha[y] > best:
                    best = alpha[y]
                    arg = y
            labels = np.zeros(n, dtype=np.int64)
            labels[n - 1] = arg
            for i in range(n - 1, 0, -1):
                labels[i - 1] = back[i, labels[i]]
            return labels

        @njit("float64(float64[:, :], float64[:, :])", cache=True)
        def _logz_numba(emission, transition):  # pragma: no cover - numba
            n, L = emission.shape
            alpha = np.empty(L, dtype=np.float64)
            for y in range(L):
                alpha[y] = transition[L, y] + emission[0, y]
            for i in range(1, n):
                new = np.empty(L, dtype=np.float64)
                for y in range(L):
                    m = alpha[0] + transition[0, y]
                    for yp in range(1, L):
                        s = alpha[yp] + transition[yp, y]
                        if s > m:
                            m = s
                    acc = 0.0
                    for yp in range(L):
                        acc += np.exp(alpha[yp] + transition[yp, y] - m)
                    new[y] = m + np.log(acc) + emission[i, y]
                alpha = new
            m = alpha[0]
            for y in range(1, L):
                if alpha[y] > m:
                    m = alpha[y]
            acc = 0.0
            for y in range(L):
                acc += np.exp(alpha[y] - m)
            return m + np.log(acc)

        _BACKEND = "numba"
        viterbi_path = _viterbi_numba
        log_partition = _logz_numba


def backend_name() -> str:
    return _BACKEND


def implementations():
    """All importable kernel pairs, for tests and benchmarks."""
    impls = {"numpy": (_viterbi_numpy, _logz_numpy)}
    if _BACKEND == "numba":
        impls["numba"] = (viterbi_path, log_partition)
    return impls
