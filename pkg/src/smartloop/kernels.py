"""Kernel dispatch: the compiled extension when importable, else numpy.

Set ``SMARTLOOP_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("SMARTLOOP_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name):
    if name == "python":
        return _pykernels
    if name == "cython" and _compiled is not None:
        return _compiled
    raise ValueError(f"kernel backend {name!r} is not available")


def pack(sequences):
    """Flatten token sequences into (tokens, offsets) int64 arrays."""
    lengths = [len(s) for s in sequences]
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if sequences:
        tokens = np.fromiter((t for s in sequences for t in s), dtype=np.int64, count=int(offsets[-1]))
    else:
        tokens = np.zeros(0, dtype=np.int64)
    return tokens, offsets


def sequence_logprobs(logp, context, tokens, offsets):
    return _impl.sequence_logprobs(logp, context, tokens, offsets)


def scatter_bigram(weights, context, tokens, offsets, out, rowmass):
    _impl.scatter_bigram(weights, context, tokens, offsets, out, rowmass)


def max_ngram_count(ids, n):
    return _impl.max_ngram_count(np.ascontiguousarray(ids, dtype=np.int64), n)
