"""Pure numpy/Python versions of the compiled kernels.

Summation order matches ``_ckernels`` exactly (left to right within each
sequence, sequences in order), so both paths give identical floats.
"""
from collections import Counter

import numpy as np


def _prevs(context, tokens, offsets):
    prevs = np.empty_like(tokens)
    if len(tokens):
        prevs[1:] = tokens[:-1]
        starts = offsets[:-1]
        nonempty = offsets[1:] > starts
        prevs[starts[nonempty]] = context[nonempty]
    return prevs


def sequence_logprobs(logp, context, tokens, offsets):
    terms = logp[_prevs(context, tokens, offsets), tokens]
    out = np.zeros(len(offsets) - 1, dtype=np.float64)
    for i in range(len(out)):
        a, b = offsets[i], offsets[i + 1]
        if b > a:
            out[i] = np.cumsum(terms[a:b])[-1]
    return out


def scatter_bigram(weights, context, tokens, offsets, out, rowmass):
    prevs = _prevs(context, tokens, offsets)
    w = np.repeat(np.asarray(weights, dtype=np.float64), np.diff(offsets))
    np.add.at(out, (prevs, tokens), w)
    np.add.at(rowmass, prevs, w)


def max_ngram_count(ids, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    ids = [int(i) for i in ids]
    if len(ids) < n:
        return 0
    return max(Counter(tuple(ids[i:i + n]) for i in range(len(ids) - n + 1)).values())
