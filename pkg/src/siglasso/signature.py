"""Truncated signatures of piecewise-linear paths.

Layer ``k`` of a signature over ``d`` channels is a flat array of length ``d**k``;
the word ``(i_1, ..., i_k)`` (letters 1-based) sits at the base-``d`` index whose
most significant digit is ``i_1 - 1``. That is the lexicographic word order, and it
makes ``np.outer(a, b).ravel()`` the tensor product of two layers.
"""

from __future__ import annotations

import math

import numpy as np

from .paths import PiecewiseLinearPath

MAX_DEPTH = 10
MAX_SIG_DIM = 10**7


def sig_dim(d, N):
    """Number of coefficients ``1 + d + ... + d**N`` of a depth-``N`` signature."""
    if d < 1 or N < 0:
        raise ValueError(f"need d >= 1 and N >= 0, got d={d}, N={N}")
    if d == 1:
        return N + 1
    return (d ** (N + 1) - 1) // (d - 1)


def _check_shape(d, N):
    if N > MAX_DEPTH:
        raise ValueError(f"depth {N} exceeds the ceiling {MAX_DEPTH}")
    if sig_dim(d, N) > MAX_SIG_DIM:
        raise ValueError(f"s_{d}({N}) = {sig_dim(d, N)} exceeds {MAX_SIG_DIM} coefficients")


class TruncatedSignature:
    """Layers ``0..N`` of a truncated tensor-algebra element."""

    __slots__ = ("d", "N", "layers")

    def __init__(self, d, N, layers):
        _check_shape(d, N)
        if len(layers) != N + 1:
            raise ValueError(f"expected {N + 1} layers, got {len(layers)}")
        for k, layer in enumerate(layers):
            if layer.shape != (d**k,):
                raise ValueError(f"layer {k} has shape {layer.shape}, expected ({d**k},)")
        self.d = d
        self.N = N
        self.layers = layers

    @classmethod
    def unit(cls, d, N):
        layers = [np.zeros(d**k) for k in range(N + 1)]
        layers[0][0] = 1.0
        return cls(d, N, layers)

    @classmethod
    def from_flat(cls, d, N, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (sig_dim(d, N),):
            raise ValueError("flat vector has the wrong length")
        layers, start = [], 0
        for k in range(N + 1):
            layers.append(flat[start : start + d**k].copy())
            start += d**k
        return cls(d, N, layers)

    def flat(self):
        return np.concatenate(self.layers)

    def scaled(self, factor):
        """Signature of the path multiplied by ``factor``: layer ``k`` scales by ``factor**k``."""
        return TruncatedSignature(
            self.d, self.N, [layer * factor**k for k, layer in enumerate(self.layers)]
        )

    def to_dict(self):
        return {"d": self.d, "N": self.N, "layers": [layer.tolist() for layer in self.layers]}

    def word_dict(self):
        out = {}
        for k in range(1, self.N + 1):
            for idx, word in enumerate(words(self.d, k)):
                out[",".join(map(str, word))] = float(self.layers[k][idx])
        return out

    def __repr__(self):
        return f"TruncatedSignature(d={self.d}, N={self.N})"


def words(d, k):
    """All words of length ``k`` over letters ``1..d`` in lexicographic order."""
    if k == 0:
        return [()]
    grid = np.indices((d,) * k).reshape(k, -1).T + 1
    return [tuple(int(v) for v in row) for row in grid]


def word_index(word, d):
    """Position of ``word`` inside its layer."""
    idx = 0
    for letter in word:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside alphabet 1..{d}")
        idx = idx * d + (letter - 1)
    return idx


def layer_of_columns(d, N):
    """Word length of every column of a flattened depth-``N`` signature."""
    return np.repeat(np.arange(N + 1), [d**k for k in range(N + 1)])


def get_coefficient(sig, word):
    word = tuple(word)
    if len(word) > sig.N:
        raise ValueError(f"word of length {len(word)} exceeds depth {sig.N}")
    return float(sig.layers[len(word)][word_index(word, sig.d)])


def _tensor_powers(a, N):
    """``a^{⊗k} / k!`` for ``k = 0..N``."""
    powers = [np.ones(1)]
    for k in range(1, N + 1):
        powers.append(np.outer(powers[-1], a).ravel() / k)
    return powers


def segment_signature(increment, N):
    """Signature of a straight segment: the truncated tensor exponential of its increment."""
    a = np.asarray(increment, dtype=float).reshape(-1)
    return TruncatedSignature(len(a), N, _tensor_powers(a, N))


def chen_product(left, right):
    if left.d != right.d or left.N != right.N:
        raise ValueError(
            f"cannot multiply signatures with (d, N) = ({left.d}, {left.N}) and ({right.d}, {right.N})"
        )
    return TruncatedSignature(left.d, left.N, _product_layers(left.layers, right.layers, left.N))


def _product_layers(a, b, N):
    out = []
    for j in range(N + 1):
        acc = a[j] * b[0][0]
        for k in range(j):
            acc = acc + np.outer(a[k], b[j - k]).ravel()
        out.append(acc)
    return out


def _extend(layers, increment, N):
    """Chen product of ``layers`` with the exponential of one segment."""
    return _product_layers(layers, _tensor_powers(increment, N), N)


def path_signature(path, N, t_end=None):
    if t_end is None:
        t_end = path.knots[-1]
    d = path.channels
    _check_shape(d, N)
    layers = TruncatedSignature.unit(d, N).layers
    for inc in path.segment_increments(t_end):
        layers = _extend(layers, inc, N)
    return TruncatedSignature(d, N, layers)


def prefix_signatures(path, N, t_list):
    """Signatures of ``path`` on ``[knots[0], t]`` for each ``t`` in increasing ``t_list``.

    One pass over the knots: the running product is extended segment by segment and
    split off at each requested time, so the cost is linear in the number of knots.
    """
    t_list = np.asarray(t_list, dtype=float).reshape(-1)
    if np.any(np.diff(t_list) < 0):
        raise ValueError("t_list must be sorted in increasing order")
    d = path.channels
    _check_shape(d, N)
    knots = path.knots
    if len(t_list) and (t_list[0] < knots[0] or t_list[-1] > knots[-1]):
        raise ValueError("t_list leaves the knot range")

    running = TruncatedSignature.unit(d, N).layers
    seg = 0  # running covers [knots[0], knots[seg]]
    out = []
    for t in t_list:
        while seg < len(knots) - 1 and knots[seg + 1] <= t:
            running = _extend(running, path.increments[seg], N)
            seg += 1
        if t > knots[seg]:
            partial = (t - knots[seg]) * path.slopes[seg]
            out.append(TruncatedSignature(d, N, _extend(running, partial, N)))
        else:
            out.append(TruncatedSignature(d, N, [layer.copy() for layer in running]))
    return out


def signature_of_values(times, values, N):
    """Signature of the linear interpolation of ``values`` sampled at ``times``."""
    return path_signature(PiecewiseLinearPath(times, values), N)


def layer_sup_distance(a, b, k):
    """Euclidean norm of the difference between layer ``k`` of two signatures."""
    if a.d != b.d or a.N != b.N:
        raise ValueError("signatures have different shapes")
    if not 0 <= k <= a.N:
        raise ValueError(f"layer {k} outside 0..{a.N}")
    return float(np.linalg.norm(a.layers[k] - b.layers[k]))


def factorial_bound(k, L=1.0):
    """Upper bound ``L**k / k!`` on any layer-``k`` coefficient of a path of length ``L``."""
    return L**k / math.factorial(k)
