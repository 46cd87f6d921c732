"""Dense float64 numerics: matrix helpers, a portable deterministic RNG,
similarity measures, top-k selection, and a finite-difference gradient oracle.

Everything here is pure and side-effect free except :class:`Rng`, which is a
single-owner mutable stream. All arithmetic is 64-bit floating point.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class ZeroNormError(ValueError):
    """A vector that must have nonzero norm is (numerically) zero."""


class NonFiniteError(ValueError):
    """An array that must be finite contains NaN or Inf."""


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally checking the shape."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeMismatchError(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeMismatchError(f"expected {cols} cols, got {arr.shape[1]}")
    return arr


def as_vector(values, length: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking the length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"expected a 1-D vector, got ndim={arr.ndim}")
    if length is not None and arr.shape[0] != length:
        raise ShapeMismatchError(f"expected length {length}, got {arr.shape[0]}")
    return arr


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check naming both operands."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: inner dimensions differ, {a.shape} x {b.shape}"
        )
    return ensure_finite("matmul result", a @ b)


def cosine_sim(u, v) -> float:
    """Cosine similarity <u,v> / (|u||v|), clamped to [-1, 1].

    Zero-norm inputs are an error rather than a silent 0: a zero vector
    here almost always means a prototype was built from no data.
    """
    u = as_vector(u)
    v = as_vector(v, length=u.shape[0])
    ensure_finite("cosine_sim input", u)
    ensure_finite("cosine_sim input", v)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("cosine_sim: zero-norm vector")
    sim = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, sim))


def softmax(logits) -> np.ndarray:
    """Stable softmax (max-subtraction); accepts a vector or a batch of rows."""
    arr = np.asarray(logits, dtype=np.float64)
    ensure_finite("softmax input", arr)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    ensure_finite("log_softmax input", arr)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def topk_indices(scores, k: int) -> list[int]:
    """Indices of the k largest scores, descending by score.

    Ties break by ascending index so results are byte-reproducible.
    """
    arr = as_vector(scores)
    n = arr.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"topk_indices: k={k} out of range for {n} scores")
    # stable sort on -scores keeps ascending index order inside ties
    order = np.argsort(-arr, kind="stable")
    return [int(i) for i in order[:k]]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], at: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    This is the independent oracle every analytic gradient in the package
    is checked against; it deliberately shares no code with them.
    """
    if eps <= 0:
        raise ValueError("finite_diff_grad: eps must be positive")
    at = np.asarray(at, dtype=np.float64)
    grad = np.zeros_like(at)
    flat = at.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(at))
        flat[i] = orig - eps
        f_minus = float(f(at))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: a fixed 64-bit avalanche mix."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """Counter-based deterministic generator (SplitMix64 stream).

    The algorithm is fixed in-repo so a given seed yields the same draws on
    every platform; uniform and integer draws are exact dyadic rationals.
    A state is single-owner: derive independent child streams with
    :meth:`substream` instead of sharing one across workers.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._state = _mix64(self.seed ^ _mix64(self.stream))
        self._cached_normal: float | None = None

    def substream(self, *keys: int | str) -> "Rng":
        """Independent child stream keyed by a path of ints or strings."""
        s = self.seed
        for key in keys:
            k = _fnv1a(key) if isinstance(key, str) else int(key) & _MASK64
            s = _mix64(s ^ _mix64(k))
        return Rng(s, stream=self.stream + 1)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1) with full 53-bit resolution."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Gaussian draw via the Marsaglia polar method (cached pair)."""
        if self._cached_normal is not None:
            z = self._cached_normal
            self._cached_normal = None
            return mu + sigma * z
        while True:
            a = 2.0 * self.random() - 1.0
            b = 2.0 * self.random() - 1.0
            s = a * a + b * b
            if 0.0 < s < 1.0:
                scale = math.sqrt(-2.0 * math.log(s) / s)
                self._cached_normal = b * scale
                return mu + sigma * (a * scale)

    def normal_array(self, shape: int | tuple[int, ...], sigma: float = 1.0) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = self.normal(0.0, sigma)
        return out

    def uniform_array(
        self, shape: int | tuple[int, ...], lo: float = 0.0, hi: float = 1.0
    ) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = self.uniform(lo, hi)
        return out

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top bits."""
        if n <= 0:
            raise ValueError("randbelow: n must be positive")
        bits = (n - 1).bit_length() or 1
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items
