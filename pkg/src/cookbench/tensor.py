"""Float64 arrays, a pinned random stream, and the DCT1 tensor container.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.
The random generator is implemented here rather than taken from numpy so
that streams are reproducible bit-for-bit across platforms and
implementations: splitmix64 expands the seed, xoshiro256++ produces the
stream and Box-Muller turns uniform pairs into normals.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import FormatError, NumericError, ParameterError, ShapeError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0

TENSOR_MAGIC = b"DCT1"
TENSOR_VERSION = 1


def _check_dims(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ShapeError(f"every dimension must be >= 1, got {dims}")
    return dims


def tensor_new(shape: Sequence[int], fill: float = 0.0) -> np.ndarray:
    """Return a float64 array of ``shape`` with every element equal to ``fill``."""
    return np.full(_check_dims(shape), float(fill), dtype=np.float64)


def as_tensor(values) -> np.ndarray:
    """Coerce ``values`` to a contiguous float64 array and check it is finite."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    check_finite(arr)
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains NaN or Inf")


# Elementwise helpers. They exist so the arithmetic contract (finite in,
# finite out) is checked in one place; numpy does the actual work.


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.add(a, b, dtype=np.float64)
    check_finite(out, "sum")
    return out


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.subtract(a, b, dtype=np.float64)
    check_finite(out, "difference")
    return out


def scale(a: np.ndarray, factor: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = np.multiply(a, float(factor), dtype=np.float64)
    check_finite(out, "scaled tensor")
    return out


def clamp(a: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if lo > hi:
        raise ParameterError(f"clamp bounds inverted: [{lo}, {hi}]")
    return np.clip(np.asarray(a, dtype=np.float64), lo, hi)


# --------------------------------------------------------------------------
# Random numbers


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child seed from ``seed`` by chained splitmix64 jumps.

    Used wherever a stage needs its own stream (surrogate init, protected
    init, shuffling, noise) so that stages never share one generator.
    """
    # Mix the seed first so that (seed, p) pairs cannot cancel under xor.
    _, state = splitmix64(int(seed) & _MASK64)
    for p in path:
        state, out = splitmix64(state ^ (int(p) & _MASK64))
        state = out
    _, out = splitmix64(state)
    return out


class Rng:
    """xoshiro256++ generator seeded through splitmix64.

    Single-owner: do not share an instance between threads. Two generators
    built from the same seed produce identical streams.
    """

    __slots__ = ("seed", "_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s0, self._s1, self._s2, self._s3 = words

    @property
    def state(self) -> tuple[int, int, int, int]:
        return (self._s0, self._s1, self._s2, self._s3)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        t = (s0 + s3) & _MASK64
        result = ((((t << 23) | (t >> 41)) & _MASK64) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        out = [0] * n
        m = _MASK64
        for i in range(n):
            t = (s0 + s3) & m
            out[i] = ((((t << 23) | (t >> 41)) & m) + s0) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return np.array(out, dtype=np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of each draw."""
        raw = self.u64_array(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform_range(self, n: int, lo: float, hi: float) -> np.ndarray:
        return lo + (hi - lo) * self.uniform(n)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` (multiply-shift, negligible bias)."""
        if bound < 1:
            raise ParameterError("bound must be >= 1")
        return ((self.next_u64() >> 11) * bound) >> 53

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller; both outputs of a pair are used."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = _TWO_PI * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]


def rng_gaussian(rng: Rng, shape: Sequence[int], sigma: float) -> np.ndarray:
    """I.i.d. ``N(0, sigma^2)`` samples drawn from ``rng``.

    Raises:
        ParameterError: if ``sigma`` is negative.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be finite and >= 0, got {sigma}")
    dims = _check_dims(shape)
    n = int(np.prod(dims))
    return (rng.normal(n) * float(sigma)).reshape(dims)


# --------------------------------------------------------------------------
# DCT1 container


def tensor_to_bytes(t: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(t, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ShapeError(f"cannot serialise a rank-{arr.ndim} tensor")
    if any(d < 1 or d > 0xFFFFFFFF for d in arr.shape):
        raise ShapeError(f"dimension out of range: {arr.shape}")
    header = TENSOR_MAGIC + struct.pack("<BB", TENSOR_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f8", copy=False).tobytes()


def read_tensor(fh: BinaryIO) -> np.ndarray:
    """Read one DCT1 tensor from an open binary stream."""
    head = fh.read(6)
    if len(head) < 6:
        raise FormatError("truncated tensor header")
    if head[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {head[:4]!r}")
    version, ndim = head[4], head[5]
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if ndim == 0:
        raise FormatError("tensor declares zero dimensions")
    raw_dims = fh.read(4 * ndim)
    if len(raw_dims) < 4 * ndim:
        raise FormatError("truncated tensor dimensions")
    dims = struct.unpack(f"<{ndim}I", raw_dims)
    if any(d == 0 for d in dims):
        raise FormatError(f"tensor has a zero dimension: {dims}")
    count = math.prod(dims)
    if count > (1 << 34):
        raise FormatError(f"tensor too large ({count} elements)")
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError(
            f"tensor payload truncated: expected {count} values, got {len(payload) // 8}"
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    import io

    fh = io.BytesIO(blob)
    t = read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after tensor payload")
    return t


def tensor_save(path: str | Path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def tensor_load(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
