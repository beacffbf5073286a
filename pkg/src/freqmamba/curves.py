"""Z-order and Hilbert serialization of quantized 3-D points.

Cells are integer triples ``(x, y, z)`` with each coordinate below
``2**bits``; codes are integers below ``2**(3*bits)``.  The "transposed"
variants rotate the axes ``(x, y, z) -> (z, x, y)`` before encoding, which
yields a different traversal of the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CURVE_KINDS", "CurveCode", "SerializationOrder", "canonical_kind",
    "z_encode", "z_decode", "hilbert_encode", "hilbert_decode",
    "transpose_variant", "untranspose_variant", "encode", "decode",
    "quantize", "serialize_points", "serialize_batch",
]

CURVE_KINDS = ("hilbert", "hilbert_trans", "z", "z_trans")
MAX_BITS = 21


@dataclass(frozen=True)
class CurveCode:
    key: int
    bits_per_axis: int


@dataclass(frozen=True)
class SerializationOrder:
    curve_kind: str
    permutation: np.ndarray
    codes: np.ndarray


def canonical_kind(kind: str) -> str:
    """Map user spellings like ``"z-trans"`` or ``"Hilbert"`` to a curve kind."""
    k = kind.strip().lower().replace("-", "_")
    if k not in CURVE_KINDS:
        raise ValueError(f"unknown curve kind {kind!r}; expected one of {', '.join(CURVE_KINDS)}")
    return k


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits per axis must be in [1, {MAX_BITS}], got {bits}")


def _cells(cells, bits: int):
    _check_bits(bits)
    c = np.asarray(cells, dtype=np.int64)
    if c.shape[-1:] != (3,):
        raise ValueError(f"cells need a trailing axis of 3, got shape {c.shape}")
    if c.size and (c.min() < 0 or c.max() >= (1 << bits)):
        raise ValueError(f"cell coordinate out of range for {bits} bits per axis (max {(1 << bits) - 1})")
    return c


def _codes(code, bits: int):
    _check_bits(bits)
    k = np.asarray(code, dtype=np.int64)
    if k.size and (k.min() < 0 or k.max() >= (1 << (3 * bits))):
        raise ValueError(f"code out of range for {bits} bits per axis")
    return k


def _scalar(out, like):
    return int(out) if np.ndim(like) == 0 or np.shape(like) == (3,) else out


def z_encode(cells, bits: int):
    """Interleave bits with ``x`` in the lowest position of each triple."""
    c = _cells(cells, bits)
    x, y, z = c[..., 0], c[..., 1], c[..., 2]
    code = np.zeros(x.shape, dtype=np.int64)
    for b in range(bits):
        code |= ((x >> b) & 1) << (3 * b)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b + 2)
    return _scalar(code, cells)


def z_decode(code, bits: int):
    k = _codes(code, bits)
    x = np.zeros(k.shape, dtype=np.int64)
    y = np.zeros_like(x)
    z = np.zeros_like(x)
    for b in range(bits):
        x |= ((k >> (3 * b)) & 1) << b
        y |= ((k >> (3 * b + 1)) & 1) << b
        z |= ((k >> (3 * b + 2)) & 1) << b
    out = np.stack([x, y, z], axis=-1)
    return tuple(int(v) for v in out) if k.ndim == 0 else out


def _axes_to_transpose(X: list, bits: int) -> list:
    # Skilling's in-place Hilbert transform, vectorized over arrays
    n = len(X)
    Q = 1 << (bits - 1)
    while Q > 1:
        P = Q - 1
        for i in range(n):
            hit = (X[i] & Q) != 0
            t = (X[0] ^ X[i]) & P
            X0 = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = np.where(hit, X[i], X[i] ^ t)
            X[0] = X0
        Q >>= 1
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = 1 << (bits - 1)
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - 1), t)
        Q >>= 1
    return [x ^ t for x in X]


def _transpose_to_axes(X: list, bits: int) -> list:
    n = len(X)
    N = 2 << (bits - 1)
    t = X[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        X[i] = X[i] ^ X[i - 1]
    X[0] = X[0] ^ t
    Q = 2
    while Q != N:
        P = Q - 1
        for i in range(n - 1, -1, -1):
            hit = (X[i] & Q) != 0
            t = (X[0] ^ X[i]) & P
            X0 = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = np.where(hit, X[i], X[i] ^ t)
            X[0] = X0
        Q <<= 1
    return X


def hilbert_encode(cells, bits: int):
    """3-D Hilbert index via the Gray-code transpose construction."""
    c = _cells(cells, bits)
    X = _axes_to_transpose([c[..., 0].copy(), c[..., 1].copy(), c[..., 2].copy()], bits)
    code = np.zeros(c.shape[:-1], dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for i in range(3):
            code = (code << 1) | ((X[i] >> b) & 1)
    return _scalar(code, cells)


def hilbert_decode(code, bits: int):
    k = _codes(code, bits)
    X = [np.zeros(k.shape, dtype=np.int64) for _ in range(3)]
    pos = 3 * bits - 1
    for b in range(bits - 1, -1, -1):
        for i in range(3):
            X[i] = X[i] | (((k >> pos) & 1) << b)
            pos -= 1
    X = _transpose_to_axes(X, bits)
    out = np.stack(X, axis=-1)
    return tuple(int(v) for v in out) if k.ndim == 0 else out


def transpose_variant(cells):
    """Cyclic axis rotation ``(x, y, z) -> (z, x, y)``."""
    c = np.asarray(cells)
    out = c[..., [2, 0, 1]]
    return tuple(int(v) for v in out) if out.ndim == 1 else out


def untranspose_variant(cells):
    """Inverse rotation ``(z, x, y) -> (x, y, z)``."""
    c = np.asarray(cells)
    out = c[..., [1, 2, 0]]
    return tuple(int(v) for v in out) if out.ndim == 1 else out


def encode(cells, kind: str, bits: int):
    kind = canonical_kind(kind)
    if kind.endswith("_trans"):
        cells = np.asarray(transpose_variant(cells))
    base = hilbert_encode if kind.startswith("hilbert") else z_encode
    return base(cells, bits)


def decode(code, kind: str, bits: int):
    kind = canonical_kind(kind)
    base = hilbert_decode if kind.startswith("hilbert") else z_decode
    cells = base(code, bits)
    return untranspose_variant(cells) if kind.endswith("_trans") else cells


def quantize(coords: np.ndarray, bits: int) -> np.ndarray:
    """Floor unit-cube coordinates onto a ``2**bits`` grid, clamping 1.0."""
    _check_bits(bits)
    c = np.asarray(coords, dtype=np.float64)
    if c.size and (c.min() < 0.0 or c.max() > 1.0):
        raise ValueError("serialization coordinates must lie in [0, 1]^3")
    n = 1 << bits
    return np.minimum(np.floor(c * n).astype(np.int64), n - 1)


def serialize_points(coords: np.ndarray, kind: str = "z", bits: int = 6) -> SerializationOrder:
    """Order points along a curve: ``permutation[i]`` is the i-th point visited.

    Points sharing a cell keep their input order.
    """
    kind = canonical_kind(kind)
    codes = np.asarray(encode(quantize(coords, bits), kind, bits)).reshape(-1)
    perm = np.argsort(codes, kind="stable")
    return SerializationOrder(kind, perm, codes)


def serialize_batch(coords: np.ndarray, kind: str = "z", bits: int = 6) -> np.ndarray:
    """Per-cloud curve permutations for ``(B, M, 3)`` coordinates."""
    kind = canonical_kind(kind)
    codes = encode(quantize(coords, bits), kind, bits)
    return np.argsort(codes, axis=-1, kind="stable")
