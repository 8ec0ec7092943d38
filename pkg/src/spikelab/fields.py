"""Grid functions with zero Dirichlet extension.

Arrays are full-grid ``(ny, nx)`` float64 arrays that are exactly zero at
outside nodes.  The gradient energy is the edge sum of squared forward
differences, so that summation by parts against :func:`laplacian` is exact.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import DomainMask, Grid


class ParameterError(ValueError):
    pass


@dataclass(eq=False)
class Field:
    values: NDArray[np.float64]
    mask: DomainMask

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.mask.inside.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.mask.inside.shape}")
        v[~self.mask.inside] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @property
    def grid(self) -> Grid:
        return self.mask.grid

    @classmethod
    def zeros(cls, mask: DomainMask) -> "Field":
        return cls(np.zeros(mask.inside.shape), mask)

    @classmethod
    def from_function(cls, mask: DomainMask, fn) -> "Field":
        X, Y = mask.grid.coords()
        return cls(fn(X, Y), mask)

    def __neg__(self) -> "Field":
        return Field(-self.values, self.mask)

    def __mul__(self, c) -> "Field":
        # pointwise product for two fields, scaling otherwise
        if isinstance(c, Field):
            return Field(self.values * c.values, self.mask)
        return Field(self.values * c, self.mask)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        return Field(self.values + other.values, self.mask)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.values - other.values, self.mask)


def _vals(f) -> NDArray:
    return f.values if isinstance(f, Field) else np.asarray(f)


def _h(f, h: float | None) -> float:
    return f.grid.h if isinstance(f, Field) else h


def abs_pow(u: NDArray, p: float) -> NDArray:
    """|u|^p with 0 mapped to 0."""
    if p == 2:
        return u * u
    if p == 1:
        return np.abs(u)
    return np.abs(u) ** p


def odd_pow(u: NDArray, q: float) -> NDArray:
    """|u|^(q-1) u, the odd extension of u^q; zero at u = 0 for q > 0."""
    if q == 1:
        return u
    if q == 2:
        return np.abs(u) * u
    return np.sign(u) * np.abs(u) ** q


def integrate(f, h: float | None = None) -> float:
    """Midpoint rule h^2 * sum of node values."""
    hh = _h(f, h)
    return float(hh * hh * np.sum(_vals(f)))


def laplacian_array(u: NDArray, h: float, inside: NDArray | None = None) -> NDArray:
    lap = -4.0 * u
    lap[1:, :] += u[:-1, :]
    lap[:-1, :] += u[1:, :]
    lap[:, 1:] += u[:, :-1]
    lap[:, :-1] += u[:, 1:]
    lap /= h * h
    if inside is not None:
        lap[~inside] = 0.0
    return lap


def laplacian(f: Field) -> Field:
    return Field(laplacian_array(f.values, f.grid.h, f.mask.inside), f.mask)


def edge_terms(u: NDArray) -> tuple[NDArray, NDArray]:
    """Squared forward differences along x and y (every grid edge)."""
    return np.square(np.diff(u, axis=1)), np.square(np.diff(u, axis=0))


def dirichlet_energy(f) -> float:
    """Sum over edges of squared differences, i.e. an approximation of int |grad f|^2.

    The h^{-2} of the difference quotient cancels the h^2 of the quadrature.
    """
    ex, ey = edge_terms(_vals(f))
    return float(np.sum(ex) + np.sum(ey))


def gradient_pairing(f, g) -> float:
    """Edge-sum bilinear form associated with :func:`dirichlet_energy`."""
    a, b = _vals(f), _vals(g)
    return float(np.sum(np.diff(a, axis=1) * np.diff(b, axis=1))
                 + np.sum(np.diff(a, axis=0) * np.diff(b, axis=0)))


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")


def eps_norm_sq(f, eps: float, h: float | None = None) -> float:
    """eps^{-2} (eps^2 int |grad f|^2 + int f^2) on the grid (N = 2)."""
    _check_eps(eps)
    hh = _h(f, h)
    u = _vals(f)
    return (eps * eps * dirichlet_energy(u) + hh * hh * float(np.sum(u * u))) / (eps * eps)


def mixed_integral(f, g, p: float, eps: float, h: float | None = None) -> float:
    """eps^{-2} int |f|^p |g|^p."""
    _check_eps(eps)
    hh = _h(f, h)
    a, b = _vals(f), _vals(g)
    if a is b:
        prod = abs_pow(a, 2 * p)
    else:
        prod = abs_pow(a, p) * abs_pow(b, p)
    return hh * hh * float(np.sum(prod)) / (eps * eps)


# -- serialization -----------------------------------------------------------

_MAGIC = b"SPKF"
_HEADER = struct.Struct("<4sIIddd")


def write_field(path, values: NDArray, grid: Grid) -> None:
    """Flat binary: magic, nx, ny, h, origin x/y, then row-major float64."""
    v = np.ascontiguousarray(values, dtype="<f8")
    ox, oy = grid.origin
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, grid.nx, grid.ny, grid.h, ox, oy))
        fh.write(v.tobytes())


def read_field(path) -> tuple[NDArray, Grid]:
    data = Path(path).read_bytes()
    magic, nx, ny, h, ox, oy = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a field file")
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=nx * ny)
    return vals.reshape(ny, nx).copy(), Grid((ox, oy), h, nx, ny, 0, 0)


def pgm_bytes(values: NDArray, vmin: float, vmax: float) -> bytes:
    """8-bit binary PGM with a fixed linear scale; row 0 is the top (max y)."""
    span = vmax - vmin if vmax > vmin else 1.0
    img = np.clip(np.rint((values - vmin) / span * 255.0), 0, 255).astype(np.uint8)[::-1]
    buf = io.BytesIO()
    buf.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
    buf.write(img.tobytes())
    return buf.getvalue()


def write_pgm(path, values: NDArray, vmin: float | None = None, vmax: float | None = None) -> None:
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    Path(path).write_bytes(pgm_bytes(values, lo, hi))
