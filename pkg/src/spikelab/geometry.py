"""Planar domains, their uniform grids and inside masks.

Three analytic shapes are supported (rectangle, disk, ellipse).  All
distances are computed by closed-point formulas, so the mask data can be
trusted by the configuration-space predicates in :mod:`spikelab.seeding`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

SHAPES = ("rectangle", "disk", "ellipse")


class GeometryError(ValueError):
    """Invalid domain or grid."""


class GridTooCoarseError(GeometryError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    shape: str
    params: tuple[float, ...]
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise GeometryError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        n = 1 if self.shape == "disk" else 2
        if len(self.params) != n:
            raise GeometryError(f"{self.shape} takes {n} size parameter(s), got {len(self.params)}")
        if not all(math.isfinite(v) and v > 0 for v in self.params):
            raise GeometryError(f"size parameters must be positive, got {self.params}")
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @classmethod
    def rectangle(cls, width: float, height: float, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("rectangle", (width, height), center)

    @classmethod
    def disk(cls, radius: float, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("disk", (radius,), center)

    @classmethod
    def ellipse(cls, a: float, b: float, center=(0.0, 0.0)) -> "DomainSpec":
        return cls("ellipse", (a, b), center)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        params = d.get("params", ())
        if isinstance(params, dict):
            keys = {"rectangle": ("width", "height"), "disk": ("radius",), "ellipse": ("a", "b")}
            params = tuple(params[k] for k in keys.get(d["shape"], ()))
        elif not isinstance(params, (list, tuple)):
            params = (params,)
        return cls(d["shape"], tuple(params), tuple(d.get("center", (0.0, 0.0))))

    def to_dict(self) -> dict:
        return {"shape": self.shape, "params": list(self.params), "center": list(self.center)}

    @property
    def half_extent(self) -> tuple[float, float]:
        """Half widths of the axis-aligned bounding box."""
        if self.shape == "disk":
            return self.params[0], self.params[0]
        if self.shape == "rectangle":
            return self.params[0] / 2, self.params[1] / 2
        return self.params[0], self.params[1]

    @property
    def narrowest(self) -> float:
        return 2 * min(self.half_extent)

    @property
    def diameter(self) -> float:
        hx, hy = self.half_extent
        if self.shape == "rectangle":
            return 2 * math.hypot(hx, hy)
        return 2 * max(hx, hy)

    def scaled(self, factor: float) -> "DomainSpec":
        """The image of the domain under x -> x / factor."""
        return DomainSpec(
            self.shape,
            tuple(v / factor for v in self.params),
            (self.center[0] / factor, self.center[1] / factor),
        )


def _ellipse_distance(a: float, b: float, x: NDArray, y: NDArray) -> NDArray:
    """Distance from points (offsets from the center) to the ellipse curve.

    Robust bisection on the Lagrange parameter; works for inside and outside
    points.  Requires nothing of the ordering of a and b.
    """
    swap = b > a
    if swap:
        a, b = b, a
        x, y = y, x
    y0 = np.abs(np.asarray(x, dtype=float))
    y1 = np.abs(np.asarray(y, dtype=float))
    out = np.empty(np.broadcast(y0, y1).shape)
    y0, y1 = np.broadcast_to(y0, out.shape), np.broadcast_to(y1, out.shape)

    gen = y1 > 0
    # y1 > 0: root of F(t) = (a y0/(t+a^2))^2 + (b y1/(t+b^2))^2 - 1 on (-b^2, inf)
    if np.any(gen):
        z0 = y0[gen] / a
        z1 = y1[gen] / b
        g = z0 * z0 + z1 * z1 - 1.0
        r0 = (a / b) ** 2
        # root s of (r0 z0/(s+r0))^2 + (z1/(s+1))^2 - 1 with t = b^2 (s - 1)... Eberly form
        n0 = r0 * z0
        s0 = z1 - 1.0
        s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
        s = np.zeros_like(z0)
        for _ in range(200):
            s = 0.5 * (s0 + s1)
            ra = n0 / (s + r0)
            rb = z1 / (s + 1.0)
            gs = ra * ra + rb * rb - 1.0
            pos = gs > 0
            s0 = np.where(pos, s, s0)
            s1 = np.where(pos, s1, s)
            if np.all(s1 - s0 <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(s))):
                break
        s = 0.5 * (s0 + s1)
        xc = r0 * y0[gen] / (s + r0)
        yc = y1[gen] / (s + 1.0)
        d = np.hypot(xc - y0[gen], yc - y1[gen])
        d[g == 0] = 0.0
        out[gen] = d

    axis = ~gen
    if np.any(axis):
        # on the major axis: the closest point may be off-axis for inner points
        x0 = y0[axis]
        num = a * x0
        den = a * a - b * b
        d = np.abs(x0 - a)
        if den > 0:
            inner = num < den
            xd = np.where(inner, a * (num / np.where(inner, den, 1.0)), 0.0)
            q = np.clip(1.0 - (xd / a) ** 2, 0.0, None)
            d_in = np.hypot(xd - x0, b * np.sqrt(q))
            d = np.where(inner, np.minimum(d_in, d), d)
        out[axis] = d
    return out


def _inside_and_dist(spec: DomainSpec, dx: NDArray, dy: NDArray) -> tuple[NDArray, NDArray]:
    """Return (strictly-inside flag, distance to the boundary curve)."""
    if spec.shape == "disk":
        rad = np.hypot(dx, dy)
        return rad < spec.params[0], np.abs(spec.params[0] - rad)
    if spec.shape == "rectangle":
        hx, hy = spec.half_extent
        ex = np.abs(dx) - hx
        ey = np.abs(dy) - hy
        inside = (ex < 0) & (ey < 0)
        d_in = np.minimum(-ex, -ey)
        d_out = np.hypot(np.maximum(ex, 0.0), np.maximum(ey, 0.0))
        return inside, np.where(inside, d_in, d_out)
    a, b = spec.params
    inside = (dx / a) ** 2 + (dy / b) ** 2 < 1.0
    return inside, _ellipse_distance(a, b, dx, dy)


def _offsets(spec: DomainSpec, x) -> tuple[NDArray, NDArray]:
    p = np.asarray(x, dtype=float)
    return p[..., 0] - spec.center[0], p[..., 1] - spec.center[1]


def boundary_distance(spec: DomainSpec, x) -> float | NDArray:
    """dist(x, R^2 \\ Omega); zero for points outside the open domain.

    Accepts one point or an array of shape (..., 2).
    """
    dx, dy = _offsets(spec, x)
    inside, d = _inside_and_dist(spec, dx, dy)
    out = np.where(inside, d, 0.0)
    return float(out) if out.ndim == 0 else out


def outside_distance(spec: DomainSpec, x) -> float | NDArray:
    """dist(x, Omega): zero on the closure, positive outside."""
    dx, dy = _offsets(spec, x)
    inside, d = _inside_and_dist(spec, dx, dy)
    out = np.where(inside, 0.0, d)
    return float(out) if out.ndim == 0 else out


def in_dilation(spec: DomainSpec, x, r: float) -> bool | NDArray:
    """Membership in the open r-neighbourhood of Omega (closure included)."""
    if r < 0:
        raise GeometryError("dilation radius must be nonnegative")
    dx, dy = _offsets(spec, x)
    inside, d = _inside_and_dist(spec, dx, dy)
    res = inside | (d == 0) | (d < r)
    return bool(res) if np.ndim(res) == 0 else res


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid with node (ia, ja) sitting at ``anchor``.

    Node (i, j) has coordinates ``anchor + ((i - ia) h, (j - ja) h)``;
    arrays on the grid are indexed ``[j, i]`` (row = y).
    """

    anchor: tuple[float, float]
    h: float
    nx: int
    ny: int
    ia: int = 0
    ja: int = 0

    def __post_init__(self) -> None:
        if not (self.h > 0 and math.isfinite(self.h)):
            raise GeometryError("grid spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("grid needs at least one node per axis")

    @classmethod
    def fit(cls, spec: DomainSpec, h: float, pad: int = 2) -> "Grid":
        """Smallest grid with a node at the domain center covering Omega.

        ``pad`` extra node layers are kept outside the bounding box so that
        the outermost ring is always outside Omega.
        """
        hx, hy = spec.half_extent
        mx = int(math.floor(hx / h + 1e-9)) + pad
        my = int(math.floor(hy / h + 1e-9)) + pad
        return cls(spec.center, float(h), 2 * mx + 1, 2 * my + 1, mx, my)

    @classmethod
    def with_cells(cls, spec: DomainSpec, n: int, pad: int = 2) -> "Grid":
        """Grid with spacing narrowest-width / n."""
        return cls.fit(spec, spec.narrowest / n, pad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ny, self.nx

    @property
    def origin(self) -> tuple[float, float]:
        return (self.anchor[0] - self.ia * self.h, self.anchor[1] - self.ja * self.h)

    def offsets(self) -> tuple[NDArray, NDArray]:
        """Integer multiples of h relative to the anchor, per axis."""
        return (np.arange(self.nx) - self.ia) * self.h, (np.arange(self.ny) - self.ja) * self.h

    def axes(self) -> tuple[NDArray, NDArray]:
        ox, oy = self.offsets()
        return self.anchor[0] + ox, self.anchor[1] + oy

    def coords(self) -> tuple[NDArray, NDArray]:
        """Meshgrid (X, Y) of node coordinates, each of shape (ny, nx)."""
        ax, ay = self.axes()
        return np.meshgrid(ax, ay)

    def node_of(self, x) -> tuple[int, int]:
        """Index (i, j) of the node nearest to point x."""
        i = int(round((x[0] - self.anchor[0]) / self.h)) + self.ia
        j = int(round((x[1] - self.anchor[1]) / self.h)) + self.ja
        return i, j

    def point(self, i: int, j: int) -> tuple[float, float]:
        return (self.anchor[0] + (i - self.ia) * self.h, self.anchor[1] + (j - self.ja) * self.h)

    def snap(self, x) -> tuple[float, float]:
        return self.point(*self.node_of(x))

    def rescaled(self, factor: float) -> "Grid":
        """Node-value-preserving rescale x -> x / factor."""
        return Grid(
            (self.anchor[0] / factor, self.anchor[1] / factor),
            self.h / factor, self.nx, self.ny, self.ia, self.ja,
        )

    def to_dict(self) -> dict:
        return {"anchor": list(self.anchor), "h": self.h, "nx": self.nx, "ny": self.ny,
                "ia": self.ia, "ja": self.ja}


@dataclass(frozen=True, eq=False)
class DomainMask:
    inside: NDArray[np.bool_]
    bdist: NDArray[np.float64]
    grid: Grid = field(repr=False)
    spec: DomainSpec

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    def __getstate__(self):
        # cached factorizations are process-local
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_")}

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def flat_index(self) -> NDArray[np.intp]:
        """Flat (row-major) indices of inside nodes."""
        idx = self.__dict__.get("_flat")
        if idx is None:
            idx = np.flatnonzero(self.inside)
            object.__setattr__(self, "_flat", idx)
        return idx


def _relative_node_offsets(spec: DomainSpec, grid: Grid) -> tuple[NDArray, NDArray]:
    ox, oy = grid.offsets()
    # exact +-k h offsets when the grid is anchored at the domain center
    ox = (grid.anchor[0] - spec.center[0]) + ox
    oy = (grid.anchor[1] - spec.center[1]) + oy
    return np.meshgrid(ox, oy)


def build_mask(spec: DomainSpec, grid: Grid) -> DomainMask:
    dx, dy = _relative_node_offsets(spec, grid)
    hx, hy = spec.half_extent
    if dx[0, 0] > -hx or dx[0, -1] < hx or dy[0, 0] > -hy or dy[-1, 0] < hy:
        raise GeometryError("grid bounding box does not contain the closure of the domain")
    inside, d = _inside_and_dist(spec, dx, dy)
    if inside[0].any() or inside[-1].any() or inside[:, 0].any() or inside[:, -1].any():
        raise GeometryError("outermost grid ring must lie outside the domain")
    bdist = np.where(inside, d, 0.0)
    across = min(inside.sum(axis=0).max(), inside.sum(axis=1).max())
    if across < 8:
        raise GridTooCoarseError(
            f"only {across} interior nodes across the narrowest dimension (need >= 8)"
        )
    inside.setflags(write=False)
    bdist.setflags(write=False)
    return DomainMask(inside, bdist, grid, spec)
