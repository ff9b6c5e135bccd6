"""Masked grids and finite Hermitian operators.

Nodes are interior when they satisfy the mask; neighbours outside the mask
are dropped, which imposes homogeneous Dirichlet data.  Magnetic coupling
enters through Peierls phases on the grid edges.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.linalg import eigh_tridiagonal, svdvals

from maglab.constants import QUADRATURE_MIDPOINT, QUADRATURES, TWO_PI
from maglab.errors import (
    DimensionMismatchError,
    EmptyGridError,
    GridSingularityError,
    InvalidParamsError,
    InvalidRangeError,
)
from maglab.potential import PotentialField, laplacian_cells
from maglab.utils import atomic_write_text

logger = logging.getLogger("maglab")


class DiskMask(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["disk"] = "disk"
    center: tuple[float, float] = (0.0, 0.0)
    radius: float

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius ** 2

    def extent(self):
        cx, cy = self.center
        return (cx - self.radius, cx + self.radius, cy - self.radius, cy + self.radius)


class AnnulusMask(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["annulus"] = "annulus"
    center: tuple[float, float] = (0.0, 0.0)
    r_in: float
    r_out: float

    def contains(self, x, y):
        d2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return (d2 > self.r_in ** 2) & (d2 < self.r_out ** 2)

    def extent(self):
        cx, cy = self.center
        return (cx - self.r_out, cx + self.r_out, cy - self.r_out, cy + self.r_out)


class DiskDifferenceMask(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["disk-difference"] = "disk-difference"
    outer: DiskMask
    holes: list[DiskMask] = []

    def contains(self, x, y):
        inside = self.outer.contains(x, y)
        for hole in self.holes:
            inside &= (x - hole.center[0]) ** 2 + (y - hole.center[1]) ** 2 > hole.radius ** 2
        return inside

    def extent(self):
        return self.outer.extent()


class BitmapMask(BaseModel):
    """Explicit node bitmap; row 0 is the lowest y row of the grid."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["bitmap"] = "bitmap"
    cells: list[str]

    def contains(self, x, y):
        bits = np.array([[ch == "1" for ch in row] for row in self.cells], dtype=bool)
        if bits.shape != np.shape(x):
            raise DimensionMismatchError(f"bitmap is {bits.shape}, grid is {np.shape(x)}")
        return bits


Mask = Annotated[Union[DiskMask, AnnulusMask, DiskDifferenceMask, BitmapMask], Field(discriminator="kind")]


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bbox: tuple[float, float, float, float]
    h: float
    mask: Mask

    @classmethod
    def covering(cls, mask, n: int, offset: bool = False) -> "GridSpec":
        """Square grid with ``n`` nodes per side over the mask's extent.

        With ``offset`` every node is shifted by h/2 in both directions, so
        centred point fluxes never meet a node or an edge.
        """
        x0, x1, y0, y1 = mask.extent()
        h = (x1 - x0) / (n - 1)
        shift = h / 2 if offset else 0.0
        return cls(bbox=(x0 + shift, x1 + shift, y0 + shift, y1 + shift), h=h, mask=mask)


@dataclass(frozen=True, eq=False)
class Grid:
    spec: GridSpec
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray
    index: np.ndarray

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    @cached_property
    def nodes(self) -> np.ndarray:
        rows, cols = np.nonzero(self.mask)
        return self.xs[cols] + 1j * self.ys[rows]

    @cached_property
    def edges(self):
        """(src, dst) interior neighbour pairs, horizontal then vertical, src < dst."""
        hm = self.mask[:, :-1] & self.mask[:, 1:]
        vm = self.mask[:-1, :] & self.mask[1:, :]
        src = np.concatenate([self.index[:, :-1][hm], self.index[:-1, :][vm]])
        dst = np.concatenate([self.index[:, 1:][hm], self.index[1:, :][vm]])
        return src, dst

    @property
    def n_edges(self) -> int:
        return len(self.edges[0])

    def edge_segments(self):
        src, dst = self.edges
        return self.nodes[src], self.nodes[dst]

    def boundary_degree(self) -> np.ndarray:
        """Number of Dirichlet (dropped) neighbours of every interior node."""
        src, dst = self.edges
        degree = np.bincount(src, minlength=self.n) + np.bincount(dst, minlength=self.n)
        return 4 - degree

    def metadata(self) -> dict:
        return {
            "h": self.h,
            "bbox": list(self.spec.bbox),
            "mask": self.spec.mask.kind,
            "nodes": self.n,
            "dirichlet": "omission",
        }


def build_grid(spec: GridSpec) -> Grid:
    if not spec.h > 0:
        raise InvalidParamsError(f"grid spacing must be positive, got {spec.h}")
    x0, x1, y0, y1 = spec.bbox
    if x1 - x0 < spec.h or y1 - y0 < spec.h:
        raise EmptyGridError(f"bounding box {spec.bbox} is smaller than one cell of size {spec.h}")
    nx = int(math.floor((x1 - x0) / spec.h + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / spec.h + 1e-9)) + 1
    xs = x0 + spec.h * np.arange(nx)
    ys = y0 + spec.h * np.arange(ny)
    xx, yy = np.meshgrid(xs, ys)
    mask = np.asarray(spec.mask.contains(xx, yy), dtype=bool)
    if not mask.any():
        raise EmptyGridError(f"mask {spec.mask.kind} has no interior nodes at h={spec.h}")
    index = np.full(mask.shape, -1, dtype=int)
    index[mask] = np.arange(int(mask.sum()))
    grid = Grid(spec=spec, xs=xs, ys=ys, mask=mask, index=index)
    logger.debug("Grid %s: %d interior nodes, h=%g", spec.mask.kind, grid.n, spec.h)
    return grid


def check_point_flux_clearance(grid: Grid, field: PotentialField, tol: float = 1e-9) -> None:
    fluxes = field.point_fluxes
    if not fluxes:
        return
    a, b = grid.edge_segments()
    seg = b - a
    for term in fluxes:
        c = term.center
        if np.min(np.abs(grid.nodes - c)) <= tol * grid.h:
            raise GridSingularityError(f"point flux at {c} sits on a grid node; offset the grid by h/2")
        if len(a):
            t = np.clip(np.real((c - a) * np.conj(seg)) / np.abs(seg) ** 2, 0.0, 1.0)
            if np.min(np.abs(a + t * seg - c)) <= tol * grid.h:
                raise GridSingularityError(f"point flux at {c} lies on a grid edge; offset the grid by h/2")


@dataclass(frozen=True, eq=False)
class LinkPhaseField:
    """Edge phases U = exp(i*angle) with angle = -coupling * integral of A.dl."""

    src: np.ndarray
    dst: np.ndarray
    unit_angle: np.ndarray
    coupling: float = 1.0
    quadrature: str = QUADRATURE_MIDPOINT

    @property
    def angle(self) -> np.ndarray:
        return self.coupling * self.unit_angle

    @property
    def phases(self) -> np.ndarray:
        return np.exp(1j * self.angle)

    def at_coupling(self, n: float) -> "LinkPhaseField":
        return replace(self, coupling=float(n))

    def reversed(self) -> "LinkPhaseField":
        return replace(self, src=self.dst, dst=self.src, unit_angle=-self.unit_angle)

    def plus(self, other: "LinkPhaseField") -> "LinkPhaseField":
        """Phases of the summed potential, at this field's coupling."""
        if len(other.src) != len(self.src) or not np.array_equal(other.src, self.src):
            raise DimensionMismatchError("phase fields live on different edge sets")
        scale = other.coupling / self.coupling if self.coupling else 0.0
        return replace(self, unit_angle=self.unit_angle + scale * other.unit_angle)


def link_phases(grid: Grid, field: PotentialField, coupling: float = 1.0,
                quadrature: str = QUADRATURE_MIDPOINT) -> LinkPhaseField:
    if quadrature not in QUADRATURES:
        raise InvalidParamsError(f"quadrature must be one of {QUADRATURES}, got {quadrature!r}")
    src, dst = grid.edges
    if field.is_empty:
        unit = np.zeros(len(src))
    else:
        check_point_flux_clearance(grid, field)
        a, b = grid.edge_segments()
        unit = -field.circulation(a, b, quadrature)
    return LinkPhaseField(src=src, dst=dst, unit_angle=unit, coupling=float(coupling), quadrature=quadrature)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    matrix: sparse.csr_matrix
    h: Optional[float] = None
    potential: Optional[np.ndarray] = None
    magnetic: bool = False
    coupling: float = 0.0
    tag: str = ""
    grid: Optional[Grid] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, matrix, magnetic: Optional[bool] = None, tag: str = "matrix") -> "HermitianOperator":
        m = sparse.csr_matrix(matrix)
        if magnetic is None:
            magnetic = np.iscomplexobj(m.data)
        return cls(matrix=m, magnetic=magnetic, tag=tag)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def gershgorin_floor(self) -> float:
        d = self.matrix.diagonal().real
        off = np.asarray(abs(self.matrix).sum(axis=1)).ravel() - np.abs(d)
        return float(np.min(d - off))

    def metadata(self) -> dict:
        out = {
            "dimension": self.dimension,
            "nnz": int(self.matrix.nnz),
            "h": self.h,
            "magnetic": self.magnetic,
            "coupling": self.coupling,
            "potential": self.tag,
        }
        if self.grid is not None:
            out["grid"] = self.grid.metadata()
        out.update(self.meta)
        return out


def _stencil(grid: Grid, potential: np.ndarray, links: Optional[np.ndarray]) -> sparse.csr_matrix:
    n = grid.n
    h2 = grid.h ** 2
    src, dst = grid.edges
    diag = 4.0 / h2 + potential
    upper = -(links if links is not None else np.ones(len(src))) / h2
    rows = np.concatenate([src, dst, np.arange(n)])
    cols = np.concatenate([dst, src, np.arange(n)])
    data = np.concatenate([upper, np.conj(upper), diag.astype(upper.dtype)])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _potential(grid: Grid, field: PotentialField, coupling: float) -> np.ndarray:
    """coupling * Laplacian per node cell; sub-cell charges keep their whole mass 2*pi*coupling*mu."""
    if coupling == 0 or field.is_empty:
        return np.zeros(grid.n)
    return coupling * laplacian_cells(field, grid.xs, grid.ys)[grid.mask]


def assemble_magnetic(grid: Grid, phases: LinkPhaseField, field: PotentialField,
                      coupling: float) -> HermitianOperator:
    if len(phases.src) != grid.n_edges:
        raise DimensionMismatchError(f"phase field has {len(phases.src)} edges, grid has {grid.n_edges}")
    if phases.coupling != coupling:
        phases = phases.at_coupling(coupling)
    V = _potential(grid, field, coupling)
    matrix = _stencil(grid, V, phases.phases)
    return HermitianOperator(
        matrix=matrix, h=grid.h, potential=V, magnetic=True, coupling=float(coupling),
        tag=repr(field), grid=grid, meta={"quadrature": phases.quadrature},
    )


def assemble_electric(grid: Grid, field: PotentialField, coupling: float) -> HermitianOperator:
    V = _potential(grid, field, coupling)
    matrix = _stencil(grid, V, None)
    return HermitianOperator(
        matrix=matrix, h=grid.h, potential=V, magnetic=False, coupling=float(coupling),
        tag=repr(field), grid=grid,
    )


def export_operator(op: HermitianOperator, path) -> Path:
    """Write the upper triangle as ``row col real imag`` lines plus a JSON sidecar."""
    path = Path(path)
    upper = sparse.triu(op.matrix).tocoo()
    order = np.lexsort((upper.col, upper.row))
    lines = [
        f"{upper.row[i]} {upper.col[i]} {upper.data[i].real:.17g} {np.imag(upper.data[i]):.17g}" for i in order
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
    sidecar = path.with_name(path.name + ".json")
    atomic_write_text(sidecar, json.dumps(op.metadata(), indent=2, sort_keys=True))
    return sidecar


# ------------------------------------------------------------------ 1D operators

@dataclass(frozen=True, eq=False)
class RadialOperator:
    r: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    nu: float

    def eigenvalues(self, count: int = 1) -> np.ndarray:
        return eigh_tridiagonal(self.diag, self.off, eigvals_only=True, select="i", select_range=(0, count - 1))

    def lowest(self) -> float:
        return float(self.eigenvalues(1)[0])


def assemble_radial(r_in: float, r_out: float, nu: float, m: int) -> RadialOperator:
    """-u'' - u'/r + (nu/r)^2 u on (r_in, r_out), symmetrised with weight r.

    r_in = 0 uses cell-centred nodes so the regularity condition at the
    origin is natural; otherwise both ends carry Dirichlet data.
    """
    if not 0 <= r_in < r_out:
        raise InvalidRangeError(f"need 0 <= r_in < r_out, got ({r_in}, {r_out})")
    if m < 8:
        raise InvalidRangeError(f"at least 8 radial samples are required, got {m}")
    if nu < 0:
        raise InvalidRangeError(f"angular order must be non-negative, got {nu}")
    i = np.arange(1, m + 1)
    if r_in == 0:
        h = r_out / (m + 0.5)
        r = (i - 0.5) * h
    else:
        h = (r_out - r_in) / (m + 1)
        r = r_in + i * h
    left = r - h / 2
    right = r + h / 2
    diag = (left + right) / (h * h * r) + nu ** 2 / r ** 2
    off = -right[:-1] / (h * h * np.sqrt(r[:-1] * r[1:]))
    return RadialOperator(r=r, diag=diag, off=off, nu=float(nu))


@dataclass(frozen=True, eq=False)
class PeriodicOperator:
    matrix: np.ndarray
    spacing: float
    winding: float

    def smallest_singular_value(self) -> float:
        return float(svdvals(self.matrix).min())


def assemble_periodic_1d(h_samples, rho: float) -> PeriodicOperator:
    """Periodic first-order difference for L = d/ds + i*h(s) on a circle of length rho."""
    h_samples = np.asarray(h_samples, dtype=float)
    n = len(h_samples)
    if n == 0 or not rho > 0:
        raise InvalidParamsError("need at least one sample and a positive period")
    step = rho / n
    theta = step * (h_samples + np.roll(h_samples, -1)) / 2
    matrix = np.zeros((n, n), dtype=complex)
    j = np.arange(n)
    np.add.at(matrix, (j, (j + 1) % n), np.exp(1j * theta) / step)
    np.add.at(matrix, (j, j), -1.0 / step)
    winding = step * float(h_samples.sum()) / TWO_PI
    return PeriodicOperator(matrix=matrix, spacing=step, winding=winding)
