"""Lattice disk families (thick sets) and their covering subfamilies."""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.spatial import cKDTree

from maglab.constants import LATTICE_TOL
from maglab.errors import InvalidParamsError, PartitionInfeasibleError

logger = logging.getLogger("maglab")


class ThickSetParams(BaseModel):
    """Parameters of the nested lattice construction.

    ``rho_schedule``, ``sigma`` and ``nu`` are optional per-generation lists;
    missing entries fall back to rho_k = eps_k**3 (capped at eps_k**2/8 for
    B < 8), sigma_k = 1 and the largest nu_k consistent with the flux schedule.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    B: int
    K_max: int = 0
    rho_schedule: Optional[list[float]] = None
    sigma: Optional[list[float]] = None
    nu: Optional[list[float]] = None
    domain_radius: float = 1.0

    def eps(self, k: int) -> float:
        return float(self.eps_exact(k))

    def eps_exact(self, k: int) -> Fraction:
        return Fraction(1, self.B ** k)

    def rho(self, k: int) -> float:
        if self.rho_schedule is not None and k <= len(self.rho_schedule):
            return float(self.rho_schedule[k - 1])
        eps = self.eps(k)
        return min(eps ** 3, eps * eps / 8)

    def sigma_at(self, k: int) -> float:
        if self.sigma is not None and k <= len(self.sigma):
            return float(self.sigma[k - 1])
        return 1.0

    def nu_at(self, k: int) -> Fraction:
        if self.nu is not None and k <= len(self.nu):
            return Fraction(self.nu[k - 1])
        return Fraction(self.B ** (2 * k), 2 ** (self.B ** (k - 1)))

    def check(self) -> None:
        if self.B < 3:
            raise InvalidParamsError(f"lattice base B must be at least 3, got {self.B}")
        if self.K_max < 0:
            raise InvalidParamsError(f"K_max must be non-negative, got {self.K_max}")
        if not self.domain_radius > 0:
            raise InvalidParamsError(f"domain_radius must be positive, got {self.domain_radius}")
        for name in ("rho_schedule", "sigma", "nu"):
            values = getattr(self, name)
            if values is not None and len(values) < self.K_max:
                raise InvalidParamsError(
                    f"{name} has {len(values)} entries but K_max is {self.K_max}"
                )
        for k in range(1, self.K_max + 1):
            eps = self.eps(k)
            rho = self.rho(k)
            if not 0 < rho <= eps * eps / 8:
                raise InvalidParamsError(
                    f"rho_{k} = {rho:.6g} must lie in (0, eps_{k}^2/8 = {eps * eps / 8:.6g}]"
                )
            if self.sigma_at(k) < 1:
                raise InvalidParamsError(f"sigma_{k} must be >= 1")
            if self.nu_at(k) <= 0:
                raise InvalidParamsError(f"nu_{k} must be positive")


@dataclass(frozen=True)
class Disk:
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParamsError(f"disk radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Annulus:
    center: complex
    r_in: float
    r_out: float

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise InvalidParamsError(
                f"annulus needs 0 < r_in < r_out, got ({self.r_in}, {self.r_out})"
            )


@dataclass(frozen=True)
class Generation:
    k: int
    cell: float
    radius: float
    centers: np.ndarray
    base: int
    domain_radius: float = 1.0

    def __post_init__(self):
        centers = np.array(self.centers, dtype=complex)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    def __len__(self):
        return len(self.centers)

    def disks(self) -> list[Disk]:
        return [Disk(complex(c), self.radius) for c in self.centers]

    def points(self) -> np.ndarray:
        return np.column_stack([self.centers.real, self.centers.imag])


def _as_points(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    return np.column_stack([z.real, z.imag])


def build_generations(params: ThickSetParams) -> list[Generation]:
    params.check()
    R = params.domain_radius
    gens: list[Generation] = []
    for k in range(1, params.K_max + 1):
        eps = params.eps(k)
        rho = params.rho(k)
        m = int(math.floor((R - eps) / eps + LATTICE_TOL))
        if m < 0:
            centers = np.zeros(0, dtype=complex)
        else:
            idx = np.arange(-m, m + 1)
            re, im = np.meshgrid(idx, idx, indexing="ij")
            # lexicographic by (Re, Im)
            centers = (re.ravel() + 1j * im.ravel()) * eps
            centers = centers[np.abs(centers) + eps <= R + LATTICE_TOL * eps]
        for prev in gens:
            if len(centers) == 0 or len(prev) == 0:
                continue
            dist, _ = cKDTree(prev.points()).query(_as_points(centers))
            centers = centers[dist > eps + prev.radius]
        if len(centers) == 0:
            logger.warning("Generation %d is empty (B=%d, R=%g)", k, params.B, R)
        gens.append(
            Generation(k=k, cell=eps, radius=rho, centers=centers, base=params.B, domain_radius=R)
        )
        logger.debug("Generation %d: %d centers, eps=%g, rho=%g", k, len(centers), eps, rho)
    return gens


def verify_generations(gens: Sequence[Generation]) -> list[str]:
    """Independent invariant scan; returns one message per violation."""
    problems = []
    for gi, gen in enumerate(gens):
        eps = gen.cell
        scaled = gen.centers / eps
        off = np.maximum(np.abs(scaled.real - np.round(scaled.real)), np.abs(scaled.imag - np.round(scaled.imag)))
        for j in np.nonzero(off > LATTICE_TOL)[0]:
            problems.append(f"generation {gen.k}: center {j} is off the lattice")
        outside = np.abs(gen.centers) + eps > gen.domain_radius + LATTICE_TOL * eps
        for j in np.nonzero(outside)[0]:
            problems.append(f"generation {gen.k}: ball around center {j} leaves the domain")
        for prev in gens[:gi]:
            if len(prev) == 0 or len(gen) == 0:
                continue
            for start in range(0, len(gen), 2048):
                block = gen.centers[start:start + 2048]
                gap = np.abs(block[:, None] - prev.centers[None, :]) - prev.radius
                bad = np.nonzero(gap.min(axis=1) <= eps)[0]
                for j in bad:
                    problems.append(
                        f"generation {gen.k}: center {start + j} within eps of generation {prev.k}"
                    )
    return problems


def omega_mask(gens: Sequence[Generation], z, k: int) -> np.ndarray:
    """Membership in Omega_k: the domain minus every closed disk of generations <= k."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    R = gens[0].domain_radius if gens else 1.0
    inside = np.abs(flat) < R
    pts = _as_points(flat)
    for gen in gens:
        if gen.k > k or len(gen) == 0:
            continue
        dist, _ = cKDTree(gen.points()).query(pts)
        inside &= dist > gen.radius
    return inside.reshape(z.shape)


class GenerationCount(BaseModel):
    k: int
    m_k: int
    eps: float
    mass_bound: float
    mass_ok: bool
    min_local_count: Optional[int]
    local_bound: float
    local_ok: Optional[bool]
    samples: int
    pitch: float
    asymptotic: bool


@dataclass
class CountingReport:
    rows: list[GenerationCount] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows])

    @property
    def all_ok(self) -> bool:
        return all(r.mass_ok and r.local_ok is not False for r in self.rows)


def counting_report(gens: Sequence[Generation], max_samples: int = 2_000_000) -> CountingReport:
    report = CountingReport()
    for gen in gens:
        eps = gen.cell
        root = math.sqrt(eps)
        R = gen.domain_radius
        mass_bound = eps ** -2 / 4
        asymptotic = gen.base < 16
        reach = R - root
        pitch = eps / 2
        min_count = None
        n_samples = 0
        if reach > 0:
            side = int(math.floor(2 * reach / pitch)) + 1
            if side * side > max_samples:
                pitch = 2 * reach / (math.isqrt(max_samples) - 1)
                side = int(math.floor(2 * reach / pitch)) + 1
                logger.debug("Generation %d density grid coarsened to pitch %g", gen.k, pitch)
            axis = -reach + pitch * np.arange(side)
            xx, yy = np.meshgrid(axis, axis)
            z = (xx + 1j * yy).ravel()
            z = z[np.abs(z) <= reach]
            z = z[omega_mask([g for g in gens if g.k <= gen.k], z, gen.k)]
            n_samples = len(z)
            if n_samples and len(gen):
                # strictly closer than 4*sqrt(eps)
                counts = cKDTree(gen.points()).query_ball_point(
                    _as_points(z), r=np.nextafter(4 * root, 0.0), return_length=True
                )
                min_count = int(np.min(counts))
            elif n_samples:
                min_count = 0
        local_ok = None if min_count is None else bool(min_count >= 1 / eps)
        row = GenerationCount(
            k=gen.k,
            m_k=len(gen),
            eps=eps,
            mass_bound=mass_bound,
            mass_ok=bool(len(gen) >= mass_bound),
            min_local_count=min_count,
            local_bound=1 / eps,
            local_ok=local_ok,
            samples=n_samples,
            pitch=pitch,
            asymptotic=asymptotic,
        )
        if asymptotic and not (row.mass_ok and local_ok is not False):
            logger.warning("Counting bounds fail for generation %d at B=%d (asymptotic regime)", gen.k, gen.base)
        report.rows.append(row)
    return report


@dataclass(frozen=True)
class SubfamilyPartition:
    covering: tuple
    assignment: np.ndarray
    counts: np.ndarray
    covering_radius: float
    half_disjoint: bool
    max_gap: float
    coverage: float

    @property
    def n_subfamilies(self) -> int:
        return len(self.covering)

    @property
    def min_count(self) -> int:
        return int(self.counts.min()) if len(self.counts) else 0

    def members(self, i: int) -> np.ndarray:
        return np.nonzero(self.assignment == i)[0]


def build_subfamilies(gen: Generation, prev: Sequence[Generation] = ()) -> SubfamilyPartition:
    """Greedy covering of Omega_{k-1} by disks of radius 8*sqrt(eps_k) at generation-k centers.

    Selected centers are pairwise more than ``8*sqrt(eps) - rho`` apart and the
    selection is maximal, so every disk D^k_j sits inside the covering disk of
    its nearest selected center.
    """
    big = 8 * math.sqrt(gen.cell)
    if len(gen) == 0:
        return SubfamilyPartition((), np.zeros(0, dtype=int), np.zeros(0, dtype=int), big, True, 0.0, 0.0)
    sep = big - gen.radius
    pts = gen.points()
    tree = cKDTree(pts)
    taken = np.zeros(len(gen), dtype=bool)
    blocked = np.zeros(len(gen), dtype=bool)
    for j in range(len(gen)):
        if blocked[j]:
            continue
        taken[j] = True
        for i in tree.query_ball_point(pts[j], r=sep):
            blocked[i] = True
    chosen = np.nonzero(taken)[0]
    covering = tuple(Disk(complex(gen.centers[j]), big) for j in chosen)
    dist, nearest = cKDTree(pts[chosen]).query(pts)
    worst = float(np.max(dist + gen.radius))
    if worst > big * (1 + 1e-12):
        raise PartitionInfeasibleError(
            f"generation {gen.k}: a disk reaches {worst:.6g} from its covering center (limit {big:.6g})"
        )
    counts = np.bincount(nearest, minlength=len(chosen))
    if len(chosen) > 1:
        pair, _ = cKDTree(pts[chosen]).query(pts[chosen], k=2)
        half_disjoint = bool(pair[:, 1].min() > big)
    else:
        half_disjoint = True
    coverage = _coverage(gen, prev, covering, big)
    logger.debug(
        "Generation %d: %d subfamilies, min size %d", gen.k, len(chosen), int(counts.min())
    )
    return SubfamilyPartition(
        covering=covering,
        assignment=nearest.astype(int),
        counts=counts,
        covering_radius=big,
        half_disjoint=half_disjoint,
        max_gap=float(dist.max()),
        coverage=coverage,
    )


def _coverage(gen, prev, covering, big, side=129) -> float:
    """Fraction of sampled Omega_{k-1} (away from the rim) inside the covering disks."""
    R = gen.domain_radius - gen.cell
    if R <= 0:
        return 0.0
    axis = np.linspace(-R, R, side)
    xx, yy = np.meshgrid(axis, axis)
    z = (xx + 1j * yy).ravel()
    z = z[np.abs(z) <= R]
    earlier = [g for g in prev if g.k < gen.k]
    if earlier:
        z = z[omega_mask(earlier, z, gen.k - 1)]
    if len(z) == 0:
        return 1.0
    centers = np.array([[d.center.real, d.center.imag] for d in covering])
    dist, _ = cKDTree(centers).query(_as_points(z))
    return float(np.mean(dist < big))


def write_generations(gens: Sequence[Generation], path) -> None:
    lines = []
    base = gens[0].base if gens else 0
    radius = gens[0].domain_radius if gens else 1.0
    lines.append(f"thickset {base} {radius:.17g} {len(gens)}")
    for gen in gens:
        lines.append(f"generation {gen.k} {gen.cell:.17g} {gen.radius:.17g} {len(gen)}")
        for c in gen.centers:
            lines.append(f"{c.real:.17g} {c.imag:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_generations(path) -> list[Generation]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    head = rows[0].split()
    if head[0] != "thickset":
        raise InvalidParamsError(f"{path}: not a generation file")
    base, radius, count = int(head[1]), float(head[2]), int(head[3])
    gens = []
    pos = 1
    for _ in range(count):
        tag, k, cell, rho, m = rows[pos].split()
        if tag != "generation":
            raise InvalidParamsError(f"{path}: malformed header at line {pos + 1}")
        m = int(m)
        body = np.array([[float(v) for v in r.split()] for r in rows[pos + 1:pos + 1 + m]]).reshape(m, 2)
        gens.append(
            Generation(
                k=int(k), cell=float(cell), radius=float(rho),
                centers=body[:, 0] + 1j * body[:, 1], base=base, domain_radius=radius,
            )
        )
        pos += 1 + m
    return gens
