"""Subharmonic potentials built from radial bump charges.

A :class:`PotentialField` is a sum of :class:`RadialCharge` Newtonian
potentials plus closed-form terms (point fluxes, counter-charges, the smooth
window and the extension to B(0, 2)).  Every summand evaluates
``(phi, grad, lap)`` where ``grad`` is packed as ``phi_x + 1j*phi_y``.

Fluxes are kept in winding units, w = (2*pi)**-1 * integral of the Laplacian,
and the schedule weights are exact ``Fraction`` values.
"""

import logging
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.spatial import cKDTree

from maglab.constants import (
    BUMP_QUAD_RTOL,
    CELL_EDGE_TOL,
    CHI1_KNOTS,
    CHI2_MIN_STRENGTH,
    CHI2_SAFETY,
    CHI2_STEP_END,
    EXTENSION_RADIUS,
    GAUSS_ORDER,
    MAX_SCHEDULE_EXPONENT,
    QUADRATURE_EXACT,
    QUADRATURE_MIDPOINT,
    QUADRATURE_SIMPSON,
    TWO_PI,
)
from maglab.errors import (
    InsufficientDisksError,
    InvalidParamsError,
    MuConstraintError,
    NotSubharmonicError,
    SingularEvalError,
)
from maglab.geometry import Generation, SubfamilyPartition, ThickSetParams

logger = logging.getLogger("maglab")

Number = Union[int, float, Fraction]

# Pair budget per vectorised charge chunk.
_PAIR_CHUNK = 2_000_000


@lru_cache(maxsize=None)
def _gauss(order: int = GAUSS_ORDER):
    return leggauss(order)


@dataclass(frozen=True)
class BumpProfile:
    c0: float

    def eval(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = (t >= 0) & (t < 1)
        out[inside] = self.c0 * np.exp(-1.0 / (1.0 - t[inside]))
        return out

    def __call__(self, t):
        return self.eval(t)

    def _moment(self, lo, hi, with_log=False) -> np.ndarray:
        x, w = _gauss()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = (hi - lo) / 2
        tau = lo[..., None] + half[..., None] * (x + 1)
        vals = self.eval(tau) * tau
        if with_log:
            vals = vals * np.log(tau)
        return TWO_PI * half * (vals @ w)

    def total(self) -> float:
        return float(self._moment(0.0, 1.0))

    def mass(self, t) -> np.ndarray:
        """Fraction of the unit mass inside radius t (in units of the support radius)."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return self._moment(np.zeros_like(t), t) / self.total()

    def log_moment(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return self._moment(t, np.ones_like(t), with_log=True) / self.total()

    def mass_over_t2(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        small = t < 1e-6
        safe = np.where(small, 1.0, t)
        limit = math.pi * self.c0 * math.exp(-1.0) * (1 - 2 * t / 3) / self.total()
        return np.where(small, limit, self.mass(safe) / safe ** 2)


@lru_cache(maxsize=1)
def normalize_bump() -> BumpProfile:
    value, _ = integrate.quad(
        lambda r: math.exp(-1.0 / (1.0 - r)) * r, 0.0, 1.0, epsabs=0.0, epsrel=BUMP_QUAD_RTOL, limit=200
    )
    return BumpProfile(c0=1.0 / (TWO_PI * value))


def _radial_terms(dz, rho, weight, bump: BumpProfile):
    """phi, grad and Laplacian of ``weight`` winding units of a bump charge at offsets ``dz``."""
    dz, rho, weight = np.broadcast_arrays(
        np.asarray(dz, dtype=complex), np.asarray(rho, dtype=float), np.asarray(weight, dtype=float)
    )
    shape = dz.shape
    dz, rho, weight = dz.ravel(), rho.ravel(), weight.ravel()
    r = np.abs(dz)
    inside = r < rho
    out = ~inside
    phi = np.zeros(dz.shape)
    grad = np.zeros(dz.shape, dtype=complex)
    lap = np.zeros(dz.shape)
    phi[out] = weight[out] * np.log(r[out])
    grad[out] = weight[out] * dz[out] / r[out] ** 2
    if inside.any():
        t = r[inside] / rho[inside]
        m = bump.mass(t)
        g = bump.log_moment(t)
        mlogt = np.where(t > 0, m * np.log(np.where(t > 0, t, 1.0)), 0.0)
        wi = weight[inside]
        ri = rho[inside]
        phi[inside] = wi * (mlogt + np.log(ri) + g)
        grad[inside] = wi * bump.mass_over_t2(t) * dz[inside] / ri ** 2
        lap[inside] = wi * TWO_PI * bump.eval(t) / ri ** 2
    return phi.reshape(shape), grad.reshape(shape), lap.reshape(shape)


def _segment_gauss(grad_fn, a, b, panels: int = 4, order: int = 16) -> np.ndarray:
    """Composite Gauss rule for the circulation of A = (-phi_y, phi_x) along a -> b."""
    x, w = _gauss(order)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    seg = b - a
    total = np.zeros(a.shape)
    for p in range(panels):
        s = (p + (x + 1) / 2) / panels
        z = a[..., None] + seg[..., None] * s
        g = grad_fn(z)
        vals = np.imag(np.conj(g) * seg[..., None])
        total += (vals @ w) / (2 * panels)
    return total


def _segment_distance(a, b, c):
    seg = b - a
    length2 = np.abs(seg) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.real((c - a) * np.conj(seg)) / np.where(length2 > 0, length2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.abs(a + t * seg - c)


@dataclass(frozen=True)
class RadialCharge:
    center: complex
    rho: float
    mu: Number

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidParamsError(f"charge radius must be positive, got {self.rho}")
        if not self.mu > 0:
            raise InvalidParamsError(f"charge flux must be positive, got {self.mu}")


def charge_eval(charge: RadialCharge, z, bump: Optional[BumpProfile] = None):
    """phi, gradient (x, y) and Laplacian of one charge at ``z``."""
    bump = bump or normalize_bump()
    phi, grad, lap = _radial_terms(np.asarray(z) - charge.center, charge.rho, float(charge.mu), bump)
    return phi, np.stack([grad.real, grad.imag], axis=-1), lap


@dataclass(frozen=True)
class PointFlux:
    alpha: float
    center: complex = 0j
    kind = "point-flux"

    @property
    def flux(self) -> float:
        return float(self.alpha)

    def evaluate(self, z):
        dz = np.asarray(z, dtype=complex) - self.center
        r = np.abs(dz)
        if np.any(r == 0):
            raise SingularEvalError(f"point flux at {self.center} evaluated at its center")
        return self.alpha * np.log(r), self.alpha * dz / r ** 2, np.zeros(r.shape)

    def circulation(self, a, b) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.alpha * np.angle((b - self.center) / (a - self.center))

    def to_json(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "center": [self.center.real, self.center.imag]}


@dataclass(frozen=True)
class CounterCharge:
    """Signed bump charge; used to round region fluxes to integers."""

    center: complex
    rho: float
    flux: float
    kind = "counter-charge"

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidParamsError(f"counter-charge radius must be positive, got {self.rho}")

    def evaluate(self, z):
        return _radial_terms(np.asarray(z, dtype=complex) - self.center, self.rho, self.flux, normalize_bump())

    def circulation(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)
        near = _segment_distance(a, b, self.center) <= self.rho
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(near, 0.0, self.flux * np.angle((b - self.center) / (a - self.center)))
        if near.any():
            out[near] = _segment_gauss(lambda z: self.evaluate(z)[1], a[near], b[near])
        return out

    def to_json(self) -> dict:
        return {"kind": self.kind, "center": [self.center.real, self.center.imag], "rho": self.rho, "flux": self.flux}


def _septic(u):
    u = np.clip(u, 0.0, 1.0)
    s = u ** 4 * (35 - 84 * u + 70 * u ** 2 - 20 * u ** 3)
    s1 = 140 * u ** 3 * (1 - u) ** 3
    s2 = 420 * u ** 2 * (1 - u) ** 2 * (1 - 2 * u)
    return s, s1, s2


@dataclass(frozen=True)
class SmoothWindow:
    """chi_1: equal to 1 below ``lo``, 0 above ``hi``."""

    lo: float = CHI1_KNOTS[0]
    hi: float = CHI1_KNOTS[1]

    def profile(self, r):
        width = self.hi - self.lo
        s, s1, s2 = _septic((np.asarray(r, dtype=float) - self.lo) / width)
        return 1 - s, -s1 / width, -s2 / width ** 2


@dataclass(frozen=True)
class WindowedTerm:
    inner: "PotentialField"
    window: SmoothWindow = SmoothWindow()
    kind = "windowed"

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        phi, grad, lap = self.inner.evaluate(z)
        r = np.abs(z)
        chi, d1, d2 = self.window.profile(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r > 0, z / np.where(r > 0, r, 1.0), 0.0)
            d1_over_r = np.where(r > 0, d1 / np.where(r > 0, r, 1.0), 0.0)
        grad_chi = d1 * unit
        value = phi * chi
        gradient = grad * chi + phi * grad_chi
        laplacian = chi * lap + 2 * np.real(np.conj(grad) * grad_chi) + phi * (d2 + d1_over_r)
        return value, gradient, laplacian

    def circulation(self, a, b):
        return _segment_gauss(lambda z: self.evaluate(z)[1], a, b)

    def to_json(self) -> dict:
        return {"kind": self.kind, "knots": [self.window.lo, self.window.hi], "inner": field_to_json(self.inner)}


@dataclass(frozen=True)
class ExtensionTerm:
    """chi_2(|z|) = kappa*P(|z|-1) + S(|z|)*l(|z|), blowing up like -log(4-|z|^2)/2 at |z| = 2."""

    kappa: float
    step_end: float = CHI2_STEP_END
    kind = "extension"

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        x = r - 1.0
        pos = x > 0
        xs = np.where(pos, x, 1.0)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            e = np.where(pos, np.exp(-1.0 / xs), 0.0)
            p0 = np.where(pos, xs * e, 0.0)
            p1 = np.where(pos, e * (1 + 1 / xs), 0.0)
            p2 = np.where(pos, e / xs ** 3, 0.0)
            span = self.step_end - 1.0
            s, s1, s2 = _septic(x / span)
            s1, s2 = s1 / span, s2 / span ** 2
            gap = 4.0 - r ** 2
            ell = -0.5 * np.log(gap) + 0.5 * math.log(3.0)
            ell1 = r / gap
            ell2 = (4 + r ** 2) / gap ** 2
        ell = np.where(pos, ell, 0.0)
        ell1 = np.where(pos, ell1, 0.0)
        ell2 = np.where(pos, ell2, 0.0)
        f0 = self.kappa * p0 + s * ell
        f1 = self.kappa * p1 + s1 * ell + s * ell1
        f2 = self.kappa * p2 + s2 * ell + 2 * s1 * ell1 + s * ell2
        return f0, f1, f2

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        if np.any(r >= EXTENSION_RADIUS):
            raise SingularEvalError("extension term evaluated outside B(0, 2)")
        f0, f1, f2 = self.profile(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r > 0, z / np.where(r > 0, r, 1.0), 0.0)
            f1_over_r = np.where(r > 0, f1 / np.where(r > 0, r, 1.0), 0.0)
        return f0, f1 * unit, f2 + f1_over_r

    def circulation(self, a, b):
        return _segment_gauss(lambda z: self.evaluate(z)[1], a, b)

    def to_json(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa, "step_end": self.step_end}


class PotentialField:
    """Sum of radial charges and closed-form terms."""

    def __init__(self, charges: Sequence[RadialCharge] = (), terms: Sequence = (), bump: Optional[BumpProfile] = None):
        self.charges = tuple(charges)
        self.terms = tuple(terms)
        self.bump = bump or normalize_bump()
        self._centers = np.array([c.center for c in self.charges], dtype=complex)
        self._rhos = np.array([c.rho for c in self.charges], dtype=float)
        self._mus = np.array([float(c.mu) for c in self.charges], dtype=float)

    def __repr__(self):
        return f"PotentialField(charges={len(self.charges)}, terms={[t.kind for t in self.terms]})"

    @property
    def is_empty(self) -> bool:
        return not self.charges and not self.terms

    @property
    def point_fluxes(self) -> list[PointFlux]:
        return [t for t in self.terms if isinstance(t, PointFlux)]

    @property
    def total_flux(self) -> float:
        return float(self._mus.sum()) + sum(float(getattr(t, "flux", 0.0)) for t in self.terms)

    def exact_total_flux(self) -> Fraction:
        return sum((Fraction(c.mu) for c in self.charges), Fraction(0))

    def with_terms(self, *terms) -> "PotentialField":
        return PotentialField(self.charges, self.terms + tuple(terms), self.bump)

    def _chunks(self, n_points):
        step = max(1, _PAIR_CHUNK // max(n_points, 1))
        for start in range(0, len(self.charges), step):
            yield slice(start, start + step)

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        phi = np.zeros(flat.shape)
        grad = np.zeros(flat.shape, dtype=complex)
        lap = np.zeros(flat.shape)
        for sl in self._chunks(len(flat)):
            c = self._centers[sl]
            dz = flat[:, None] - c[None, :]
            p, g, l = _radial_terms(dz, self._rhos[sl][None, :], self._mus[sl][None, :], self.bump)
            phi += p.sum(axis=1)
            grad += g.sum(axis=1)
            lap += l.sum(axis=1)
        for term in self.terms:
            p, g, l = term.evaluate(flat)
            phi += p
            grad += g
            lap += l
        return phi.reshape(z.shape), grad.reshape(z.shape), lap.reshape(z.shape)

    def phi(self, z):
        return self.evaluate(z)[0]

    def gradient(self, z):
        return self.evaluate(z)[1]

    def laplacian(self, z):
        return self.evaluate(z)[2]

    def circulation(self, a, b, quadrature: str = QUADRATURE_EXACT) -> np.ndarray:
        """Integral of A.dl with A = (-phi_y, phi_x) along each straight segment a -> b."""
        a = np.asarray(a, dtype=complex).ravel()
        b = np.asarray(b, dtype=complex).ravel()
        if quadrature == QUADRATURE_MIDPOINT:
            g = self.gradient((a + b) / 2)
            return np.imag(np.conj(g) * (b - a))
        if quadrature == QUADRATURE_SIMPSON:
            ga, gm, gb = self.gradient(a), self.gradient((a + b) / 2), self.gradient(b)
            return np.imag(np.conj(ga + 4 * gm + gb) * (b - a)) / 6
        if quadrature != QUADRATURE_EXACT:
            raise InvalidParamsError(f"unknown quadrature {quadrature!r}")
        out = np.zeros(a.shape)
        for sl in self._chunks(len(a)):
            c = self._centers[sl][None, :]
            rho = self._rhos[sl][None, :]
            mu = self._mus[sl][None, :]
            near = _segment_distance(a[:, None], b[:, None], c) <= rho
            with np.errstate(divide="ignore", invalid="ignore"):
                angle = np.angle((b[:, None] - c) / (a[:, None] - c))
            out += np.where(near, 0.0, mu * angle).sum(axis=1)
            if near.any():
                ii, jj = np.nonzero(near)
                cc, rr, mm = c[0, jj], rho[0, jj], mu[0, jj]
                vals = _segment_gauss(
                    lambda z: _radial_terms(z - cc[:, None], rr[:, None], mm[:, None], self.bump)[1],
                    a[ii], b[ii],
                )
                np.add.at(out, ii, vals)
        for term in self.terms:
            out += term.circulation(a, b)
        return out


def assemble_phi(gens: Sequence[Generation], schedule: "MuSchedule", bump: Optional[BumpProfile] = None,
                 truncate_k: Optional[int] = None) -> PotentialField:
    bump = bump or normalize_bump()
    if truncate_k is None:
        truncate_k = len(gens)
    if truncate_k > len(gens) or truncate_k < 0:
        raise InvalidParamsError(f"truncate_k={truncate_k} outside [0, {len(gens)}]")
    charges = []
    for gen in gens[:truncate_k]:
        for j, c in enumerate(gen.centers):
            charges.append(RadialCharge(complex(c), gen.radius, schedule.mu_for(gen.k, j)))
    logger.debug("Assembled field with %d charges up to generation %d", len(charges), truncate_k)
    return PotentialField(charges, bump=bump)


# ------------------------------------------------------------------ flux schedule

@dataclass(frozen=True)
class ScheduleBlock:
    k: int
    n_lo: int
    n_hi: int
    disks: tuple
    mu: Fraction


@dataclass(frozen=True)
class MuSchedule:
    blocks: tuple
    leftover_mu: dict
    N: tuple
    n_max: int
    assigned: dict = dc_field(default_factory=dict)

    def mu_for(self, k: int, j: int) -> Fraction:
        return self.assigned.get((k, j), self.leftover_mu[k])

    def disk_mus(self, gen: Generation) -> list[Fraction]:
        return [self.mu_for(gen.k, j) for j in range(len(gen))]

    def blocks_for(self, n: int) -> list[ScheduleBlock]:
        return [b for b in self.blocks if b.n_lo <= n < b.n_hi]

    def scheduled_n(self, per_block: Optional[int] = None) -> list[int]:
        """Every n covered by a block and not beyond n_max.

        With ``per_block`` only that many evenly spaced n of each block are kept;
        two or more keep both ends of the block.
        """
        covered = set()
        for b in self.blocks:
            ns = range(b.n_lo, min(b.n_hi, self.n_max + 1))
            if per_block is not None and len(ns) > per_block:
                picks = np.linspace(0, len(ns) - 1, per_block).round().astype(int)
                ns = [ns[i] for i in picks]
            covered.update(int(n) for n in ns)
        return sorted(covered)


def schedule_N(B: int, k: int, override: Optional[Sequence[int]] = None) -> Optional[int]:
    exponent = B ** (k - 1)
    if exponent <= MAX_SCHEDULE_EXPONENT:
        return 2 ** exponent
    if override is not None and k <= len(override):
        return int(override[k - 1])
    return None


def schedule_mu(gens: Sequence[Generation], partitions: Sequence[SubfamilyPartition], params: ThickSetParams,
                n_max: int, N_override: Optional[Sequence[int]] = None) -> MuSchedule:
    params.check()
    if len(partitions) != len(gens):
        raise InvalidParamsError(f"{len(partitions)} partitions for {len(gens)} generations")
    K = len(gens)
    N = tuple(schedule_N(params.B, k, N_override) for k in range(1, K + 2))
    if N[0] is None or n_max < N[0]:
        raise InvalidParamsError(f"n_max={n_max} must be at least N_1={N[0]}")
    blocks, assigned, leftover = [], {}, {}
    for gen, part in zip(gens, partitions):
        k = gen.k
        if len(part.assignment) != len(gen):
            raise InvalidParamsError(f"partition of generation {k} does not match its disks")
        bound = params.nu_at(k) * params.eps_exact(k) ** 2
        n_k, n_next = N[k - 1], N[k]
        stop = n_max if n_next is None else min(n_next, n_max)
        queues = [list(part.members(i)) for i in range(part.n_subfamilies)]
        n_lo = n_k
        if n_lo is not None and len(gen) == 0 and n_lo < stop:
            logger.warning("Generation %d has no disks; blocks from n=%d are skipped", k, n_lo)
            n_lo = None
        while n_lo is not None and n_lo < stop:
            chosen = []
            for queue in queues:
                if not queue:
                    raise InsufficientDisksError(
                        f"generation {k}: a subfamily ran out of disks, first uncovered n = {n_lo}",
                        first_uncovered=n_lo,
                    )
                chosen.append(int(queue.pop(0)))
            mu = Fraction(1, 4 * n_lo)
            if mu > bound:
                raise MuConstraintError(f"generation {k}: mu={mu} exceeds nu_k*eps_k^2={bound}")
            for j in chosen:
                assigned[(k, j)] = mu
            blocks.append(ScheduleBlock(k, n_lo, 2 * n_lo, tuple(sorted(chosen)), mu))
            n_lo *= 2
        leftover[k] = Fraction(1, n_next) if n_next is not None else Fraction(1, 4 * n_max)
        if leftover[k] > bound:
            logger.warning("Generation %d leftover mu=%s exceeds nu_k*eps_k^2=%s", k, leftover[k], bound)
    logger.info("Scheduled %d blocks up to n=%d", len(blocks), n_max)
    return MuSchedule(tuple(blocks), leftover, N, n_max, assigned)


def block_distances(schedule: MuSchedule) -> list[tuple]:
    """Exact min over n in each block (capped at n_max) of the distance of n*mu to the integers."""
    out = []
    for b in schedule.blocks:
        best = None
        for n in range(b.n_lo, min(b.n_hi, schedule.n_max + 1)):
            x = n * b.mu
            d = abs(x - round(x))
            best = d if best is None else min(best, d)
        out.append((b, best))
    return out


# ------------------------------------------------------------------ trial functions

@dataclass
class TrialFunction:
    values: np.ndarray
    full: np.ndarray
    norm_l2: float
    norm_grad_l2: float
    sup_norm: float


def _cutoff_state(gens, k, z):
    """min over earlier disks of f^l_j, and a rim code per node (0 disk, 1 log zone, 2 flat)."""
    pts = np.column_stack([z.real, z.imag])
    f = np.ones(len(z))
    state = np.full(len(z), 2)
    for gen in gens:
        if gen.k > k or len(gen) == 0:
            continue
        dist, _ = cKDTree(gen.points()).query(pts)
        outer = gen.cell ** 2 / 4
        span = math.log(outer / gen.radius)
        with np.errstate(divide="ignore"):
            val = np.where(dist < gen.radius, 0.0,
                           np.where(dist >= outer, 1.0, np.log(np.maximum(dist, gen.radius) / gen.radius) / span))
        code = np.where(dist < gen.radius, 0, np.where(dist >= outer, 2, 1))
        f = np.minimum(f, val)
        state = np.minimum(state, code)
    return f, state


def trial_F(gens: Sequence[Generation], k: int, grid) -> TrialFunction:
    if not hasattr(grid, "mask"):
        from maglab.discretize import build_grid
        grid = build_grid(grid)
    if k > len(gens):
        raise InvalidParamsError(f"k={k} exceeds the {len(gens)} built generations")
    R = gens[0].domain_radius if gens else 1.0
    xx, yy = np.meshgrid(grid.xs, grid.ys)
    z = (xx + 1j * yy).ravel()
    f, state = _cutoff_state(gens, k, z)
    F = np.clip((1 - np.abs(z) ** 2 / R ** 2) * f, 0.0, 1.0)
    F[np.abs(z) >= R] = 0.0
    F = F.reshape(xx.shape) * grid.mask
    state = state.reshape(xx.shape)
    h = grid.h
    gx = _rim_gradient(F, state, h, axis=1)
    gy = _rim_gradient(F, state, h, axis=0)
    norm_l2 = math.sqrt(float(np.sum(F ** 2)) * h * h)
    norm_grad = math.sqrt(float(np.sum(gx ** 2 + gy ** 2)) * h * h)
    return TrialFunction(
        values=F[grid.mask],
        full=F,
        norm_l2=norm_l2,
        norm_grad_l2=norm_grad,
        sup_norm=float(F.max()) if F.size else 0.0,
    )


def _rim_gradient(F, state, h, axis):
    """Central differences, except one-sided (larger magnitude) where the stencil crosses a disk rim."""
    pad_f = np.pad(F, [(1, 1) if a == axis else (0, 0) for a in range(2)])
    pad_s = np.pad(state, [(1, 1) if a == axis else (0, 0) for a in range(2)], mode="edge")
    n = F.shape[axis]
    ahead = np.take(pad_f, range(2, n + 2), axis=axis)
    behind = np.take(pad_f, range(0, n), axis=axis)
    fwd = (ahead - F) / h
    bwd = (F - behind) / h
    central = (ahead - behind) / (2 * h)
    s_ahead = np.take(pad_s, range(2, n + 2), axis=axis)
    s_behind = np.take(pad_s, range(0, n), axis=axis)
    straddle = (s_ahead != state) | (s_behind != state)
    one_sided = np.where(np.abs(fwd) >= np.abs(bwd), fwd, bwd)
    return np.where(straddle, one_sided, central)


# ------------------------------------------------------------------ smoothing and extension

def mollify(field: PotentialField, delta: float, z, n_radial: int = 64, n_angle: int = 128):
    """phi convolved with the bump at scale ``delta``, by Gauss x trapezoid polar quadrature."""
    if not delta > 0:
        raise InvalidParamsError(f"mollifier scale must be positive, got {delta}")
    x, w = _gauss(n_radial)
    t = (x + 1) / 2
    theta = TWO_PI * np.arange(n_angle) / n_angle
    weights = (w / 2) * field.bump.eval(t) * t * TWO_PI / n_angle
    weights = np.repeat(weights, n_angle) / (weights.sum() * n_angle)
    offsets = (delta * t[:, None] * np.exp(1j * theta)[None, :]).ravel()
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.shape)
    for i, zi in enumerate(flat):
        out[i] = float(field.phi(zi - offsets) @ weights)
    return out.reshape(z.shape) if z.ndim else float(out[0])


def _ring_samples(lo, hi, n_r=96, n_theta=64):
    r = np.linspace(lo, hi, n_r)
    theta = TWO_PI * np.arange(n_theta) / n_theta
    return (r[:, None] * np.exp(1j * theta)[None, :]).ravel()


def extension_strength(windowed: WindowedTerm, step_end: float = CHI2_STEP_END) -> float:
    """Smallest safe kappa keeping the extended Laplacian positive on 1 < |z| < 2."""
    z = _ring_samples(1 + 1 / 64, EXTENSION_RADIUS - 1 / 64)
    lap_w = windowed.evaluate(z)[2]
    lap_rest = ExtensionTerm(0.0, step_end).evaluate(z)[2]
    lap_p = ExtensionTerm(1.0, step_end).evaluate(z)[2] - lap_rest
    need = -(lap_w + lap_rest)
    bad = need > 0
    if np.any(bad & (lap_p <= 0)):
        raise NotSubharmonicError("no extension strength can compensate the window near |z| = 1")
    ratio = float(np.max(need[bad] / lap_p[bad])) if bad.any() else 0.0
    return max(CHI2_MIN_STRENGTH, CHI2_SAFETY * ratio)


def validate_extension(psi: PotentialField, n_grid: int = 129) -> float:
    pitch = 2 * EXTENSION_RADIUS / (n_grid - 1)
    axis = -EXTENSION_RADIUS + pitch * np.arange(n_grid)
    xx, yy = np.meshgrid(axis, axis)
    z = (xx + 1j * yy).ravel()
    r = np.abs(z)
    z = z[(r >= 1 + pitch) & (r <= EXTENSION_RADIUS - pitch)]
    lap = psi.laplacian(z)
    worst = int(np.argmin(lap))
    if not lap[worst] > 0:
        raise NotSubharmonicError(
            f"extended Laplacian {lap[worst]:.3g} <= 0 at {z[worst]:.4f}; raise the chi_2 curvature on [4/3, 3/2]",
            min_laplacian=float(lap[worst]),
            where=complex(z[worst]),
        )
    return float(lap[worst])


def extend_to_psi(field: PotentialField, chi1_knots=CHI1_KNOTS, kappa: Optional[float] = None,
                  step_end: float = CHI2_STEP_END, validate: bool = True, n_grid: int = 129) -> PotentialField:
    lo, hi = chi1_knots
    if not 1.0 < lo < hi < EXTENSION_RADIUS:
        raise InvalidParamsError(f"window knots must satisfy 1 < lo < hi < 2, got {chi1_knots}")
    if not 1.0 < step_end < EXTENSION_RADIUS:
        raise InvalidParamsError(f"step_end must lie in (1, 2), got {step_end}")
    windowed = WindowedTerm(field, SmoothWindow(lo, hi))
    if kappa is None:
        kappa = extension_strength(windowed, step_end)
        logger.debug("Extension strength resolved to %.4g", kappa)
    psi = PotentialField((), (windowed, ExtensionTerm(float(kappa), step_end)), field.bump)
    if validate:
        validate_extension(psi, n_grid)
    return psi


# ------------------------------------------------------------------ cell deposits

def laplacian_cells(field: PotentialField, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Cell-averaged Laplacian on the cells centred at the nodes (xs, ys).

    Charges much smaller than a cell are deposited whole into the cell that
    contains their centre, so the deposit carries exactly 2*pi*mu of mass;
    everything else is sampled at the cell centres.
    """
    h = float(xs[1] - xs[0]) if len(xs) > 1 else float(ys[1] - ys[0])
    out = np.zeros((len(ys), len(xs)))
    xx, yy = np.meshgrid(xs, ys)
    nodes = xx + 1j * yy
    small = field._rhos < h / 2
    if small.any():
        c = field._centers[small]
        # cells are [x - h/2, x + h/2); no half-to-even ties
        j = np.floor((c.real - xs[0]) / h + 0.5 + CELL_EDGE_TOL).astype(int)
        i = np.floor((c.imag - ys[0]) / h + 0.5 + CELL_EDGE_TOL).astype(int)
        ok = (i >= 0) & (i < len(ys)) & (j >= 0) & (j < len(xs))
        np.add.at(out, (i[ok], j[ok]), TWO_PI * field._mus[small][ok] / h ** 2)
    rest = [c for c, s in zip(field.charges, small) if not s]
    sampled = PotentialField(rest, field.terms, field.bump)
    if not sampled.is_empty:
        out += sampled.laplacian(nodes)
    return out


# ------------------------------------------------------------------ serialisation

def _mu_text(mu) -> Union[str, float]:
    return f"{mu.numerator}/{mu.denominator}" if isinstance(mu, Fraction) else float(mu)


def _mu_value(raw) -> Number:
    return Fraction(raw) if isinstance(raw, str) else raw


def field_to_json(field: PotentialField) -> dict:
    return {
        "charges": [
            {"center": [c.center.real, c.center.imag], "rho": c.rho, "mu": _mu_text(c.mu)} for c in field.charges
        ],
        "terms": [t.to_json() for t in field.terms],
    }


def field_from_json(data: dict) -> PotentialField:
    charges = [
        RadialCharge(complex(*c["center"]), float(c["rho"]), _mu_value(c["mu"])) for c in data.get("charges", [])
    ]
    terms = []
    for t in data.get("terms", []):
        kind = t["kind"]
        if kind == PointFlux.kind:
            terms.append(PointFlux(float(t["alpha"]), complex(*t.get("center", (0.0, 0.0)))))
        elif kind == CounterCharge.kind:
            terms.append(CounterCharge(complex(*t["center"]), float(t["rho"]), float(t["flux"])))
        elif kind == WindowedTerm.kind:
            terms.append(WindowedTerm(field_from_json(t["inner"]), SmoothWindow(*t["knots"])))
        elif kind == ExtensionTerm.kind:
            terms.append(ExtensionTerm(float(t["kappa"]), float(t.get("step_end", CHI2_STEP_END))))
        else:
            raise InvalidParamsError(f"unknown field term {kind!r}")
    return PotentialField(charges, terms)
