"""Measurable mathematics on top of the operators.

Winding numbers, the inequality suites, component labelling, the
pigeonhole search, gauge operations and the compactness profile.
"""

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy import sparse, special

from maglab.constants import (
    AB_ORDERS,
    BAND_LIMIT_TOL,
    DEFAULT_EIG_MAX_ITER,
    DEFAULT_EIG_TOL,
    GAUGE_TOL,
    QUADRATURE_EXACT,
    TWO_PI,
)
from maglab.discretize import (
    AnnulusMask,
    DiskMask,
    Grid,
    GridSpec,
    HermitianOperator,
    LinkPhaseField,
    assemble_electric,
    assemble_magnetic,
    assemble_periodic_1d,
    assemble_radial,
    build_grid,
    link_phases,
)
from maglab.eigensolve import lowest_eigenpair, rayleigh_quotient
from maglab.errors import (
    DimensionMismatchError,
    FieldSingularOnCircleError,
    GuaranteeViolatedError,
    InvalidParamsError,
    PigeonholeNotFoundError,
    RegionTooSmallError,
    SingularEvalError,
    BandLimitError,
)
from maglab.geometry import Annulus, Disk, Generation
from maglab.potential import (
    CounterCharge,
    PointFlux,
    PotentialField,
    _gauss,
    laplacian_cells,
    trial_F,
)

logger = logging.getLogger("maglab")


def dist_to_integers(x):
    if isinstance(x, Fraction):
        return abs(x - round(x))
    arr = np.asarray(x, dtype=float)
    out = np.abs(arr - np.round(arr))
    return float(out) if arr.ndim == 0 else out


def richardson(coarse: float, fine: float, order: int = 2) -> float:
    return fine + (fine - coarse) / (2 ** order - 1)


@dataclass
class FluxVector:
    fluxes: np.ndarray
    region_ids: tuple = ()

    def __post_init__(self):
        self.fluxes = np.asarray(self.fluxes, dtype=float).ravel()
        if not np.all(np.isfinite(self.fluxes)):
            raise InvalidParamsError("flux vector entries must be finite")
        if not self.region_ids:
            self.region_ids = tuple(range(1, len(self.fluxes) + 1))

    def __len__(self):
        return len(self.fluxes)

    def max_dist(self, n: int) -> float:
        if len(self.fluxes) == 0:
            return 0.0
        return float(np.max(dist_to_integers(n * self.fluxes)))


# ------------------------------------------------------------------ winding numbers

def winding_line(field: PotentialField, circle: Disk, m: int = 256) -> float:
    """(2*pi)^-1 times the circulation of A around the circle, by the trapezoid rule."""
    if m < 16:
        raise InvalidParamsError(f"at least 16 quadrature points are required, got {m}")
    z = circle.center + circle.radius * np.exp(1j * TWO_PI * np.arange(m) / m)
    try:
        _, grad, lap = field.evaluate(z)
    except SingularEvalError as e:
        raise FieldSingularOnCircleError(str(e)) from e
    if np.max(np.abs(lap)) > 1e-10:
        raise FieldSingularOnCircleError(
            f"field is not harmonic on the circle |z-{circle.center}|={circle.radius}"
        )
    return float(np.mean(np.real(np.conj(grad) * (z - circle.center))))


def _charge_share(center, rho, disk: Disk, bump) -> float:
    """Fraction of a bump charge's mass inside the disk."""
    d = abs(center - disk.center)
    R = disk.radius
    if d + rho <= R:
        return 1.0
    if d >= R + rho:
        return 0.0
    x, w = _gauss()
    knots = sorted({0.0, min(abs(R - d) / rho, 1.0), min((R + d) / rho, 1.0), 1.0})
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi <= lo:
            continue
        t = lo + (hi - lo) * (x + 1) / 2
        s = rho * t
        if d == 0:
            frac = (s < R).astype(float)
        else:
            q = np.clip((s ** 2 + d ** 2 - R ** 2) / (2 * s * d), -1.0, 1.0)
            frac = np.arccos(q) / math.pi
        total += (hi - lo) / 2 * float(np.sum(w * TWO_PI * bump.eval(t) * t * frac))
    return total / bump.total()


def winding_flux(field: PotentialField, disk: Disk, n_radial: int = 64, n_angle: int = 256) -> float:
    """(2*pi)^-1 times the integral of the Laplacian over the disk."""
    total = 0.0
    for c in field.charges:
        total += float(c.mu) * _charge_share(c.center, c.rho, disk, field.bump)
    rest = []
    for term in field.terms:
        if isinstance(term, PointFlux):
            d = abs(term.center - disk.center)
            if abs(d - disk.radius) <= 1e-14 * max(1.0, disk.radius):
                raise FieldSingularOnCircleError(f"point flux at {term.center} lies on the circle")
            total += term.alpha if d < disk.radius else 0.0
        elif isinstance(term, CounterCharge):
            total += term.flux * _charge_share(term.center, term.rho, disk, field.bump)
        else:
            rest.append(term)
    if rest:
        x, w = _gauss(n_radial)
        r = disk.radius * (x + 1) / 2
        theta = TWO_PI * np.arange(n_angle) / n_angle
        z = disk.center + r[:, None] * np.exp(1j * theta)[None, :]
        lap = PotentialField((), rest, field.bump).laplacian(z)
        weights = (w * r * disk.radius / 2)[:, None] * (TWO_PI / n_angle)
        total += float(np.sum(lap * weights)) / TWO_PI
    return total


# ------------------------------------------------------------------ inequality suites

@dataclass
class InequalityResult:
    lhs: float
    rhs: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs else math.inf


def kato_check(grid: Grid, field: PotentialField, n: float, u,
               phases: Optional[LinkPhaseField] = None) -> InequalityResult:
    """Discrete |grad|u||^2 against the magnetic form <(H - V)u, u>, both scaled by h^2."""
    u = np.asarray(u)
    if u.shape != (grid.n,):
        raise DimensionMismatchError(f"vector has shape {u.shape}, grid has {grid.n} nodes")
    if phases is None:
        phases = link_phases(grid, field, coupling=n)
    op = assemble_magnetic(grid, phases, field, n)
    form = float(np.real(np.vdot(u, op.matrix @ u))) - float(np.sum(op.potential * np.abs(u) ** 2))
    rhs = form * grid.h ** 2
    mod = np.abs(u)
    src, dst = grid.edges
    lhs = float(np.sum((mod[src] - mod[dst]) ** 2) + np.sum(grid.boundary_degree() * mod ** 2))
    return InequalityResult(lhs, rhs, lhs <= rhs + 1e-9 * abs(rhs))


def poincare_check(u: Callable, geometry: Union[Disk, Annulus], n_radial: int = 64,
                   n_angle: int = 256) -> InequalityResult:
    """Polar-quadrature check of the disk and annulus Poincare inequalities.

    ``u`` is a vectorised callable on complex points, continuous up to the
    boundary circles.
    """
    if isinstance(geometry, Disk):
        c, lo, hi = geometry.center, 0.0, geometry.radius
    else:
        c, lo, hi = geometry.center, geometry.r_in, geometry.r_out
    x, w = _gauss(n_radial)
    r = lo + (hi - lo) * (x + 1) / 2
    theta = TWO_PI * np.arange(n_angle) / n_angle
    ring = np.exp(1j * theta)
    z = c + r[:, None] * ring[None, :]
    area = ((w * r * (hi - lo) / 2)[:, None] * (TWO_PI / n_angle)) * np.ones_like(theta)[None, :]
    step = 1e-6 * max(hi, 1.0)
    mod = lambda pts: np.abs(u(pts))
    gx = (mod(z + step) - mod(z - step)) / (2 * step)
    gy = (mod(z + 1j * step) - mod(z - 1j * step)) / (2 * step)
    mass = float(np.sum(np.abs(u(z)) ** 2 * area))
    energy = float(np.sum((gx ** 2 + gy ** 2) * area))
    dtheta = TWO_PI / n_angle
    if isinstance(geometry, Disk):
        rim = float(np.sum(np.abs(u(c + hi * ring)) ** 2) * dtheta)
        rhs = hi ** 2 * (2 * energy + rim)
    else:
        inner = float(np.sum(np.abs(u(c + lo * ring)) ** 2) * dtheta)
        span = hi ** 2 - lo ** 2
        rhs = span * math.log(hi / lo) * energy + span * inner
    return InequalityResult(mass, rhs, mass <= rhs * (1 + 1e-6) + 1e-9)


def _forward(f, h, axis):
    return np.diff(f, axis=axis, append=0) / h


def _wirtinger(f, h):
    fx = _forward(f, h, axis=1)
    fy = _forward(f, h, axis=0)
    return (fx - 1j * fy) / 2, (fx + 1j * fy) / 2


def _laplace5(f, h):
    p = np.pad(f, 1)
    return (p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4 * f) / h ** 2


def _twistor_parts(u, field, n, grid):
    xx, yy = np.meshgrid(grid.xs, grid.ys)
    _, grad, lap = field.evaluate(xx + 1j * yy)
    psi_z = n * np.conj(grad) / 2
    psi_zzbar = n * lap / 4
    u_z, u_zbar = _wirtinger(u, grid.h)
    Lu = -u_z + psi_z * u
    Lbar = u_zbar + np.conj(psi_z) * u
    return Lu, Lbar, psi_zzbar


@dataclass
class TwistorResult:
    lhs: float
    rhs: float
    residual: float


def twistor_residual(a, u, field: PotentialField, n: float, grid: Grid) -> TwistorResult:
    """|LHS - RHS| of the weighted twistor identity, first order forward differences.

    ``a`` and ``u`` are sampled on the full grid rectangle and must vanish
    near its edges.
    """
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=complex)
    Lu, Lbar, psi_zzbar = _twistor_parts(u, field, n, grid)
    a_z, _ = _wirtinger(a, grid.h)
    a_zzbar = _laplace5(a, grid.h) / 4
    dA = grid.h ** 2
    lhs = float(np.sum(a * np.abs(Lu) ** 2)) * dA
    rhs = float(np.sum((2 * a * psi_zzbar - a_zzbar) * np.abs(u) ** 2 + a * np.abs(Lbar) ** 2)) * dA
    rhs += 2 * float(np.real(np.sum(u * a_z * np.conj(Lu)))) * dA
    return TwistorResult(lhs, rhs, abs(lhs - rhs))


@dataclass
class TwistorInequalityResult:
    lhs: float
    rhs: float
    defect: float
    passed: bool


def twistor_inequality_check(b, u, field: PotentialField, n: float, grid: Grid) -> TwistorInequalityResult:
    """Lower bound for |Lu|^2 obtained from the identity with weight a = 1 - e^b, b <= 0.

    The allowed defect is the sum of the discrete residuals of the two
    identities the bound is built from.
    """
    b = np.asarray(b, dtype=float)
    if np.any(b > 0):
        raise InvalidParamsError("the weight exponent b must be non-positive")
    u = np.asarray(u, dtype=complex)
    eb = np.exp(b)
    a = 1 - eb
    Lu, Lbar, psi_zzbar = _twistor_parts(u, field, n, grid)
    dA = grid.h ** 2
    lhs = float(np.sum(np.abs(Lu) ** 2)) * dA
    b_zzbar = _laplace5(b, grid.h) / 4
    mod2 = np.abs(u) ** 2
    rhs = float(np.sum(b_zzbar * mod2 * eb + 2 * a * psi_zzbar * mod2 + a * np.abs(Lbar) ** 2)) * dA
    defect = twistor_residual(np.ones_like(b), u, field, n, grid).residual
    defect += twistor_residual(eb, u, field, n, grid).residual
    return TwistorInequalityResult(lhs, rhs, defect, lhs >= rhs - defect)


# ------------------------------------------------------------------ Aharonov-Bohm checks

class ABAnnulusResult(BaseModel):
    alpha: float
    lambda_m: float
    lambda_coarse: float
    lambda_fine: Optional[float]
    lower_bound: float
    oracle_lambda: float
    bound_ok: bool
    oracle_ok: bool
    converged: bool

    @property
    def passed(self) -> bool:
        return self.bound_ok and self.oracle_ok and self.converged


def _annulus_ground_state(r_in, r_out, alpha, h, tol, seed, max_iter):
    mask = AnnulusMask(r_in=r_in, r_out=r_out)
    n = int(round(2 * r_out / h)) + 1
    grid = build_grid(GridSpec.covering(mask, n, offset=True))
    flux = PotentialField((), (PointFlux(float(alpha), 0j),))
    phases = link_phases(grid, flux, 1.0, quadrature=QUADRATURE_EXACT)
    return lowest_eigenpair(assemble_magnetic(grid, phases, flux, 1.0), tol=tol, seed=seed, max_iter=max_iter)


def radial_oracle(r_in: float, r_out: float, alpha: float, samples: int = 800) -> float:
    return min(assemble_radial(r_in, r_out, abs(k - alpha), samples).lowest() for k in AB_ORDERS)


def ab_annulus_check(r_in: float, r_out: float, alpha: float, h: float, tol: float = DEFAULT_EIG_TOL,
                     seed: int = 0, refine: bool = True, order: int = 1, radial_samples: int = 800,
                     oracle_rtol: float = 0.02, max_iter: int = DEFAULT_EIG_MAX_ITER) -> ABAnnulusResult:
    if not 0 < r_in < r_out:
        raise InvalidParamsError(f"need 0 < r_in < r_out, got ({r_in}, {r_out})")
    coarse = _annulus_ground_state(r_in, r_out, alpha, h, tol, seed, max_iter)
    fine = _annulus_ground_state(r_in, r_out, alpha, h / 2, tol, seed, max_iter) if refine else None
    lam = richardson(coarse.eigenvalue, fine.eigenvalue, order) if fine else coarse.eigenvalue
    bound = float(dist_to_integers(alpha)) ** 2 / r_out ** 2
    oracle = radial_oracle(r_in, r_out, alpha, radial_samples)
    converged = coarse.converged and (fine is None or fine.converged)
    return ABAnnulusResult(
        alpha=float(alpha),
        lambda_m=lam,
        lambda_coarse=coarse.eigenvalue,
        lambda_fine=fine.eigenvalue if fine else None,
        lower_bound=bound,
        oracle_lambda=oracle,
        bound_ok=bool(lam >= bound - tol * max(1.0, lam)),
        oracle_ok=bool(abs(lam - oracle) <= oracle_rtol * oracle),
        converged=converged,
    )


@dataclass
class PeriodicResult:
    smin: float
    bound: float
    sharp: float
    winding: float
    passed: bool

    @property
    def sharp_ratio(self) -> float:
        return self.smin / self.bound if self.bound else math.inf


def periodic_winding_check(h_samples, rho: float) -> PeriodicResult:
    op = assemble_periodic_1d(h_samples, rho)
    smin = op.smallest_singular_value()
    w = float(dist_to_integers(op.winding))
    bound = 4 * w / rho
    return PeriodicResult(smin, bound, TWO_PI * w / rho, op.winding, smin >= bound * (1 - 1e-3))


# ------------------------------------------------------------------ components

@dataclass
class Component:
    label: int
    cells: int
    area: float
    max_value: float
    flux: float
    dangerous: bool


@dataclass
class ComponentLabeling:
    labels: np.ndarray
    components: list
    threshold: float

    @property
    def M(self) -> int:
        return sum(1 for c in self.components if c.dangerous)

    def flux_vector(self, dangerous_only: bool = True) -> FluxVector:
        chosen = [c for c in self.components if c.dangerous or not dangerous_only]
        return FluxVector(np.array([c.flux for c in chosen]), tuple(c.label for c in chosen))


def label_components(delta_phi, threshold: float, h: float = 1.0) -> ComponentLabeling:
    """4-connected flood fill of the cells where the Laplacian is positive."""
    if threshold < 0:
        raise InvalidParamsError(f"threshold must be non-negative, got {threshold}")
    values = np.asarray(delta_phi, dtype=float)
    positive = values > 0
    labels = np.zeros(values.shape, dtype=int)
    ny, nx = values.shape
    components = []
    current = 0
    for i, j in zip(*np.nonzero(positive)):
        if labels[i, j]:
            continue
        current += 1
        labels[i, j] = current
        queue = deque([(i, j)])
        members = []
        while queue:
            ci, cj = queue.popleft()
            members.append((ci, cj))
            for ni, nj in ((ci - 1, cj), (ci + 1, cj), (ci, cj - 1), (ci, cj + 1)):
                if 0 <= ni < ny and 0 <= nj < nx and positive[ni, nj] and not labels[ni, nj]:
                    labels[ni, nj] = current
                    queue.append((ni, nj))
        rows, cols = zip(*members)
        cell_values = values[list(rows), list(cols)]
        peak = float(cell_values.max())
        components.append(Component(
            label=current,
            cells=len(members),
            area=len(members) * h * h,
            max_value=peak,
            flux=float(cell_values.sum()) * h * h / TWO_PI,
            dangerous=peak >= threshold,
        ))
    return ComponentLabeling(labels, components, threshold)


# ------------------------------------------------------------------ pigeonhole

class PigeonholeResult(BaseModel):
    n: int
    max_dist: float
    candidates_scanned: int
    step: int
    collision_n: Optional[int]
    collision_dist: Optional[float]
    guaranteed: bool


def pigeonhole_search(fluxes: FluxVector, N: int, epsilon: float, step: int = 1) -> PigeonholeResult:
    if step < 1 or N < 2 * step:
        raise InvalidParamsError(f"need step >= 1 and N >= 2*step, got N={N}, step={step}")
    if not 0 < epsilon < 0.5:
        raise InvalidParamsError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    w = fluxes.fluxes
    M = len(w)
    q = math.ceil(1 / epsilon)
    guaranteed = (1 + q) ** M < N / (2 * step)

    found, found_dist, scanned = None, None, 0
    multiples = np.arange(step, N + 1, step)
    for start in range(0, len(multiples), 4096):
        chunk = multiples[start:start + 4096]
        dist = np.max(dist_to_integers(chunk[:, None] * w[None, :]), axis=1) if M else np.zeros(len(chunk))
        hits = np.nonzero(dist <= epsilon)[0]
        if len(hits):
            found = int(chunk[hits[0]])
            found_dist = float(dist[hits[0]])
            scanned = int(start + hits[0] + 1)
            break
        scanned = start + len(chunk)

    collision_n, collision_dist = None, None
    seen = {}
    for j in range(0, N // step + 1):
        frac = np.mod(j * step * w, 1.0)
        key = tuple(np.minimum((frac * q).astype(int), q - 1))
        if key in seen:
            collision_n = (j - seen[key]) * step
            collision_dist = fluxes.max_dist(collision_n)
            break
        seen[key] = j

    if found is None:
        if guaranteed:
            raise GuaranteeViolatedError(
                f"no n <= {N} with step {step} found although (1+{q})^{M} < N/(2*step)"
            )
        raise PigeonholeNotFoundError(f"no multiple of {step} up to {N} brings all fluxes within {epsilon}")
    if guaranteed and collision_n is None:
        raise GuaranteeViolatedError("cube partition produced no collision under the counting guarantee")
    return PigeonholeResult(
        n=found,
        max_dist=found_dist,
        candidates_scanned=scanned,
        step=step,
        collision_n=collision_n,
        collision_dist=collision_dist,
        guaranteed=guaranteed,
    )


# ------------------------------------------------------------------ gauge

@dataclass
class GaugeCorrection:
    counters: list
    coupling: int
    defects: list
    total_l1: float

    def apply(self, field: PotentialField) -> PotentialField:
        return field.with_terms(*self.counters)

    def phases(self, grid: Grid, base: LinkPhaseField) -> LinkPhaseField:
        """Edge phases of the corrected magnetic potential at the correction's coupling."""
        base = base.at_coupling(self.coupling)
        if not self.counters:
            return base
        extra = link_phases(grid, PotentialField((), self.counters), self.coupling, base.quadrature)
        return base.plus(extra)


def gauge_correction(fluxes: FluxVector, regions: Sequence[Disk], epsilon_target: float, n: int = 1,
                     h: float = 0.0) -> GaugeCorrection:
    """Counter-charges rounding every region flux n*w_i to the nearest integer."""
    if len(regions) != len(fluxes):
        raise DimensionMismatchError(f"{len(regions)} regions for {len(fluxes)} fluxes")
    if n < 1:
        raise InvalidParamsError(f"coupling must be a positive integer, got {n}")
    counters, defects = [], []
    for w, region in zip(fluxes.fluxes, regions):
        x = n * float(w)
        d = x - round(x)
        if abs(d) > epsilon_target + 1e-15:
            raise InvalidParamsError(f"region flux defect {d:.4g} exceeds the target {epsilon_target}")
        defects.append(d)
        if d == 0:
            continue
        radius = region.radius / 2
        if radius < 2 * h:
            raise RegionTooSmallError(f"region of radius {region.radius} cannot host a counter-charge at h={h}")
        counters.append(CounterCharge(region.center, radius, -d / n))
    return GaugeCorrection(counters, n, defects, TWO_PI * sum(abs(d) for d in defects))


def conjugate_operator(op: HermitianOperator, theta) -> HermitianOperator:
    """D^* H D with D = diag(exp(i*theta)); entries pick up exp(i(theta_k - theta_j))."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (op.dimension,):
        raise DimensionMismatchError(f"need {op.dimension} node phases, got {theta.shape}")
    D = sparse.diags(np.exp(1j * theta))
    matrix = (D.conj() @ op.matrix @ D).tocsr()
    return replace(op, matrix=matrix, magnetic=True)


@dataclass
class GaugeCheck:
    lambda_ref: float
    lambda_conj: float
    deviation: float
    passed: bool


def gauge_invariance_check(op: HermitianOperator, theta, tol: float = DEFAULT_EIG_TOL, seed: int = 0) -> GaugeCheck:
    ref = lowest_eigenpair(op, tol=tol, seed=seed).eigenvalue
    conj = lowest_eigenpair(conjugate_operator(op, theta), tol=tol, seed=seed).eigenvalue
    deviation = abs(conj - ref)
    return GaugeCheck(ref, conj, deviation, deviation <= GAUGE_TOL * max(1.0, abs(ref)))


# ------------------------------------------------------------------ compactness profile

class ProfileRow(BaseModel):
    n: int
    lambda_e: float = math.nan
    lambda_m: float = math.nan
    trial_upper_bound: float = math.nan
    exceptional: bool = False
    max_dist: float = math.nan
    residual_e: float = math.nan
    residual_m: float = math.nan
    iterations_e: int = 0
    iterations_m: int = 0
    converged: bool = False
    diamagnetic_ok: bool = False
    flagged: bool = True
    error: str = ""


@dataclass
class CompactnessProfile:
    rows: list
    grid: dict = dc_field(default_factory=dict)
    epsilon: float = 0.2
    threshold: float = 0.0
    dangerous: int = 0

    def to_frame(self) -> pd.DataFrame:
        columns = list(ProfileRow.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=columns)

    @property
    def flagged_count(self) -> int:
        return sum(1 for r in self.rows if r.flagged)


def default_epsilon(k: int) -> float:
    return min(float(max(k, 1)) ** -3, 0.2)


def compactness_profile(field: PotentialField, n_list: Sequence[int], grid_spec: GridSpec,
                        tol: float = DEFAULT_EIG_TOL, gens: Optional[Sequence[Generation]] = None,
                        epsilon: Optional[float] = None, threshold: float = 0.0, threads: int = 1,
                        seed: int = 0, quadrature: str = QUADRATURE_EXACT,
                        max_iter: int = DEFAULT_EIG_MAX_ITER) -> CompactnessProfile:
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise InvalidParamsError("n_list must be sorted ascending")
    grid = build_grid(grid_spec)
    base = link_phases(grid, field, 1.0, quadrature)
    if gens:
        trial = trial_F(gens, len(gens), grid).values
    else:
        trial = np.clip(1 - np.abs(grid.nodes) ** 2, 0.0, None)
    cells = laplacian_cells(field, grid.xs, grid.ys)
    labeling = label_components(cells, threshold, grid.h)
    fluxes = labeling.flux_vector(dangerous_only=True)
    if epsilon is None:
        epsilon = default_epsilon(len(gens) if gens else 1)
    logger.info("Profile over %d couplings, %d nodes, %d dangerous components", len(n_list), grid.n, labeling.M)

    def row(n: int) -> ProfileRow:
        out = ProfileRow(n=int(n))
        try:
            op_e = assemble_electric(grid, field, n)
            res_e = lowest_eigenpair(op_e, tol=tol, seed=seed, max_iter=max_iter)
            op_m = assemble_magnetic(grid, base.at_coupling(n), field, n)
            res_m = lowest_eigenpair(op_m, tol=tol, seed=seed, max_iter=max_iter)
            out.lambda_e, out.lambda_m = res_e.eigenvalue, res_m.eigenvalue
            out.residual_e, out.residual_m = res_e.residual, res_m.residual
            out.iterations_e, out.iterations_m = res_e.iterations, res_m.iterations
            out.converged = res_e.converged and res_m.converged
            if np.any(trial):
                out.trial_upper_bound = rayleigh_quotient(op_e, trial)
            out.max_dist = fluxes.max_dist(n)
            out.exceptional = out.max_dist <= epsilon
            out.diamagnetic_ok = out.lambda_e <= out.lambda_m + 10 * tol * max(1.0, abs(out.lambda_m))
            out.flagged = not (out.converged and out.diamagnetic_ok)
        except Exception as e:
            logger.error("Profile row n=%s failed: %s", n, e)
            out.error = f"{type(e).__name__}: {e}"
            out.flagged = True
        if out.flagged and not out.error:
            logger.warning("Profile row n=%s flagged (converged=%s, diamagnetic=%s)", n, out.converged,
                           out.diamagnetic_ok)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, n_list))
    else:
        rows = [row(n) for n in n_list]
    return CompactnessProfile(rows, grid.metadata(), epsilon, threshold, labeling.M)


# ------------------------------------------------------------------ Fourier modes

@dataclass
class FourierCheck:
    parseval_residual: float
    form_residual: float
    direct_form: float
    modal_form: float
    mode_energy: dict


def fourier_mode_check(u, field: PotentialField, grid: Grid, window: Union[int, tuple] = 8) -> FourierCheck:
    """Mode-by-mode reduction of the boundary form on a z-grid x circle sampling.

    ``u`` has shape (ny, nx, n_theta) over the full grid rectangle.  The
    direct form differentiates in theta by a forward difference, so the two
    forms agree to first order in the angular step.
    """
    u = np.asarray(u, dtype=complex)
    ny, nx, n_theta = u.shape
    if (ny, nx) != grid.mask.shape:
        raise DimensionMismatchError(f"samples are {(ny, nx)}, grid is {grid.mask.shape}")
    lo, hi = (-window, window) if isinstance(window, int) else window
    h2 = grid.h ** 2
    dtheta = TWO_PI / n_theta
    coeffs = np.fft.fft(u, axis=-1) / n_theta
    modes = np.rint(np.fft.fftfreq(n_theta) * n_theta).astype(int)
    total = float(np.sum(np.abs(u) ** 2)) * h2 * dtheta
    energy = TWO_PI * h2 * np.sum(np.abs(coeffs) ** 2, axis=(0, 1))
    scale = max(total, np.finfo(float).tiny)
    parseval = abs(total - float(energy.sum())) / scale
    outside = float(energy[(modes < lo) | (modes > hi)].sum()) / scale
    if outside > BAND_LIMIT_TOL:
        raise BandLimitError(f"{outside:.3e} of the energy lies outside modes [{lo}, {hi}]", outside)

    xx, yy = np.meshgrid(grid.xs, grid.ys)
    grad = field.gradient(xx + 1j * yy)
    psi_z = (np.conj(grad) / 2)[..., None]
    psi_zbar = (grad / 2)[..., None]

    def wirtinger(f):
        fx = np.gradient(f, grid.h, axis=1)
        fy = np.gradient(f, grid.h, axis=0)
        return (fx - 1j * fy) / 2, (fx + 1j * fy) / 2

    u_z, u_zbar = wirtinger(u)
    u_theta = (np.roll(u, -1, axis=-1) - u) / dtheta
    direct = float(np.sum(np.abs(-u_z - 1j * psi_z * u_theta) ** 2 + np.abs(u_zbar - 1j * psi_zbar * u_theta) ** 2))
    direct *= h2 * dtheta

    c_z, c_zbar = wirtinger(coeffs)
    L = -c_z + modes * psi_z * coeffs
    Lbar = c_zbar + modes * psi_zbar * coeffs
    modal = TWO_PI * h2 * float(np.sum(np.abs(L) ** 2 + np.abs(Lbar) ** 2))
    form_residual = abs(direct - modal) / max(modal, np.finfo(float).tiny)
    return FourierCheck(
        parseval_residual=parseval,
        form_residual=form_residual,
        direct_form=direct,
        modal_form=modal,
        mode_energy={int(m): float(e) for m, e in zip(modes, energy)},
    )


# ------------------------------------------------------------------ baselines

class BaselineResult(BaseModel):
    radius: float
    h_coarse: float
    h_fine: float
    lambda_coarse: float
    lambda_fine: float
    lambda_extrapolated: float
    oracle: float
    rel_error: float
    converged: bool


def disk_baseline(radius: float = 1.0, h_list: Sequence[float] = (1 / 64, 1 / 128), tol: float = DEFAULT_EIG_TOL,
                  seed: int = 0, order: int = 1, max_iter: int = DEFAULT_EIG_MAX_ITER) -> BaselineResult:
    """Dirichlet ground state of a disk on two offset grids, extrapolated against j_{0,1}^2 / R^2."""
    if len(h_list) != 2 or not h_list[0] > h_list[1] > 0:
        raise InvalidParamsError(f"need two decreasing grid spacings, got {list(h_list)}")
    mask = DiskMask(radius=radius)
    results = []
    for h in h_list:
        n = int(round(2 * radius / h)) + 1
        grid = build_grid(GridSpec.covering(mask, n, offset=True))
        results.append(lowest_eigenpair(assemble_electric(grid, PotentialField(), 0.0), tol=tol, seed=seed,
                                        max_iter=max_iter))
    coarse, fine = results
    oracle = (special.jn_zeros(0, 1)[0] / radius) ** 2
    lam = richardson(coarse.eigenvalue, fine.eigenvalue, order)
    return BaselineResult(
        radius=radius,
        h_coarse=float(h_list[0]),
        h_fine=float(h_list[1]),
        lambda_coarse=coarse.eigenvalue,
        lambda_fine=fine.eigenvalue,
        lambda_extrapolated=lam,
        oracle=float(oracle),
        rel_error=abs(lam - oracle) / oracle,
        converged=coarse.converged and fine.converged,
    )
