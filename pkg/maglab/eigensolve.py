import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import sparse
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import cg, minres, splu

from maglab.constants import (
    DEFAULT_EIG_MAX_ITER,
    DEFAULT_EIG_TOL,
    DENSE_LIMIT,
    DIRECT_LIMIT,
    INNER_SOLVE_RTOL,
    RAYLEIGH_SWITCH,
    STALL_WINDOW,
)
from maglab.discretize import HermitianOperator
from maglab.errors import (
    DimensionMismatchError,
    EigenBreakdownError,
    InvalidParamsError,
    TooLargeError,
    ZeroVectorError,
)

logger = logging.getLogger("maglab")


class EigenResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    eigenvalue: float
    vector: np.ndarray
    residual: float
    iterations: int
    converged: bool

    def to_record(self) -> dict:
        return {
            "lambda": self.eigenvalue,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_text(self) -> str:
        return f"{self.eigenvalue:.17g} {self.residual:.6e} {self.iterations} {int(self.converged)}"


class _ShiftedSolver:
    """Solves (H - sigma) w = v; one LU factorisation per shift, Krylov above DIRECT_LIMIT."""

    def __init__(self, H, sigma: float, definite: bool):
        n = H.shape[0]
        self.sigma = sigma
        self.A = (H - sigma * sparse.identity(n, dtype=H.dtype, format="csr")).tocsr()
        self.definite = definite
        self.lu = None
        if n <= DIRECT_LIMIT:
            try:
                self.lu = splu(self.A.tocsc(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as e:
                raise EigenBreakdownError(f"shifted operator is singular at sigma={sigma:.12g}: {e}") from e

    def solve(self, v, guess, it: int):
        if self.lu is not None:
            return self.lu.solve(v)
        n = self.A.shape[0]
        if self.definite:
            w, info = cg(self.A, v, x0=guess, rtol=INNER_SOLVE_RTOL, atol=0.0, maxiter=10 * n)
        else:
            w, info = minres(self.A, v, x0=guess, rtol=INNER_SOLVE_RTOL, maxiter=10 * n)
        if info < 0:
            raise EigenBreakdownError(f"inner solve failed with code {info}", iterations=it)
        if info > 0:
            logger.debug("Inner solve hit its iteration cap at outer step %d", it)
        return w


def _start_vector(n: int, complex_valued: bool, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1.0, 1.0, n)
    if complex_valued:
        v = v + 1j * rng.uniform(-1.0, 1.0, n)
    return v / np.linalg.norm(v)


def lowest_eigenpair(op: HermitianOperator, tol: float = DEFAULT_EIG_TOL, max_iter: int = DEFAULT_EIG_MAX_ITER,
                     seed: int = 0) -> EigenResult:
    """Shifted inverse iteration for the lowest eigenpair.

    The shift starts one below the Gershgorin floor, so every inner system is
    positive definite.  Once the relative residual drops below 1e-3 the
    shift moves to theta - |r|, and again after every tenfold drop of the
    residual.  A residual that fails to halve within STALL_WINDOW steps moves
    the shift up to theta - |r| as well.  Each shift is factorised once and
    reused by every outer step.
    """
    if not tol > 0:
        raise InvalidParamsError(f"tolerance must be positive, got {tol}")
    H = op.matrix
    n = op.dimension
    v = _start_vector(n, op.magnetic or np.iscomplexobj(H.data), seed)
    solver = _ShiftedSolver(H, op.gershgorin_floor - 1.0, definite=True)
    shifted_at = None
    checkpoint, checkpoint_it = math.inf, 0
    theta = float(np.real(np.vdot(v, H @ v)))
    best = None
    for it in range(1, max_iter + 1):
        guess = v / max(theta - solver.sigma, 1e-300)
        w = solver.solve(v, guess, it)
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm == 0:
            raise EigenBreakdownError("inner solve returned a zero or non-finite vector", iterations=it)
        v = w / norm
        Hv = H @ v
        theta = float(np.real(np.vdot(v, Hv)))
        res = float(np.linalg.norm(Hv - theta * v))
        if best is None or res < best.residual:
            best = EigenResult(eigenvalue=theta, vector=v, residual=res, iterations=it, converged=False)
        logger.debug("step %d: theta=%.12g residual=%.3e", it, theta, res)
        scale = max(1.0, abs(theta))
        if res <= tol * scale:
            return EigenResult(eigenvalue=theta, vector=v, residual=res, iterations=it, converged=True)
        if res < RAYLEIGH_SWITCH * scale and (shifted_at is None or res < shifted_at / 10):
            solver = _ShiftedSolver(H, theta - res, definite=False)
            shifted_at = res
            checkpoint, checkpoint_it = res, it
        elif it - checkpoint_it >= STALL_WINDOW:
            if res > checkpoint / 2 and theta - res > solver.sigma:
                logger.debug("residual stalled at %.3e, shifting to %.12g", res, theta - res)
                solver = _ShiftedSolver(H, theta - res, definite=False)
            checkpoint, checkpoint_it = res, it
    logger.warning("Lowest eigenpair not converged after %d steps (residual %.3e)", max_iter, best.residual)
    best.iterations = max_iter
    return best


def rayleigh_quotient(op: HermitianOperator, vector) -> float:
    v = np.asarray(vector)
    if v.shape != (op.dimension,):
        raise DimensionMismatchError(f"vector has shape {v.shape}, operator dimension is {op.dimension}")
    denom = float(np.real(np.vdot(v, v)))
    if denom == 0:
        raise ZeroVectorError("Rayleigh quotient of the zero vector")
    return float(np.real(np.vdot(v, op.matrix @ v))) / denom


def dense_spectrum(op: HermitianOperator) -> np.ndarray:
    if op.dimension > DENSE_LIMIT:
        raise TooLargeError(f"dense spectrum limited to {DENSE_LIMIT} nodes, got {op.dimension}")
    return np.sort(eigvalsh(op.matrix.toarray()))


def lowest_eigenvalue(op: HermitianOperator, tol: float = DEFAULT_EIG_TOL, seed: int = 0,
                      max_iter: Optional[int] = None) -> float:
    return lowest_eigenpair(op, tol=tol, seed=seed, max_iter=max_iter or DEFAULT_EIG_MAX_ITER).eigenvalue
