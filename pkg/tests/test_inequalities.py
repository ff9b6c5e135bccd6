"""
Tests for the inequality checks: discrete Kato, the disk and annulus
Poincare bounds, the twistor identity and inequality, the periodic winding
bound and the Aharonov-Bohm annulus comparison.
"""

import sys
import os

# Add the parent directory to sys.path so we can import maglab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math

import numpy as np
import pytest

from maglab.analysis import (
    ab_annulus_check,
    kato_check,
    periodic_winding_check,
    poincare_check,
    radial_oracle,
    twistor_inequality_check,
    twistor_residual,
)
from maglab.discretize import DiskMask, GridSpec, build_grid
from maglab.errors import DimensionMismatchError, InvalidParamsError
from maglab.geometry import Annulus, Disk
from maglab.potential import PotentialField, RadialCharge


@pytest.fixture
def disk_grid():
    return build_grid(GridSpec.covering(DiskMask(radius=1.0), 33))


def _field():
    return PotentialField([RadialCharge(0.2 + 0.1j, 0.3, 0.4), RadialCharge(-0.4 - 0.3j, 0.15, 0.25)])


# ----------------------- Kato -----------------------

def test_kato_equality_for_nonnegative_real_vector(disk_grid):
    u = np.clip(1 - np.abs(disk_grid.nodes) ** 2, 0, None)
    result = kato_check(disk_grid, PotentialField(), 0.0, u)
    assert result.passed
    assert result.lhs == pytest.approx(result.rhs, rel=1e-12)


def test_kato_holds_for_random_complex_vectors(disk_grid):
    rng = np.random.default_rng(2)
    field = _field()
    for n in (1.0, 3.0, 7.5):
        u = rng.normal(size=disk_grid.n) + 1j * rng.normal(size=disk_grid.n)
        result = kato_check(disk_grid, field, n, u)
        assert result.passed
        assert result.lhs <= result.rhs * (1 + 1e-12)


def test_kato_checks_vector_length(disk_grid):
    with pytest.raises(DimensionMismatchError):
        kato_check(disk_grid, _field(), 1.0, np.ones(disk_grid.n + 1))


# ----------------------- Poincare -----------------------

def test_poincare_disk_constant_function():
    result = poincare_check(lambda z: np.ones_like(z), Disk(0j, 1.0))
    assert result.lhs == pytest.approx(math.pi, rel=1e-10)
    assert result.rhs == pytest.approx(2 * math.pi, rel=1e-10)
    assert result.passed


def test_poincare_disk_with_winding_phase():
    c, R = 0.2 + 0.1j, 0.7
    u = lambda z: (1 - np.abs(z - c) ** 2 / (2 * R * R)) * np.exp(3j * np.angle(z - c))
    assert poincare_check(u, Disk(c, R)).passed


def test_poincare_annulus_log_profile():
    r_in, r_out = 0.25, 1.0
    u = lambda z: 1 + np.log(np.abs(z) / r_in)
    result = poincare_check(u, Annulus(0j, r_in, r_out))
    assert result.passed
    assert result.ratio < 1


def test_annulus_needs_ordered_radii():
    with pytest.raises(InvalidParamsError):
        Annulus(0j, 1.0, 0.5)


# ----------------------- twistor -----------------------

def _twistor_samples(grid):
    xx, yy = np.meshgrid(grid.xs, grid.ys)
    r2 = xx ** 2 + yy ** 2
    u = np.exp(-20 * r2) * np.exp(1j * (xx + 0.5 * yy))
    a = np.exp(-r2)
    return xx, yy, r2, u, a


def test_twistor_residual_shrinks_under_refinement():
    residuals = []
    for n in (33, 65):
        grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), n))
        _, _, _, u, a = _twistor_samples(grid)
        result = twistor_residual(a, u, _field(), 2.0, grid)
        residuals.append(result.residual)
    assert residuals[1] < residuals[0]


def test_twistor_inequality_holds():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 65))
    _, _, r2, u, _ = _twistor_samples(grid)
    result = twistor_inequality_check(-2 * r2, u, _field(), 2.0, grid)
    assert result.passed
    assert result.defect >= 0


def test_twistor_inequality_needs_nonpositive_exponent():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    _, _, r2, u, _ = _twistor_samples(grid)
    with pytest.raises(InvalidParamsError):
        twistor_inequality_check(r2, u, _field(), 1.0, grid)


# ----------------------- periodic winding -----------------------

def test_periodic_bound_for_constant_half_winding():
    result = periodic_winding_check(np.full(64, math.pi), 1.0)
    assert result.winding == pytest.approx(0.5)
    assert result.bound == pytest.approx(2.0)
    assert result.passed
    assert result.sharp_ratio == pytest.approx(math.pi / 2, rel=1e-3)


def test_periodic_bound_for_random_profiles():
    rng = np.random.default_rng(4)
    for _ in range(20):
        rho = rng.uniform(0.5, 2.0)
        h = rng.normal(scale=3.0, size=48)
        result = periodic_winding_check(h, rho)
        assert result.passed
        assert result.smin <= result.sharp + 1e-9


# ----------------------- Aharonov-Bohm annulus -----------------------

def test_zero_flux_annulus_has_zero_bound():
    result = ab_annulus_check(0.5, 1.0, 0.0, 1 / 16, refine=False)
    assert result.lower_bound == 0.0
    assert result.bound_ok and result.converged
    assert result.lambda_fine is None


def test_flux_symmetry_and_period():
    lam = {a: ab_annulus_check(0.5, 1.0, a, 1 / 16, tol=1e-10, refine=False).lambda_coarse
           for a in (0.0, 0.25, 0.75, 1.0)}
    assert lam[0.25] == pytest.approx(lam[0.75], rel=1e-7)
    assert lam[1.0] == pytest.approx(lam[0.0], rel=1e-7)
    assert lam[0.25] > lam[0.0]


def test_radial_oracle_is_symmetric_in_flux():
    assert radial_oracle(0.5, 1.0, 0.3, 200) == pytest.approx(radial_oracle(0.5, 1.0, 0.7, 200), rel=1e-12)


def test_annulus_check_rejects_bad_radii():
    with pytest.raises(InvalidParamsError):
        ab_annulus_check(1.0, 0.5, 0.5, 1 / 16)
