"""
Tests for grids, link phases, the assembled operators and the 1D radial and
periodic operators.
"""

import sys
import os

# Add the parent directory to sys.path so we can import maglab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json
import math

import numpy as np
import pytest

from maglab.constants import DISK_GROUND_STATE
from maglab.discretize import (
    AnnulusMask,
    BitmapMask,
    DiskDifferenceMask,
    DiskMask,
    GridSpec,
    assemble_electric,
    assemble_magnetic,
    assemble_periodic_1d,
    assemble_radial,
    build_grid,
    export_operator,
    link_phases,
)
from maglab.eigensolve import dense_spectrum
from maglab.errors import (
    DimensionMismatchError,
    EmptyGridError,
    GridSingularityError,
    InvalidParamsError,
    InvalidRangeError,
)
from maglab.potential import PointFlux, PotentialField, RadialCharge


def _unit_square_grid(side: int):
    h = 1.0 / (side + 1)
    spec = GridSpec(bbox=(h, side * h, h, side * h), h=h, mask=DiskMask(center=(0.5, 0.5), radius=1.0))
    return build_grid(spec)


def _charges():
    return PotentialField([
        RadialCharge(0.2 + 0.1j, 0.15, 0.3),
        RadialCharge(-0.3 - 0.25j, 0.1, 0.45),
    ])


# ==================== GRIDS ====================

def test_small_disk_grid_nodes_and_edges():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 5))
    assert grid.h == 0.5
    assert grid.n == 9
    assert grid.n_edges == 12
    assert list(grid.boundary_degree()).count(0) == 1


def test_nodes_follow_row_major_order():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 5))
    keys = [(z.imag, z.real) for z in grid.nodes]
    assert keys == sorted(keys)


def test_empty_mask_raises():
    spec = GridSpec(bbox=(0.5, 1.0, 0.5, 1.0), h=0.1, mask=DiskMask(radius=0.1))
    with pytest.raises(EmptyGridError):
        build_grid(spec)


def test_nonpositive_spacing_raises():
    spec = GridSpec(bbox=(0.0, 1.0, 0.0, 1.0), h=0.0, mask=DiskMask(radius=1.0))
    with pytest.raises(InvalidParamsError):
        build_grid(spec)


def test_mask_kinds_select_expected_nodes():
    annulus = build_grid(GridSpec.covering(AnnulusMask(r_in=0.5, r_out=1.0), 17))
    assert np.all((np.abs(annulus.nodes) > 0.5) & (np.abs(annulus.nodes) < 1.0))
    holed = DiskDifferenceMask(outer=DiskMask(radius=1.0), holes=[DiskMask(center=(0.5, 0.0), radius=0.2)])
    grid = build_grid(GridSpec.covering(holed, 33))
    assert np.all(np.abs(grid.nodes - 0.5) > 0.2 - 1e-12)
    bitmap = BitmapMask(cells=["10", "11"])
    spec = GridSpec(bbox=(0.0, 1.0, 0.0, 1.0), h=1.0, mask=bitmap)
    assert build_grid(spec).n == 3


def test_mask_round_trips_through_spec_json():
    spec = GridSpec.covering(AnnulusMask(r_in=0.25, r_out=1.0), 9, offset=True)
    again = GridSpec.model_validate_json(spec.model_dump_json())
    assert again == spec
    assert again.mask.kind == "annulus"


# ==================== PHASES ====================

def test_phase_scaling_with_coupling():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    phases = link_phases(grid, _charges())
    double = phases.at_coupling(2)
    assert np.allclose(double.angle, 2 * phases.unit_angle)
    assert np.allclose(phases.reversed().unit_angle, -phases.unit_angle)


def test_phase_sum_needs_matching_edges():
    small = build_grid(GridSpec.covering(DiskMask(radius=1.0), 9))
    large = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    with pytest.raises(DimensionMismatchError):
        link_phases(small, _charges()).plus(link_phases(large, _charges()))


def test_point_flux_on_a_node_is_rejected():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 5))
    with pytest.raises(GridSingularityError):
        link_phases(grid, PotentialField((), [PointFlux(0.5)]))


def test_unknown_quadrature_is_rejected():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 5))
    with pytest.raises(InvalidParamsError):
        link_phases(grid, _charges(), quadrature="gauss")


# ==================== OPERATORS ====================

def test_free_square_matches_closed_form():
    grid = _unit_square_grid(9)
    op = assemble_electric(grid, PotentialField(), 0.0)
    h = grid.h
    expected = 2 * (4 / h ** 2) * math.sin(math.pi * h / 2) ** 2
    assert dense_spectrum(op)[0] == pytest.approx(expected, rel=1e-10)


def test_magnetic_operator_is_hermitian():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    field = _charges()
    op = assemble_magnetic(grid, link_phases(grid, field, quadrature="exact"), field, 3.0)
    diff = op.matrix - op.matrix.conj().T
    assert abs(diff).max() == 0
    assert op.magnetic and op.coupling == 3.0


def test_electric_potential_is_scaled_laplacian():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    field = _charges()
    op = assemble_electric(grid, field, 2.0)
    assert np.allclose(op.potential, 2.0 * field.laplacian(grid.nodes))
    assert not np.iscomplexobj(op.matrix.data)


def test_integer_point_flux_gauges_away():
    grid = build_grid(GridSpec.covering(AnnulusMask(r_in=0.5, r_out=1.0), 17, offset=True))
    free = assemble_electric(grid, PotentialField(), 0.0)
    flux = PotentialField((), [PointFlux(1.0)])
    op = assemble_magnetic(grid, link_phases(grid, flux, quadrature="exact"), flux, 1.0)
    assert dense_spectrum(op)[0] == pytest.approx(dense_spectrum(free)[0], rel=1e-10)


def test_half_flux_raises_the_ground_state():
    grid = build_grid(GridSpec.covering(AnnulusMask(r_in=0.5, r_out=1.0), 17, offset=True))
    free = assemble_electric(grid, PotentialField(), 0.0)
    flux = PotentialField((), [PointFlux(0.5)])
    op = assemble_magnetic(grid, link_phases(grid, flux, quadrature="exact"), flux, 1.0)
    assert dense_spectrum(op)[0] > dense_spectrum(free)[0]


def test_phase_edge_count_checked():
    small = build_grid(GridSpec.covering(DiskMask(radius=1.0), 9))
    large = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    with pytest.raises(DimensionMismatchError):
        assemble_magnetic(large, link_phases(small, _charges()), _charges(), 1.0)


def test_export_writes_upper_triangle_and_sidecar(tmp_path):
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 5))
    op = assemble_electric(grid, PotentialField(), 0.0)
    sidecar = export_operator(op, tmp_path / "op.txt")
    lines = (tmp_path / "op.txt").read_text().splitlines()
    assert len(lines) == grid.n + grid.n_edges
    row, col, re, im = lines[0].split()
    assert (int(row), int(col)) == (0, 0)
    assert float(re) == pytest.approx(4 / grid.h ** 2)
    meta = json.loads(sidecar.read_text())
    assert meta["dimension"] == grid.n
    assert meta["grid"]["nodes"] == grid.n


# ==================== 1D OPERATORS ====================

def test_radial_disk_ground_state():
    op = assemble_radial(0.0, 1.0, 0.0, 400)
    assert op.lowest() == pytest.approx(DISK_GROUND_STATE, rel=1e-3)


def test_radial_half_order_is_pi_squared():
    op = assemble_radial(0.0, 1.0, 0.5, 800)
    assert op.lowest() == pytest.approx(math.pi ** 2, rel=1e-2)


def test_radial_annulus_increases_with_order():
    low = assemble_radial(0.5, 1.0, 0.0, 200).lowest()
    high = assemble_radial(0.5, 1.0, 1.0, 200).lowest()
    assert high > low > 0


@pytest.mark.parametrize("args", [(1.0, 0.5, 0.0, 50), (0.0, 1.0, 0.0, 4), (0.0, 1.0, -1.0, 50)])
def test_radial_rejects_bad_ranges(args):
    with pytest.raises(InvalidRangeError):
        assemble_radial(*args)


def test_periodic_half_winding():
    n = 64
    op = assemble_periodic_1d(np.full(n, math.pi), 1.0)
    assert op.winding == pytest.approx(0.5)
    assert op.smallest_singular_value() == pytest.approx(2 * n * math.sin(math.pi / (2 * n)), rel=1e-10)


def test_periodic_integer_winding_has_kernel():
    op = assemble_periodic_1d(np.full(32, 2 * math.pi), 1.0)
    assert op.smallest_singular_value() < 1e-10


def test_periodic_rejects_empty_samples():
    with pytest.raises(InvalidParamsError):
        assemble_periodic_1d([], 1.0)
