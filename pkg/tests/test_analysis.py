"""
Tests for the analysis layer: distances to the integers, winding numbers,
component labelling, the pigeonhole search, gauge corrections, the
compactness profile and the Fourier-mode reduction.
"""

import sys
import os

# Add the parent directory to sys.path so we can import maglab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import ndimage
from numpy.polynomial.legendre import leggauss

from maglab.analysis import (
    FluxVector,
    compactness_profile,
    conjugate_operator,
    dist_to_integers,
    fourier_mode_check,
    gauge_correction,
    gauge_invariance_check,
    label_components,
    pigeonhole_search,
    richardson,
    winding_flux,
    winding_line,
)
from maglab.discretize import DiskMask, GridSpec, assemble_magnetic, build_grid, link_phases
from maglab.eigensolve import dense_spectrum
from maglab.errors import (
    BandLimitError,
    DimensionMismatchError,
    FieldSingularOnCircleError,
    GuaranteeViolatedError,
    InvalidParamsError,
    PigeonholeNotFoundError,
    RegionTooSmallError,
)
from maglab.geometry import Disk
from maglab.potential import PointFlux, PotentialField, RadialCharge, laplacian_cells


def _three_charges():
    return PotentialField([
        RadialCharge(0.1 + 0.1j, 0.1, 0.3),
        RadialCharge(-0.2 - 0.1j, 0.05, 0.45),
        RadialCharge(0.6 + 0.6j, 0.1, 0.2),
    ])


# ----------------------- distances -----------------------

@pytest.mark.parametrize("x, expected", [(0.25, 0.25), (-3.0, 0.0), (-0.7, 0.3), (2.5, 0.5)])
def test_distance_to_integers(x, expected):
    assert dist_to_integers(x) == pytest.approx(expected, abs=1e-15)


def test_distance_to_integers_exact_for_fractions():
    assert dist_to_integers(Fraction(7, 4)) == Fraction(1, 4)


def test_distance_to_integers_vectorised():
    assert np.allclose(dist_to_integers(np.array([0.1, 0.9, 1.5])), [0.1, 0.1, 0.5])


def test_richardson_removes_leading_term():
    exact, c = 5.0, 0.3
    assert richardson(exact + c * 0.1, exact + c * 0.05, order=1) == pytest.approx(exact)
    assert richardson(exact + c * 0.01, exact + c * 0.0025, order=2) == pytest.approx(exact)


def test_flux_vector_validates_entries():
    v = FluxVector([0.5, 0.25])
    assert v.region_ids == (1, 2)
    assert v.max_dist(2) == pytest.approx(0.5)
    with pytest.raises(InvalidParamsError):
        FluxVector([0.1, math.inf])


# ----------------------- winding numbers -----------------------

def test_point_flux_winding_on_any_enclosing_circle():
    field = PotentialField((), [PointFlux(0.3)])
    assert winding_line(field, Disk(0j, 0.7)) == pytest.approx(0.3, abs=1e-12)
    assert winding_line(field, Disk(0.5 + 0j, 0.2)) == pytest.approx(0.0, abs=1e-12)


def test_charge_winding_outside_support():
    field = PotentialField([RadialCharge(0j, 0.1, 0.2)])
    assert winding_line(field, Disk(0j, 0.2)) == pytest.approx(0.2, abs=1e-12)


def test_circle_through_support_is_rejected():
    field = PotentialField([RadialCharge(0j, 0.3, 0.2)])
    with pytest.raises(FieldSingularOnCircleError):
        winding_line(field, Disk(0j, 0.2))
    with pytest.raises(InvalidParamsError):
        winding_line(field, Disk(0j, 0.5), m=8)


def test_line_and_area_windings_agree():
    field = _three_charges()
    circle = Disk(0j, 0.5)
    assert winding_line(field, circle, m=512) == pytest.approx(0.75, abs=1e-9)
    assert winding_flux(field, circle) == pytest.approx(0.75, abs=1e-12)


def test_partial_overlap_matches_polar_quadrature():
    field = PotentialField([RadialCharge(0j, 0.5, 1.0)])
    disk = Disk(0.4 + 0j, 0.3)
    x, w = leggauss(200)
    r = disk.radius * (x + 1) / 2
    theta = 2 * math.pi * np.arange(512) / 512
    z = disk.center + r[:, None] * np.exp(1j * theta)[None, :]
    weights = (w * r * disk.radius / 2)[:, None] * (2 * math.pi / 512)
    oracle = float(np.sum(field.laplacian(z) * weights)) / (2 * math.pi)
    assert winding_flux(field, disk) == pytest.approx(oracle, abs=1e-5)


def test_point_flux_on_the_circle_is_rejected():
    field = PotentialField((), [PointFlux(0.5, 0.3 + 0j)])
    with pytest.raises(FieldSingularOnCircleError):
        winding_flux(field, Disk(0j, 0.3))


# ----------------------- components -----------------------

def test_empty_laplacian_has_no_components():
    labeling = label_components(np.zeros((8, 8)), 0.0)
    assert labeling.M == 0
    assert len(labeling.flux_vector()) == 0


def test_labelling_matches_scipy_partition():
    rng = np.random.default_rng(11)
    values = ndimage.gaussian_filter(rng.normal(size=(64, 64)), 2.0)
    labeling = label_components(values, 0.0)
    reference, count = ndimage.label(values > 0)
    assert len(labeling.components) == count
    for comp in labeling.components:
        mine = labeling.labels == comp.label
        theirs = np.unique(reference[mine])
        assert len(theirs) == 1
        assert np.array_equal(reference == theirs[0], mine)


def test_component_fluxes_recover_charges():
    xs = np.linspace(-1, 1, 129)
    field = PotentialField([RadialCharge(-0.5 + 0j, 0.2, 0.3), RadialCharge(0.5 + 0j, 0.2, 0.45)])
    h = xs[1] - xs[0]
    labeling = label_components(laplacian_cells(field, xs, xs), 0.0, h)
    assert labeling.M == 2
    assert sorted(labeling.flux_vector().fluxes) == pytest.approx([0.3, 0.45], abs=1e-3)


def _union_find_partition(positive):
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    cells = list(zip(*np.nonzero(positive)))
    for c in cells:
        parent[c] = c
    for i, j in cells:
        for nb in ((i + 1, j), (i, j + 1)):
            if nb in parent:
                ra, rb = find((i, j)), find(nb)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for c in cells:
        groups.setdefault(find(c), set()).add(c)
    return {frozenset(g) for g in groups.values()}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_labelling_matches_union_find(seed):
    rng = np.random.default_rng(seed)
    values = ndimage.gaussian_filter(rng.normal(size=(48, 40)), 1.5)
    labeling = label_components(values, 0.0)
    mine = {
        frozenset(zip(*np.nonzero(labeling.labels == comp.label))) for comp in labeling.components
    }
    assert mine == _union_find_partition(values > 0)


def test_diagonal_corner_charges_are_separate_components():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 33, offset=True))
    h = grid.h
    field = PotentialField([RadialCharge(0j, 1e-5, 0.125), RadialCharge(h + 1j * h, 1e-5, 0.375)])
    labeling = label_components(laplacian_cells(field, grid.xs, grid.ys), 0.0, h)
    assert labeling.M == 2
    labels = {comp.label for comp in labeling.components}
    assert len(labels) == 2
    assert sorted(labeling.flux_vector().fluxes) == pytest.approx([0.125, 0.375], rel=1e-12)


def test_threshold_filters_dangerous_components():
    values = np.zeros((5, 5))
    values[1, 1] = 1.0
    values[3, 3] = 10.0
    labeling = label_components(values, 5.0)
    assert len(labeling.components) == 2
    assert labeling.M == 1
    with pytest.raises(InvalidParamsError):
        label_components(values, -1.0)


# ----------------------- pigeonhole -----------------------

def _first_hit(w, N, epsilon, step=1):
    for n in range(step, N + 1, step):
        if max(abs(n * x - round(n * x)) for x in w) <= epsilon:
            return n
    return None


def test_pigeonhole_single_flux():
    result = pigeonhole_search(FluxVector([0.25]), 8, 0.1)
    assert result.n == 4
    assert result.max_dist == 0.0
    assert result.collision_n == 4


def test_pigeonhole_two_fluxes():
    result = pigeonhole_search(FluxVector([1 / 3, 1 / 6]), 8, 0.1)
    assert result.n == 6
    assert result.max_dist < 1e-12


def test_pigeonhole_agrees_with_exhaustive_scan():
    w = [0.31830988, 0.70710678, 0.57721566]
    expected = _first_hit(w, 2 ** 14, 0.05, 2)
    if expected is None:
        with pytest.raises(PigeonholeNotFoundError):
            pigeonhole_search(FluxVector(w), 2 ** 14, 0.05, step=2)
    else:
        result = pigeonhole_search(FluxVector(w), 2 ** 14, 0.05, step=2)
        assert result.n == expected
        assert result.n % 2 == 0 and result.max_dist <= 0.05


def test_pigeonhole_guarantee_yields_collision():
    result = pigeonhole_search(FluxVector([0.37]), 100, 0.1)
    assert result.guaranteed
    assert result.collision_n is not None
    assert result.collision_dist <= 0.1 + 1e-12


def test_pigeonhole_rejects_bad_inputs():
    with pytest.raises(InvalidParamsError):
        pigeonhole_search(FluxVector([0.3]), 3, 0.1, step=2)
    with pytest.raises(InvalidParamsError):
        pigeonhole_search(FluxVector([0.3]), 100, 0.5)


def test_pigeonhole_raises_when_nothing_found():
    with pytest.raises(PigeonholeNotFoundError):
        pigeonhole_search(FluxVector([0.37]), 2, 0.01)


def test_guarantee_violation_is_reported(monkeypatch):
    import maglab.analysis as analysis

    monkeypatch.setattr(analysis, "dist_to_integers", lambda x: np.ones_like(np.asarray(x, dtype=float)))
    with pytest.raises(GuaranteeViolatedError):
        pigeonhole_search(FluxVector([0.37]), 100, 0.1)


# ----------------------- gauge -----------------------

def test_gauge_correction_rounds_region_flux():
    field = PotentialField([RadialCharge(0j, 0.05, 1.03)])
    correction = gauge_correction(FluxVector([1.03]), [Disk(0j, 0.3)], 0.05)
    assert len(correction.counters) == 1
    assert correction.total_l1 == pytest.approx(2 * math.pi * 0.03)
    corrected = correction.apply(field)
    assert winding_flux(corrected, Disk(0j, 0.3)) == pytest.approx(1.0, abs=1e-9)


def test_gauge_correction_phases_match_corrected_field():
    field = PotentialField([RadialCharge(0.1j, 0.05, 0.52)])
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 33))
    correction = gauge_correction(FluxVector([0.52]), [Disk(0.1j, 0.4)], 0.05, n=2, h=grid.h)
    base = link_phases(grid, field, 1.0, "exact")
    combined = correction.phases(grid, base)
    direct = link_phases(grid, correction.apply(field), 2.0, "exact")
    assert np.allclose(combined.angle, direct.angle)


def test_gauge_correction_errors():
    with pytest.raises(DimensionMismatchError):
        gauge_correction(FluxVector([0.1, 0.2]), [Disk(0j, 0.3)], 0.2)
    with pytest.raises(InvalidParamsError):
        gauge_correction(FluxVector([0.4]), [Disk(0j, 0.3)], 0.1)
    with pytest.raises(RegionTooSmallError):
        gauge_correction(FluxVector([1.01]), [Disk(0j, 0.01)], 0.1, h=0.01)


def test_integer_flux_needs_no_counter():
    correction = gauge_correction(FluxVector([2.0]), [Disk(0j, 0.3)], 0.1)
    assert correction.counters == []
    assert correction.total_l1 == 0.0


@pytest.fixture
def small_magnetic_op():
    grid = build_grid(GridSpec.covering(DiskMask(radius=1.0), 17))
    field = _three_charges()
    return assemble_magnetic(grid, link_phases(grid, field), field, 3.0)


def test_conjugation_preserves_spectrum(small_magnetic_op):
    rng = np.random.default_rng(5)
    theta = rng.uniform(0, 2 * math.pi, small_magnetic_op.dimension)
    conj = conjugate_operator(small_magnetic_op, theta)
    assert np.allclose(dense_spectrum(conj), dense_spectrum(small_magnetic_op))
    with pytest.raises(DimensionMismatchError):
        conjugate_operator(small_magnetic_op, theta[:-1])


def test_gauge_invariance_check_passes(small_magnetic_op):
    rng = np.random.default_rng(6)
    theta = rng.uniform(0, 2 * math.pi, small_magnetic_op.dimension)
    check = gauge_invariance_check(small_magnetic_op, theta, tol=1e-10)
    assert check.passed
    assert check.lambda_conj == pytest.approx(check.lambda_ref, rel=1e-10)


# ----------------------- compactness profile -----------------------

@pytest.fixture
def quarter_flux_profile():
    field = PotentialField([RadialCharge(0j, 0.25, 0.25)])
    spec = GridSpec.covering(DiskMask(radius=1.0), 65, offset=True)
    return compactness_profile(field, [0, 2, 4], spec, tol=1e-9)


def test_profile_rows_and_flags(quarter_flux_profile):
    rows = {r.n: r for r in quarter_flux_profile.rows}
    assert quarter_flux_profile.flagged_count == 0
    assert quarter_flux_profile.dangerous == 1
    assert rows[0].lambda_e == pytest.approx(rows[0].lambda_m, rel=1e-7)
    assert rows[4].exceptional and not rows[2].exceptional
    for r in rows.values():
        assert r.diamagnetic_ok and r.converged
        assert r.trial_upper_bound >= r.lambda_e * (1 - 1e-9)


def test_profile_frame_has_fixed_columns(quarter_flux_profile):
    frame = quarter_flux_profile.to_frame()
    assert list(frame["n"]) == [0, 2, 4]
    assert {"lambda_e", "lambda_m", "max_dist", "flagged", "error"} <= set(frame.columns)
    row = quarter_flux_profile.rows[0]
    assert list(frame.columns) == list(type(row).model_fields)
    assert frame.iloc[0]["lambda_e"] == pytest.approx(row.lambda_e)
    assert frame.iloc[0]["error"] == row.error


def test_profile_rejects_unsorted_couplings():
    spec = GridSpec.covering(DiskMask(radius=1.0), 17)
    with pytest.raises(InvalidParamsError):
        compactness_profile(PotentialField(), [4, 2], spec)


def test_profile_with_no_couplings_is_empty():
    spec = GridSpec.covering(DiskMask(radius=1.0), 17)
    profile = compactness_profile(PotentialField([RadialCharge(0j, 0.25, 0.25)]), [], spec)
    frame = profile.to_frame()
    assert len(frame) == 0
    assert "lambda_e" in frame.columns


# ----------------------- Fourier modes -----------------------

def _fourier_grid():
    return build_grid(GridSpec.covering(DiskMask(radius=1.0), 33))


def _envelope(grid):
    xx, yy = np.meshgrid(grid.xs, grid.ys)
    return np.exp(-8 * ((xx - 0.1) ** 2 + yy ** 2))


def test_angle_independent_samples():
    grid = _fourier_grid()
    u = np.repeat(_envelope(grid)[..., None], 16, axis=-1).astype(complex)
    check = fourier_mode_check(u, PotentialField([RadialCharge(-0.2 + 0.3j, 0.1, 0.5)]), grid)
    assert check.parseval_residual <= 1e-10
    assert check.form_residual <= 1e-12
    assert set(k for k, e in check.mode_energy.items() if e > 1e-20) == {0}


def test_form_residual_shrinks_with_angular_resolution():
    grid = _fourier_grid()
    field = PotentialField([RadialCharge(-0.2 + 0.3j, 0.1, 0.5)])
    residuals = []
    for n_theta in (64, 128):
        theta = 2 * math.pi * np.arange(n_theta) / n_theta
        u = _envelope(grid)[..., None] * np.exp(1j * theta)[None, None, :]
        residuals.append(fourier_mode_check(u, field, grid).form_residual)
    assert residuals[1] < 0.6 * residuals[0]


def test_out_of_band_energy_rejected():
    grid = _fourier_grid()
    theta = 2 * math.pi * np.arange(16) / 16
    u = _envelope(grid)[..., None] * np.exp(3j * theta)[None, None, :]
    with pytest.raises(BandLimitError):
        fourier_mode_check(u, PotentialField(), grid, window=(0, 0))


def test_fourier_samples_must_cover_grid():
    grid = _fourier_grid()
    with pytest.raises(DimensionMismatchError):
        fourier_mode_check(np.zeros((4, 4, 8)), PotentialField(), grid)
