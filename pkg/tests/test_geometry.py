"""
Tests for the lattice disk families: generation building, the invariant
checker, the counting report, covering subfamilies and the text format.
"""

import sys
import os

# Add the parent directory to sys.path so we can import maglab
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
from pydantic import BaseModel

from maglab.errors import InvalidParamsError
from maglab.geometry import (
    Generation,
    ThickSetParams,
    build_generations,
    build_subfamilies,
    counting_report,
    omega_mask,
    read_generations,
    verify_generations,
    write_generations,
)


# ==================== PARAMETERS ====================

def test_eps_is_exact_power_of_base():
    p = ThickSetParams(B=8, K_max=2)
    assert p.eps(2) == 1 / 64
    assert p.eps_exact(2).denominator == 64


def test_default_rho_respects_bound_for_small_base():
    p = ThickSetParams(B=4, K_max=2)
    for k in (1, 2):
        assert 0 < p.rho(k) <= p.eps(k) ** 2 / 8
    p.check()


@pytest.mark.parametrize("kwargs", [
    {"B": 2, "K_max": 1},
    {"B": 8, "K_max": -1},
    {"B": 4, "K_max": 1, "rho_schedule": [0.01]},
    {"B": 8, "K_max": 2, "rho_schedule": [1e-4]},
    {"B": 8, "K_max": 1, "sigma": [0.5]},
    {"B": 8, "K_max": 1, "nu": [0.0]},
    {"B": 8, "K_max": 1, "domain_radius": 0.0},
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(InvalidParamsError):
        build_generations(ThickSetParams(**kwargs))


def test_unknown_field_rejected():
    with pytest.raises(Exception):
        ThickSetParams(B=8, K_max=1, colour="red")


# ==================== GENERATIONS ====================

def test_first_generation_matches_brute_force_count():
    gens = build_generations(ThickSetParams(B=4, K_max=1))
    eps = 0.25
    expected = [
        complex(i * eps, j * eps)
        for i in range(-10, 11)
        for j in range(-10, 11)
        if abs(complex(i * eps, j * eps)) + eps <= 1 + 1e-12
    ]
    assert len(gens[0]) == len(expected)
    assert set(np.round(gens[0].centers, 12)) == set(np.round(expected, 12))


def test_zero_generations():
    assert build_generations(ThickSetParams(B=8, K_max=0)) == []


def test_centers_in_lexicographic_order():
    centers = build_generations(ThickSetParams(B=4, K_max=1))[0].centers
    keys = list(zip(centers.real, centers.imag))
    assert keys == sorted(keys)


def test_two_generations_pass_invariant_checker():
    gens = build_generations(ThickSetParams(B=8, K_max=2))
    assert len(gens) == 2 and len(gens[1]) > len(gens[0]) > 0
    assert verify_generations(gens) == []


def test_checker_reports_planted_violation():
    gens = build_generations(ThickSetParams(B=8, K_max=1))
    bad = Generation(k=1, cell=gens[0].cell, radius=gens[0].radius,
                     centers=np.append(gens[0].centers, 0.99 + 0j), base=8)
    problems = verify_generations([bad])
    assert any("leaves the domain" in p for p in problems)


def test_disjointness_between_generations():
    gens = build_generations(ThickSetParams(B=8, K_max=2))
    g1, g2 = gens
    gap = np.abs(g2.centers[:, None] - g1.centers[None, :]) - g1.radius - g2.radius
    assert gap.min() > g2.cell - g2.radius


def test_generations_are_deterministic():
    a = build_generations(ThickSetParams(B=8, K_max=2))
    b = build_generations(ThickSetParams(B=8, K_max=2))
    for ga, gb in zip(a, b):
        assert np.array_equal(ga.centers, gb.centers)


def test_generation_centers_are_read_only():
    gen = build_generations(ThickSetParams(B=8, K_max=1))[0]
    with pytest.raises(ValueError):
        gen.centers[0] = 0j


def test_omega_masks_are_nested():
    gens = build_generations(ThickSetParams(B=8, K_max=2))
    rng = np.random.default_rng(3)
    z = rng.uniform(-1, 1, 5000) + 1j * rng.uniform(-1, 1, 5000)
    om0 = np.abs(z) < 1
    om1 = omega_mask(gens, z, 1)
    om2 = omega_mask(gens, z, 2)
    assert np.all(om1 <= om0)
    assert np.all(om2 <= om1)
    assert not omega_mask(gens, gens[0].centers[:1], 1)[0]


# ==================== COUNTING ====================

def test_counting_single_generation():
    gens = build_generations(ThickSetParams(B=8, K_max=1))
    report = counting_report(gens)
    row = report.rows[0]
    assert row.m_k == len(gens[0])
    assert row.asymptotic
    assert list(report.to_frame()["k"]) == [1]


def test_counting_mass_bound_at_base_16():
    gens = build_generations(ThickSetParams(B=16, K_max=2))
    report = counting_report(gens, max_samples=4000)
    second = report.rows[1]
    assert second.mass_ok
    assert second.m_k >= (1 / 256) ** -2 / 4
    assert not second.asymptotic


def test_local_count_excludes_centres_at_exactly_four_root_eps():
    edge = Generation(k=1, cell=0.25, radius=0.01, centers=[0j], base=4, domain_radius=2.5)
    row = counting_report([edge]).rows[0]
    assert row.min_local_count == 0
    assert not row.local_ok
    inside = Generation(k=1, cell=0.25, radius=0.01, centers=[0j], base=4, domain_radius=2.4)
    assert counting_report([inside]).rows[0].min_local_count == 1


def test_counting_rows_are_validated_records():
    report = counting_report(build_generations(ThickSetParams(B=8, K_max=1)))
    row = report.rows[0]
    assert isinstance(row, BaseModel)
    frame = report.to_frame()
    assert list(frame.columns) == list(type(row).model_fields)
    assert frame.iloc[0]["m_k"] == row.m_k


# ==================== SUBFAMILIES ====================

def test_single_center_single_subfamily():
    gen = Generation(k=1, cell=1 / 8, radius=1 / 512, centers=[0j], base=8)
    part = build_subfamilies(gen)
    assert part.n_subfamilies == 1
    assert list(part.counts) == [1]


def test_covering_contains_every_disk():
    gens = build_generations(ThickSetParams(B=8, K_max=1))
    gen = gens[0]
    part = build_subfamilies(gen)
    centers = np.array([d.center for d in part.covering])
    for j, c in enumerate(gen.centers):
        owner = centers[part.assignment[j]]
        assert abs(c - owner) + gen.radius <= part.covering_radius + 1e-12
    assert part.counts.sum() == len(gen)
    assert list(part.counts) == [len(part.members(i)) for i in range(part.n_subfamilies)]


def test_far_centers_land_in_distinct_subfamilies():
    gen = Generation(k=2, cell=1 / 64, radius=1e-6, centers=[-1.05 + 0j, 1.05 + 0j], base=8,
                     domain_radius=2.0)
    part = build_subfamilies(gen)
    assert part.n_subfamilies == 2
    assert part.assignment[0] != part.assignment[1]


# ==================== TEXT FORMAT ====================

def test_generation_file_preserves_centers(tmp_path):
    gens = build_generations(ThickSetParams(B=8, K_max=1))
    path = tmp_path / "gens.txt"
    write_generations(gens, path)
    header = path.read_text().splitlines()[:2]
    assert header[0].startswith("thickset 8 ")
    assert header[1].split()[0] == "generation"
    back = read_generations(path)
    assert np.array_equal(back[0].centers, gens[0].centers)
    assert back[0].radius == gens[0].radius
