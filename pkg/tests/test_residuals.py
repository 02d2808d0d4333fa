"""
Tests for the graph, implicit and divergence forms of the minimal surface equation
"""
import numpy as np

from minsurf_lab.conformal_geometry import build_scenario
from minsurf_lab.residuals import (
    divergence_residual,
    euclidean_residual,
    graph_residual,
    verify_derivation,
)
from minsurf_lab.surfaces import ScherkSurface


def test_forms_agree_on_catalog_factors():
    """implicit = W graph and divergence = W^(-1/2) graph with exact derivatives."""
    for name in ("bump-cubic", "gauss-profile", "exp-normal", "quartic"):
        table = verify_derivation(build_scenario(name, 3), samples=5, points_per_sample=8, seed=4)
        assert table["implicit_gap"].max() < 1e-10, f"{name}: implicit gap {table['implicit_gap'].max():.2e}"
        assert table["divergence_gap"].max() < 1e-10, f"{name}: divergence gap {table['divergence_gap'].max():.2e}"
    print("✓ Residual forms agree on catalog factors")


def test_forms_agree_in_higher_dimension():
    """The identities hold for n = 4 as well."""
    table = verify_derivation(build_scenario("bump-cubic", 4, kappa=0.2), samples=3, points_per_sample=6)
    assert len(table) == 3, "one row per sample"
    assert table["implicit_gap"].max() < 1e-10, "implicit gap in n = 4"
    assert table["divergence_gap"].max() < 1e-10, "divergence gap in n = 4"


def test_scherk_surface_is_flat_minimal(flat):
    """Scherk's surface solves the flat equation; c = 1 reduces F to the Euclidean form."""
    points = np.random.default_rng(5).uniform(-0.8, 0.8, size=(20, 2))
    jet = ScherkSurface(1.0).jet(points)
    assert np.max(np.abs(euclidean_residual(jet))) < 1e-12, "Scherk residual"
    assert np.max(np.abs(graph_residual(flat, jet))) < 1e-12, "graph form with c = 1"
    assert np.max(np.abs(divergence_residual(flat, jet))) < 1e-12, "divergence form with c = 1"
    print("✓ Scherk surface is minimal for c = 1")
