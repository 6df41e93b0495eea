"""Grid, derivative, metric, and curvature tests with analytic oracles."""

import math

import numpy as np
import pytest
from scipy.special import i0

from gradlab import geometry
from gradlab.expressions import parse_trig_poly
from gradlab.geometry import (
    GeometryError,
    GridSpec,
    build_geometry,
    conformal_christoffel_oracle,
    conformal_metric_field,
    conformal_ricci_oracle,
    conformal_scalar_curvature_oracle,
    curvature_symmetry_residuals,
    diagonal_metric_field,
    differentiate,
    flat_metric_field,
    gauss_curvature_2d_oracle,
)


def grid(n, size, lengths=None):
    return GridSpec(n=n, sizes=(size,) * n, lengths=lengths)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def test_grid_spec_examples():
    g1 = GridSpec(n=1, sizes=(8,))
    assert np.allclose(g1.axis_coords(0), np.arange(8) * math.pi / 4)
    g2 = grid(2, 16)
    assert g2.num_points == 256
    assert g2.spacings == (2 * math.pi / 16,) * 2
    assert abs(g2.cell_volume - (2 * math.pi / 16) ** 2) < 1e-15


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=2, sizes=(15, 16)),
        dict(n=2, sizes=(6, 8)),
        dict(n=2, sizes=(16,)),
        dict(n=2, sizes=(16, 16), lengths=(2.0,)),
        dict(n=2, sizes=(16, 16), lengths=(-1.0, 2.0)),
        dict(n=3, sizes=(256, 256, 256)),
        dict(n=0, sizes=()),
    ],
)
def test_grid_spec_rejects(kwargs):
    with pytest.raises(GeometryError):
        GridSpec(**kwargs)


def test_wavenumbers_zero_nyquist():
    g = grid(1, 8)
    k = g.wavenumbers(0)
    assert k[4] == 0.0
    assert np.allclose(k[[0, 1, 2, 3, 5, 6, 7]], [0, 1, 2, 3, -3, -2, -1])


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def test_spectral_derivative_band_limited_exact():
    g = grid(1, 16)
    x = g.axis_coords(0)
    got = differentiate(np.sin(x), 0, g, "spectral")
    assert np.max(np.abs(got - np.cos(x))) < 1e-12
    got3 = differentiate(np.cos(3 * x), 0, g, "spectral")
    assert np.max(np.abs(got3 + 3 * np.sin(3 * x))) < 1e-12


def test_derivative_of_constant():
    g = grid(2, 16)
    c = np.full(g.shape, 2.3)
    for method in ("spectral", "fd4"):
        assert np.max(np.abs(differentiate(c, 0, g, method))) < 1e-13


def test_fd4_fourth_order_ratio():
    errs = []
    for size in (16, 32):
        g = grid(1, size)
        x = g.axis_coords(0)
        got = differentiate(np.sin(x), 0, g, "fd4")
        errs.append(np.max(np.abs(got - np.cos(x))))
    ratio = errs[0] / errs[1]
    assert 12 < ratio < 20


@pytest.mark.parametrize("method", ["spectral", "fd4"])
def test_derivative_matrix_antisymmetric(method):
    # exact antisymmetry underpins the exact-transpose adjoint checks
    g = grid(1, 8)
    D = np.stack(
        [differentiate(col, 0, g, method) for col in np.eye(8)], axis=1
    )
    assert np.max(np.abs(D + D.T)) < 1e-13


def test_multi_axis_derivative_acts_on_named_axis():
    g = grid(2, 16)
    t1, t2 = g.theta_mesh()
    f = np.cos(t1) * np.sin(2 * t2)
    d0 = differentiate(f, 0, g, "spectral")
    d1 = differentiate(f, 1, g, "spectral")
    assert np.max(np.abs(d0 + np.sin(t1) * np.sin(2 * t2))) < 1e-12
    assert np.max(np.abs(d1 - 2 * np.cos(t1) * np.cos(2 * t2))) < 1e-12


def test_nonstandard_lengths_scale_derivatives():
    g = GridSpec(n=1, sizes=(16,), lengths=(4 * math.pi,))
    f = parse_trig_poly("cos(x1)")
    got = geometry.coordinate_derivative(f, 0, g)
    theta = g.theta_mesh()[0]
    assert np.max(np.abs(got + 0.5 * np.sin(theta))) < 1e-14
    lap = geometry.analytic_laplacian(f, g)
    assert np.max(np.abs(lap + 0.25 * np.cos(theta))) < 1e-14


# ---------------------------------------------------------------------------
# metric presets
# ---------------------------------------------------------------------------

def test_flat_preset_components():
    g = grid(2, 16)
    m = flat_metric_field(2).components(g)
    assert np.allclose(m[..., 0, 0], 1.0)
    assert np.allclose(m[..., 1, 1], 1.0)
    assert np.allclose(m[..., 0, 1], 0.0)


def test_conformal_zero_exponent_is_flat():
    g = grid(2, 16)
    m = conformal_metric_field(2, parse_trig_poly("0.0"))
    assert m.is_flat
    assert np.allclose(m.components(g), flat_metric_field(2).components(g))


def test_diagonal_preset_positivity_enforced():
    g = grid(2, 16)
    bad = diagonal_metric_field(2, [parse_trig_poly("1 + 2*cos(x1)"), parse_trig_poly("1")])
    with pytest.raises(GeometryError):
        bad.components(g)


def test_preset_name_validation():
    with pytest.raises(GeometryError):
        geometry.MetricField(preset="spherical", n=2)


# ---------------------------------------------------------------------------
# geometry cache: christoffel and curvature
# ---------------------------------------------------------------------------

def test_flat_cache_is_trivial():
    cache = build_geometry(grid(2, 16), flat_metric_field(2))
    assert np.max(np.abs(cache.christoffel)) < 1e-12
    assert np.max(np.abs(cache.riemann)) < 1e-10
    assert np.max(np.abs(cache.ricci)) < 1e-10
    assert abs(cache.total_volume - 4 * math.pi**2) < 1e-12
    assert np.all(cache.weights > 0)


def test_christoffel_symmetric_in_lower_indices():
    cache = build_geometry(
        grid(2, 16), conformal_metric_field(2, parse_trig_poly("0.1*cos(x1)"))
    )
    g = cache.christoffel
    assert np.max(np.abs(g - np.swapaxes(g, -1, -2))) < 1e-14


def test_conformal_christoffel_oracle_match():
    spec = grid(2, 16)
    metric = conformal_metric_field(2, parse_trig_poly("0.1*cos(x1)"))
    cache = build_geometry(spec, metric)
    oracle = conformal_christoffel_oracle(metric, spec)
    assert np.max(np.abs(cache.christoffel - oracle)) < 1e-10
    # named component: Gamma^1_11 = d_1 f
    d1f = geometry.coordinate_derivative(metric.conformal_exponent, 0, spec)
    assert np.max(np.abs(cache.christoffel[..., 0, 0, 0] - d1f)) < 1e-10


def test_conformal_2d_curvature_oracles():
    spec = grid(2, 32)
    metric = conformal_metric_field(2, parse_trig_poly("0.1*cos(x1)"))
    cache = build_geometry(spec, metric)
    scal = conformal_scalar_curvature_oracle(metric, spec)
    assert np.max(np.abs(cache.scalar_curvature - scal)) < 1e-9
    K = gauss_curvature_2d_oracle(metric, spec)
    assert np.max(np.abs(cache.scalar_curvature - 2 * K)) < 1e-9
    # spec'd closed form of the same quantity
    f = metric.conformal_exponent
    direct = -2.0 * geometry.analytic_laplacian(f, spec) * np.exp(
        -2.0 * geometry.evaluate_on_grid(f, spec)
    )
    assert np.max(np.abs(scal - direct)) < 1e-13


def test_conformal_3d_ricci_oracle_match():
    spec = grid(3, 16)
    metric = conformal_metric_field(
        3, parse_trig_poly("0.1*cos(x1) + 0.05*sin(x2 - x3)")
    )
    cache = build_geometry(spec, metric)
    oracle = conformal_ricci_oracle(metric, spec)
    assert np.max(np.abs(cache.ricci - oracle)) < 1e-8
    scal_oracle = conformal_scalar_curvature_oracle(metric, spec)
    assert np.max(np.abs(cache.scalar_curvature - scal_oracle)) < 1e-8


@pytest.mark.parametrize(
    "metric",
    [
        flat_metric_field(2),
        conformal_metric_field(2, parse_trig_poly("0.1*cos(x1)")),
        diagonal_metric_field(
            2, [parse_trig_poly("1 + 0.2*cos(x2)"), parse_trig_poly("1 + 0.1*sin(x1)")]
        ),
    ],
    ids=["flat", "conformal", "diagonal"],
)
def test_curvature_symmetries_at_32(metric):
    cache = build_geometry(grid(2, 32), metric)
    res = curvature_symmetry_residuals(cache)
    for name, value in res.items():
        assert value < 1e-9, (name, value)


def test_conformal_volume_oracle():
    a = 0.3
    spec = grid(2, 32)
    cache = build_geometry(spec, conformal_metric_field(2, parse_trig_poly(f"{a}*cos(x1)")))
    expect = (2 * math.pi) ** 2 * i0(2 * a)
    assert abs(cache.total_volume - expect) < 1e-10 * expect


def test_spectral_curvature_error_drops_fast_under_refinement():
    errs = {}
    for size in (16, 32):
        spec = grid(2, size)
        metric = conformal_metric_field(2, parse_trig_poly("0.4*cos(x1)"))
        cache = build_geometry(spec, metric)
        oracle = conformal_scalar_curvature_oracle(metric, spec)
        errs[size] = np.max(np.abs(cache.scalar_curvature - oracle))
    assert errs[16] / max(errs[32], 1e-16) > 10


def test_fd4_curvature_error_fourth_order():
    errs = {}
    for size in (16, 32):
        spec = grid(2, size)
        metric = conformal_metric_field(2, parse_trig_poly("0.4*cos(x1)"))
        cache = build_geometry(spec, metric, method="fd4")
        oracle = conformal_scalar_curvature_oracle(metric, spec)
        errs[size] = np.max(np.abs(cache.scalar_curvature - oracle))
    ratio = errs[16] / errs[32]
    assert 10 < ratio < 24


def test_non_spd_sample_raises():
    spec = grid(2, 16)
    bad = geometry.MetricField(
        preset="diagonal_periodic",
        n=2,
        diagonal=(parse_trig_poly("0.1 + 1*cos(4*x1)"), parse_trig_poly("1")),
    )
    with pytest.raises(GeometryError):
        build_geometry(spec, bad)
