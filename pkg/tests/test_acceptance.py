"""Acceptance gate: one test per release criterion, each run at the stated
tolerance and budget on the grids the criterion names.  Per-module tests
cover the same machinery on smaller grids; this file is the end-to-end
pass/fail record, so every test prints the quantities it gates."""

import time

import numpy as np
import pytest

from gradlab import fiber, fields, gradients, harness, spectral
from gradlab.config import ExperimentConfig
from gradlab.expressions import parse_trig_poly
from gradlab.fields import TensorField, l2_inner, l2_norm
from gradlab.geometry import (
    GridSpec,
    build_geometry,
    conformal_metric_field,
    flat_metric_field,
)
from gradlab.harness import (
    band_limited_field,
    build_cache,
    joint_kernel_spectrum,
    flat_joint_kernel_oracle,
    kernel_experiment,
    render_json,
    run_identity_suite,
)

CONFORMAL_2D = "0.1*cos(x1)"
CONFORMAL_3D = "0.05*cos(x1)"


def make_cache(n, size, metric):
    spec = GridSpec(n=n, sizes=(size,) * n)
    if metric == "flat":
        m = flat_metric_field(n)
    else:
        m = conformal_metric_field(
            n, parse_trig_poly(CONFORMAL_2D if n == 2 else CONFORMAL_3D))
    return build_geometry(spec, m)


@pytest.fixture(scope="module")
def kernel_suite_timed():
    cfg = ExperimentConfig(
        metric="flat", dimension=2, sizes=(16, 32), ranks=(1, 2),
        seed=7, suites=("kernel",),
    )
    t0 = time.perf_counter()
    report = kernel_experiment(cfg)
    return report, time.perf_counter() - t0


def test_criterion_01_decomposition_batch_within_budget():
    # 50 random fields per (n, p, metric): reconstruction to 1e-10,
    # mutual orthogonality to 1e-8, the whole batch inside two minutes
    t0 = time.perf_counter()
    worst_recon = worst_orth = 0.0
    for metric in ("flat", "conformal"):
        for n in (2, 3):
            cache = make_cache(n, 32, metric)
            for p in (1, 2, 3):
                rng = np.random.default_rng([1, n, p, hash(metric) % 997])
                for _ in range(50):
                    phi = fields.random_band_limited(cache, p, 8, rng)
                    sp = gradients.decompose(phi)
                    worst_recon = max(worst_recon, sp.reconstruction_residual)
                    worst_orth = max(worst_orth, max(sp.orthogonality.values()))
    elapsed = time.perf_counter() - t0
    print(f"\nrecon {worst_recon:.3e} orth {worst_orth:.3e} time {elapsed:.1f}s")
    assert worst_recon <= 1e-10
    assert worst_orth <= 1e-8
    assert elapsed <= 120.0


def test_criterion_02_projector_oracle_match():
    # formula pieces against the pointwise projector route: asserted to
    # 1e-8 for p <= 2, reported as a best-fit scalar at p = 3
    worst = 0.0
    for metric in ("flat", "conformal"):
        for n, size in ((2, 32), (3, 16)):
            cache = make_cache(n, size, metric)
            for p in (1, 2):
                rng = np.random.default_rng([2, n, p])
                for _ in range(5):
                    phi = fields.random_band_limited(cache, p, 4, rng)
                    pm = gradients.projector_match_residuals(phi)
                    worst = max(worst, max(pm.values()))
    print(f"\nworst projector mismatch (p <= 2): {worst:.3e}")
    assert worst <= 1e-8

    for n, size in ((2, 32), (3, 16)):
        cache = make_cache(n, size, "conformal")
        phi = fields.random_band_limited(cache, 3, 4, np.random.default_rng(23))
        sp = gradients.decompose(phi)
        b = gradients.projector_components(sp.grad)["B"]
        s_fit = l2_inner(sp.d2, b) / l2_inner(b, b)
        resid = l2_norm(sp.d2 - b * s_fit) / l2_norm(b)
        print(f"p = 3, n = {n}: best-fit scalar {s_fit:.12f}, residual {resid:.3e}")
        assert np.isfinite(s_fit) and np.isfinite(resid)


def test_criterion_03_adjointness_and_two_route_refinement():
    # analytic pairing to 1e-9 and discrete transposes to 1e-12 on
    # unit-norm fields, across metrics and dimensions
    cases = [
        (2, 32, "flat", 8), (2, 32, "conformal", 6),
        (3, 16, "flat", 4), (3, 20, "conformal", 3),
    ]
    worst_pair = worst_transpose = 0.0
    for n, size, metric, band in cases:
        cache = make_cache(n, size, metric)
        for p in (1, 2):
            rng = np.random.default_rng([3, n, p])
            phi = fields.random_band_limited(cache, p, band, rng)
            phi = phi * (1.0 / l2_norm(phi))
            psi = fields.random_band_limited(cache, p + 1, band, rng)
            psi = psi * (1.0 / l2_norm(psi))
            pair = abs(l2_inner(gradients.d1(phi), psi)
                       - l2_inner(phi, fields.divergence(psi)))
            tr = abs(l2_inner(gradients.d1(phi), psi)
                     - l2_inner(phi, gradients.d1_exact_adjoint(psi)))
            worst_pair = max(worst_pair, pair)
            worst_transpose = max(worst_transpose, tr)
    print(f"\npairing {worst_pair:.3e} transpose {worst_transpose:.3e}")
    assert worst_pair <= 1e-9
    assert worst_transpose <= 1e-12

    # two-route agreement: under 1e-8 on the 32-point grid and at least
    # tenfold smaller on the 64-point grid (same continuum field)
    cfg = ExperimentConfig(metric="conformal", dimension=2, sizes=(32, 64),
                           ranks=(2,), seed=7)
    res = {}
    for size in (32, 64):
        cache = build_cache(cfg, size)
        phi = band_limited_field(cache, 2, 8, np.random.default_rng(11))
        a = gradients.stein_weiss_d1(phi, route="formula", coefficient="auto")
        b = gradients.stein_weiss_d1(phi, route="transpose", coefficient="auto")
        res[size] = l2_norm(a - b) / l2_norm(a)
    print(f"two-route 32: {res[32]:.3e}, 64: {res[64]:.3e}")
    assert res[32] <= 1e-8
    assert res[64] <= res[32] / 10.0


def test_criterion_04_composition_formula_equivalence():
    # the symmetrized-Laplacian form of the composed operator reproduces
    # the direct formula to 1e-10 at every resolution, both metrics
    worst = 0.0
    for metric in ("flat", "conformal"):
        for size in (8, 12, 16, 24, 32):
            cache = make_cache(2, size, metric)
            for p in (1, 2, 3):
                rng = np.random.default_rng([4, size, p])
                phi = fields.random_band_limited(cache, p, max(1, size // 4), rng)
                worst = max(worst, harness._splitting_form_residual(phi))
    print(f"\nworst composition-form residual: {worst:.3e}")
    assert worst <= 1e-10


def test_criterion_05_curvature_identities_and_refinement():
    # rough-Laplacian composition identity and the quadratic-form identity
    # to 1e-8 on the flat 2-torus; curvature term vanishes to 1e-9 there
    worst_rough = worst_qform = worst_k = 0.0
    cache = make_cache(2, 32, "flat")
    for p in (1, 2, 3):
        rng = np.random.default_rng([5, p])
        for _ in range(3):
            phi = fields.random_band_limited(cache, p, 6, rng)
            wrep = gradients.weitzenbock_identity_report(phi)
            irep = gradients.integral_identity_report(phi)
            worst_rough = max(worst_rough, wrep["rough_identity"])
            worst_qform = max(worst_qform, irep["q_form_route"])
            k = gradients.weitzenbock_K(phi)
            worst_k = max(worst_k, l2_norm(k) / l2_norm(phi))
    print(f"\nflat rough {worst_rough:.3e} qform {worst_qform:.3e} "
          f"curvature-term {worst_k:.3e}")
    assert worst_rough <= 1e-8
    assert worst_qform <= 1e-8
    assert worst_k <= 1e-9

    # conformal refinement: both discretization-limited residuals drop by
    # at least 10x from the 16-point to the 32-point grid
    cfg = ExperimentConfig(metric="conformal", conformal_exponent=CONFORMAL_2D,
                           dimension=2, sizes=(16, 32), ranks=(2,), seed=7)
    rough = {}
    zeroth = {}
    for size in (16, 32):
        cache = build_cache(cfg, size)
        phi = band_limited_field(cache, 2, 4, np.random.default_rng(19))
        rough[size] = gradients.weitzenbock_identity_report(phi)["rough_identity"]
        u = 1.0 + 0.3 * np.cos(cache.spec.theta_mesh()[0])
        zeroth[size] = gradients.zeroth_order_residual(phi, u)
    print(f"conformal rough 16: {rough[16]:.3e} -> 32: {rough[32]:.3e}; "
          f"zeroth 16: {zeroth[16]:.3e} -> 32: {zeroth[32]:.3e}")
    assert rough[32] <= rough[16] / 10.0
    assert zeroth[32] <= zeroth[16] / 10.0


def test_criterion_06_integral_identities():
    # every integral identity holds to 1e-9 when built from the exact
    # discrete transposes, on flat and conformal grids in 2d and 3d
    cases = [
        (2, 32, "flat", 8), (2, 32, "conformal", 6),
        (3, 16, "flat", 4), (3, 20, "conformal", 3),
    ]
    worst = {}
    for n, size, metric, band in cases:
        cache = make_cache(n, size, metric)
        for p in (1, 2):
            rng = np.random.default_rng([6, n, p])
            phi = fields.random_band_limited(cache, p, band, rng)
            irep = gradients.integral_identity_report(phi)
            for key in ("energy", "rough_energy", "split_energy", "q_form_route"):
                worst[key] = max(worst.get(key, 0.0), irep[key])
    print("\n" + " ".join(f"{k} {v:.3e}" for k, v in sorted(worst.items())))
    assert all(v <= 1e-9 for v in worst.values())


def test_criterion_07_ellipticity_and_spectra():
    # squared-symbol ellipticity over 100 random directions (and points,
    # when the metric varies), for n in {2, 3, 4} and p in {1, 2}
    floors = {}
    dists = {}
    for metric in ("flat", "conformal"):
        for n in (2, 3, 4):
            cache = make_cache(n, 8, metric)
            for p in (1, 2):
                handle = spectral.d1_star_d1_handle(cache, p)
                rng = np.random.default_rng([7, n, p])
                floor, dist = np.inf, 0.0
                for _ in range(100):
                    xi = rng.standard_normal(n)
                    x = None
                    if metric == "conformal":
                        x = tuple(int(rng.integers(0, s)) for s in cache.spec.shape)
                    srep = spectral.symbol_eval(handle, xi, x=x)
                    floor = min(floor, srep.min_eigenvalue / (srep.gscale * (xi @ xi)))
                    dist = max(dist, srep.distance_to_scalar)
                floors[(metric, n, p)] = floor
                dists[(metric, n, p)] = dist
    for key in sorted(floors):
        print(f"\n{key}: floor {floors[key]:.4f}, distance-to-scalar {dists[key]:.3e}")
    assert min(floors.values()) >= 1e-3  # a uniform positive constant
    assert all(np.isfinite(v) for v in dists.values())  # reported, not asserted

    # assembled spectra of the squared operator stay numerically psd
    for metric in ("flat", "conformal"):
        cache = make_cache(2, 12, metric)
        for p in (1, 2):
            rep = spectral.spectrum(spectral.d1_star_d1_handle(cache, p), n_eigs=None)
            assert rep.eigenvalues[0] >= -1e-9 * rep.lambda_max


def test_criterion_08_flat_torus_kernels_with_oracles(kernel_suite_timed):
    # conformal-Killing kernel on the flat 2-torus: the two constant
    # modes at p = 1 and p = 2, confirmed by the per-mode symbol oracle,
    # inside the stated dimension bounds, inside ten minutes
    report, elapsed = kernel_suite_timed
    by_id = {r.check_id: r for r in report.records}
    print(f"\nkernel suite at 32 points/axis: {elapsed:.1f}s, {report.status}")
    assert report.status == "pass"
    for p, bound in ((1, 6), (2, 10)):
        assert by_id[f"kernel.ck_count.p{p}"].value == 2.0
        assert by_id[f"kernel.ck_mode_oracle.p{p}"].status == "pass"
        assert fiber.ck_dim_bound(2, p) == bound
        assert 2 <= bound
    n = 3
    assert fiber.ck_dim_bound(3, 1) == 10 == (n + 1) * (n + 2) // 2
    assert elapsed <= 600.0


@pytest.mark.xfail(
    strict=True,
    reason="on trace-free symmetric 2-tensors over the 2-torus every nonzero "
    "Fourier mode gives a square divergence block with determinant |k|^2, so "
    "the near-kernel is exactly the two constant modes at every resolution; "
    "the windowed count is 2 on both grids and cannot strictly increase. "
    "Kept as the falsifying record of the stated expectation.",
)
def test_criterion_09_tt_window_strictly_increases():
    cfg = ExperimentConfig(metric="flat", dimension=2, sizes=(16, 32),
                           ranks=(2,), seed=7)
    win = {}
    for size in (16, 32):
        cache = build_cache(cfg, size)
        _, _, kc_win = joint_kernel_spectrum(cache, 2, ["divergence"], window=50)
        win[size] = kc_win.count
    assert win[32] > win[16]


def test_criterion_09_companion_divergence_kernel_facts():
    # the honest version of the statement: the rank-2 family is finite and
    # matches the per-mode oracle exactly, while the rank-1 family (where
    # the fiber dimensions allow a nontrivial null space) does grow
    cfg = ExperimentConfig(metric="flat", dimension=2, sizes=(16, 32),
                           ranks=(1, 2), seed=7)
    counts = {}
    for size in (16, 32):
        cache = build_cache(cfg, size)
        for p in (1, 2):
            _, kc, _ = joint_kernel_spectrum(cache, p, ["divergence"])
            assert kc.count == flat_joint_kernel_oracle(cache, p, ["divergence"])
            counts[(p, size)] = kc.count
    print(f"\ndivergence near-kernel: {counts}")
    assert counts[(2, 16)] == counts[(2, 32)] == 2
    assert counts[(1, 32)] > counts[(1, 16)]
    assert fiber.tracefree_dim(2, 2) == fiber.tracefree_dim(2, 1)  # why: square blocks


def test_criterion_10_falsifiability_fixtures():
    # deliberately corrupted conventions must be caught, loudly
    cache = make_cache(2, 16, "flat")
    phi = fields.random_band_limited(cache, 2, 4, np.random.default_rng(29))
    sp = gradients.decompose(
        phi, conventions=gradients.Conventions(d2_prefactor_scale=1.05))
    worst = max(sp.orthogonality.values())
    print(f"\ncorrupted prefactor: orthogonality {worst:.3e}")
    assert worst > 1e-3
    with pytest.raises(gradients.ConventionError):
        gradients.decompose(
            phi, conventions=gradients.Conventions(delta_sign=-1.0))


def test_criterion_11_byte_identical_reports():
    cfg = ExperimentConfig(metric="flat", dimension=2, sizes=(8, 12),
                           ranks=(1,), seed=5, field_count=2)
    first = render_json(run_identity_suite(cfg))
    second = render_json(run_identity_suite(cfg))
    assert first == second
    assert first.encode() == second.encode()
