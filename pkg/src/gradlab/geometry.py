"""Periodic grids, derivative engines, metrics, and curvature.

The manifolds are n-tori with analytic metrics from a small preset
catalog (flat, conformally flat, diagonal periodic).  Everything is
sampled on a tensor-product lattice; derivatives are pseudo-spectral
by default with a 4th-order stencil as the alternative.

Array convention: sampled data has the n grid axes first, fiber or
component axes after, e.g. the metric is (*grid, n, n).
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .expressions import TrigPoly

TWO_PI = 2.0 * math.pi


class GeometryError(RuntimeError):
    """Raised for invalid grids, non-SPD metric samples, or bad presets."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic lattice on an n-torus."""

    n: int
    sizes: tuple
    lengths: tuple = None
    point_cap: int = 2_000_000

    def __post_init__(self):
        if self.n < 1:
            raise GeometryError("dimension must be >= 1")
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) != self.n:
            raise GeometryError(f"need {self.n} sizes, got {len(sizes)}")
        if any(s < 8 or s % 2 for s in sizes):
            raise GeometryError(f"sizes must be even and >= 8: {sizes}")
        lengths = self.lengths
        if lengths is None:
            lengths = (TWO_PI,) * self.n
        lengths = tuple(float(L) for L in lengths)
        if len(lengths) != self.n or any(L <= 0 for L in lengths):
            raise GeometryError(f"need {self.n} positive lengths: {lengths}")
        npts = math.prod(sizes)
        if npts > self.point_cap:
            raise GeometryError(f"{npts} grid points exceeds cap {self.point_cap}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)

    @property
    def shape(self):
        return self.sizes

    @property
    def num_points(self):
        return math.prod(self.sizes)

    @property
    def spacings(self):
        return tuple(L / s for L, s in zip(self.lengths, self.sizes))

    @property
    def cell_volume(self):
        return math.prod(self.spacings)

    def axis_coords(self, axis):
        N, L = self.sizes[axis], self.lengths[axis]
        return np.arange(N) * (L / N)

    def theta_mesh(self):
        """Angular coordinates 2*pi*x/L per axis, full mesh, shape (*grid,)."""
        axes = [self.axis_coords(i) * (TWO_PI / self.lengths[i]) for i in range(self.n)]
        return np.meshgrid(*axes, indexing="ij")

    def coord_mesh(self):
        axes = [self.axis_coords(i) for i in range(self.n)]
        return np.meshgrid(*axes, indexing="ij")

    def wavenumbers(self, axis):
        """Spectral wavenumbers with the Nyquist bin zeroed.

        Zeroing Nyquist keeps the derivative matrix real and exactly
        antisymmetric, which the adjoint checks rely on.
        """
        N, L = self.sizes[axis], self.lengths[axis]
        k = np.fft.fftfreq(N, d=1.0 / N) * (TWO_PI / L)
        k[N // 2] = 0.0
        return k


def differentiate(values, axis, spec, method="spectral"):
    """Partial derivative along grid axis `axis` of data shaped (*grid, ...)."""
    if method == "spectral":
        k = spec.wavenumbers(axis)
        shape = [1] * values.ndim
        shape[axis] = len(k)
        fk = np.fft.fft(values, axis=axis)
        out = np.fft.ifft(1j * k.reshape(shape) * fk, axis=axis)
        return np.ascontiguousarray(out.real)
    if method == "fd4":
        h = spec.spacings[axis]
        f1 = np.roll(values, -1, axis=axis)
        f2 = np.roll(values, -2, axis=axis)
        b1 = np.roll(values, 1, axis=axis)
        b2 = np.roll(values, 2, axis=axis)
        return (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * h)
    raise GeometryError(f"unknown differentiation method {method!r}")


def evaluate_on_grid(poly: TrigPoly, spec: GridSpec):
    """Sample a trig polynomial at all grid points, shape (*grid,)."""
    if poly.n_vars > spec.n:
        raise GeometryError(
            f"expression uses x{poly.n_vars} on an n={spec.n} grid"
        )
    return np.broadcast_to(poly.evaluate(spec.theta_mesh()), spec.shape).copy()


def coordinate_derivative(poly: TrigPoly, axis, spec):
    """Analytic d/dx_axis on the grid: angular derivative times 2*pi/L."""
    scale = TWO_PI / spec.lengths[axis]
    return scale * evaluate_on_grid(poly.angular_derivative(axis), spec)


def analytic_laplacian(poly: TrigPoly, spec):
    """Analytic coordinate Laplacian sum_j d2/dx_j^2 sampled on the grid."""
    out = np.zeros(spec.shape)
    for j in range(spec.n):
        scale = (TWO_PI / spec.lengths[j]) ** 2
        out += scale * evaluate_on_grid(
            poly.angular_derivative(j).angular_derivative(j), spec
        )
    return out


# ---------------------------------------------------------------------------
# metric presets
# ---------------------------------------------------------------------------

PRESETS = ("flat", "conformally_flat", "diagonal_periodic")


@dataclass(frozen=True)
class MetricField:
    """Analytic metric preset plus its sampled components."""

    preset: str
    n: int
    conformal_exponent: TrigPoly = None
    diagonal: tuple = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise GeometryError(f"unknown metric preset {self.preset!r}")
        if self.preset == "conformally_flat" and self.conformal_exponent is None:
            raise GeometryError("conformally_flat needs an exponent expression")
        if self.preset == "diagonal_periodic":
            if self.diagonal is None or len(self.diagonal) != self.n:
                raise GeometryError("diagonal_periodic needs one expression per axis")

    @property
    def is_flat(self):
        return self.preset == "flat" or (
            self.preset == "conformally_flat" and self.conformal_exponent.is_zero
        )

    @property
    def is_conformal(self):
        return self.preset in ("flat", "conformally_flat")

    def components(self, spec: GridSpec):
        if spec.n != self.n:
            raise GeometryError("grid dimension does not match metric dimension")
        g = np.zeros(spec.shape + (self.n, self.n))
        if self.preset == "flat":
            for i in range(self.n):
                g[..., i, i] = 1.0
        elif self.preset == "conformally_flat":
            conf = np.exp(2.0 * evaluate_on_grid(self.conformal_exponent, spec))
            for i in range(self.n):
                g[..., i, i] = conf
        else:
            for i in range(self.n):
                a = evaluate_on_grid(self.diagonal[i], spec)
                if np.min(a) <= 0:
                    raise GeometryError(f"diagonal entry {i + 1} is not positive")
                g[..., i, i] = a
        return g


def flat_metric_field(n):
    return MetricField(preset="flat", n=n)


def conformal_metric_field(n, exponent: TrigPoly):
    return MetricField(preset="conformally_flat", n=n, conformal_exponent=exponent)


def diagonal_metric_field(n, diagonal):
    return MetricField(preset="diagonal_periodic", n=n, diagonal=tuple(diagonal))


# ---------------------------------------------------------------------------
# geometry cache
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeometryCache:
    """Immutable bundle of sampled metric data and curvature.

    riemann is fully lowered, indexed (*grid, i, j, k, l) as R_{ijkl} =
    g_{im} R^m_{jkl}; ricci is the (j, l) contraction of R^m_{jml}.
    """

    spec: GridSpec
    metric: MetricField
    method: str
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar_curvature: np.ndarray
    weights: np.ndarray
    conf_exponent_values: np.ndarray = None

    @property
    def n(self):
        return self.spec.n

    @property
    def is_flat(self):
        return self.metric.is_flat

    @property
    def is_conformal(self):
        return self.metric.is_conformal

    @cached_property
    def total_volume(self):
        return float(np.sum(self.weights))

    def diff(self, values, axis):
        return differentiate(values, axis, self.spec, self.method)


def build_geometry(spec: GridSpec, metric: MetricField, method="spectral"):
    if method not in ("spectral", "fd4"):
        raise GeometryError(f"unknown differentiation method {method!r}")
    n = spec.n
    g = metric.components(spec)

    eigs = np.linalg.eigvalsh(g)
    if np.min(eigs) <= 0:
        raise GeometryError("metric sample is not positive definite")
    g_inv = np.linalg.inv(g)
    sqrt_det = np.sqrt(np.linalg.det(g))

    # dg[..., a, i, j] = d_a g_ij
    dg = np.stack([differentiate(g, a, spec, method) for a in range(n)], axis=-3)
    gamma = _christoffel(g_inv, dg)

    dgamma = np.stack(
        [differentiate(gamma, a, spec, method) for a in range(n)], axis=-4
    )
    # R^r_{s m v} = d_m G^r_{v s} - d_v G^r_{m s} + G^r_{m l} G^l_{v s} - G^r_{v l} G^l_{m s}
    r_up = (
        np.einsum("...mrvs->...rsmv", dgamma)
        - np.einsum("...vrms->...rsmv", dgamma)
        + np.einsum("...rml,...lvs->...rsmv", gamma, gamma)
        - np.einsum("...rvl,...lms->...rsmv", gamma, gamma)
    )
    riemann = np.einsum("...ir,...rsmv->...ismv", g, r_up)
    ricci = np.einsum("...msmv->...sv", r_up)
    scalar = np.einsum("...sv,...sv->...", g_inv, ricci)
    weights = spec.cell_volume * sqrt_det

    conf_vals = None
    if metric.preset == "conformally_flat":
        conf_vals = evaluate_on_grid(metric.conformal_exponent, spec)
    elif metric.preset == "flat":
        conf_vals = np.zeros(spec.shape)

    return GeometryCache(
        spec=spec,
        metric=metric,
        method=method,
        g=g,
        g_inv=g_inv,
        sqrt_det=sqrt_det,
        christoffel=gamma,
        riemann=riemann,
        ricci=ricci,
        scalar_curvature=scalar,
        weights=weights,
        conf_exponent_values=conf_vals,
    )


def _christoffel(g_inv, dg):
    # dg[..., a, i, j] = d_a g_ij
    g_low = 0.5 * (
        np.einsum("...ijl->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - dg
    )
    return np.einsum("...kl,...lij->...kij", g_inv, g_low)


# ---------------------------------------------------------------------------
# closed-form oracles for the conformal preset (g = e^{2f} * identity)
# ---------------------------------------------------------------------------

def _analytic_partials(f: TrigPoly, spec: GridSpec):
    df = np.stack([coordinate_derivative(f, i, spec) for i in range(spec.n)], axis=-1)
    d2f = np.zeros(spec.shape + (spec.n, spec.n))
    for i in range(spec.n):
        gi = f.angular_derivative(i)
        for j in range(i, spec.n):
            scale = (TWO_PI / spec.lengths[i]) * (TWO_PI / spec.lengths[j])
            val = scale * evaluate_on_grid(gi.angular_derivative(j), spec)
            d2f[..., i, j] = val
            d2f[..., j, i] = val
    return df, d2f


def conformal_christoffel_oracle(metric: MetricField, spec: GridSpec):
    """Closed-form Christoffel symbols for the conformal preset.

    G^k_ij = delta^k_i f_j + delta^k_j f_i - delta_ij f_k with flat partials.
    """
    if metric.preset != "conformally_flat":
        raise GeometryError("oracle only applies to the conformal preset")
    n = spec.n
    df, _ = _analytic_partials(metric.conformal_exponent, spec)
    gamma = np.zeros(spec.shape + (n, n, n))
    for k in range(n):
        for i in range(n):
            gamma[..., k, k, i] += df[..., i]
            gamma[..., k, i, k] += df[..., i]
            gamma[..., k, i, i] -= df[..., k]
    return gamma


def conformal_ricci_oracle(metric: MetricField, spec: GridSpec):
    """Closed-form Ricci tensor for g = e^{2f} * identity in any dimension.

    Ric_ij = -(n-2)(f_ij - f_i f_j) - (Lap f + (n-2)|grad f|^2) delta_ij,
    all derivatives taken with the flat coordinate operators.
    """
    if metric.preset != "conformally_flat":
        raise GeometryError("oracle only applies to the conformal preset")
    n = spec.n
    df, d2f = _analytic_partials(metric.conformal_exponent, spec)
    lap = np.trace(d2f, axis1=-2, axis2=-1)
    grad_sq = np.sum(df * df, axis=-1)
    ric = -(n - 2) * (d2f - df[..., :, None] * df[..., None, :])
    diag = lap + (n - 2) * grad_sq
    for i in range(n):
        ric[..., i, i] -= diag
    return ric


def conformal_scalar_curvature_oracle(metric: MetricField, spec: GridSpec):
    """Scalar curvature of the conformal preset; in 2d equals -2 e^{-2f} Lap f."""
    if metric.preset != "conformally_flat":
        raise GeometryError("oracle only applies to the conformal preset")
    n = spec.n
    f = metric.conformal_exponent
    fv = evaluate_on_grid(f, spec)
    df, d2f = _analytic_partials(f, spec)
    lap = np.trace(d2f, axis1=-2, axis2=-1)
    grad_sq = np.sum(df * df, axis=-1)
    return -2.0 * (n - 1) * np.exp(-2.0 * fv) * (lap + 0.5 * (n - 2) * grad_sq)


def gauss_curvature_2d_oracle(metric: MetricField, spec: GridSpec):
    """Gaussian curvature K = -e^{-2f} Lap f for the 2d conformal preset."""
    if spec.n != 2:
        raise GeometryError("Gaussian curvature oracle is 2d only")
    return 0.5 * conformal_scalar_curvature_oracle(metric, spec)


def curvature_symmetry_residuals(cache: GeometryCache):
    """Relative residuals of the standard curvature symmetries."""
    R = cache.riemann
    scale = max(float(np.max(np.abs(R))), 1e-30)
    rel = lambda arr: float(np.max(np.abs(arr))) / scale
    res = {
        "antisym_last_pair": rel(R + np.einsum("...ismv->...isvm", R)),
        "antisym_first_pair": rel(R + np.einsum("...ismv->...simv", R)),
        "pair_interchange": rel(R - np.einsum("...ismv->...mvis", R)),
        "first_bianchi": rel(
            R
            + np.einsum("...imvs->...ismv", R)
            + np.einsum("...ivsm->...ismv", R)
        ),
        "ricci_symmetry": rel(cache.ricci - np.swapaxes(cache.ricci, -1, -2)),
    }
    return res
