"""Tensor fields over periodic grids and the first-order operators.

Fields store fiber coordinates per grid point under one of four tags:

    "s"       symmetric rank-p, monomial coordinates, (*grid, sym_dim)
    "s0"      trace-free rank-p in the fixed flat-orthonormal basis,
              (*grid, tracefree_dim)
    "cov_s"   one covariant slot + symmetric part, (*grid, n, sym_dim)
    "cov_s0"  one covariant slot + trace-free part, (*grid, n, tracefree_dim)

Differential operators are restricted to the conformal metric family
(flat or conformally flat).  There the fiber Gram matrix in the flat
orthonormal basis is a scalar multiple of the identity at every point,
so trace-free storage, diagonal quadrature weights, and exact-transpose
adjoints all stay cheap and exact.  The derivation-side fact making
"s0" storage lossless is that both the coordinate-derivative term and
the connection term of the covariant derivative of a trace-free field
are themselves pointwise trace-free for conformal metrics.

Adjoints come in two flavors, kept deliberately separate: exact
weighted transposes of the discrete operators (machine-precision
pairings) and independent analytic formulas (pairings agree only up to
discretization error).  Checks never collapse the two.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fiber
from .geometry import GeometryCache, differentiate


class FieldError(RuntimeError):
    """Raised for tag/rank mismatches or unsupported metric families."""


_TAGS = ("s", "s0", "cov_s", "cov_s0")


@dataclass(frozen=True, eq=False)
class TensorField:
    """Sampled section: fiber coordinates at every grid point."""

    cache: GeometryCache
    tag: str
    rank: int
    data: np.ndarray

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise FieldError(f"unknown storage tag {self.tag!r}")
        if self.rank < 0:
            raise FieldError("rank must be >= 0")
        n = self.cache.n
        d = fiber.sym_dim(n, self.rank) if "s0" not in self.tag else fiber.tracefree_dim(n, self.rank)
        expect = self.cache.spec.shape + ((n, d) if self.tag.startswith("cov") else (d,))
        if self.data.shape != expect:
            raise FieldError(
                f"data shape {self.data.shape} does not match {expect} for tag {self.tag!r}"
            )

    @property
    def n(self):
        return self.cache.n

    @property
    def fiber_dim(self):
        return self.data.shape[-1]

    def monomial(self):
        """Coordinates in the monomial basis, expanding trace-free storage."""
        if self.tag in ("s", "cov_s"):
            return self.data
        B, _ = fiber.tracefree_basis(self.n, self.rank)
        return self.data @ B.T

    def __add__(self, other):
        self._compat(other)
        return TensorField(self.cache, self.tag, self.rank, self.data + other.data)

    def __sub__(self, other):
        self._compat(other)
        return TensorField(self.cache, self.tag, self.rank, self.data - other.data)

    def __mul__(self, scalar):
        return TensorField(self.cache, self.tag, self.rank, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return TensorField(self.cache, self.tag, self.rank, -self.data)

    def _compat(self, other):
        if self.cache is not other.cache or self.tag != other.tag or self.rank != other.rank:
            raise FieldError("field mismatch: same cache, tag, and rank required")


def zero_field(cache, rank, tag="s0"):
    n = cache.n
    d = fiber.tracefree_dim(n, rank) if "s0" in tag else fiber.sym_dim(n, rank)
    shape = cache.spec.shape + ((n, d) if tag.startswith("cov") else (d,))
    return TensorField(cache, tag, rank, np.zeros(shape))


def field_from_monomial(cache, rank, mono, tag="s0"):
    """Wrap monomial-coordinate samples; tag 's0' projects trace parts away."""
    if tag == "s":
        return TensorField(cache, "s", rank, mono)
    if tag == "s0":
        _, C = fiber.tracefree_basis(cache.n, rank)
        return TensorField(cache, "s0", rank, mono @ C.T)
    raise FieldError(f"unsupported construction tag {tag!r}")


def to_tracefree(phi: TensorField):
    if phi.tag == "s0":
        return phi
    if phi.tag != "s":
        raise FieldError("only plain symmetric fields can be compressed")
    _, C = fiber.tracefree_basis(phi.n, phi.rank)
    return TensorField(phi.cache, "s0", phi.rank, phi.data @ C.T)


# ---------------------------------------------------------------------------
# conformal bookkeeping
# ---------------------------------------------------------------------------

def _require_conformal(cache):
    if not cache.is_conformal:
        raise FieldError(
            "operator requires the conformal metric family (flat or conformally flat)"
        )


def _conf_factor(cache, power):
    """exp(power * f) on the grid, or None when the metric is flat."""
    if cache.is_flat:
        return None
    return np.exp(power * cache.conf_exponent_values)


def _scale(values, factor, extra_axes):
    if factor is None:
        return values
    return values * factor.reshape(factor.shape + (1,) * extra_axes)


def _covariant_rank(tag, rank):
    return rank + (1 if tag.startswith("cov") else 0)


def fiber_weight_scalar(cache, tag, rank):
    """Scalar spatial weight: cell volume * sqrt(det g) * e^{-2qf}.

    q is the total covariant rank; the remaining fiber weight is the
    identity for trace-free tags and the multiplicity diagonal for
    monomial tags.
    """
    _require_conformal(cache)
    q = _covariant_rank(tag, rank)
    w = cache.weights
    factor = _conf_factor(cache, -2.0 * q)
    return w if factor is None else w * factor


def l2_inner(a: TensorField, b: TensorField):
    a._compat(b)
    w = fiber_weight_scalar(a.cache, a.tag, a.rank)
    prod = a.data * b.data
    if a.tag in ("s", "cov_s"):
        prod = prod * fiber.multiplicities(a.n, a.rank)
    fiber_axes = tuple(range(w.ndim, prod.ndim))
    return float(np.sum(prod.sum(axis=fiber_axes) * w))


def l2_norm(a: TensorField):
    return float(np.sqrt(max(l2_inner(a, a), 0.0)))


# ---------------------------------------------------------------------------
# cached conjugated structure tensors
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _q0(n, p):
    """Slot-replacement tensor conjugated into the trace-free basis."""
    Q = fiber.slot_replace_tensor(n, p)
    B, C = fiber.tracefree_basis(n, p)
    return np.ascontiguousarray(np.einsum("aA,AjkB,Bb->ajkb", C, Q, B))


@lru_cache(maxsize=None)
def _k0(n, p):
    """Covariant-slot contraction conjugated into trace-free bases."""
    Kc = fiber.div_contract_tensor(n, p)
    Bp, _ = fiber.tracefree_basis(n, p)
    _, Cl = fiber.tracefree_basis(n, p - 1)
    return np.ascontiguousarray(np.einsum("bB,BiA,Aa->bia", Cl, Kc, Bp))


@lru_cache(maxsize=None)
def _sym_insert_expanded(n, p):
    """Full symmetrization of (i, trace-free rank p) into monomial rank p+1."""
    Sm = fiber.sym_insert_cov_tensor(n, p)
    Bp, _ = fiber.tracefree_basis(n, p)
    return np.ascontiguousarray(np.einsum("JiA,Aa->Jia", Sm, Bp))


def _gamma_slices(cache):
    # T_i[..., j, k] = Gamma^k_{i j}: lower label j stays, upper k is summed
    return np.einsum("...kij->...ijk", cache.christoffel)


# ---------------------------------------------------------------------------
# gradient (covariant derivative)
# ---------------------------------------------------------------------------

def _grad_s0_apply(cache, p, c):
    spec = cache.spec
    n = spec.n
    out = np.stack([differentiate(c, i, spec, cache.method) for i in range(n)], axis=-2)
    if not cache.is_flat:
        T = _gamma_slices(cache)
        out -= np.einsum("...ijk,ajkb,...b->...ia", T, _q0(n, p), c, optimize=True)
    return out


def _grad_s0_transpose(cache, p, X):
    spec = cache.spec
    n = spec.n
    out = -sum(
        differentiate(X[..., i, :], i, spec, cache.method) for i in range(n)
    )
    if not cache.is_flat:
        T = _gamma_slices(cache)
        out = out - np.einsum("...ijk,ajkb,...ia->...b", T, _q0(n, p), X, optimize=True)
    return out


def gradient(phi: TensorField):
    """Covariant derivative; trace-free input stays trace-free pointwise."""
    if phi.tag == "s0":
        _require_conformal(phi.cache)
        X = _grad_s0_apply(phi.cache, phi.rank, phi.data)
        return TensorField(phi.cache, "cov_s0", phi.rank, X)
    if phi.tag == "s":
        cache, p, n = phi.cache, phi.rank, phi.n
        spec = cache.spec
        out = np.stack(
            [differentiate(phi.data, i, spec, cache.method) for i in range(n)], axis=-2
        )
        Q = fiber.slot_replace_tensor(n, p)
        T = _gamma_slices(cache)
        out -= np.einsum("...ijk,AjkB,...B->...iA", T, Q, phi.data, optimize=True)
        return TensorField(cache, "cov_s", p, out)
    raise FieldError("gradient expects an 's' or 's0' field")


def gradient_adjoint(X: TensorField):
    """Exact weighted adjoint of `gradient` on trace-free storage."""
    if X.tag != "cov_s0":
        raise FieldError("gradient_adjoint expects a 'cov_s0' field")
    cache, p = X.cache, X.rank
    w_cod = fiber_weight_scalar(cache, "cov_s0", p)
    w_dom = fiber_weight_scalar(cache, "s0", p)
    Z = _grad_s0_transpose(cache, p, X.data * w_cod[..., None, None])
    return TensorField(cache, "s0", p, Z / w_dom[..., None])


# ---------------------------------------------------------------------------
# divergence and symmetrized derivative
# ---------------------------------------------------------------------------

def _contract_apply(cache, p, X):
    out = -np.einsum("bia,...ia->...b", _k0(cache.n, p), X)
    factor = _conf_factor(cache, -2.0)
    return _scale(out, factor, 1)


def _contract_transpose(cache, p, y):
    y = _scale(y, _conf_factor(cache, -2.0), 1)
    return -np.einsum("bia,...b->...ia", _k0(cache.n, p), y)


def divergence(phi: TensorField):
    """(delta phi) = minus the metric contraction of the covariant derivative
    over the derivative slot and the first symmetric slot.

    Trace-free input gives trace-free output; plain symmetric input is
    also supported (output rank p-1, tag 's')."""
    if phi.rank < 1:
        raise FieldError("divergence needs rank >= 1")
    _require_conformal(phi.cache)
    if phi.tag == "s0":
        X = _grad_s0_apply(phi.cache, phi.rank, phi.data)
        out = _contract_apply(phi.cache, phi.rank, X)
        return TensorField(phi.cache, "s0", phi.rank - 1, out)
    if phi.tag == "s":
        cache, p, n = phi.cache, phi.rank, phi.n
        X = gradient(phi).data  # (*grid, i, A) monomial
        Kc = fiber.div_contract_tensor(n, p)
        out = -np.einsum("BiA,...iA->...B", Kc, X)
        out = _scale(out, _conf_factor(cache, -2.0), 1)
        return TensorField(cache, "s", p - 1, out)
    raise FieldError("divergence expects an 's' or 's0' field")


def divergence_exact_adjoint(psi: TensorField):
    """Exact weighted adjoint of `divergence`, rank p-1 -> rank p."""
    if psi.tag != "s0":
        raise FieldError("divergence_exact_adjoint expects an 's0' field")
    cache = psi.cache
    p = psi.rank + 1
    w_cod = fiber_weight_scalar(cache, "s0", p - 1)
    w_dom = fiber_weight_scalar(cache, "s0", p)
    Z = _grad_s0_transpose(
        cache, p, _contract_transpose(cache, p, psi.data * w_cod[..., None])
    )
    return TensorField(cache, "s0", p, Z / w_dom[..., None])


def sym_derivative(phi: TensorField):
    """Full symmetrization of the covariant derivative, rank p -> p+1.

    The output is symmetric but not trace-free; the trace-free part is
    what the first-order gradient construction extracts later.
    """
    if phi.tag != "s0":
        raise FieldError("sym_derivative expects an 's0' field")
    _require_conformal(phi.cache)
    cache, p = phi.cache, phi.rank
    X = _grad_s0_apply(cache, p, phi.data)
    out = np.einsum("Jia,...ia->...J", _sym_insert_expanded(cache.n, p), X, optimize=True)
    return TensorField(cache, "s", p + 1, out)


def sym_derivative_exact_adjoint(omega: TensorField):
    """Exact weighted adjoint of `sym_derivative`, rank p+1 -> rank p."""
    if omega.tag != "s":
        raise FieldError("sym_derivative_exact_adjoint expects an 's' field")
    cache, p = omega.cache, omega.rank - 1
    if p < 0:
        raise FieldError("rank mismatch")
    w_cod = fiber_weight_scalar(cache, "s", p + 1)
    w_dom = fiber_weight_scalar(cache, "s0", p)
    y = omega.data * fiber.multiplicities(cache.n, p + 1) * w_cod[..., None]
    X = np.einsum("Jia,...J->...ia", _sym_insert_expanded(cache.n, p), y, optimize=True)
    Z = _grad_s0_transpose(cache, p, X)
    return TensorField(cache, "s0", p, Z / w_dom[..., None])


# ---------------------------------------------------------------------------
# rough Laplacian, two independent routes
# ---------------------------------------------------------------------------

def rough_laplacian(phi: TensorField, route="adjoint"):
    """Connection Laplacian nabla* nabla.

    route 'adjoint': exact weighted transpose of the discrete gradient.
    route 'formula': second covariant derivative contracted with the
    inverse metric, an independent discretization.
    """
    if phi.tag != "s0":
        raise FieldError("rough_laplacian expects an 's0' field")
    _require_conformal(phi.cache)
    if route == "adjoint":
        return gradient_adjoint(gradient(phi))
    if route != "formula":
        raise FieldError(f"unknown route {route!r}")
    cache, p, n = phi.cache, phi.rank, phi.n
    spec = cache.spec
    X = _grad_s0_apply(cache, p, phi.data)  # (*grid, j, a)
    T = _gamma_slices(cache) if not cache.is_flat else None
    Q0 = _q0(n, p)
    out = np.zeros_like(phi.data)
    for i in range(n):
        # (nabla_i X)_{i, J}: derivative + covariant-slot + symmetric-slot terms
        Yii = differentiate(X[..., i, :], i, spec, cache.method)
        if T is not None:
            Yii = Yii - np.einsum("...k,...ka->...a", T[..., i, i, :], X)
            Yii = Yii - np.einsum(
                "...jk,ajkb,...b->...a", T[..., i, :, :], Q0, X[..., i, :], optimize=True
            )
        out -= Yii
    out = _scale(out, _conf_factor(cache, -2.0), 1)
    return TensorField(cache, "s0", p, out)


# ---------------------------------------------------------------------------
# diagnostics and sampling
# ---------------------------------------------------------------------------

def max_trace_residual(phi: TensorField):
    """Max pointwise metric-trace magnitude of a field that claims S_0."""
    if phi.rank < 2:
        return 0.0
    mono = phi.monomial()
    Tm = fiber.trace_matrix(phi.n, phi.rank)
    tr = mono @ Tm.T
    factor = _conf_factor(phi.cache, -2.0)
    if factor is not None:
        tr = tr * factor.reshape(factor.shape + (1,) * (tr.ndim - factor.ndim))
    return float(np.max(np.abs(tr)))


def random_band_limited(cache, rank, band, rng, tag="s0", amplitude=1.0):
    """Gaussian random field low-passed to |k_axis| <= band per axis."""
    spec = cache.spec
    n = spec.n
    if any(band >= s // 2 for s in spec.sizes):
        raise FieldError("band must stay below the Nyquist index")
    m = fiber.sym_dim(n, rank)
    vals = rng.standard_normal(size=spec.shape + (m,))
    fk = np.fft.fftn(vals, axes=tuple(range(n)))
    for axis in range(n):
        idx = np.abs(np.fft.fftfreq(spec.sizes[axis]) * spec.sizes[axis])
        mask_shape = [1] * fk.ndim
        mask_shape[axis] = spec.sizes[axis]
        fk *= (idx <= band).reshape(mask_shape)
    vals = np.fft.ifftn(fk, axes=tuple(range(n))).real
    out = field_from_monomial(cache, rank, vals, tag=tag)
    nrm = l2_norm(out)
    if nrm > 0:
        out = out * (amplitude / nrm)
    return out
