"""First-order gradients on trace-free symmetric tensor fields.

The covariant derivative of a trace-free symmetric rank-p field takes
values in T* (x) S0^p, which splits into three irreducible O(n) summands.
This module realizes the corresponding first-order operators:

    d1   trace-free symmetrized derivative, rank p -> p+1 ("s0" storage)
    d2   divergence reinserted along the metric ("cov_s0" storage)
    d3   the remainder piece ("cov_s0" storage)

together with exact weighted adjoints, the second-order compositions
(rough Laplacian splitting, symmetrized Laplacian, the zeroth-order
curvature term), and energy/identity diagnostics.

Every operator has at least two independent routes that the tests compare
and never collapse:

  * d1/d2/d3 from explicit structure tensors  vs  constant fiber projectors
    applied to the same discrete covariant derivative;
  * d2 literal coefficients  vs  the equivariant-insertion image of the
    divergence scaled by the contraction eigenvalue;
  * second-order compositions from analytic formulas  vs  exact-transpose
    compositions of the discrete first-order pieces;
  * the curvature term operationally (nabla*nabla - Delta_S)  vs  the
    pointwise Ricci/Riemann formula.

Sign and normalization conventions are pinned by arbitration checks that
raise ConventionError instead of silently projecting away a discrepancy.
The `Conventions` knobs exist so negative-control tests can corrupt a
convention and watch the right checks fail.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fiber, fields
from .fields import FieldError, TensorField, l2_inner, l2_norm

_TINY = 1e-300


class ConventionError(RuntimeError):
    """A sign or normalization convention failed its arbitration check."""


@dataclass(frozen=True)
class Conventions:
    """Sign/prefactor knobs; defaults are the arbitrated conventions.

    Non-default values are for negative controls only: a corrupted
    convention must break the matching arbitration or orthogonality
    check, while leaving by-definition identities intact.
    """

    delta_sign: float = 1.0
    d2_prefactor_scale: float = 1.0
    trace_guard: float = 1e-6


DEFAULT_CONVENTIONS = Conventions()


def _check_phi(phi: TensorField):
    if phi.tag != "s0":
        raise FieldError("gradient operators expect an 's0' field")
    if phi.rank < 1:
        raise FieldError("gradient operators need rank >= 1")


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

def sym_insert_coefficient(n: int, p: int) -> float:
    """Coefficient of the metric-insertion correction inside d1."""
    return 2.0 / (n + 2 * (p - 1))


def d2_prefactor(n: int, p: int) -> float:
    """Leading coefficient (without sign) of the divergence-reinsertion part.

    The generic two-term expression degenerates at p = 1, where only the
    plain metric insertion survives with coefficient 1/n.
    """
    if p == 1:
        return 1.0 / n
    return (n + 2 * (p - 2)) / ((n + 2 * (p - 1)) * (n + p - 3))


def insertion_eigenvalue(n: int, p: int) -> float:
    """tau(E psi) = lambda psi for the equivariant insertion into T* (x) S0^p."""
    if p == 1:
        return float(n)
    return (n + 2 * (p - 1)) * (n + p - 3) / (p * (n + 2 * (p - 2)))


def sw_coefficient(n: int, p: int, which: str = "auto") -> float:
    """Coefficient of delta*delta inside the second-order composition d1*d1.

    'auto' is the value forced by the exact-transpose route for every rank;
    'four' fixes the numerator at 4 (= 2p at p = 2) and is kept as a
    diagnostic variant that agrees with 'auto' only at p = 2.
    """
    if which == "auto":
        return 2.0 * p / ((p + 1) * (n + 2 * (p - 1)))
    if which == "four":
        return 4.0 / ((p + 1) * (n + 2 * (p - 1)))
    raise FieldError(f"unknown coefficient variant {which!r}")


def energy_coefficient(n: int, p: int) -> float:
    """Coefficient of ||delta phi||^2 in the first-gradient energy identity."""
    return p * (n + 2 * (p - 2)) / ((p + 1) * (n + 2 * (p - 1)))


# ---------------------------------------------------------------------------
# constant structure matrices
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _d1_correction_matrix(n, p):
    """Monomial rank p+1 <- trace-free rank p-1: flat metric pair insertion."""
    B_low, _ = fiber.tracefree_basis(n, p - 1)
    M = fiber.insert_matrix(n, p + 1) @ B_low
    M.flags.writeable = False
    return M


@lru_cache(maxsize=None)
def _d2_literal_mono(n, p):
    """(n, m_p, t_{p-1}) monomial rows of the two-term reinsertion display.

    Row (i, J): sum_a g_{i J_a} psi_{J\\a} minus (2/(n+2(p-2))) times the
    sum over repeated J-pairs of psi at (i, J minus the pair), evaluated on
    the flat metric; p = 1 keeps only the first term.  The leading
    prefactor d2_prefactor(n, p) is folded in.
    """
    m_p = fiber.sym_dim(n, p)
    m_low = fiber.sym_dim(n, p - 1)
    pos_low = fiber.sym_index_of(n, p - 1)
    main = np.zeros((n, m_p, m_low))
    corr = np.zeros((n, m_p, m_low))
    for A, J in enumerate(fiber.sym_indices(n, p)):
        for a in range(p):
            rest = J[:a] + J[a + 1 :]
            main[J[a], A, pos_low[rest]] += 1.0
        for a in range(p):
            for b in range(a + 1, p):
                if J[a] != J[b]:
                    continue
                rest = J[:a] + J[a + 1 : b] + J[b + 1 :]
                for i in range(n):
                    corr[i, A, pos_low[tuple(sorted((i,) + rest))]] += 1.0
    comb = main if p == 1 else main - (2.0 / (n + 2 * (p - 2))) * corr
    B_low, _ = fiber.tracefree_basis(n, p - 1)
    M = d2_prefactor(n, p) * np.einsum("iAB,Bb->iAb", comb, B_low)
    M.flags.writeable = False
    return M


@lru_cache(maxsize=None)
def _d2_structure(n, p):
    """K2[i, a, b]: the literal reinsertion rows compressed to trace-free bases."""
    _, Cp = fiber.tracefree_basis(n, p)
    K2 = np.einsum("aA,iAb->iab", Cp, _d2_literal_mono(n, p))
    K2.flags.writeable = False
    return K2


@lru_cache(maxsize=None)
def _insertion_matrix_mono(n, p):
    """(n, m_p, t_{p-1}) monomial rows of the equivariant insertion map.

    Independently coded route (averaged symmetrization plus pair-weighted
    insertion, metric-basis compression) used as an oracle against the
    literal display rows.
    """
    g = fiber.flat_metric(n)
    B_low, _ = fiber.tracefree_basis(n, p - 1)
    cols = fiber._insert_map_columns(n, p, g, B_low)
    Bp_m = fiber.tracefree_basis_metric(n, p, g)
    t = Bp_m.shape[1]
    out = np.stack([Bp_m @ cols[i * t : (i + 1) * t, :] for i in range(n)])
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# the three first-order pieces
# ---------------------------------------------------------------------------

def d1(phi: TensorField, conventions: Conventions = DEFAULT_CONVENTIONS):
    """Trace-free symmetrized derivative, rank p -> p+1.

    The metric-insertion correction must cancel the trace of the
    symmetrized derivative identically; the conformal trace residual is
    checked pointwise before compressing, and a violation raises
    ConventionError.  This arbitration pins the insertion normalization
    (sum over all index pairs with weight 1/(p+1)).
    """
    _check_phi(phi)
    X = fields._grad_s0_apply(phi.cache, phi.rank, phi.data)
    return _d1_from_grad(phi, X, conventions)


def _d1_from_grad(phi, X, conventions):
    cache, p, n = phi.cache, phi.rank, phi.n
    mono = np.einsum(
        "Jia,...ia->...J", fields._sym_insert_expanded(n, p), X, optimize=True
    )
    dphi = fields._contract_apply(cache, p, X) * conventions.delta_sign
    corr = dphi @ _d1_correction_matrix(n, p).T
    corr = fields._scale(corr, fields._conf_factor(cache, 2.0), 1)
    mono = mono + sym_insert_coefficient(n, p) * corr
    tr = mono @ fiber.trace_matrix(n, p + 1).T
    tr = fields._scale(tr, fields._conf_factor(cache, -2.0), 1)
    rel = float(np.max(np.abs(tr))) / (float(np.max(np.abs(mono))) + _TINY)
    if rel > conventions.trace_guard:
        raise ConventionError(
            f"trace residual {rel:.3e} of the symmetrized derivative exceeds "
            f"{conventions.trace_guard:.1e}: divergence sign or insertion "
            "normalization is inconsistent"
        )
    _, C = fiber.tracefree_basis(n, p + 1)
    return TensorField(cache, "s0", p + 1, mono @ C.T)


def d2(phi: TensorField, conventions: Conventions = DEFAULT_CONVENTIONS):
    """Divergence-reinsertion part of the covariant derivative."""
    _check_phi(phi)
    dphi = fields.divergence(phi) * conventions.delta_sign
    data = _d2_from_delta(
        phi.cache, phi.rank, dphi.data, conventions.d2_prefactor_scale
    )
    return TensorField(phi.cache, "cov_s0", phi.rank, data)


def _d2_from_delta(cache, p, dphi_coords, scale=1.0):
    out = -np.einsum("iab,...b->...ia", _d2_structure(cache.n, p), dphi_coords)
    out = fields._scale(out, fields._conf_factor(cache, 2.0), 2)
    return out if scale == 1.0 else scale * out


def d2_insertion_oracle(phi: TensorField, conventions: Conventions = DEFAULT_CONVENTIONS):
    """Independent route to d2: -(1/lambda) times the insertion of the divergence."""
    _check_phi(phi)
    cache, p, n = phi.cache, phi.rank, phi.n
    dphi = fields.divergence(phi) * conventions.delta_sign
    lam = insertion_eigenvalue(n, p)
    mono = -(1.0 / lam) * np.einsum(
        "iAb,...b->...iA", _insertion_matrix_mono(n, p), dphi.data
    )
    mono = fields._scale(mono, fields._conf_factor(cache, 2.0), 2)
    _, C = fiber.tracefree_basis(n, p)
    return TensorField(cache, "cov_s0", p, mono @ C.T)


def embed_symmetrized(omega: TensorField):
    """Isometric slot regrouping of a rank p+1 trace-free field into T* (x) S0^p."""
    if omega.tag != "s0" or omega.rank < 1:
        raise FieldError("embed_symmetrized expects an 's0' field of rank >= 1")
    cache, p, n = omega.cache, omega.rank - 1, omega.n
    e = fiber.embed_matrix(n, p)
    t = fiber.tracefree_dim(n, p)
    flat = omega.data @ e.T
    return TensorField(
        cache, "cov_s0", p, flat.reshape(cache.spec.shape + (n, t))
    )


def embed_transpose(X: TensorField):
    """Pointwise transpose of embed_symmetrized; also its exact weighted adjoint,
    since domain and codomain carry the same conformal weight."""
    if X.tag != "cov_s0":
        raise FieldError("embed_transpose expects a 'cov_s0' field")
    cache, p = X.cache, X.rank
    e = fiber.embed_matrix(X.n, p)
    flat = X.data.reshape(cache.spec.shape + (-1,))
    return TensorField(cache, "s0", p + 1, flat @ e)


def d3(phi: TensorField, conventions: Conventions = DEFAULT_CONVENTIONS):
    """Remainder piece: the covariant derivative minus the other two parts."""
    return decompose(phi, conventions).d3


@dataclass(frozen=True)
class GradientSplit:
    """The three pieces of one covariant derivative, with diagnostics.

    reconstruction_residual is relative and by construction at roundoff;
    orthogonality holds pairwise relative L2 inner products of the three
    embedded pieces, which vanish exactly when the conventions are right.
    """

    d1: TensorField
    d2: TensorField
    d3: TensorField
    grad: TensorField
    reconstruction_residual: float
    orthogonality: dict
    norms: dict


def decompose(phi: TensorField, conventions: Conventions = DEFAULT_CONVENTIONS):
    """Split nabla phi into the three irreducible pieces, reusing one gradient."""
    _check_phi(phi)
    cache, p = phi.cache, phi.rank
    grad = fields.gradient(phi)
    om = _d1_from_grad(phi, grad.data, conventions)
    dphi = fields._contract_apply(cache, p, grad.data) * conventions.delta_sign
    d2f = TensorField(
        cache, "cov_s0", p,
        _d2_from_delta(cache, p, dphi, conventions.d2_prefactor_scale),
    )
    emb = embed_symmetrized(om)
    d3f = grad - emb - d2f
    recon = emb + d2f + d3f
    g_norm = l2_norm(grad)
    norms = {
        "grad": g_norm,
        "d1": l2_norm(emb),
        "d2": l2_norm(d2f),
        "d3": l2_norm(d3f),
    }
    # normalize cross terms by the total energy: a zero piece (possible at
    # n = 2) must not turn roundoff/roundoff into an O(1) ratio
    ortho = {}
    for (na, a), (nb, b) in (
        (("d1", emb), ("d2", d2f)),
        (("d1", emb), ("d3", d3f)),
        (("d2", d2f), ("d3", d3f)),
    ):
        ortho[f"{na}_{nb}"] = abs(l2_inner(a, b)) / (g_norm**2 + _TINY)
    return GradientSplit(
        d1=om,
        d2=d2f,
        d3=d3f,
        grad=grad,
        reconstruction_residual=l2_norm(grad - recon) / (g_norm + _TINY),
        orthogonality=ortho,
        norms=norms,
    )


def projector_components(X: TensorField):
    """Split a 'cov_s0' field with the constant fiber projectors (oracle route)."""
    if X.tag != "cov_s0":
        raise FieldError("projector_components expects a 'cov_s0' field")
    cache = X.cache
    parts = {}
    flat = X.data.reshape(cache.spec.shape + (-1,))
    for name, P in zip("ABC", fiber.flat_projector_matrices(X.n, X.rank)):
        parts[name] = TensorField(
            cache, "cov_s0", X.rank, (flat @ P.T).reshape(X.data.shape)
        )
    return parts


def projector_match_residuals(phi: TensorField, conventions=DEFAULT_CONVENTIONS):
    """Relative mismatch of each structure-tensor piece against the projector route."""
    sp = decompose(phi, conventions)
    parts = projector_components(sp.grad)
    scale = sp.norms["grad"] + _TINY
    return {
        "d1": l2_norm(embed_symmetrized(sp.d1) - parts["A"]) / scale,
        "d2": l2_norm(sp.d2 - parts["B"]) / scale,
        "d3": l2_norm(sp.d3 - parts["C"]) / scale,
    }


# ---------------------------------------------------------------------------
# exact weighted adjoints
# ---------------------------------------------------------------------------

def d1_exact_adjoint(omega: TensorField):
    """Exact weighted adjoint of d1 (at default conventions), rank p+1 -> p.

    Composed from exact pieces: the adjoint of the symmetrized derivative
    plus the coefficient times the adjoint of the divergence applied to
    the pointwise insertion transpose.  Pairings close at roundoff.
    """
    if omega.tag != "s0" or omega.rank < 2:
        raise FieldError("d1_exact_adjoint expects an 's0' field of rank >= 2")
    cache, n = omega.cache, omega.n
    p = omega.rank - 1
    om_s = TensorField(cache, "s", p + 1, omega.monomial())
    term1 = fields.sym_derivative_exact_adjoint(om_s)
    y = (om_s.data * fiber.multiplicities(n, p + 1)) @ _d1_correction_matrix(n, p)
    y = fields._scale(y, fields._conf_factor(cache, -2.0), 1)
    psi = TensorField(cache, "s0", p - 1, y)
    term2 = fields.divergence_exact_adjoint(psi)
    return term1 + sym_insert_coefficient(n, p) * term2


def d2_exact_adjoint(X: TensorField):
    """Exact weighted adjoint of d2 (at default conventions)."""
    if X.tag != "cov_s0":
        raise FieldError("d2_exact_adjoint expects a 'cov_s0' field")
    cache, p = X.cache, X.rank
    y = -np.einsum("iab,...ia->...b", _d2_structure(X.n, p), X.data)
    y = fields._scale(y, fields._conf_factor(cache, -2.0), 1)
    return fields.divergence_exact_adjoint(TensorField(cache, "s0", p - 1, y))


def d3_exact_adjoint(X: TensorField):
    """Exact weighted adjoint of d3 (at default conventions)."""
    if X.tag != "cov_s0":
        raise FieldError("d3_exact_adjoint expects a 'cov_s0' field")
    return (
        fields.gradient_adjoint(X)
        - d1_exact_adjoint(embed_transpose(X))
        - d2_exact_adjoint(X)
    )


# ---------------------------------------------------------------------------
# second-order compositions
# ---------------------------------------------------------------------------

def stein_weiss_d1(phi: TensorField, route: str = "formula", coefficient: str = "auto"):
    """Second-order composition d1* d1.

    route 'transpose' is the definitional oracle (exact adjoint after d1);
    route 'formula' is the trace-free projection of
    delta(delta* phi) - c delta*(delta phi) with c = sw_coefficient.
    """
    _check_phi(phi)
    if route == "transpose":
        return d1_exact_adjoint(d1(phi))
    if route != "formula":
        raise FieldError(f"unknown route {route!r}")
    c = sw_coefficient(phi.n, phi.rank, coefficient)
    t1 = fields.to_tracefree(fields.divergence(fields.sym_derivative(phi)))
    t2 = fields.to_tracefree(fields.sym_derivative(fields.divergence(phi)))
    return t1 - c * t2


def stein_weiss_checked(phi: TensorField, guard: float = 1e-6, coefficient: str = "auto"):
    """Formula route checked against the transpose oracle.

    Returns (formula_result, relative_residual); a residual beyond the
    guard means the composition coefficient is wrong, which invalidates
    everything downstream, so it raises ConventionError.
    """
    a = stein_weiss_d1(phi, route="formula", coefficient=coefficient)
    b = stein_weiss_d1(phi, route="transpose")
    rel = l2_norm(a - b) / (l2_norm(b) + _TINY)
    if rel > guard:
        raise ConventionError(
            f"second-order composition routes disagree at {rel:.3e} "
            f"(guard {guard:.1e})"
        )
    return a, rel


def sampson(phi: TensorField):
    """Symmetrized Laplacian (p+1) delta delta* - p delta* delta, tag 's'."""
    _check_phi(phi)
    p = phi.rank
    a = fields.divergence(fields.sym_derivative(phi))
    b = fields.sym_derivative(fields.divergence(phi))
    return (p + 1.0) * a - float(p) * b


def weitzenbock_K(phi: TensorField, route: str = "operational"):
    """Zeroth-order curvature term relating the two second-order Laplacians.

    route 'operational' (normative): nabla*nabla phi minus the trace-free
    part of the symmetrized Laplacian.  route 'curvature': the pointwise
    Ricci/Riemann slot action, kept as an independent oracle.
    """
    _check_phi(phi)
    if route == "operational":
        lap = fields.rough_laplacian(phi)
        return lap - fields.to_tracefree(sampson(phi))
    if route != "curvature":
        raise FieldError(f"unknown route {route!r}")
    cache, p, n = phi.cache, phi.rank, phi.n
    mono = phi.monomial()
    T1 = np.einsum("...jm,...mk->...jk", cache.ricci, cache.g_inv)
    out = np.einsum(
        "...jk,AjkB,...B->...A", T1, fiber.slot_replace_tensor(n, p), mono,
        optimize=True,
    )
    if p >= 2:
        T2 = np.einsum(
            "...jalb,...ak,...bs->...jkls",
            cache.riemann, cache.g_inv, cache.g_inv, optimize=True,
        )
        out -= np.einsum(
            "...jkls,AjklsB,...B->...A",
            T2, fiber.double_slot_replace_tensor(n, p), mono, optimize=True,
        )
    return fields.field_from_monomial(cache, p, out, tag="s0")


def weitzenbock_q_form(phi: TensorField, route: str = "operational"):
    """Pointwise <K phi, phi> with the conformal fiber inner product."""
    K = weitzenbock_K(phi, route=route)
    q = np.sum(K.data * phi.data, axis=-1)
    f = fields._conf_factor(phi.cache, -2.0 * phi.rank)
    return q if f is None else q * f


def zeroth_order_residual(phi: TensorField, u_values: np.ndarray):
    """||K(u phi) - u K(phi)|| / ||phi|| for a scalar u.

    A genuinely zeroth-order operator commutes with pointwise scalar
    multiplication, so this must vanish under grid refinement.
    """
    up = TensorField(phi.cache, "s0", phi.rank, phi.data * u_values[..., None])
    Ku = weitzenbock_K(up)
    uK = weitzenbock_K(phi).data * u_values[..., None]
    diff = TensorField(phi.cache, "s0", phi.rank, Ku.data - uK)
    return l2_norm(diff) / (l2_norm(phi) + _TINY)


def weitzenbock_identity_report(phi: TensorField):
    """Relative residuals of the second-order operator identities.

    'split_vs_rough' compares nabla*nabla with the sum of the three
    exact-transpose compositions (exact up to roundoff); the other two
    compare transpose-route compositions against analytic-formula routes
    and carry discretization error.  'curvature_oracle' measures the
    operational curvature term against the pointwise formula.
    """
    _check_phi(phi)
    p, n = phi.rank, phi.n
    c41 = (p + 1) * energy_coefficient(n, p)
    lap = fields.rough_laplacian(phi)
    K = weitzenbock_K(phi)
    sp = decompose(phi)
    T1 = d1_exact_adjoint(sp.d1)
    T2 = d2_exact_adjoint(sp.d2)
    T3 = d3_exact_adjoint(sp.d3)
    t2 = fields.to_tracefree(fields.sym_derivative(fields.divergence(phi)))
    scale = max(l2_norm(lap), l2_norm(K), l2_norm(phi)) + _TINY
    r_sum = l2_norm(lap - (T1 + T2 + T3)) / scale
    r41 = l2_norm((p + 1.0) * T1 - (lap - K + c41 * t2)) / scale
    r43 = l2_norm(float(p) * T1 - T2 - T3 - (c41 * t2 - K)) / scale
    K_orc = weitzenbock_K(phi, route="curvature")
    k_scale = max(l2_norm(K), l2_norm(K_orc), 1e-6 * scale) + _TINY
    return {
        "split_vs_rough": r_sum,
        "rough_identity": r41,
        "difference_identity": r43,
        "curvature_oracle": l2_norm(K - K_orc) / k_scale,
    }


def integral_identity_report(phi: TensorField):
    """Quadratic-form identities evaluated through exact first-order norms.

    Second-order quadratic forms are evaluated as weighted norms of the
    discrete first-order operators (the exact-transpose convention), so
    the identities close at roundoff.  'energy_flipped' keeps the variant
    with the opposite sign on the divergence term as a measured quantity;
    it is NOT expected to vanish.
    """
    _check_phi(phi)
    p, n = phi.rank, phi.n
    sp = decompose(phi)
    nG = sp.norms["grad"] ** 2
    nD1 = sp.norms["d1"] ** 2
    nD2 = sp.norms["d2"] ** 2
    nD3 = sp.norms["d3"] ** 2
    dstar = fields.sym_derivative(phi)
    nDs = l2_inner(dstar, dstar)
    dv = fields.divergence(phi)
    nDel = l2_inner(dv, dv)
    sampson_q = (p + 1.0) * nDs - float(p) * nDel
    K_q = nG - sampson_q
    c34 = energy_coefficient(n, p)
    c41 = (p + 1) * c34
    q_pointwise = float(np.sum(weitzenbock_q_form(phi) * phi.cache.weights))
    scale = max(nG, nD1, nDs, nDel) + _TINY
    return {
        "energy": abs(nD1 - (sampson_q / (p + 1) + c34 * nDel)) / scale,
        "energy_flipped": abs(nD1 - (sampson_q / (p + 1) - c34 * nDel)) / scale,
        "rough_energy": abs((p + 1) * nD1 - (nG - K_q + c41 * nDel)) / scale,
        "split_energy": abs(p * nD1 - nD2 - nD3 - (c41 * nDel - K_q)) / scale,
        "q_form_route": abs(q_pointwise - K_q) / scale,
        "values": {
            "grad_sq": nG,
            "d1_sq": nD1,
            "d2_sq": nD2,
            "d3_sq": nD3,
            "sym_derivative_sq": nDs,
            "divergence_sq": nDel,
            "sampson_q": sampson_q,
            "curvature_q": K_q,
        },
    }


# ---------------------------------------------------------------------------
# measured diagnostics
# ---------------------------------------------------------------------------

def ahlfors_deformation(phi: TensorField):
    """Trace-free deformation tensor of a 1-form, built from components.

    Independent of d1's structure tensors: symmetrize the covariant
    derivative by hand and subtract the conformal trace along the metric.
    The conformal factors of trace and metric cancel pointwise.
    """
    if phi.tag != "s0" or phi.rank != 1:
        raise FieldError("ahlfors_deformation expects an 's0' field of rank 1")
    cache, n = phi.cache, phi.n
    X = fields.gradient(phi).data
    S = X + np.swapaxes(X, -1, -2)
    trg = np.einsum("...ii->...", X)
    S = S - (2.0 / n) * trg[..., None, None] * np.eye(n)
    m = fiber.sym_dim(n, 2)
    mono = np.empty(cache.spec.shape + (m,))
    for A, (i, j) in enumerate(fiber.sym_indices(n, 2)):
        mono[..., A] = S[..., i, j]
    return fields.field_from_monomial(cache, 2, mono, tag="s0")


def ahlfors_ratio(phi: TensorField):
    """Measured ||S phi||^2 / ||d1 phi||^2 for 1-forms (expected constant 4)."""
    S = ahlfors_deformation(phi)
    om = d1(phi)
    return l2_norm(S) ** 2 / (l2_norm(om) ** 2 + _TINY)


def double_divergence_ratio(phi: TensorField):
    """Measured ||delta delta phi|| / ||phi||; not an identity, so reported
    rather than asserted."""
    _check_phi(phi)
    if phi.rank < 2:
        raise FieldError("double divergence needs rank >= 2")
    dd = fields.divergence(fields.divergence(phi))
    return l2_norm(dd) / (l2_norm(phi) + _TINY)
