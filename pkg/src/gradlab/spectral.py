"""Dense spectral experiments for the first-order pieces and their compositions.

Everything here is desk scale on purpose: operators are assembled as dense
matrices (column by column, DOF-capped), eigenproblems are solved with the
weighted symmetric LAPACK drivers, and near-kernels are counted with an
explicit tolerance policy that refuses to report a number when there is no
clear spectral gap.

Two discretization hazards shape the design:

* the antisymmetric spectral derivative is blind to the top (Nyquist)
  frequency on an even grid, so nodal assembly of any operator built from
  first derivatives carries spurious zero modes.  Eigenvalue studies
  therefore default to a dealiased real trigonometric basis that simply
  excludes those modes;
* discretization can fake near-zero eigenvalues, so a kernel count is only
  "confirmed" when two grid resolutions agree and the gap above the counted
  cluster is at least two orders of magnitude.

Principal symbols are never extracted by finite plane-wave limits.  Each
handle carries an algebraic builder that reuses the operator's own cached
structure tensors with every derivative slot replaced by a covector, which
keeps the symbols exactly consistent with the discrete operators.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import fiber, fields, gradients
from .fields import TensorField

DOF_CAP = 20_000
_TINY = 1e-300


class SpectralError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# coefficient vectors and weights
# ---------------------------------------------------------------------------

def _fiber_dim(n, tag, rank):
    d = fiber.tracefree_dim(n, rank) if "s0" in tag else fiber.sym_dim(n, rank)
    return n * d if tag.startswith("cov") else d


def weight_vector(cache, tag, rank):
    """Diagonal of the L2 Gram matrix on flattened coefficient vectors.

    Matches fields.l2_inner exactly: cell volume times metric density times
    the conformal fiber factor, with monomial multiplicities where the
    storage uses monomial coordinates.
    """
    w = fields.fiber_weight_scalar(cache, tag, rank)
    n = cache.n
    if "s0" in tag:
        fib = np.ones(fiber.tracefree_dim(n, rank))
    else:
        fib = fiber.multiplicities(n, rank).astype(float)
    if tag.startswith("cov"):
        fib = np.tile(fib, n)
    return np.outer(w.ravel(), fib).ravel()


# ---------------------------------------------------------------------------
# operator handles
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class OperatorHandle:
    """A named linear operator between sampled tensor bundles.

    `apply` acts on TensorField instances; the vector interface flattens
    grid-major, fiber-minor.  `matrix` and `symmetrization_defect` are
    write-once caches filled by `assemble`; everything else is fixed at
    construction.  `symbol` maps (xi, gscale) to the principal-symbol fiber
    matrix, where gscale is the inverse conformal factor at the evaluation
    point; None for operators of order zero.
    """

    name: str
    cache: object
    domain_tag: str
    domain_rank: int
    codomain_tag: str
    codomain_rank: int
    apply: callable
    self_adjoint: bool = False
    order: int = 1
    symbol: callable = None
    matrix: np.ndarray = field(default=None, repr=False)
    symmetrization_defect: float = None

    @property
    def n(self):
        return self.cache.n

    @property
    def grid(self):
        return self.cache.spec.shape

    @property
    def domain_dim(self):
        return self.cache.spec.num_points * _fiber_dim(self.n, self.domain_tag, self.domain_rank)

    @property
    def codomain_dim(self):
        return self.cache.spec.num_points * _fiber_dim(self.n, self.codomain_tag, self.codomain_rank)

    @property
    def is_endomorphism(self):
        return (self.domain_tag, self.domain_rank) == (self.codomain_tag, self.codomain_rank)

    def _field_shape(self, tag, rank):
        d = fiber.tracefree_dim(self.n, rank) if "s0" in tag else fiber.sym_dim(self.n, rank)
        fib = (self.n, d) if tag.startswith("cov") else (d,)
        return self.cache.spec.shape + fib

    def field_from_vector(self, vec):
        data = np.asarray(vec, float).reshape(self._field_shape(self.domain_tag, self.domain_rank))
        return TensorField(self.cache, self.domain_tag, self.domain_rank, data)

    def apply_vector(self, vec):
        return np.asarray(self.apply(self.field_from_vector(vec)).data, float).ravel()

    def domain_weights(self):
        return weight_vector(self.cache, self.domain_tag, self.domain_rank)

    def codomain_weights(self):
        return weight_vector(self.cache, self.codomain_tag, self.codomain_rank)


def _check_dof(*dims):
    worst = max(dims)
    if worst > DOF_CAP:
        raise SpectralError(
            f"{worst} degrees of freedom exceed the dense cap {DOF_CAP}; "
            "shrink the grid (or the basis) before assembling"
        )


def assemble(handle: OperatorHandle):
    """Dense matrix of the handle, columns = images of coefficient deltas.

    Declared self-adjoint handles are symmetrized in the weighted inner
    product afterwards; the relative defect is recorded on the handle so a
    large value (a convention bug) cannot pass silently.
    """
    if handle.matrix is not None:
        return handle.matrix
    _check_dof(handle.domain_dim, handle.codomain_dim)
    A = np.empty((handle.codomain_dim, handle.domain_dim))
    e = np.zeros(handle.domain_dim)
    for j in range(handle.domain_dim):
        e[j] = 1.0
        A[:, j] = handle.apply_vector(e)
        e[j] = 0.0
    if handle.self_adjoint:
        w = handle.domain_weights()
        WA = A * w[:, None]
        scale = float(np.linalg.norm(WA)) + _TINY
        defect = float(np.linalg.norm(WA - WA.T)) / scale
        handle.symmetrization_defect = defect
        A = 0.5 * (A + WA.T / w[:, None])
    handle.matrix = A
    return A


# ---------------------------------------------------------------------------
# weighted symmetric eigensolve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray      # ascending
    vectors: np.ndarray     # columns, orthonormal in the weighted inner product
    residuals: np.ndarray   # relative per-pair pencil residuals


def _eigh_pencil(G, M, k=None, residual_tol=1e-8):
    """Smallest eigenpairs of the symmetric pencil (G, M); M diagonal as 1-d."""
    G = np.asarray(G, float)
    diag = np.asarray(M).ndim == 1
    if diag:
        d = np.sqrt(np.asarray(M, float))
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise SpectralError("weights must be strictly positive")
        vals, V = scipy.linalg.eigh(G / d[:, None] / d[None, :])
        vecs = V / d[:, None]
        Mv = vecs * np.asarray(M, float)[:, None]
    else:
        vals, vecs = scipy.linalg.eigh(G, np.asarray(M, float))
        Mv = np.asarray(M, float) @ vecs
    R = G @ vecs - Mv * vals[None, :]
    scale = float(np.linalg.norm(G)) + _TINY
    residuals = np.linalg.norm(R, axis=0) / scale
    if float(np.max(residuals, initial=0.0)) > residual_tol:
        raise SpectralError(
            f"eigensolve residuals up to {float(np.max(residuals)):.3e} exceed "
            f"{residual_tol:.1e}: the pencil did not converge"
        )
    if k is not None:
        vals, vecs, residuals = vals[:k], vecs[:, :k], residuals[:k]
    return EigenResult(values=vals, vectors=vecs, residuals=residuals)


def eigensolve(matrix, weights, k=None, symmetry_tol=1e-6):
    """Eigenpairs of an assembled operator in the weighted inner product.

    The matrix must be (numerically) self-adjoint against diag(weights);
    gross asymmetry is a convention error, not something to average away,
    so it raises.  Returned vectors are weighted-orthonormal.
    """
    A = np.asarray(matrix, float)
    w = np.asarray(weights, float)
    if A.shape[0] != A.shape[1] or A.shape[0] != w.size:
        raise SpectralError("matrix and weights sizes do not match")
    WA = A * w[:, None]
    defect = float(np.linalg.norm(WA - WA.T)) / (float(np.linalg.norm(WA)) + _TINY)
    if defect > symmetry_tol:
        raise SpectralError(
            f"matrix is not symmetric in the weighted inner product "
            f"(relative defect {defect:.3e})"
        )
    G = 0.5 * (WA + WA.T)
    return _eigh_pencil(G, w, k=k)


# ---------------------------------------------------------------------------
# dealiased real trigonometric basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DealiasedBasis:
    """Real trig functions below the Nyquist row, tensored with fiber axes.

    Columns are indexed scalar-major, fiber-minor; `column_k2` holds the
    squared physical wavenumber of each scalar function, which doubles as
    the flat Fourier oracle for the connection Laplacian.
    """

    cache: object
    tag: str
    rank: int
    modes: tuple            # half-space integer mode vectors, (0,...,0) included
    scalars: np.ndarray     # (num_points, n_scalar) nodal values
    column_k2: np.ndarray   # (n_scalar,) squared wavenumber per scalar column

    @property
    def n_scalar(self):
        return self.scalars.shape[1]

    @property
    def dim(self):
        return self.n_scalar * _fiber_dim(self.cache.n, self.tag, self.rank)

    def columns(self):
        return np.kron(self.scalars, np.eye(_fiber_dim(self.cache.n, self.tag, self.rank)))

    def laplace_multiset(self):
        """Sorted flat eigenvalue oracle |k|^2, one copy per fiber dimension."""
        t = _fiber_dim(self.cache.n, self.tag, self.rank)
        return np.sort(np.repeat(self.column_k2, t))


def build_dealiased_basis(cache, rank, tag="s0"):
    spec = cache.spec
    n = spec.n
    mmax = [s // 2 - 1 for s in spec.sizes]
    theta = spec.theta_mesh()
    kunit = [2.0 * math.pi / L for L in spec.lengths]
    modes, cols, k2 = [], [], []
    for m in itertools.product(*(range(-b, b + 1) for b in mmax)):
        nz = next((v for v in m if v != 0), 0)
        if nz < 0:
            continue  # half-space: cos/sin of -m duplicate those of m
        phase = sum(mi * th for mi, th in zip(m, theta)) if any(m) else None
        kk = sum((mi * ku) ** 2 for mi, ku in zip(m, kunit))
        modes.append(m)
        if phase is None:
            cols.append(np.ones(spec.num_points))
            k2.append(kk)
            continue
        cols.append(np.cos(phase).ravel())
        k2.append(kk)
        cols.append(np.sin(phase).ravel())
        k2.append(kk)
    return DealiasedBasis(
        cache=cache,
        tag=tag,
        rank=rank,
        modes=tuple(modes),
        scalars=np.column_stack(cols),
        column_k2=np.asarray(k2),
    )


def dealiased_pencil(handle: OperatorHandle, basis: DealiasedBasis):
    """Galerkin matrices (G, M) of an endomorphism on the dealiased subspace."""
    if not handle.is_endomorphism:
        raise SpectralError(f"{handle.name} is not an endomorphism")
    if (basis.tag, basis.rank) != (handle.domain_tag, handle.domain_rank):
        raise SpectralError("basis bundle does not match the handle domain")
    _check_dof(basis.dim)
    cols = basis.columns()
    applied = np.empty_like(cols)
    for j in range(cols.shape[1]):
        applied[:, j] = handle.apply_vector(cols[:, j])
    w = handle.domain_weights()
    G = cols.T @ (applied * w[:, None])
    M = cols.T @ (cols * w[:, None])
    return G, M


# ---------------------------------------------------------------------------
# kernel counting policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelCount:
    count: int
    gap_ratio: float
    lambda_ref: float      # first eigenvalue above the absolute floor; nan if none
    floor: float
    theta: float
    indeterminate: bool

    @property
    def label(self):
        return "indeterminate" if self.indeterminate else str(self.count)


def kernel_count(eigs, theta=1e-4, floor_factor=1e-8, gap_min=100.0):
    """Count the near-zero cluster of an ascending non-negative spectrum.

    The reference scale is the first eigenvalue above an absolute floor of
    floor_factor times the largest eigenvalue; everything below theta times
    that reference (or below the floor itself) counts as kernel.  With a
    gap ratio under gap_min the count is flagged indeterminate: there is no
    cluster to speak of, and refining the grid is the only honest answer.
    """
    e = np.asarray(eigs, float)
    if e.size == 0:
        raise SpectralError("empty spectrum")
    if np.any(np.diff(e) < -1e-9 * max(abs(float(e[-1])), 1.0)):
        raise SpectralError("eigenvalues must be ascending")
    lam_max = float(e[-1])
    floor = floor_factor * max(lam_max, 0.0)
    above = e[e > floor]
    if above.size == 0:
        return KernelCount(
            count=int(e.size), gap_ratio=math.inf, lambda_ref=math.nan,
            floor=floor, theta=theta, indeterminate=False,
        )
    lam_ref = float(above[0])
    cut = max(theta * lam_ref, floor)
    count = int(np.sum(e < cut))
    if count == 0:
        gap = math.inf
    else:
        gap = float(e[count]) / max(abs(float(e[count - 1])), _TINY)
    return KernelCount(
        count=count, gap_ratio=gap, lambda_ref=lam_ref, floor=floor,
        theta=theta, indeterminate=bool(gap < gap_min),
    )


# ---------------------------------------------------------------------------
# spectrum reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumReport:
    name: str
    n: int
    rank: int
    grid: tuple
    dof: int
    dealiased: bool
    theta: float
    floor_factor: float
    eigenvalues: np.ndarray     # ascending, possibly truncated to n_eigs
    lambda_max: float
    kernel: KernelCount
    symmetry_defect: float
    residual_max: float

    @property
    def kernel_count(self):
        return self.kernel.count

    @property
    def kernel_label(self):
        return self.kernel.label

    @property
    def gap_ratio(self):
        return self.kernel.gap_ratio


def spectrum(handle: OperatorHandle, n_eigs=50, dealiased=True,
             theta=1e-4, floor_factor=1e-8, gap_min=100.0):
    """Full eigenvalue study of an endomorphism handle.

    Dealiased (default) projects onto the sub-Nyquist trig basis, which is
    the only mode in which zero counts mean anything; nodal assembly is kept
    for demonstrating exactly that failure.
    """
    if not handle.is_endomorphism:
        raise SpectralError(f"{handle.name} is not an endomorphism")
    if dealiased:
        basis = build_dealiased_basis(handle.cache, handle.domain_rank, handle.domain_tag)
        G, M = dealiased_pencil(handle, basis)
    else:
        A = assemble(handle)
        w = handle.domain_weights()
        G = A * w[:, None]
        M = w
    scale = float(np.linalg.norm(G)) + _TINY
    defect = float(np.linalg.norm(G - G.T)) / scale
    G = 0.5 * (G + G.T)
    eig = _eigh_pencil(G, M)
    kc = kernel_count(eig.values, theta=theta, floor_factor=floor_factor, gap_min=gap_min)
    vals = eig.values if n_eigs is None else eig.values[:n_eigs]
    return SpectrumReport(
        name=handle.name,
        n=handle.n,
        rank=handle.domain_rank,
        grid=tuple(handle.grid),
        dof=G.shape[0],
        dealiased=bool(dealiased),
        theta=theta,
        floor_factor=floor_factor,
        eigenvalues=np.array(vals),
        lambda_max=float(eig.values[-1]),
        kernel=kc,
        symmetry_defect=defect,
        residual_max=float(np.max(eig.residuals, initial=0.0)),
    )


# ---------------------------------------------------------------------------
# algebraic principal symbols
# ---------------------------------------------------------------------------

def _grad_block(n, t, xi):
    # sigma(covariant derivative) on trace-free coordinates, rows i-major
    return np.kron(np.asarray(xi, float).reshape(n, 1), np.eye(t))


def _second_order_symbol(n, p, P=None):
    """gscale * K(xi)^T P K(xi); P = None means the full gradient square."""
    t = fiber.tracefree_dim(n, p)

    def sig(xi, gscale):
        K = _grad_block(n, t, xi)
        core = K.T @ K if P is None else K.T @ (P @ K)
        return gscale * core

    return sig


def _d1_symbol(n, p):
    e = fiber.embed_matrix(n, p)
    t = fiber.tracefree_dim(n, p)

    def sig(xi, gscale):
        return e.T @ _grad_block(n, t, xi)

    return sig


def _projected_gradient_symbol(n, p, P):
    t = fiber.tracefree_dim(n, p)

    def sig(xi, gscale):
        return P @ _grad_block(n, t, xi)

    return sig


def _gradient_symbol(n, p):
    t = fiber.tracefree_dim(n, p)

    def sig(xi, gscale):
        return _grad_block(n, t, xi)

    return sig


def _divergence_symbol(n, p):
    k0 = fields._k0(n, p)

    def sig(xi, gscale):
        return -gscale * np.einsum("bia,i->ba", k0, np.asarray(xi, float))

    return sig


def _delta_deltastar_symbol(n, p):
    # reuse the cached conjugated structure tensors so the symbol shares the
    # operators' sign and normalization conventions by construction
    Sm = fields._sym_insert_expanded(n, p)
    Kc = fiber.div_contract_tensor(n, p + 1)
    _, C = fiber.tracefree_basis(n, p)

    def sig(xi, gscale):
        xi = np.asarray(xi, float)
        up = np.einsum("Jia,i->Ja", Sm, xi)
        down = -np.einsum("BiA,i->BA", Kc, xi)
        return -gscale * (C @ (down @ up))

    return sig


def _deltastar_delta_symbol(n, p):
    Sm = fields._sym_insert_expanded(n, p - 1)
    k0 = fields._k0(n, p)
    _, C = fiber.tracefree_basis(n, p)

    def sig(xi, gscale):
        xi = np.asarray(xi, float)
        down = -np.einsum("bia,i->ba", k0, xi)
        up = C @ np.einsum("Jia,i->Ja", Sm, xi)
        return -gscale * (up @ down)

    return sig


def _sampson_symbol(n, p):
    s1 = _delta_deltastar_symbol(n, p)
    s2 = _deltastar_delta_symbol(n, p)

    def sig(xi, gscale):
        return (p + 1.0) * s1(xi, gscale) - float(p) * s2(xi, gscale)

    return sig


def _stein_weiss_symbol(n, p, coefficient="auto"):
    c = gradients.sw_coefficient(n, p, coefficient)
    s1 = _delta_deltastar_symbol(n, p)
    s2 = _deltastar_delta_symbol(n, p)

    def sig(xi, gscale):
        return s1(xi, gscale) - c * s2(xi, gscale)

    return sig


@dataclass(frozen=True)
class SymbolReport:
    name: str
    xi: np.ndarray
    gscale: float
    matrix: np.ndarray
    min_singular_value: float
    min_eigenvalue: float           # nan when the matrix is not square-symmetric
    distance_to_scalar: float       # nan when the matrix is not square
    scalar_coefficient: float       # Frobenius-best scalar; nan when not square


def _point_scale(cache, x=None):
    f = cache.conf_exponent_values
    if f is None:
        raise SpectralError("symbols are defined for the conformal metric family only")
    idx = (0,) * cache.n if x is None else tuple(int(v) for v in x)
    return float(np.exp(-2.0 * f[idx]))


def symbol_eval(handle: OperatorHandle, xi, x=None):
    """Principal symbol of the handle at covector xi and grid point x.

    Returns the fiber matrix together with its smallest singular value, its
    smallest eigenvalue when symmetric, and its distance to the nearest
    scalar multiple of the identity.  The distance is reported, never
    asserted to vanish: scalarity is a hypothesis to be measured.
    """
    if handle.symbol is None:
        raise SpectralError(f"{handle.name} carries no symbol builder")
    xi = np.asarray(xi, float)
    if xi.shape != (handle.n,) or not np.any(xi):
        raise SpectralError("xi must be a nonzero covector of the right dimension")
    gscale = _point_scale(handle.cache, x)
    mat = np.asarray(handle.symbol(xi, gscale), float)
    svals = np.linalg.svd(mat, compute_uv=False)
    min_sv = float(svals[-1]) if svals.size else 0.0
    min_eig = math.nan
    dist = math.nan
    alpha = math.nan
    if mat.shape[0] == mat.shape[1]:
        dim = mat.shape[0]
        alpha = float(np.trace(mat)) / dim
        dist = float(np.linalg.norm(mat - alpha * np.eye(dim))) / (float(np.linalg.norm(mat)) + _TINY)
        sym_defect = float(np.linalg.norm(mat - mat.T)) / (float(np.linalg.norm(mat)) + _TINY)
        if sym_defect < 1e-10:
            min_eig = float(np.linalg.eigvalsh(mat)[0])
    return SymbolReport(
        name=handle.name,
        xi=xi,
        gscale=gscale,
        matrix=mat,
        min_singular_value=min_sv,
        min_eigenvalue=min_eig,
        distance_to_scalar=dist,
        scalar_coefficient=alpha,
    )


def symbol_sphere_scan(handle: OperatorHandle, n_dirs=64, seed=0, x=None):
    """Symbol reports over a deterministic sample of unit covectors."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_dirs):
        xi = rng.standard_normal(handle.n)
        nrm = float(np.linalg.norm(xi))
        if nrm < 1e-8:
            continue
        out.append(symbol_eval(handle, xi / nrm, x=x))
    return out


# ---------------------------------------------------------------------------
# handle factories
# ---------------------------------------------------------------------------

def identity_handle(cache, p):
    return OperatorHandle(
        name="identity", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p, apply=lambda phi: phi,
        self_adjoint=True, order=0, symbol=None,
    )


def gradient_handle(cache, p):
    return OperatorHandle(
        name="gradient", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="cov_s0", codomain_rank=p, apply=fields.gradient,
        order=1, symbol=_gradient_symbol(cache.n, p),
    )


def divergence_handle(cache, p):
    return OperatorHandle(
        name="divergence", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p - 1, apply=fields.divergence,
        order=1, symbol=_divergence_symbol(cache.n, p),
    )


def d1_handle(cache, p):
    return OperatorHandle(
        name="d1", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p + 1, apply=gradients.d1,
        order=1, symbol=_d1_symbol(cache.n, p),
    )


def d2_handle(cache, p):
    P = fiber.flat_projector_matrices(cache.n, p)[1]
    return OperatorHandle(
        name="d2", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="cov_s0", codomain_rank=p, apply=gradients.d2,
        order=1, symbol=_projected_gradient_symbol(cache.n, p, P),
    )


def d3_handle(cache, p):
    P = fiber.flat_projector_matrices(cache.n, p)[2]
    return OperatorHandle(
        name="d3", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="cov_s0", codomain_rank=p, apply=gradients.d3,
        order=1, symbol=_projected_gradient_symbol(cache.n, p, P),
    )


def rough_laplacian_handle(cache, p, route="adjoint"):
    return OperatorHandle(
        name="rough_laplacian", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: fields.rough_laplacian(phi, route=route),
        self_adjoint=(route == "adjoint"), order=2,
        symbol=_second_order_symbol(cache.n, p, None),
    )


def d1_star_d1_handle(cache, p, route="transpose"):
    P = fiber.flat_projector_matrices(cache.n, p)[0]
    name = "d1_star_d1" if route == "transpose" else "d1_star_d1_formula"
    return OperatorHandle(
        name=name, cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: gradients.stein_weiss_d1(phi, route=route),
        self_adjoint=(route == "transpose"), order=2,
        symbol=_second_order_symbol(cache.n, p, P),
    )


def d2_star_d2_handle(cache, p):
    P = fiber.flat_projector_matrices(cache.n, p)[1]
    return OperatorHandle(
        name="d2_star_d2", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: gradients.d2_exact_adjoint(gradients.d2(phi)),
        self_adjoint=True, order=2,
        symbol=_second_order_symbol(cache.n, p, P),
    )


def d3_star_d3_handle(cache, p):
    P = fiber.flat_projector_matrices(cache.n, p)[2]
    return OperatorHandle(
        name="d3_star_d3", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: gradients.d3_exact_adjoint(gradients.d3(phi)),
        self_adjoint=True, order=2,
        symbol=_second_order_symbol(cache.n, p, P),
    )


def sampson_handle(cache, p):
    return OperatorHandle(
        name="sampson_tracefree", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: fields.to_tracefree(gradients.sampson(phi)),
        order=2, symbol=_sampson_symbol(cache.n, p),
    )


def weitzenbock_handle(cache, p, route="operational"):
    return OperatorHandle(
        name="weitzenbock", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: gradients.weitzenbock_K(phi, route=route),
        order=0, symbol=None,
    )


def delta_deltastar_handle(cache, p):
    return OperatorHandle(
        name="delta_deltastar", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: fields.to_tracefree(fields.divergence(fields.sym_derivative(phi))),
        order=2, symbol=_delta_deltastar_symbol(cache.n, p),
    )


def deltastar_delta_handle(cache, p):
    return OperatorHandle(
        name="deltastar_delta", cache=cache, domain_tag="s0", domain_rank=p,
        codomain_tag="s0", codomain_rank=p,
        apply=lambda phi: fields.to_tracefree(fields.sym_derivative(fields.divergence(phi))),
        order=2, symbol=_deltastar_delta_symbol(cache.n, p),
    )


def named_handles(cache, p):
    """Deterministic registry of every operator the experiments drive."""
    out = {}
    for h in (
        identity_handle(cache, p),
        gradient_handle(cache, p),
        divergence_handle(cache, p),
        d1_handle(cache, p),
        d2_handle(cache, p),
        d3_handle(cache, p),
        rough_laplacian_handle(cache, p),
        d1_star_d1_handle(cache, p),
        d1_star_d1_handle(cache, p, route="formula"),
        d2_star_d2_handle(cache, p),
        d3_star_d3_handle(cache, p),
        sampson_handle(cache, p),
        weitzenbock_handle(cache, p),
        delta_deltastar_handle(cache, p),
        deltastar_delta_handle(cache, p),
    ):
        out[h.name] = h
    return out


# ---------------------------------------------------------------------------
# per-mode oracles for flat kernels
# ---------------------------------------------------------------------------

def mode_injectivity_scan(n, p, kmax=4):
    """Smallest normalized singular value of the first-order trace-free
    symmetrization block over all nonzero integer modes |m_j| <= kmax.

    A strictly positive floor is the computable content of overdetermined
    ellipticity: on the flat torus every nonzero Fourier mode is then free
    of kernel, so zero modes can only come from constants.
    """
    e = fiber.embed_matrix(n, p)
    t = fiber.tracefree_dim(n, p)
    worst, worst_mode = math.inf, None
    for m in itertools.product(range(-kmax, kmax + 1), repeat=n):
        if not any(m):
            continue
        xi = np.asarray(m, float)
        sv = np.linalg.svd(e.T @ _grad_block(n, t, xi), compute_uv=False)[-1]
        sv /= float(np.linalg.norm(xi))
        if sv < worst:
            worst, worst_mode = float(sv), m
    return {"min_singular_value": worst, "mode": worst_mode}


def flat_kernel_oracle(cache, p, tol=1e-10):
    """Predicted near-kernel dimension of the first-order composition on a
    flat grid, by per-Fourier-mode blocks of the dealiased basis.

    Constants contribute the full fiber dimension; each nonzero half-space
    mode contributes twice the nullity of its first-order block (cosine and
    sine copies).  Independent of assembly: pure structure-tensor algebra.
    """
    if not cache.is_flat:
        raise SpectralError("the per-mode oracle applies to flat metrics only")
    n = cache.n
    e = fiber.embed_matrix(n, p)
    t = fiber.tracefree_dim(n, p)
    kunit = [2.0 * math.pi / L for L in cache.spec.lengths]
    total = t
    for m in itertools.product(*(range(-(s // 2 - 1), s // 2) for s in cache.spec.sizes)):
        nz = next((v for v in m if v != 0), 0)
        if nz <= 0:
            continue
        xi = np.asarray([mi * ku for mi, ku in zip(m, kunit)])
        svals = np.linalg.svd(e.T @ _grad_block(n, t, xi), compute_uv=False)
        total += 2 * int(np.sum(svals < tol * float(np.linalg.norm(xi))))
    return total


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def spectrum_to_csv(report: SpectrumReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(np.asarray(report.eigenvalues)):
            w.writerow([i, f"{float(v):.17e}"])
    return path


def symbol_scan_to_csv(handle: OperatorHandle, path, n_dirs=64, seed=0, x=None):
    reports = symbol_sphere_scan(handle, n_dirs=n_dirs, seed=seed, x=x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["index"] + [f"xi_{i}" for i in range(handle.n)]
        w.writerow(head + ["min_singular_value", "min_eigenvalue",
                           "distance_to_scalar", "scalar_coefficient"])
        for i, r in enumerate(reports):
            row = [i] + [f"{v:.17e}" for v in r.xi]
            row += [f"{r.min_singular_value:.17e}", f"{r.min_eigenvalue:.17e}",
                    f"{r.distance_to_scalar:.17e}", f"{r.scalar_coefficient:.17e}"]
            w.writerow(row)
    return reports
