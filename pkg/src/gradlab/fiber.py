"""Pointwise algebra of symmetric and trace-free symmetric tensors.

A rank-p symmetric tensor over an n-dimensional inner-product space is stored
as one coefficient per nondecreasing multi-index ("monomial coordinates").
The trace-free subspace carries a fixed orthonormalized basis, so trace-free
storage is structural rather than penalized.  Every map between coordinate
systems is an explicit small matrix; this keeps adjoints exact and lets each
identity be tested against brute-force index loops.

All constructions here are metric-aware: pass a MetricAtPoint to work over an
arbitrary SPD inner product, or use the flat helpers (identity metric) that
the field modules build on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg


class FiberAlgebraError(RuntimeError):
    """Internal inconsistency in the fiber algebra (signals a bug, not data)."""


# ---------------------------------------------------------------------------
# dimensions and index bookkeeping
# ---------------------------------------------------------------------------

def sym_dim(n: int, p: int) -> int:
    """Number of independent components of a symmetric p-tensor: C(n+p-1, p)."""
    if n < 1 or p < 0:
        raise ValueError(f"need n >= 1 and p >= 0, got n={n}, p={p}")
    return math.comb(n + p - 1, p)


def tracefree_dim(n: int, p: int) -> int:
    """Fiber dimension of trace-free symmetric p-tensors: C(n+p-1,p) - C(n+p-3,p-2)."""
    if n < 2 or p < 0:
        raise ValueError(f"need n >= 2 and p >= 0, got n={n}, p={p}")
    if p < 2:
        return sym_dim(n, p)
    return sym_dim(n, p) - sym_dim(n, p - 2)


def ck_dim_bound(n: int, p: int) -> int:
    """Maximal dimension of the first-gradient kernel, in exact integer arithmetic.

    The closed form is stated for n >= 3; for n = 2 the same expression is
    evaluated and callers should label it as extrapolated.
    """
    if n < 2 or p < 1:
        raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    num = (
        math.factorial(n + p - 3)
        * math.factorial(n + p - 2)
        * (n + 2 * p - 2)
        * (n + 2 * p - 1)
        * (n + 2 * p)
    )
    den = math.factorial(p) * math.factorial(p + 1) * math.factorial(n - 2) * math.factorial(n)
    q, r = divmod(num, den)
    if r:
        raise FiberAlgebraError(f"bound formula not integral at (n={n}, p={p})")
    return q


@lru_cache(maxsize=None)
def sym_indices(n: int, p: int) -> tuple[tuple[int, ...], ...]:
    """All nondecreasing index tuples of length p over {0..n-1}."""
    return tuple(combinations_with_replacement(range(n), p))


@lru_cache(maxsize=None)
def sym_index_of(n: int, p: int) -> dict:
    return {idx: a for a, idx in enumerate(sym_indices(n, p))}


def multiplicity(index: tuple[int, ...]) -> int:
    """Number of distinct permutations of a multi-index."""
    m = math.factorial(len(index))
    for i in set(index):
        m //= math.factorial(index.count(i))
    return m


@lru_cache(maxsize=None)
def multiplicities(n: int, p: int) -> np.ndarray:
    out = np.array([multiplicity(I) for I in sym_indices(n, p)], dtype=float)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def expand_matrix(n: int, p: int) -> np.ndarray:
    """(n^p, m) matrix taking monomial coordinates to the full tensor (flattened)."""
    m = sym_dim(n, p)
    E = np.zeros((n**p, m))
    pos = sym_index_of(n, p)
    for flat in range(n**p):
        J = np.unravel_index(flat, (n,) * p) if p else ()
        E[flat, pos[tuple(sorted(J))]] = 1.0
    E.flags.writeable = False
    return E


@lru_cache(maxsize=None)
def restrict_matrix(n: int, p: int) -> np.ndarray:
    """(m, n^p) matrix averaging a full tensor onto monomial coordinates.

    Applied to any full tensor this returns the monomial coordinates of its
    full symmetrization; composed with expand_matrix it is the identity.
    """
    m = sym_dim(n, p)
    R = np.zeros((m, n**p))
    pos = sym_index_of(n, p)
    for flat in range(n**p):
        J = np.unravel_index(flat, (n,) * p) if p else ()
        I = tuple(sorted(J))
        R[pos[I], flat] = 1.0 / multiplicity(I)
    R.flags.writeable = False
    return R


# ---------------------------------------------------------------------------
# metric at a point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricAtPoint:
    """An SPD inner product on the fiber, with its inverse and volume factor."""

    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: float

    def validate(self) -> None:
        n = self.g.shape[0]
        if self.g.shape != (n, n) or not np.allclose(self.g, self.g.T, atol=1e-12):
            raise ValueError("metric must be a symmetric square matrix")
        if np.max(np.abs(self.g @ self.g_inv - np.eye(n))) > 1e-12:
            raise ValueError("g_inv is not the inverse of g to 1e-12")
        if np.min(np.linalg.eigvalsh(self.g)) <= 0:
            raise ValueError("metric is not positive definite")
        if self.sqrt_det <= 0:
            raise ValueError("sqrt_det must be positive")


def metric_at_point(g: np.ndarray) -> MetricAtPoint:
    g = np.asarray(g, dtype=float)
    mp = MetricAtPoint(g=g, g_inv=np.linalg.inv(g), sqrt_det=float(np.sqrt(np.linalg.det(g))))
    mp.validate()
    return mp


def flat_metric(n: int) -> MetricAtPoint:
    return MetricAtPoint(g=np.eye(n), g_inv=np.eye(n), sqrt_det=1.0)


# ---------------------------------------------------------------------------
# tensors in monomial coordinates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberTensor:
    """Symmetric p-tensor stored as one coefficient per nondecreasing index."""

    n: int
    rank: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (sym_dim(self.n, self.rank),):
            raise ValueError("coefficient count does not match sym_dim")

    def full(self) -> np.ndarray:
        """Expand to the full (n,)*p array."""
        out = expand_matrix(self.n, self.rank) @ self.coeffs
        return out.reshape((self.n,) * self.rank)


def symmetrize(T: np.ndarray) -> FiberTensor:
    """Average a full covariant q-tensor over all slot permutations."""
    q = T.ndim
    if q > 6:
        raise ValueError("symmetrize supports at most 6 slots")
    n = T.shape[0] if q else 1
    if q == 0:
        return FiberTensor(n=1, rank=0, coeffs=np.asarray(T, dtype=float).reshape(1))
    coeffs = restrict_matrix(n, q) @ np.asarray(T, dtype=float).reshape(-1)
    return FiberTensor(n=n, rank=q, coeffs=coeffs)


@lru_cache(maxsize=None)
def _trace_matrix_flat(n: int, p: int) -> np.ndarray:
    m_out, m_in = sym_dim(n, p - 2), sym_dim(n, p)
    pos_in = sym_index_of(n, p)
    T = np.zeros((m_out, m_in))
    for b, K in enumerate(sym_indices(n, p - 2)):
        for a in range(n):
            T[b, pos_in[tuple(sorted((a, a) + K))]] += 1.0
    T.flags.writeable = False
    return T


def trace_matrix(n: int, p: int, g_inv: np.ndarray | None = None) -> np.ndarray:
    """Matrix of the metric trace over two slots, rank p -> rank p-2 coordinates."""
    if p < 2:
        raise ValueError("trace needs rank >= 2")
    if g_inv is None or np.allclose(g_inv, np.eye(n), atol=0):
        return _trace_matrix_flat(n, p)
    m_out, m_in = sym_dim(n, p - 2), sym_dim(n, p)
    pos_in = sym_index_of(n, p)
    T = np.zeros((m_out, m_in))
    for b, K in enumerate(sym_indices(n, p - 2)):
        for a in range(n):
            for c in range(n):
                T[b, pos_in[tuple(sorted((a, c) + K))]] += g_inv[a, c]
    return T


def trace(phi: FiberTensor, g: MetricAtPoint) -> FiberTensor:
    """Contract the first two slots with the inverse metric."""
    T = trace_matrix(phi.n, phi.rank, g.g_inv)
    return FiberTensor(n=phi.n, rank=phi.rank - 2, coeffs=T @ phi.coeffs)


@lru_cache(maxsize=None)
def _insert_matrix_flat(n: int, q: int) -> np.ndarray:
    m_out, m_in = sym_dim(n, q), sym_dim(n, q - 2)
    pos_in = sym_index_of(n, q - 2)
    M = np.zeros((m_out, m_in))
    for a, J in enumerate(sym_indices(n, q)):
        for s in range(q):
            for t in range(s + 1, q):
                if J[s] == J[t]:
                    rest = J[:s] + J[s + 1 : t] + J[t + 1 :]
                    M[a, pos_in[rest]] += 1.0 / q
    M.flags.writeable = False
    return M


def insert_matrix(n: int, q: int, g: np.ndarray | None = None) -> np.ndarray:
    """Matrix of the metric insertion, rank q-2 -> rank q coordinates.

    Normalization: average of g_{J_a J_b} psi_{rest} over all index pairs
    (a, b) with weight 1/q.  At output rank 3 this reproduces the three-term
    cyclic average exactly; for higher ranks it is the unique totally
    symmetric extension proportional to Sym(g (x) psi), and it is the
    normalization under which the first gradient is trace-free (the
    arbitration test lives in the gradients module).
    """
    if q < 2:
        raise ValueError("insertion needs output rank >= 2")
    if g is None or np.allclose(g, np.eye(n), atol=0):
        return _insert_matrix_flat(n, q)
    m_out, m_in = sym_dim(n, q), sym_dim(n, q - 2)
    pos_in = sym_index_of(n, q - 2)
    M = np.zeros((m_out, m_in))
    for a, J in enumerate(sym_indices(n, q)):
        for s in range(q):
            for t in range(s + 1, q):
                rest = J[:s] + J[s + 1 : t] + J[t + 1 :]
                M[a, pos_in[rest]] += g[J[s], J[t]] / q
    return M


def metric_insert(psi: FiberTensor, g: MetricAtPoint) -> FiberTensor:
    """Symmetric metric insertion: rank p-1 input, rank p+1 output."""
    q = psi.rank + 2
    M = insert_matrix(psi.n, q, g.g)
    return FiberTensor(n=psi.n, rank=q, coeffs=M @ psi.coeffs)


def metric_insert_cyclic_full(psi: FiberTensor, g: MetricAtPoint) -> np.ndarray:
    """Literal adjacent-pair cyclic insertion, returned as a full array.

    For output rank 3 this equals the symmetric insertion; for higher ranks it
    is not totally symmetric.  Kept only to measure the gap between the two
    conventions.
    """
    n, q = psi.n, psi.rank + 2
    psi_full = psi.full()
    out = np.zeros((n,) * q)
    idx = np.indices((n,) * q).reshape(q, -1).T
    flat = out.reshape(-1)
    for row, J in enumerate(idx):
        acc = 0.0
        for a in range(q):
            b = (a + 1) % q
            rest = tuple(J[c] for c in range(q) if c not in (a, b))
            acc += g.g[J[a], J[b]] * psi_full[rest]
        flat[row] = acc / q
    return out


@lru_cache(maxsize=None)
def _gram_flat(n: int, p: int) -> np.ndarray:
    G = np.diag(multiplicities(n, p))
    G.flags.writeable = False
    return G


def gram_matrix(n: int, p: int, g_inv: np.ndarray | None = None) -> np.ndarray:
    """Gram matrix of the monomial coordinates under the induced inner product."""
    if g_inv is None or np.allclose(g_inv, np.eye(n), atol=0):
        return _gram_flat(n, p)
    if p == 0:
        return np.eye(1)
    E = expand_matrix(n, p)
    K = g_inv
    for _ in range(p - 1):
        K = np.kron(K, g_inv)
    return E.T @ K @ E


def fiber_inner(phi: FiberTensor, psi: FiberTensor, g: MetricAtPoint) -> float:
    """Full contraction of all slots with the inverse metric."""
    if phi.rank != psi.rank or phi.n != psi.n:
        raise ValueError("fiber_inner needs tensors of equal rank and dimension")
    G = gram_matrix(phi.n, phi.rank, g.g_inv)
    return float(phi.coeffs @ G @ psi.coeffs)


def tracefree_project(phi: FiberTensor, g: MetricAtPoint) -> FiberTensor:
    """Orthogonal projection onto the trace-free subspace.

    The pure-trace part is written as a metric insertion of an unknown
    lower-rank tensor and solved for; no closed-form coefficients are
    transcribed, so the construction is correct for every (n, p).
    """
    n, p = phi.n, phi.rank
    if p < 2:
        return phi
    T = trace_matrix(n, p, g.g_inv)
    Ins = insert_matrix(n, p, g.g)
    chi = np.linalg.solve(T @ Ins, T @ phi.coeffs)
    return FiberTensor(n=n, rank=p, coeffs=phi.coeffs - Ins @ chi)


# ---------------------------------------------------------------------------
# trace-free bases
# ---------------------------------------------------------------------------

def _orthonormalize(columns: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalization of columns w.r.t. a Gram matrix."""
    M = columns.T @ gram @ columns
    w, V = np.linalg.eigh(M)
    if np.min(w) <= 1e-12 * np.max(w):
        raise FiberAlgebraError("degenerate span in orthonormalization")
    return columns @ (V / np.sqrt(w)) @ V.T


@lru_cache(maxsize=None)
def tracefree_basis(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed flat-orthonormal basis of the trace-free subspace.

    Returns (expand, compress): expand is (m, t) with orthonormal columns in
    the flat induced inner product; compress = expand^T @ Gram is its left
    inverse, and expand @ compress is the flat trace-free projection.
    """
    m = sym_dim(n, p)
    if p < 2:
        B = np.eye(m)
    else:
        ns = scipy.linalg.null_space(_trace_matrix_flat(n, p))
        if ns.shape[1] != tracefree_dim(n, p):
            raise FiberAlgebraError(f"null space dimension mismatch at (n={n}, p={p})")
        B = _orthonormalize(ns, _gram_flat(n, p))
    C = B.T @ _gram_flat(n, p)
    B.flags.writeable = False
    C.flags.writeable = False
    return B, C


def tracefree_basis_metric(n: int, p: int, g: MetricAtPoint) -> np.ndarray:
    """Basis of the g-trace-free subspace, orthonormal in the g inner product."""
    m = sym_dim(n, p)
    if p < 2:
        cols = np.eye(m)
    else:
        cols = scipy.linalg.null_space(trace_matrix(n, p, g.g_inv))
        if cols.shape[1] != tracefree_dim(n, p):
            raise FiberAlgebraError("g-trace-free null space dimension mismatch")
    return _orthonormalize(cols, gram_matrix(n, p, g.g_inv))


# ---------------------------------------------------------------------------
# constant structure tensors used by the field operators
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def slot_replace_tensor(n: int, p: int) -> np.ndarray:
    """Q[A,j,k,B]: sum over slots of T^k_{J_a} phi_{J with a -> k} in coordinates.

    For any n x n matrix T (e.g. a Christoffel slice), the symmetric-slot
    action  phi_J -> sum_a T^k_{J_a} phi_{J|a->k}  is  einsum('jk,AjkB,B->A',
    T, Q, phi).
    """
    m = sym_dim(n, p)
    pos = sym_index_of(n, p)
    Q = np.zeros((m, n, n, m))
    for A, J in enumerate(sym_indices(n, p)):
        for a in range(p):
            for k in range(n):
                B = pos[tuple(sorted(J[:a] + (k,) + J[a + 1 :]))]
                Q[A, J[a], k, B] += 1.0
    Q.flags.writeable = False
    return Q


@lru_cache(maxsize=None)
def double_slot_replace_tensor(n: int, p: int) -> np.ndarray:
    """Q2[A,j,k,l,s,B]: sum over ordered slot pairs a != b of
    T^{k s}_{J_a J_b} phi_{J|a->k, b->s}, as einsum('jkls,AjklsB,B->A', T, Q2, phi)."""
    m = sym_dim(n, p)
    pos = sym_index_of(n, p)
    Q2 = np.zeros((m, n, n, n, n, m))
    for A, J in enumerate(sym_indices(n, p)):
        for a in range(p):
            for b in range(p):
                if a == b:
                    continue
                for k in range(n):
                    for s in range(n):
                        L = list(J)
                        L[a] = k
                        L[b] = s
                        B = pos[tuple(sorted(L))]
                        Q2[A, J[a], k, J[b], s, B] += 1.0
    Q2.flags.writeable = False
    return Q2


@lru_cache(maxsize=None)
def div_contract_tensor(n: int, p: int) -> np.ndarray:
    """Kc[B,i,A]: (flat) contraction of a covariant slot into symmetric slots,
    X_{i, iK} summed over i, rank p -> rank p-1 coordinates."""
    m_out, m_in = sym_dim(n, p - 1), sym_dim(n, p)
    pos_in = sym_index_of(n, p)
    Kc = np.zeros((m_out, n, m_in))
    for B, K in enumerate(sym_indices(n, p - 1)):
        for i in range(n):
            Kc[B, i, pos_in[tuple(sorted((i,) + K))]] += 1.0
    Kc.flags.writeable = False
    return Kc


@lru_cache(maxsize=None)
def sym_insert_cov_tensor(n: int, p: int) -> np.ndarray:
    """Sm[J,i,A]: symmetrization of a covariant slot into symmetric slots,
    (1/(p+1)) sum_a X_{J_a, J\\a}, rank (1, p) -> rank p+1 coordinates."""
    m_out, m_in = sym_dim(n, p + 1), sym_dim(n, p)
    pos_in = sym_index_of(n, p)
    Sm = np.zeros((m_out, n, m_in))
    for Jidx, J in enumerate(sym_indices(n, p + 1)):
        for a in range(p + 1):
            rest = J[:a] + J[a + 1 :]
            Sm[Jidx, J[a], pos_in[rest]] += 1.0 / (p + 1)
    Sm.flags.writeable = False
    return Sm


@lru_cache(maxsize=None)
def slice_first_tensor(n: int, p: int) -> np.ndarray:
    """Sl[i,K,A]: fix the first slot of a symmetric rank-p tensor to i,
    leaving rank p-1 coordinates."""
    m_out, m_in = sym_dim(n, p - 1), sym_dim(n, p)
    pos_in = sym_index_of(n, p)
    Sl = np.zeros((n, m_out, m_in))
    for i in range(n):
        for K, Kidx in sym_index_of(n, p - 1).items():
            Sl[i, Kidx, pos_in[tuple(sorted((i,) + K))]] = 1.0
    Sl.flags.writeable = False
    return Sl


# ---------------------------------------------------------------------------
# the irreducible projectors on T* (x) S0^p
# ---------------------------------------------------------------------------

def _insert_map_columns(n: int, p: int, g: MetricAtPoint, basis_lower: np.ndarray) -> np.ndarray:
    """Columns (in (cov, trace-free) coordinates) of the equivariant injection
    of rank p-1 trace-free tensors into T* (x) S0^p.

    For psi trace-free of rank p-1 the map is
        Sym_J(g_{i J_1} psi_{rest})  -  (2/(n+2(p-2))) (g-insert of psi_i)_J
    whose J-trace vanishes; for p = 1 the correction term is absent.
    """
    m_p = sym_dim(n, p)
    Bp = tracefree_basis_metric(n, p, g)
    compress = Bp.T @ gram_matrix(n, p, g.g_inv)
    t_low = basis_lower.shape[1]
    cols = np.zeros((n * Bp.shape[1], t_low))
    R = restrict_matrix(n, p)
    Sl = slice_first_tensor(n, p - 1) if p >= 2 else None
    Ins = insert_matrix(n, p, g.g) if p >= 2 else None
    for c in range(t_low):
        psi = FiberTensor(n=n, rank=p - 1, coeffs=basis_lower[:, c])
        psi_full = psi.full()
        for i in range(n):
            outer = np.tensordot(g.g[i], psi_full, axes=0) if p >= 2 else g.g[i] * psi_full
            mono = R @ outer.reshape(-1)
            if p >= 2:
                psi_i = np.einsum("KA,A->K", Sl[i], psi.coeffs)
                mono = mono - (2.0 / (n + 2 * (p - 2))) * (Ins @ psi_i)
            cols[i * Bp.shape[1] : (i + 1) * Bp.shape[1], c] = compress @ mono
    return cols


@dataclass(frozen=True)
class FiberProjectors:
    """Orthogonal projectors onto the three irreducible summands of T* (x) S0^p.

    Matrices act on coordinates over an orthonormal basis of the fiber; use
    to_ortho/from_ortho to map (covariant index, trace-free coordinate)
    vectors in and out.  pi_A projects onto the embedded rank p+1 trace-free
    tensors, pi_B onto the metric-insertion image of rank p-1, pi_C onto the
    remainder.
    """

    n: int
    p: int
    pi_A: np.ndarray
    pi_B: np.ndarray
    pi_C: np.ndarray
    to_ortho: np.ndarray
    from_ortho: np.ndarray
    basis_expand: np.ndarray

    def apply_coords(self, which: str, x: np.ndarray) -> np.ndarray:
        """Apply a projector to (n * t,) coordinates over e_i (x) basis_expand."""
        P = {"A": self.pi_A, "B": self.pi_B, "C": self.pi_C}[which]
        return self.from_ortho @ (P @ (self.to_ortho @ x))

    def validate(self) -> dict:
        """Residuals for idempotency, self-adjointness, completeness, and ranks."""
        out = {}
        N = self.pi_A.shape[0]
        eye = np.eye(N)
        for name, P in (("A", self.pi_A), ("B", self.pi_B), ("C", self.pi_C)):
            out[f"idempotent_{name}"] = float(np.max(np.abs(P @ P - P)))
            out[f"symmetric_{name}"] = float(np.max(np.abs(P - P.T)))
            out[f"rank_{name}"] = int(round(np.trace(P)))
        out["completeness"] = float(np.max(np.abs(self.pi_A + self.pi_B + self.pi_C - eye)))
        out["cross_AB"] = float(np.max(np.abs(self.pi_A @ self.pi_B)))
        out["cross_AC"] = float(np.max(np.abs(self.pi_A @ self.pi_C)))
        out["cross_BC"] = float(np.max(np.abs(self.pi_B @ self.pi_C)))
        expected = {
            "A": tracefree_dim(self.n, self.p + 1),
            "B": tracefree_dim(self.n, self.p - 1),
        }
        expected["C"] = self.n * tracefree_dim(self.n, self.p) - expected["A"] - expected["B"]
        for name, dim in expected.items():
            if out[f"rank_{name}"] != dim:
                raise FiberAlgebraError(
                    f"projector {name} rank {out[f'rank_{name}']} != expected {dim}"
                )
        return out


def _orth_columns(cols: np.ndarray, cutoff: float = 1e-10) -> np.ndarray:
    U, s, _ = np.linalg.svd(cols, full_matrices=False)
    r = int(np.sum(s > cutoff * s[0]))
    return U[:, :r]


def build_projectors(n: int, p: int, g: MetricAtPoint | None = None) -> FiberProjectors:
    """Construct the three orthogonal projectors on T* (x) S0^p for a metric.

    The rank p+1 summand is spanned by slot-regrouped trace-free tensors, the
    rank p-1 summand by trace-type insertions; both spans are orthonormalized
    by SVD (cutoff 1e-10) and must come out mutually orthogonal to 1e-8,
    otherwise the fiber algebra is inconsistent and this raises.
    """
    if n < 2 or p < 1:
        raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    if g is None:
        g = flat_metric(n)
    Bp = tracefree_basis_metric(n, p, g)
    t = Bp.shape[1]
    N = n * t
    compress = Bp.T @ gram_matrix(n, p, g.g_inv)

    # coordinates x[i, alpha] over e_i (x) Bp[:, alpha]; Gram = g_inv (x) I
    W = np.kron(g.g_inv, np.eye(t))
    w_eigs, w_vecs = np.linalg.eigh(W)
    to_ortho = (w_vecs * np.sqrt(w_eigs)) @ w_vecs.T
    from_ortho = (w_vecs / np.sqrt(w_eigs)) @ w_vecs.T

    # span of the embedded rank p+1 trace-free tensors
    B_hi = tracefree_basis_metric(n, p + 1, g)
    cols_A = np.zeros((N, B_hi.shape[1]))
    for c in range(B_hi.shape[1]):
        full = FiberTensor(n=n, rank=p + 1, coeffs=B_hi[:, c]).full().reshape(n, -1)
        R = restrict_matrix(n, p)
        for i in range(n):
            cols_A[i * t : (i + 1) * t, c] = compress @ (R @ full[i])

    # span of the metric insertions of rank p-1 trace-free tensors
    B_lo = tracefree_basis_metric(n, p - 1, g)
    cols_B = _insert_map_columns(n, p, g, B_lo)

    Qa = _orth_columns(to_ortho @ cols_A)
    Qb = _orth_columns(to_ortho @ cols_B)
    if Qa.shape[1] != tracefree_dim(n, p + 1) or Qb.shape[1] != tracefree_dim(n, p - 1):
        raise FiberAlgebraError("constructed span has unexpected dimension")
    cross = float(np.max(np.abs(Qa.T @ Qb)))
    if cross > 1e-8:
        raise FiberAlgebraError(f"irreducible spans are not orthogonal: {cross:.2e}")

    pi_A = Qa @ Qa.T
    pi_B = Qb @ Qb.T
    pi_C = np.eye(N) - pi_A - pi_B
    proj = FiberProjectors(
        n=n,
        p=p,
        pi_A=pi_A,
        pi_B=pi_B,
        pi_C=pi_C,
        to_ortho=to_ortho,
        from_ortho=from_ortho,
        basis_expand=Bp,
    )
    proj.validate()
    return proj


@lru_cache(maxsize=None)
def flat_projector_matrices(n: int, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat-metric projector matrices acting directly on (n*t,) field coordinates.

    For the flat (and conformally rescaled) inner product the coordinate Gram
    is a positive scalar times the identity, so the projectors are plain
    symmetric matrices, constant across a grid.
    """
    proj = build_projectors(n, p, flat_metric(n))
    for name in ("pi_A", "pi_B", "pi_C"):
        getattr(proj, name).flags.writeable = False
    return proj.pi_A, proj.pi_B, proj.pi_C


@lru_cache(maxsize=None)
def embed_matrix(n: int, p: int) -> np.ndarray:
    """(n*t_p, t_{p+1}) isometric slot-regrouping of trace-free rank p+1 tensors
    into T* (x) S0^p over the fixed flat bases."""
    B_hi, _ = tracefree_basis(n, p + 1)
    _, C_p = tracefree_basis(n, p)
    t = C_p.shape[0]
    R = restrict_matrix(n, p)
    out = np.zeros((n * t, B_hi.shape[1]))
    for c in range(B_hi.shape[1]):
        full = (expand_matrix(n, p + 1) @ B_hi[:, c]).reshape(n, -1)
        for i in range(n):
            out[i * t : (i + 1) * t, c] = C_p @ (R @ full[i])
    out.flags.writeable = False
    return out
