"""Dense linear algebra used throughout the package.

Everything works on float64 numpy arrays. The eigen- and singular-value
solvers are Jacobi methods with round-robin (parallel) pair ordering, so one
sweep of ``n - 1`` rounds rotates ``n // 2`` disjoint column pairs at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-10
_JACOBI_MAX_SWEEPS = 100


class NumericsError(ValueError):
    """Base class for numerical precondition failures."""


class DimensionError(NumericsError):
    pass


class DomainError(NumericsError):
    pass


class DegenerateSpectrumError(NumericsError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name}: entries must be finite")
    return m


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray
    effective_rank: float
    degenerate: bool = False


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    @property
    def spectrum(self) -> SpectrumReport:
        return SpectrumReport(self.s, effective_rank(self.s))


@dataclass(frozen=True)
class EigenReport:
    """Eigenpairs of a row-stochastic matrix, sorted by descending ``|lambda|``.

    ``eigenvalues`` is real-valued when the chain is reversible; otherwise it
    may be complex and only the magnitudes are meaningful for callers that
    check the spectral radius.
    """

    eigenvalues: np.ndarray
    right_eigenvectors: np.ndarray
    residual_norm: float
    reversible: bool

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))


def centering_matrix(n: int) -> np.ndarray:
    if n < 1:
        raise DimensionError(f"centering matrix needs n >= 1, got {n}")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def center_rows_of(z) -> np.ndarray:
    """Subtract the batch (column) mean, i.e. return ``H @ Z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise DimensionError(f"cannot center an empty batch of shape {z.shape}")
    return z - z.mean(axis=0, keepdims=True)


def constant_mode_projector(n: int) -> np.ndarray:
    """Orthogonal projector onto ``span(1)``."""
    if n < 1:
        raise DimensionError(f"projector needs n >= 1, got {n}")
    return np.full((n, n), 1.0 / n)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament over an even number of slots; the dummy slot
    # (index n when n is odd) is dropped from every round.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotation(app, aqq, apq):
    """Jacobi rotation (c, s) that annihilates ``apq`` of a symmetric 2x2 block."""
    nonzero = apq != 0.0
    safe = np.where(nonzero, apq, 1.0)
    tau = (aqq - app) / (2.0 * safe)
    t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
    t = np.where(nonzero, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    return c, c * t


def eigh_jacobi(a, tol: float = 1e-15) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted descending by absolute value and the matching
    orthonormal eigenvectors as columns.
    """
    a = as_matrix(a).copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise DomainError("eigh_jacobi requires a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    rounds = _round_robin(n)
    scale = np.linalg.norm(a)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale or n == 1:
            break
        for p, q in rounds:
            c, s = _rotation(a[p, p], a[q, q], a[p, q])
            j = np.eye(n)
            j[p, p] = c
            j[q, q] = c
            j[p, q] = s
            j[q, p] = -s
            a = j.T @ a @ j
            a = 0.5 * (a + a.T)
            v = v @ j
    else:
        raise NumericsError("Jacobi eigensolver did not converge")
    w = np.diag(a).copy()
    order = np.lexsort((-w, -np.abs(w)))
    return w[order], _fix_signs(v[:, order])


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry of every column made positive.
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def svd(z, tol: float = 1e-15) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi.

    For an ``m x n`` input returns ``u`` (m x r), ``s`` (r,), ``vt`` (r x n)
    with ``r = min(m, n)`` and singular values sorted descending.
    """
    z = as_matrix(z, "svd input")
    if z.shape[0] < z.shape[1]:
        r = svd(z.T, tol)
        return SvdResult(r.vt.T, r.s, r.u.T)
    # Work on a max-normalized copy so squared column norms neither
    # underflow nor overflow.
    scale = float(np.abs(z).max()) if z.size else 0.0
    a = z / scale if scale > 0 else z.copy()
    m, n = a.shape
    v = np.eye(n)
    rounds = _round_robin(n)
    # Columns below this squared norm are numerically zero; rotating them
    # against each other only shuffles rounding noise.
    floor = 1e-30 * float(np.sum(a * a))
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > floor)
            if not active.any():
                continue
            rotated = True
            gamma = np.where(active, gamma, 0.0)
            c, s = _rotation(alpha, beta, gamma)
            a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericsError("one-sided Jacobi SVD did not converge")
    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]
    u = np.zeros_like(a)
    positive = s > s[0] * 1e-15 if s[0] > 0 else np.zeros(n, dtype=bool)
    u[:, positive] = a[:, positive] / s[positive]
    if not positive.all():
        u = _complete_basis(u, positive)
        s = np.where(positive, s, 0.0)
    if scale > 0:
        s = s * scale
    return SvdResult(u, s, v.T)


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    # Replace columns for zero singular values with an orthonormal completion.
    m, r = u.shape
    q, _ = np.linalg.qr(np.hstack([u[:, keep], np.eye(m)]))
    out = u.copy()
    out[:, ~keep] = q[:, keep.sum() : keep.sum() + (~keep).sum()]
    return out


def effective_rank(singular_values) -> float:
    """Exponential of the Shannon entropy of the normalized spectrum."""
    s = np.asarray(singular_values, dtype=np.float64).ravel()
    if s.size == 0 or np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("singular values must be finite and non-negative")
    total = s.sum()
    if total <= 0.0:
        raise DegenerateSpectrumError("effective rank of an all-zero spectrum")
    p = s / total
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def spectrum(z) -> SpectrumReport:
    return svd(z).spectrum


def check_row_stochastic(p, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    p = as_matrix(p, "transition matrix")
    if p.shape[0] != p.shape[1]:
        raise DimensionError(f"transition matrix must be square, got {p.shape}")
    neg = np.nonzero((p < 0).any(axis=1))[0]
    if neg.size:
        raise DomainError(f"row {neg[0]} has negative entries")
    err = np.abs(p.sum(axis=1) - 1.0)
    bad = np.nonzero(err > tol)[0]
    if bad.size:
        raise DomainError(f"row {bad[0]} sums to {p[bad[0]].sum():.16g}, not 1")
    return p


def stationary_distribution(p) -> np.ndarray:
    """Left eigenvector of ``P`` for eigenvalue 1, normalized to sum 1."""
    p = check_row_stochastic(p)
    n = p.shape[0]
    lhs = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return d


def _is_reversible(p: np.ndarray, d: np.ndarray) -> bool:
    if np.any(d <= 0):
        return False
    flow = d[:, None] * p
    return bool(np.abs(flow - flow.T).max() <= 1e-12 * max(flow.max(), 1e-300))


def eig_row_stochastic(p) -> EigenReport:
    """Right eigenpairs of a row-stochastic matrix.

    Reversible chains are symmetrized as ``D^1/2 P D^-1/2`` and handed to the
    Jacobi solver, which keeps the spectrum exactly real. Other chains go
    through LAPACK's general eigensolver.
    """
    p = check_row_stochastic(p)
    d = stationary_distribution(p)
    reversible = _is_reversible(p, d)
    if reversible:
        root = np.sqrt(d)
        sym = root[:, None] * p / root[None, :]
        w, vecs = eigh_jacobi(0.5 * (sym + sym.T))
        vecs = vecs / root[:, None]
        vecs = _fix_signs(vecs / np.linalg.norm(vecs, axis=0))
    else:
        w, vecs = np.linalg.eig(p)
        order = np.lexsort((-w.real, -np.abs(w)))
        w, vecs = w[order], vecs[:, order]
        vecs = vecs / np.linalg.norm(vecs, axis=0)
        if np.all(np.abs(w.imag) == 0):
            w, vecs = w.real, _fix_signs(vecs.real)
    residual = float(np.abs(p @ vecs - vecs * w).max())
    return EigenReport(w, vecs, residual, reversible)


def orthonormal_basis(a, name: str = "matrix") -> np.ndarray:
    """Orthonormal basis for the column space; rejects rank-deficient input."""
    a = as_matrix(a, name)
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise DomainError(f"{name} columns are linearly dependent")
    return q


def principal_angles(a, b) -> np.ndarray:
    """Principal angles (radians, ascending) between ``span(A)`` and ``span(B)``.

    Cosines are used for large angles and sines for small ones so that angles
    near zero keep full precision.
    """
    qa = orthonormal_basis(a, "A")
    qb = orthonormal_basis(b, "B")
    if qa.shape[0] != qb.shape[0]:
        raise DimensionError("subspaces must live in the same ambient space")
    if qa.shape[1] < qb.shape[1]:
        qa, qb = qb, qa
    k = qb.shape[1]
    cos = np.clip(svd(qa.T @ qb).s[:k], 0.0, 1.0)
    sin = np.clip(svd(qb - qa @ (qa.T @ qb)).s[::-1][:k], 0.0, 1.0)
    angles = np.where(cos ** 2 < 0.5, np.arccos(cos), np.arcsin(sin))
    return np.sort(angles)


def constant_overlap(phi) -> float:
    """Norm of the projection of ``1/sqrt(n)`` onto the column space of ``phi``."""
    q = orthonormal_basis(phi, "Phi")
    n = q.shape[0]
    unit = np.full(n, 1.0 / np.sqrt(n))
    return float(min(1.0, np.linalg.norm(q.T @ unit)))


def save_csv(path, m) -> None:
    np.savetxt(Path(path), as_matrix(m), delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    return as_matrix(np.loadtxt(Path(path), delimiter=",", ndmin=2))
