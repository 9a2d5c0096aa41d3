"""Direct optimization of the SPL trace objective over orthonormal bases.

The objective is ``||Phi^T P Phi||_F^2`` subject to ``Phi^T Phi = I``. For a
symmetric ``P`` its maximizers span the top-|lambda| eigenvectors. A
reversible but non-symmetric chain is only self-adjoint in the inner product
weighted by its stationary distribution ``d``; passing ``state_weights=d``
runs the ascent in that geometry (``Psi = D^1/2 Phi``, operator
``D^1/2 P D^-1/2``), which is the setting where recovery of the right
eigenvectors holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .numerics import DimensionError, check_row_stochastic, constant_overlap

MODES = ("centered", "noncentered")


@dataclass(frozen=True)
class TraceAscentResult:
    phi: np.ndarray
    """Orthonormal basis (``Phi^T Phi = I``) of the recovered subspace."""
    objectives: np.ndarray
    """Objective after every accepted iteration, starting with the initial value."""
    max_orthogonality_error: float


def trace_objective(p, phi) -> float:
    m = phi.T @ p @ phi
    return float(np.sum(m * m))


def _qr_retract(a: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


class _Problem:
    """Objective, gradient and retraction in the (possibly weighted) geometry."""

    def __init__(self, p, state_weights, mode, penalty_weight):
        n = p.shape[0]
        if state_weights is None:
            root = np.full(n, 1.0)
        else:
            d = np.asarray(state_weights, dtype=np.float64)
            if d.shape != (n,) or np.any(d <= 0):
                raise DimensionError("state_weights must be a positive vector over states")
            root = np.sqrt(d / d.sum())
        self.root = root
        self.op = root[:, None] * p / root[None, :]
        # Constant mode of P expressed in Psi coordinates.
        self.const = root / np.linalg.norm(root)
        self.centered = mode == "centered"
        self.penalty_weight = penalty_weight

    def center(self, psi):
        return psi - np.outer(self.const, self.const @ psi)

    def value_grad(self, psi):
        rep = self.center(psi) if self.centered else psi
        m = rep.T @ self.op @ rep
        value = float(np.sum(m * m))
        grad = 2.0 * (self.op @ rep @ m.T + self.op.T @ rep @ m)
        if self.penalty_weight and rep.shape[1] >= 2:
            pen = losses.covariance_loss_centered(rep) if self.centered else losses.rr_loss_noncentered(rep)
            value -= self.penalty_weight * pen.value
            grad -= self.penalty_weight * pen.gradient
        if self.centered:
            grad = self.center(grad)
        return value, grad

    def value(self, psi):
        return self.value_grad(psi)[0]

    def to_phi(self, psi):
        return _qr_retract(psi / self.root[:, None])


def _ascend(problem: _Problem, psi, iterations, step_size, tol):
    value, grad = problem.value_grad(psi)
    history = [value]
    worst = float(np.abs(psi.T @ psi - np.eye(psi.shape[1])).max())
    eta = step_size
    stalled = 0
    for _ in range(iterations):
        while True:
            cand = _qr_retract(psi + eta * grad)
            cand_value = problem.value(cand)
            if cand_value >= value or eta < 1e-14:
                break
            eta *= 0.5
        if cand_value < value:
            break
        gain = cand_value - value
        psi = cand
        value, grad = problem.value_grad(psi)
        history.append(value)
        worst = max(worst, float(np.abs(psi.T @ psi - np.eye(psi.shape[1])).max()))
        eta = min(eta * 2.0, step_size * 1e3)
        stalled = stalled + 1 if gain <= tol * max(abs(value), 1.0) else 0
        if stalled >= 20:
            break
    return psi, np.array(history), worst


def trace_objective_ascent(
    p,
    k: int,
    iterations: int = 5000,
    step_size: float = 1.0,
    seed: int = 0,
    state_weights=None,
    restarts: int = 8,
    tol: float = 1e-15,
) -> TraceAscentResult:
    """Projected gradient ascent with thin-QR re-orthonormalization.

    A step that would lower the objective is halved until it does not, so the
    recorded objective sequence is non-decreasing. When ``P`` has negative
    eigenvalues, bases mixing the largest positive and most negative modes
    are local maxima, so the ascent runs from ``restarts`` random starts and
    keeps the best.
    """
    p = check_row_stochastic(p)
    n = p.shape[0]
    if not 1 <= k <= n:
        raise DimensionError(f"k must lie in [1, {n}], got {k}")
    problem = _Problem(p, state_weights, "noncentered", 0.0)
    psi, history, worst = _best_of(problem, n, k, seed, restarts, iterations, step_size, tol)
    phi = psi if state_weights is None else problem.to_phi(psi)
    return TraceAscentResult(phi, history, worst)


def _best_of(problem, n, k, seed, restarts, iterations, step_size, tol):
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        start = _qr_retract(rng.standard_normal((n, k)))
        run = _ascend(problem, start, iterations, step_size, tol)
        if best is None or run[1][-1] > best[1][-1]:
            best = run
    return best


def centering_conflict_experiment(
    p,
    k: int,
    mode: str,
    seed: int = 0,
    penalty_weight: float = 0.01,
    iterations: int = 5000,
    step_size: float = 1.0,
    state_weights=None,
    restarts: int = 8,
    tol: float = 1e-12,
) -> float:
    """Constant-mode overlap of the basis learned with or without zero-centering.

    In ``centered`` mode the representation entering the objective and the
    covariance penalty is the batch-centered one, as it is for a regularizer
    built on mean-subtracted features. ``noncentered`` mode uses the raw
    representation with the non-centered redundancy penalty.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    p = check_row_stochastic(p)
    n = p.shape[0]
    if not 1 <= k <= n:
        raise DimensionError(f"k must lie in [1, {n}], got {k}")
    problem = _Problem(p, state_weights, mode, penalty_weight)
    psi, _, _ = _best_of(problem, n, k, seed, restarts, iterations, step_size, tol)
    return constant_overlap(problem.to_phi(psi))
