"""Objective terms acting on feature batches, each with its exact gradient.

A batch ``Z`` is an ``N x d`` array: rows are samples, columns are feature
dimensions. Every function returns a :class:`LossValue` whose ``gradient``
has the shape of the (first) input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

SELECTORS = ("none", "r2r2", "centered-cov", "rr-only", "var-only")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Regularization coefficients.

    ``lambda_rr``, ``lambda_var`` and ``v_th`` default to 0.01, 0.01 and 1.0,
    the values used across all benchmark tasks. ``lambda_inv`` and
    ``lambda_cov`` only enter :func:`vicreg_total`. The ``centered-cov``
    ablation swaps the centered covariance term in for RR and keeps
    ``lambda_rr`` as its weight.
    """

    lambda_rr: float = 0.01
    lambda_var: float = 0.01
    v_th: float = 1.0
    lambda_inv: float = 1.0
    lambda_cov: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise LossError(f"{name} must be finite and non-negative, got {value}")
        if self.v_th <= 0:
            raise LossError(f"v_th must be positive, got {self.v_th}")


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray
    other_gradient: np.ndarray | None = None
    terms: dict = field(default_factory=dict)


def _batch(z, name="Z", min_rows=1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise LossError(f"{name} must be 2-D, got shape {z.shape}")
    if z.shape[0] < min_rows:
        raise LossError(f"{name} needs at least {min_rows} rows, got {z.shape[0]}")
    return z


def _same_shape(a, b):
    if a.shape != b.shape:
        raise LossError(f"shape mismatch: {a.shape} vs {b.shape}")


def spl_loss(predicted, target) -> LossValue:
    """Mean squared prediction error against a stop-gradient target."""
    p, t = _batch(predicted, "predicted"), _batch(target, "target")
    _same_shape(p, t)
    diff = p - t
    n = p.shape[0]
    return LossValue(float(np.sum(diff * diff) / n), (2.0 / n) * diff, np.zeros_like(t))


def invariance_loss(za, zb) -> LossValue:
    a, b = _batch(za, "ZA"), _batch(zb, "ZB")
    _same_shape(a, b)
    diff = a - b
    n = a.shape[0]
    grad = (2.0 / n) * diff
    return LossValue(float(np.sum(diff * diff) / n), grad, -grad)


def variance_loss(z, v_th: float = 1.0, eps: float = 0.0) -> LossValue:
    """Hinge on the per-dimension standard deviation.

    ``eps`` is added to the variance under the square root. With the default
    ``eps=0`` a zero-variance column gets the zero subgradient; elsewhere the
    gradient is bounded by ``1 / (d * sqrt(N - 1))`` so no smoothing is needed.
    """
    z = _batch(z, min_rows=2)
    n, d = z.shape
    centered = z - z.mean(axis=0)
    std = np.sqrt(np.sum(centered * centered, axis=0) / (n - 1) + eps)
    hinge = v_th - std
    active = hinge > 0
    value = float(np.sum(hinge[active]) / d)
    scale = np.zeros(d)
    ok = active & (std > 0)
    scale[ok] = -1.0 / (d * (n - 1) * std[ok])
    return LossValue(value, centered * scale)


def _off_diagonal_sq(c: np.ndarray) -> tuple[float, np.ndarray]:
    off = c - np.diag(np.diag(c))
    return float(np.sum(off * off)), off


def covariance_loss_centered(z) -> LossValue:
    """Squared off-diagonal entries of the mean-subtracted covariance, over ``d``."""
    z = _batch(z, min_rows=2)
    n, d = z.shape
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    total, off = _off_diagonal_sq(cov)
    grad = centered @ off * (4.0 / (d * (n - 1)))
    return LossValue(total / d, grad - grad.mean(axis=0))


def rr_loss_noncentered(z) -> LossValue:
    """Redundancy reduction on the raw second-moment matrix ``Z^T Z / (N - 1)``.

    No mean is subtracted, so a constant offset shared by all rows is
    penalized rather than ignored.
    """
    z = _batch(z, min_rows=2)
    n, d = z.shape
    if d < 2:
        raise LossError(f"redundancy reduction needs d >= 2, got {d}")
    corr = z.T @ z / (n - 1)
    total, off = _off_diagonal_sq(corr)
    norm = d * (d - 1)
    return LossValue(total / norm, z @ off * (4.0 / (norm * (n - 1))))


def r2r2_loss(spl: LossValue, z, w: LossWeights, eps: float = 0.0) -> LossValue:
    """SPL term plus weighted non-centered RR and variance terms.

    ``spl.gradient`` must already be expressed with respect to ``z`` (callers
    backpropagate through the predictor first).
    """
    z = _batch(z, min_rows=2)
    _same_shape(np.asarray(spl.gradient), z)
    reg = regularizer(z, "r2r2", w, eps)
    return LossValue(
        spl.value + reg.value,
        spl.gradient + reg.gradient,
        terms={"spl": spl.value, **reg.terms},
    )


def regularizer(z, selector: str, w: LossWeights, eps: float = 0.0) -> LossValue:
    """Weighted regularizer for one of the ablation selectors.

    Terms with a zero weight are skipped entirely so a zero-weighted run is
    bit-identical to the unregularized one. ``terms`` holds the weighted
    contributions.
    """
    if selector not in SELECTORS:
        raise LossError(f"unknown regularizer selector {selector!r}")
    z = np.asarray(z, dtype=np.float64)
    plan = {
        "none": (),
        "r2r2": (("rr", w.lambda_rr), ("var", w.lambda_var)),
        "centered-cov": (("cov", w.lambda_rr), ("var", w.lambda_var)),
        "rr-only": (("rr", w.lambda_rr),),
        "var-only": (("var", w.lambda_var),),
    }[selector]
    value = 0.0
    grad = np.zeros_like(z)
    terms = {}
    for name, weight in plan:
        if weight == 0.0:
            continue
        if name == "rr":
            term = rr_loss_noncentered(z)
        elif name == "cov":
            term = covariance_loss_centered(z)
        else:
            term = variance_loss(z, w.v_th, eps)
        terms[name] = weight * term.value
        value += weight * term.value
        grad += weight * term.gradient
    return LossValue(value, grad, terms=terms)


def vicreg_total(za, zb, w: LossWeights, eps: float = 0.0) -> LossValue:
    """Invariance between views plus variance and centered covariance.

    Variance and covariance are evaluated on each view and averaged.
    ``gradient`` is with respect to ``za`` and ``other_gradient`` to ``zb``.
    """
    a, b = _batch(za, "ZA", 2), _batch(zb, "ZB", 2)
    _same_shape(a, b)
    inv = invariance_loss(a, b)
    var_a, var_b = variance_loss(a, w.v_th, eps), variance_loss(b, w.v_th, eps)
    cov_a, cov_b = covariance_loss_centered(a), covariance_loss_centered(b)
    terms = {
        "inv": w.lambda_inv * inv.value,
        "var": w.lambda_var * 0.5 * (var_a.value + var_b.value),
        "cov": w.lambda_cov * 0.5 * (cov_a.value + cov_b.value),
    }
    grad_a = (
        w.lambda_inv * inv.gradient
        + 0.5 * w.lambda_var * var_a.gradient
        + 0.5 * w.lambda_cov * cov_a.gradient
    )
    grad_b = (
        w.lambda_inv * inv.other_gradient
        + 0.5 * w.lambda_var * var_b.gradient
        + 0.5 * w.lambda_cov * cov_b.gradient
    )
    return LossValue(sum(terms.values()), grad_a, grad_b, terms)
