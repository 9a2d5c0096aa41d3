"""Randomized property suites behind ``splreg verify``.

Each suite returns :class:`Check` records holding the worst residual seen
over all random instances together with the tolerance it was held to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, nets
from .envs import make_gapped_reversible_chain, make_reversible_chain
from .numerics import centering_matrix, eig_row_stochastic
from .spectral import centering_conflict_experiment

SUITES = ("centering", "stochastic", "conflict", "gradients")


@dataclass(frozen=True)
class Check:
    name: str
    worst: float
    tolerance: float
    instances: int
    seconds: float
    higher_is_better: bool = False

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.worst):
            return False
        return self.worst > self.tolerance if self.higher_is_better else self.worst < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        rel = ">" if self.higher_is_better else "<"
        return (f"{status}  {self.name}: worst {self.worst:.3e} (need {rel} {self.tolerance:g}, "
                f"{self.instances} instances, {self.seconds:.2f}s)")


def _worst_over(name, tolerance, instances, fn: Callable[[int], float], higher_is_better=False) -> Check:
    start = time.perf_counter()
    values = [fn(i) for i in range(instances)]
    worst = min(values) if higher_is_better else max(values)
    return Check(name, float(worst), tolerance, instances, time.perf_counter() - start, higher_is_better)


# -- centering ---------------------------------------------------------------

def centering_suite(seed: int = 0, instances: int = 1000, chains: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    cases = [(int(rng.integers(1, 65)), float(rng.standard_normal() * 10.0 ** rng.uniform(-3, 3)))
             for _ in range(instances)]

    def annihilates(i):
        n, c = cases[i]
        return float(np.abs(centering_matrix(n) @ np.full(n, c)).max())

    def idempotent(i):
        h = centering_matrix(cases[i][0])
        return float(np.abs(h @ h - h).max())

    def symmetric(i):
        h = centering_matrix(cases[i][0])
        return float(np.abs(h - h.T).max())

    chain_rng = np.random.default_rng(seed + 1)
    chain_cases = [(int(chain_rng.integers(2, 33)), int(chain_rng.integers(2**31)),
                    float(chain_rng.uniform(0.5, 3.0))) for _ in range(chains)]

    def kills_constant_mode(i):
        n, s, temperature = chain_cases[i]
        p = make_reversible_chain(n, s, temperature).transitions[0]
        report = eig_row_stochastic(p)
        u = report.right_eigenvectors[:, int(np.argmin(np.abs(report.eigenvalues - 1.0)))]
        proj = np.outer(u, u) / (u @ u)
        phi = np.random.default_rng(s).standard_normal((n, int(1 + s % n)))
        return float(np.linalg.norm(centering_matrix(n) @ proj @ phi))

    return [
        _worst_over("H annihilates constant vectors |H c1|_inf", 1e-12, instances, annihilates),
        _worst_over("H idempotent |HH - H|_inf", 1e-12, instances, idempotent),
        _worst_over("H symmetric |H - H^T|_inf", 1e-12, instances, symmetric),
        _worst_over("H removes the top eigenmode |H Pi_u1 Phi|_F", 1e-10, chains, kills_constant_mode),
    ]


# -- stochastic --------------------------------------------------------------

def _random_stochastic(rng, n: int) -> np.ndarray:
    # Dirichlet rows with a random concentration; every entry stays positive.
    alpha = 10.0 ** rng.uniform(-1, 1)
    p = rng.gamma(alpha, size=(n, n)) + 1e-12
    return p / p.sum(axis=1, keepdims=True)


def stochastic_suite(seed: int = 0, instances: int = 200) -> list[Check]:
    rng = np.random.default_rng(seed)
    mats = []
    for i in range(instances):
        n = int(rng.integers(2, 33))
        if i % 4 == 3:
            mats.append(make_reversible_chain(n, int(rng.integers(2**31)), float(rng.uniform(0.5, 3))).transitions[0])
        else:
            mats.append(_random_stochastic(rng, n))
    reports = [eig_row_stochastic(p) for p in mats]

    def rows_sum_to_one(i):
        p = mats[i]
        return float(np.abs(p @ np.ones(p.shape[0]) - 1.0).max())

    def radius_excess(i):
        return reports[i].spectral_radius - 1.0

    def constant_eigvec(i):
        r = reports[i]
        u = r.right_eigenvectors[:, int(np.argmin(np.abs(r.eigenvalues - 1.0)))]
        u = np.real_if_close(u)
        return float(np.std(u) / abs(np.mean(u)))

    return [
        _worst_over("P1 = 1 |P1 - 1|_inf", 1e-12, instances, rows_sum_to_one),
        _worst_over("spectral radius excess max|lambda| - 1", 1e-10, instances, radius_excess),
        _worst_over("eigenvalue-1 eigenvector is constant (coef. of variation)", 1e-8, instances, constant_eigvec),
    ]


# -- conflict ----------------------------------------------------------------

def conflict_suite(seed: int = 0, chains: int = 10, n: int = 16, k: int = 3) -> list[Check]:
    problems = [make_gapped_reversible_chain(n, k, seed + i)[0].transitions[0] for i in range(chains)]

    def overlap(mode):
        return lambda i: centering_conflict_experiment(problems[i], k, mode, seed=seed + i)

    return [
        _worst_over("non-centered basis keeps the constant mode (overlap)", 0.9, chains,
                    overlap("noncentered"), higher_is_better=True),
        _worst_over("centered basis loses the constant mode (overlap)", 0.1, chains, overlap("centered")),
    ]


# -- gradients ---------------------------------------------------------------

def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        up = f(x)
        flat[j] = old - h
        down = f(x)
        flat[j] = old
        gflat[j] = (up - down) / (2.0 * h)
    return grad


def _random_batch(rng, rows=None, cols=None, kink_margin=1e-3):
    rows = rows or int(rng.integers(3, 9))
    cols = cols or int(rng.integers(2, 6))
    while True:
        z = rng.standard_normal((rows, cols)) * rng.uniform(0.3, 2.0, size=cols)
        # The variance hinge has a kink where a column std equals v_th = 1;
        # differences straddling it compare against a one-sided slope.
        if np.all(np.abs(z.std(axis=0, ddof=1) - 1.0) > kink_margin):
            return z


def _loss_cases():
    w = losses.LossWeights()

    def spl(rng):
        a = _random_batch(rng)
        b = rng.standard_normal(a.shape)
        return a, lambda z: losses.spl_loss(z, b)

    def var(rng):
        return _random_batch(rng), lambda z: losses.variance_loss(z, 1.0)

    def cov(rng):
        return _random_batch(rng), losses.covariance_loss_centered

    def rr(rng):
        return _random_batch(rng), losses.rr_loss_noncentered

    def inv(rng):
        a = _random_batch(rng)
        b = rng.standard_normal(a.shape)
        return a, lambda z: losses.invariance_loss(z, b)

    def composite(rng):
        z = _random_batch(rng)
        target = rng.standard_normal(z.shape)

        def f(x):
            return losses.r2r2_loss(losses.spl_loss(x, target), x, w)
        return z, f

    def selector(name):
        return lambda rng: (_random_batch(rng), lambda z: losses.regularizer(z, name, w))

    cases = {"spl": spl, "variance": var, "centered covariance": cov, "non-centered RR": rr,
             "invariance": inv, "R2R2 composite": composite}
    for name in losses.SELECTORS:
        cases[f"regularizer[{name}]"] = selector(name)
    return cases


def _composition_loss(encoder_flat, predictor_flat, setup):
    enc = nets.MlpParams(setup["enc"].sizes, setup["enc"].activations, encoder_flat)
    pred = nets.MlpParams(setup["pred"].sizes, setup["pred"].activations, predictor_flat)
    from .trainer import spl_gradients

    _, _, terms, _, _ = spl_gradients(
        enc, pred, setup["target"], setup["obs"], setup["states"], setup["actions"],
        setup["next"], setup["mask"], setup["selector"], setup["weights"], setup["normalize"],
    )
    return sum(terms.values())


def _composition_setup(rng, normalize: bool):
    n_obs, n_act, k = int(rng.integers(3, 7)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
    hidden = int(rng.integers(3, 7))
    act = ["tanh", "relu"][int(rng.integers(2))]
    enc = nets.init_params([n_obs, hidden, k], [act, "linear"], int(rng.integers(2**31)))
    pred = nets.init_params([k + n_act, hidden, k], [act, "linear"], int(rng.integers(2**31)))
    # Nonzero biases keep rectifier features off h = 0, where row
    # normalization is singular and finite differences are meaningless.
    for b in enc.biases + pred.biases:
        b[...] = rng.uniform(-0.5, 0.5, size=b.shape)
    batch = int(rng.integers(4, 10))
    mask = rng.random(batch) > 0.2
    return {
        "enc": enc,
        "pred": pred,
        "target": enc.copy(),
        "obs": rng.standard_normal((n_obs, n_obs)),
        "states": rng.integers(0, n_obs, batch),
        "actions": np.eye(n_act)[rng.integers(0, n_act, batch)],
        "next": rng.integers(0, n_obs, batch),
        "mask": mask,
        "selector": losses.SELECTORS[int(rng.integers(len(losses.SELECTORS)))],
        "weights": losses.LossWeights(lambda_rr=float(rng.uniform(0.01, 1)), lambda_var=float(rng.uniform(0.01, 1))),
        "normalize": normalize,
    }


def gradient_suite(seed: int = 0, instances: int = 50, tolerance: float = 1e-4) -> list[Check]:
    checks = []
    for offset, (name, make) in enumerate(_loss_cases().items()):
        rng = np.random.default_rng([seed, offset])
        built = [make(rng) for _ in range(instances)]

        def err(i, built=built):
            z, f = built[i]
            return relative_error(f(z).gradient, finite_difference(lambda x: f(x).value, z))

        checks.append(_worst_over(f"d/dZ {name} vs central differences", tolerance, instances, err))

    from .trainer import spl_gradients

    for normalize in (False, True):
        rng = np.random.default_rng([seed, 100 + int(normalize)])
        setups = [_composition_setup(rng, normalize) for _ in range(instances)]

        def comp_err(i, setups=setups):
            s = setups[i]
            enc_g, pred_g, *_ = spl_gradients(
                s["enc"], s["pred"], s["target"], s["obs"], s["states"], s["actions"], s["next"],
                s["mask"], s["selector"], s["weights"], s["normalize"],
            )
            fd_enc = finite_difference(lambda x: _composition_loss(x, s["pred"].flat, s), s["enc"].flat)
            fd_pred = finite_difference(lambda x: _composition_loss(s["enc"].flat, x, s), s["pred"].flat)
            return relative_error(np.concatenate([enc_g, pred_g]), np.concatenate([fd_enc, fd_pred]))

        label = "normalized " if normalize else ""
        checks.append(_worst_over(f"encoder+predictor {label}composition vs central differences",
                                  tolerance, instances, comp_err))
    return checks


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES for c in run_suite(suite, seed)]
    runners = {
        "centering": centering_suite,
        "stochastic": stochastic_suite,
        "conflict": conflict_suite,
        "gradients": gradient_suite,
    }
    if name not in runners:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    return runners[name](seed)
