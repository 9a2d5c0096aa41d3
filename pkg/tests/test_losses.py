import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splreg import losses
from splreg.losses import LossError, LossWeights
from splreg.numerics import center_rows_of
from splreg.verify import finite_difference, relative_error

DEFAULT_WEIGHTS = LossWeights(lambda_rr=0.01, lambda_var=0.01, v_th=1.0)
CONST = np.array([[1.0, 1.0], [1.0, 1.0]])


def batches(min_rows=2, max_rows=8, min_cols=2, max_cols=5):
    shape = st.tuples(st.integers(min_rows, max_rows), st.integers(min_cols, max_cols))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-10, 10)))


def loop_spl(pred, target):
    return sum(sum((p - t) ** 2 for p, t in zip(pr, tr)) for pr, tr in zip(pred, target)) / len(pred)


# -- SPL / invariance ----------------------------------------------------------

def test_spl_examples():
    z = np.random.default_rng(0).standard_normal((4, 3))
    out = losses.spl_loss(z, z)
    assert out.value == 0.0 and not out.gradient.any()
    assert losses.spl_loss([[1.0, 0.0]], [[0.0, 0.0]]).value == 1.0
    t = np.random.default_rng(1).standard_normal((4, 3))
    assert losses.spl_loss(z, t).value == pytest.approx(loop_spl(z, t), abs=1e-12)


def test_spl_target_gets_no_gradient():
    rng = np.random.default_rng(2)
    out = losses.spl_loss(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
    assert np.array_equal(out.other_gradient, np.zeros((5, 3)))


def test_shape_mismatch():
    with pytest.raises(LossError):
        losses.spl_loss(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(LossError):
        losses.invariance_loss(np.zeros((2, 3)), np.zeros((2, 2)))


def test_invariance_examples():
    z = np.random.default_rng(0).standard_normal((4, 3))
    assert losses.invariance_loss(z, z).value == 0.0
    assert losses.invariance_loss([[1.0, 0.0]], [[0.0, 0.0]]).value == 1.0
    t = np.random.default_rng(1).standard_normal((4, 3))
    inv = losses.invariance_loss(z, t)
    assert inv.value == pytest.approx(losses.spl_loss(z, t).value, abs=1e-15)
    assert np.allclose(inv.other_gradient, -inv.gradient)


# -- variance ------------------------------------------------------------------

def test_variance_examples():
    rng = np.random.default_rng(0)
    wide = rng.standard_normal((50, 3)) * 5
    assert losses.variance_loss(wide, 1.0).value == 0.0
    assert losses.variance_loss(np.ones((4, 3)), 1.0).value == pytest.approx(1.0, abs=1e-9)
    assert losses.variance_loss([[0.0], [1.0]], 1.0).value == pytest.approx(1 - np.sqrt(0.5), abs=1e-12)
    assert losses.variance_loss([[0.0], [1.0]], 1.0).value == pytest.approx(0.29289, abs=1e-5)


def test_variance_inactive_hinge_has_zero_gradient():
    z = np.array([[0.0, 0.0], [10.0, 0.1]])
    g = losses.variance_loss(z, 1.0).gradient
    assert not g[:, 0].any()
    assert g[:, 1].any()


def test_variance_eps_option():
    # A positive eps keeps sqrt differentiable at zero variance at the cost of
    # shifting the constant-batch value to 1 - sqrt(eps).
    out = losses.variance_loss(np.ones((3, 2)), 1.0, eps=1e-8)
    assert out.value == pytest.approx(1 - 1e-4, abs=1e-12)


def test_variance_needs_two_rows():
    with pytest.raises(LossError):
        losses.variance_loss(np.zeros((1, 3)))


# -- covariance / RR -----------------------------------------------------------

def test_centered_covariance_examples():
    assert losses.covariance_loss_centered(np.full((5, 3), 2.5)).value == 0.0
    q = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    assert losses.covariance_loss_centered(q).value == pytest.approx(0.0, abs=1e-15)
    assert losses.covariance_loss_centered([[1.0, 1.0], [-1.0, -1.0]]).value == pytest.approx(4.0, abs=1e-12)


def test_rr_examples():
    assert losses.rr_loss_noncentered(np.eye(2)).value == 0.0
    assert losses.rr_loss_noncentered(CONST).value == pytest.approx(4.0, abs=1e-12)


def test_constant_batch_discriminates_rr_from_centered_cov():
    assert losses.rr_loss_noncentered(CONST).value == pytest.approx(4.0, abs=1e-9)
    assert losses.covariance_loss_centered(CONST).value == pytest.approx(0.0, abs=1e-9)


def test_rr_needs_two_dims():
    with pytest.raises(LossError):
        losses.rr_loss_noncentered(np.ones((4, 1)))


@given(batches(), st.floats(-5, 5))
def test_shift_invariance_separates_the_two_penalties(z, c):
    shifted = z + c * np.arange(1, z.shape[1] + 1)
    cov, cov_s = losses.covariance_loss_centered(z).value, losses.covariance_loss_centered(shifted).value
    assert abs(cov - cov_s) <= 1e-10 * max(1.0, cov)


def test_rr_is_not_shift_invariant():
    z = np.random.default_rng(0).standard_normal((6, 3))
    assert abs(losses.rr_loss_noncentered(z + 1.0).value - losses.rr_loss_noncentered(z).value) > 1e-3


@given(batches())
def test_centered_sum_equals_noncentered_sum_of_centered_batch(z):
    n, d = z.shape
    direct = losses.covariance_loss_centered(z).value * d
    via_rr = losses.rr_loss_noncentered(center_rows_of(z)).value * d * (d - 1)
    assert abs(direct - via_rr) <= 1e-10 * max(1.0, direct)


# -- composites ----------------------------------------------------------------

def test_r2r2_zero_weights_equals_spl():
    rng = np.random.default_rng(0)
    z, t = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    spl = losses.spl_loss(z, t)
    out = losses.r2r2_loss(spl, z, LossWeights(lambda_rr=0.0, lambda_var=0.0))
    assert out.value == spl.value
    assert np.array_equal(out.gradient, spl.gradient)


def test_r2r2_default_weights_constant_batch():
    spl = losses.spl_loss(CONST, CONST)
    out = losses.r2r2_loss(spl, CONST, DEFAULT_WEIGHTS)
    assert out.value == pytest.approx(0.05, abs=1e-9)
    assert out.terms == pytest.approx({"spl": 0.0, "rr": 0.04, "var": 0.01})


def test_r2r2_gradient_is_weighted_sum():
    rng = np.random.default_rng(3)
    z, t = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    spl = losses.spl_loss(z, t)
    out = losses.r2r2_loss(spl, z, DEFAULT_WEIGHTS)
    expected = spl.gradient + 0.01 * losses.rr_loss_noncentered(z).gradient + 0.01 * losses.variance_loss(z).gradient
    assert np.allclose(out.gradient, expected, atol=1e-15)


def test_vicreg_examples():
    zero = LossWeights(lambda_rr=0, lambda_var=0, lambda_inv=0, lambda_cov=0)
    rng = np.random.default_rng(0)
    za, zb = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert losses.vicreg_total(za, zb, zero).value == 0.0
    ones = LossWeights(lambda_var=1, lambda_inv=1, lambda_cov=1, v_th=1)
    assert losses.vicreg_total(CONST, CONST, ones).value == pytest.approx(1.0, abs=1e-9)
    w = LossWeights(lambda_var=0.3, lambda_inv=0.7, lambda_cov=0.2)
    total = losses.vicreg_total(za, zb, w).value
    parts = (0.7 * losses.invariance_loss(za, zb).value
             + 0.3 * 0.5 * (losses.variance_loss(za).value + losses.variance_loss(zb).value)
             + 0.2 * 0.5 * (losses.covariance_loss_centered(za).value + losses.covariance_loss_centered(zb).value))
    assert total == pytest.approx(parts, abs=1e-12)


def test_regularizer_selectors():
    z = np.random.default_rng(5).standard_normal((6, 3))
    assert losses.regularizer(z, "none", DEFAULT_WEIGHTS).terms == {}
    assert set(losses.regularizer(z, "r2r2", DEFAULT_WEIGHTS).terms) == {"rr", "var"}
    assert set(losses.regularizer(z, "rr-only", DEFAULT_WEIGHTS).terms) == {"rr"}
    assert set(losses.regularizer(z, "var-only", DEFAULT_WEIGHTS).terms) == {"var"}
    assert set(losses.regularizer(z, "centered-cov", DEFAULT_WEIGHTS).terms) == {"cov", "var"}
    with pytest.raises(LossError):
        losses.regularizer(z, "bogus", DEFAULT_WEIGHTS)


def test_weights_validation():
    with pytest.raises(LossError):
        LossWeights(lambda_rr=-1)
    with pytest.raises(LossError):
        LossWeights(v_th=0)
    with pytest.raises(LossError):
        LossWeights(lambda_var=float("nan"))


# -- gradients and symmetries --------------------------------------------------

CASES = {
    "spl": lambda z, t: losses.spl_loss(z, t),
    "var": lambda z, t: losses.variance_loss(z),
    "cov": lambda z, t: losses.covariance_loss_centered(z),
    "rr": lambda z, t: losses.rr_loss_noncentered(z),
    "inv": lambda z, t: losses.invariance_loss(z, t),
    "r2r2": lambda z, t: losses.r2r2_loss(losses.spl_loss(z, t), z, DEFAULT_WEIGHTS),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    f = CASES[name]
    rng = np.random.default_rng(sorted(CASES).index(name))
    for _ in range(50):
        n, d = rng.integers(2, 9), rng.integers(2, 6)
        z = rng.standard_normal((n, d)) * rng.uniform(0.3, 2.0, size=d)
        t = rng.standard_normal((n, d))
        fd = finite_difference(lambda x: f(x, t).value, z, h=1e-5)
        assert relative_error(f(z, t).gradient, fd) < 1e-4


@settings(max_examples=30)
@given(batches(), st.randoms(use_true_random=False))
def test_permutation_invariance(z, rnd):
    perm = list(range(z.shape[0]))
    rnd.shuffle(perm)
    t = np.cos(z)
    for name, f in CASES.items():
        a, b = f(z, t).value, f(z[perm], t[perm]).value
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a)), name
