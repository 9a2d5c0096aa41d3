import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from splreg import envs
from splreg.envs import EnvError, EnvSpec, ReplayBuffer, TabularMDP, Transition
from splreg.numerics import eig_row_stochastic


# -- reversible chains ---------------------------------------------------------

def test_two_state_chain_rows_sum_to_one():
    p = envs.make_reversible_chain(2, seed=0).transitions[0]
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-15


@settings(max_examples=30)
@given(st.integers(2, 24), st.integers(0, 2**31 - 1), st.floats(0.2, 3.0))
def test_reversible_chain_detailed_balance_and_real_spectrum(n, seed, temperature):
    mdp = envs.make_reversible_chain(n, seed, temperature)
    p = mdp.transitions[0]
    d = envs.reversible_weights(n, seed, temperature).sum(axis=1)
    flow = d[:, None] * p
    assert np.abs(flow - flow.T).max() < 1e-12 * flow.max()
    ev = np.linalg.eigvals(p)
    assert np.abs(ev.imag).max() < 1e-10
    rep = eig_row_stochastic(p)
    assert rep.eigenvalues[0] == pytest.approx(1.0, abs=1e-10)
    u1 = rep.right_eigenvectors[:, 0]
    assert np.std(u1) < 1e-8 * abs(np.mean(u1))


def test_reversible_chain_errors():
    with pytest.raises(EnvError):
        envs.make_reversible_chain(1, seed=0)
    with pytest.raises(EnvError):
        envs.make_reversible_chain(4, seed=0, temperature=0.0)


def test_gapped_chain_meets_gap():
    mdp, temperature, used = envs.make_gapped_reversible_chain(16, 3, seed=2)
    assert envs.eigengap(mdp.transitions[0], 3) >= 0.05
    again = envs.make_reversible_chain(16, used, temperature).transitions[0]
    assert np.array_equal(again, mdp.transitions[0])


# -- slippery chain ------------------------------------------------------------

def test_slippery_chain_deterministic_when_no_slip():
    mdp = envs.make_slippery_chain(5, slip=0.0)
    assert set(np.unique(mdp.transitions)) == {0.0, 1.0}
    assert np.all(mdp.transitions.sum(axis=2) == 1.0)
    assert mdp.horizon == 20 and mdp.terminal == (4,)


def test_slippery_chain_optimal_return_is_gamma_to_the_fourth():
    mdp = envs.make_slippery_chain(5, slip=0.0, gamma=0.99)
    v, q = envs.value_iteration(mdp, horizon=mdp.horizon)
    assert v[0] == pytest.approx(0.99**4, abs=1e-12)
    assert np.argmax(q[0]) == envs.RIGHT


@pytest.mark.parametrize("slip", [0.0, 0.1, 0.5])
def test_slippery_rows_stochastic(slip):
    p = envs.make_slippery_chain(7, slip).transitions
    assert np.abs(p.sum(axis=2) - 1).max() < 1e-12


def test_slippery_chain_errors():
    with pytest.raises(EnvError):
        envs.make_slippery_chain(2)
    with pytest.raises(EnvError):
        envs.make_slippery_chain(5, slip=0.6)


def test_tabular_mdp_validation():
    with pytest.raises(EnvError, match="action 0"):
        TabularMDP(np.array([[[0.5, 0.4], [0.5, 0.5]]]), np.zeros((2, 1)), 0.9)
    with pytest.raises(EnvError):
        TabularMDP(np.eye(2)[None], np.zeros((2, 2)), 0.9)
    with pytest.raises(EnvError):
        TabularMDP(np.eye(2)[None], np.array([[np.inf], [0.0]]), 0.9)
    with pytest.raises(EnvError):
        TabularMDP(np.eye(2)[None], np.zeros((2, 1)), 1.0)


# -- induced transition --------------------------------------------------------

def test_induced_single_action_returns_p():
    mdp = envs.make_reversible_chain(6, seed=1)
    assert np.array_equal(envs.induced_transition(mdp, envs.uniform_policy(mdp)), mdp.transitions[0])


def test_induced_identical_actions():
    p = envs.make_reversible_chain(4, seed=3).transitions[0]
    mdp = TabularMDP(np.stack([p, p]), np.zeros((4, 2)), 0.9)
    assert np.allclose(envs.induced_transition(mdp, envs.uniform_policy(mdp)), p, atol=1e-15)


def test_induced_uniform_slippery_chain_by_hand():
    # Either action moves left or right with total probability 1/2 each once
    # the two actions are mixed evenly, whatever the slip.
    expected = np.array([
        [0.5, 0.5, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.5, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.5, 0.0],
        [0.0, 0.0, 0.5, 0.0, 0.5],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    mdp = envs.make_slippery_chain(5, slip=0.1)
    assert np.allclose(envs.induced_transition(mdp, envs.uniform_policy(mdp)), expected, atol=1e-15)


def test_induced_errors():
    mdp = envs.make_slippery_chain(5)
    with pytest.raises(EnvError):
        envs.induced_transition(mdp, np.full((5, 3), 1 / 3))
    with pytest.raises(EnvError):
        envs.induced_transition(mdp, np.full((5, 2), 0.7))


# -- sampling ------------------------------------------------------------------

def test_env_step_follows_transitions():
    mdp = envs.make_slippery_chain(5, slip=0.25)
    env = envs.TabularEnv(mdp, np.random.default_rng(0))
    counts = np.zeros(5)
    for _ in range(20000):
        env.state = 2
        nxt, reward, terminal, truncated = env.step(envs.RIGHT)
        counts[nxt] += 1
        assert reward == 0.0 and not terminal
    assert counts[3] / counts.sum() == pytest.approx(0.75, abs=0.015)
    assert counts[1] + counts[3] == counts.sum()


def test_env_terminal_and_truncation():
    mdp = envs.make_slippery_chain(3, slip=0.0)
    env = envs.TabularEnv(mdp, np.random.default_rng(0))
    env.reset()
    assert env.step(envs.RIGHT)[1:] == (0.0, False, False)
    env.step(envs.RIGHT)
    assert env.step(envs.LEFT)[1:] == (1.0, True, False)
    env.reset()
    out = [env.step(envs.LEFT) for _ in range(12)]
    assert out[-1][3] and not any(o[3] for o in out[:-1])


# -- replay buffer -------------------------------------------------------------

def tr(i):
    return Transition(i, i % 2, float(i), i + 1, False)


def test_buffer_evicts_oldest():
    buf = ReplayBuffer(capacity=2)
    for i in range(3):
        buf.push(tr(i))
    assert len(buf) == 2
    assert [t.state for t in buf.contents()] == [1, 2]


def test_buffer_empty_sample_errors():
    with pytest.raises(EnvError):
        ReplayBuffer(capacity=4).sample(2)
    with pytest.raises(EnvError):
        ReplayBuffer(capacity=0)


def test_buffer_same_seed_same_samples():
    def draws(seed):
        buf = ReplayBuffer(capacity=50, seed=seed)
        for i in range(30):
            buf.push(tr(i))
        return [buf.sample(8).states.tolist() for _ in range(5)]

    assert draws(7) == draws(7)
    assert draws(7) != draws(8)


def test_buffer_sample_fields_line_up():
    buf = ReplayBuffer(capacity=10, seed=1)
    for i in range(10):
        buf.push(tr(i))
    b = buf.sample(32)
    assert len(b) == 32
    assert np.array_equal(b.next_states, b.states + 1)
    assert np.array_equal(b.rewards, b.states.astype(float))
    assert np.array_equal(b.actions, b.states % 2)


def test_buffer_sampling_is_uniform():
    buf = ReplayBuffer(capacity=100, seed=3)
    for i in range(100):
        buf.push(tr(i))
    idx = buf.sample_indices(100_000)
    counts = np.bincount(idx, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.001
    sigma = np.sqrt(1000 * (1 - 0.01))
    assert np.abs(counts - 1000).max() < 3 * sigma * 1.5


# -- observations and specs ----------------------------------------------------

def test_one_hot():
    assert np.array_equal(envs.one_hot_obs(0, 3), [1, 0, 0])
    assert np.array_equal(envs.one_hot_obs(2, 3), [0, 0, 1])
    assert envs.one_hot_obs(0, 3) @ envs.one_hot_obs(1, 3) == 0.0
    with pytest.raises(EnvError):
        envs.one_hot_obs(3, 3)


def test_spec_text_round_trip():
    spec = EnvSpec(kind="reversible_chain", n=12, temperature=2.5, seed=4, gamma=0.95)
    text = envs.spec_to_text(spec)
    assert envs.spec_from_text(text) == spec
    assert envs.spec_from_text("# comment\nn = 7\n\nslip = 0.2 # inline\n") == EnvSpec(n=7, slip=0.2)
    assert np.array_equal(spec.build().transitions, envs.make_reversible_chain(12, 4, 2.5, 0.95).transitions)


def test_spec_text_errors():
    with pytest.raises(EnvError, match="line 1"):
        envs.spec_from_text("colour = 3")
    with pytest.raises(EnvError, match="line 2"):
        envs.spec_from_text("n = 4\nslip 0.1")
    with pytest.raises(EnvError):
        EnvSpec(kind="maze").build()
