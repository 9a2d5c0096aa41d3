"""Tabular environments with known transition matrices, plus a replay buffer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .numerics import check_row_stochastic, eig_row_stochastic

LEFT, RIGHT = 0, 1


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP.

    ``transitions[a]`` is the row-stochastic matrix of action ``a`` and
    ``rewards[s, a]`` the reward for acting in ``s``. Acting in a state listed
    in ``terminal`` ends the episode after its reward is paid.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    terminal: tuple = ()
    start_state: int = 0
    horizon: int | None = None

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise EnvError(f"transitions must be (A, S, S), got {p.shape}")
        if r.shape != (p.shape[1], p.shape[0]):
            raise EnvError(f"rewards must be (S, A) = {(p.shape[1], p.shape[0])}, got {r.shape}")
        for a in range(p.shape[0]):
            try:
                check_row_stochastic(p[a], tol=1e-12)
            except ValueError as exc:
                raise EnvError(f"action {a}: {exc}") from None
        if not np.all(np.isfinite(r)):
            raise EnvError("rewards must be finite")
        if not 0.0 < self.gamma < 1.0:
            raise EnvError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "terminal", tuple(int(s) for s in self.terminal))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    def is_terminal(self, state: int) -> bool:
        return state in self.terminal


@dataclass(frozen=True)
class EnvSpec:
    """Generator parameters for a reproducible environment definition."""

    kind: str = "slippery_chain"
    n: int = 5
    slip: float = 0.1
    temperature: float = 1.0
    seed: int = 0
    gamma: float = 0.99

    def build(self) -> TabularMDP:
        if self.kind == "slippery_chain":
            return make_slippery_chain(self.n, self.slip, self.gamma)
        if self.kind == "reversible_chain":
            return make_reversible_chain(self.n, self.seed, self.temperature, self.gamma)
        raise EnvError(f"unknown environment kind {self.kind!r}")

    def key(self) -> str:
        return spec_to_text(self).strip().replace("\n", ";")


def spec_to_text(spec: EnvSpec) -> str:
    """Plain ``key = value`` lines, one per field."""
    lines = []
    for name, value in asdict(spec).items():
        lines.append(f'{name} = "{value}"' if isinstance(value, str) else f"{name} = {value!r}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> EnvSpec:
    types = {f.name: f.type for f in fields(EnvSpec)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise EnvError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise EnvError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        if kind == "str":
            values[key] = raw.strip('"')
        elif kind == "int":
            values[key] = int(raw)
        else:
            values[key] = float(raw)
    return EnvSpec(**values)


def reversible_weights(n: int, seed: int, temperature: float = 1.0) -> np.ndarray:
    """Symmetric positive matrix with entries ``exp(temperature * g)``."""
    if n < 2:
        raise EnvError(f"reversible chain needs n >= 2, got {n}")
    if temperature <= 0:
        raise EnvError(f"temperature must be positive, got {temperature}")
    g = np.random.default_rng(seed).standard_normal((n, n))
    g = np.triu(g) + np.triu(g, 1).T
    return np.exp(temperature * g)


def make_reversible_chain(n: int, seed: int, temperature: float = 1.0, gamma: float = 0.99) -> TabularMDP:
    """Single-action chain ``P = D^-1 W``; detailed balance holds with ``d = W 1``."""
    w = reversible_weights(n, seed, temperature)
    p = w / w.sum(axis=1, keepdims=True)
    return TabularMDP(p[None], np.zeros((n, 1)), gamma)


def eigengap(p, k: int) -> float:
    """``|lambda_k| - |lambda_{k+1}|`` with eigenvalues sorted by magnitude."""
    mags = np.abs(eig_row_stochastic(p).eigenvalues)
    return float(mags[k - 1] - mags[k])


def make_gapped_reversible_chain(
    n: int,
    k: int,
    seed: int,
    min_gap: float = 0.05,
    temperatures=(1.0, 1.5, 2.0, 2.5, 3.0),
    max_draws: int = 50,
    gamma: float = 0.99,
):
    """Reversible chain whose top-``k`` subspace is separated by ``min_gap``.

    Tries each temperature on ``seed``, then on derived seeds, and returns
    ``(mdp, temperature, used_seed)`` for the first draw that qualifies.
    """
    for draw in range(max_draws):
        used = seed if draw == 0 else seed + 1000 * draw
        for temperature in temperatures:
            mdp = make_reversible_chain(n, used, temperature, gamma)
            if eigengap(mdp.transitions[0], k) >= min_gap:
                return mdp, temperature, used
    raise EnvError(f"no chain with eigengap >= {min_gap} after {max_draws} draws")


def make_slippery_chain(n: int, slip: float = 0.1, gamma: float = 0.99) -> TabularMDP:
    """Corridor of ``n`` states with actions left/right.

    The chosen direction succeeds with probability ``1 - slip`` and the
    opposite move happens otherwise; walls clamp at the left end. The right
    end is an absorbing goal whose action pays 1 and ends the episode.
    Episodes start at state 0 and are truncated after ``4 n`` steps.
    """
    if n < 3:
        raise EnvError(f"slippery chain needs n >= 3, got {n}")
    if not 0.0 <= slip <= 0.5:
        raise EnvError(f"slip must lie in [0, 0.5], got {slip}")
    goal = n - 1
    p = np.zeros((2, n, n))
    for s in range(goal):
        left, right = max(s - 1, 0), s + 1
        p[LEFT, s, left] += 1.0 - slip
        p[LEFT, s, right] += slip
        p[RIGHT, s, right] += 1.0 - slip
        p[RIGHT, s, left] += slip
    p[:, goal, goal] = 1.0
    rewards = np.zeros((n, 2))
    rewards[goal] = 1.0
    return TabularMDP(p, rewards, gamma, terminal=(goal,), start_state=0, horizon=4 * n)


def induced_transition(mdp: TabularMDP, pi) -> np.ndarray:
    """``P^pi[s, s'] = sum_a pi(a | s) P_a(s, s')``."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise EnvError(f"policy must be {(mdp.n_states, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.abs(pi.sum(axis=1) - 1.0).max() > 1e-12:
        raise EnvError("policy rows must be distributions")
    return np.einsum("sa,ast->st", pi, mdp.transitions)


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def value_iteration(mdp: TabularMDP, horizon: int | None = None, tol: float = 1e-13):
    """Optimal ``(V, Q)``; finite-horizon backups when ``horizon`` is given."""
    cont = np.ones(mdp.n_states)
    cont[list(mdp.terminal)] = 0.0
    v = np.zeros(mdp.n_states)
    steps = horizon if horizon is not None else 100_000
    for _ in range(steps):
        q = mdp.rewards + mdp.gamma * cont[:, None] * np.einsum("ast,t->sa", mdp.transitions, v)
        new = q.max(axis=1)
        done = horizon is None and np.abs(new - v).max() < tol
        v = new
        if done:
            break
    return v, q


def one_hot_obs(state: int, n: int) -> np.ndarray:
    if not 0 <= state < n:
        raise EnvError(f"state {state} out of range for {n} states")
    out = np.zeros(n)
    out[state] = 1.0
    return out


class TabularEnv:
    """Episodic sampler over a :class:`TabularMDP`."""

    def __init__(self, mdp: TabularMDP, rng: np.random.Generator):
        self.mdp = mdp
        self.rng = rng
        self._cdf = np.cumsum(mdp.transitions, axis=2)
        self.state = mdp.start_state
        self.t = 0

    def reset(self) -> int:
        self.state = self.mdp.start_state
        self.t = 0
        return self.state

    def step(self, action: int):
        """Returns ``(next_state, reward, terminal, truncated)``."""
        s = self.state
        reward = self.mdp.rewards[s, action]
        cdf = self._cdf[action, s]
        nxt = int(min(np.searchsorted(cdf, self.rng.random(), side="right"), len(cdf) - 1))
        terminal = self.mdp.is_terminal(s)
        self.t += 1
        horizon = self.mdp.horizon
        truncated = not terminal and horizon is not None and self.t >= horizon
        self.state = nxt
        return nxt, reward, terminal, truncated


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool


@dataclass(frozen=True)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.states)


@dataclass
class ReplayBuffer:
    """Fixed-capacity ring of transitions with its own seeded sampler."""

    capacity: int = 100_000
    seed: int = 0
    size: int = 0
    _next: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise EnvError("buffer capacity must be positive")
        self._rng = np.random.default_rng(self.seed)
        self.states = np.zeros(self.capacity, dtype=np.int64)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros(self.capacity, dtype=np.int64)
        self.terminals = np.zeros(self.capacity, dtype=bool)

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._next
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.terminals[i] = tr.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size == 0:
            raise EnvError("cannot sample from an empty replay buffer")
        return self._rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int) -> TransitionBatch:
        """Uniform draw with replacement over the current contents."""
        idx = self.sample_indices(batch_size)
        return TransitionBatch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx],
        )

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self._next if self.size == self.capacity else 0
        order = [(start + i) % self.capacity for i in range(self.size)]
        return [
            Transition(int(self.states[i]), int(self.actions[i]), float(self.rewards[i]),
                       int(self.next_states[i]), bool(self.terminals[i]))
            for i in order
        ]
