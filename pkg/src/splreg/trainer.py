"""High update-to-data training loop: SPL representation block plus a linear TD learner.

Per decision step the agent acts epsilon-greedily, stores the transition and
then performs ``utd_ratio`` iterations of

1. sample a batch, encode ``s`` (online) and ``s'`` (stop-gradient); the
   encoder runs once over the one-hot observation table and rows are gathered,
2. SPL loss through the predictor plus the selected regularizers on ``Z``,
3. one Adam step over the joint encoder and predictor parameters,
4. one TD(0) step of the linear Q-head on the (pre-update) latents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import losses, nets
from .config import RunConfig
from .envs import ReplayBuffer, TabularEnv, TabularMDP, Transition, value_iteration
from .numerics import SpectrumReport, effective_rank, svd
from .runlog import RunLog
from .spectral import centering_conflict_experiment, trace_objective_ascent  # noqa: F401

LOSS_TERMS = ("spl", "rr", "var", "cov", "td")


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class QHead:
    """Linear action values ``Q(z, a) = z . W[:, a] + b[a]``."""

    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, latent_dim: int, n_actions: int) -> "QHead":
        return cls(np.zeros((latent_dim, n_actions)), np.zeros(n_actions))

    def values(self, z) -> np.ndarray:
        return z @ self.weights + self.bias


def rl_block_update(q: QHead, z, actions, rewards, z_next, terminals, gamma: float, lr: float) -> np.ndarray:
    """One semi-gradient TD(0) step on ``0.5 * mean(delta^2)``; returns the TD errors."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    onehot = np.zeros((n, q.bias.size))
    onehot[np.arange(n), actions] = 1.0
    q_sa = np.sum(q.values(z) * onehot, axis=1)
    bootstrap = q.values(z_next).max(axis=1)
    target = rewards + gamma * np.where(terminals, 0.0, bootstrap)
    delta = target - q_sa
    if lr != 0.0:
        weighted = onehot * (delta / n)[:, None]
        q.weights += lr * (z.T @ weighted)
        q.bias += lr * weighted.sum(axis=0)
    return delta


def monitor_effective_rank(encoder: nets.MlpParams, probe_states, normalize: bool = False) -> SpectrumReport:
    """Singular values and effective rank of the latent features of a probe batch."""
    z, _ = nets.forward_encoder(encoder, probe_states, keep_cache=False)
    if normalize:
        z = nets.normalize_rows(z)
    s = svd(z).s
    if not np.any(s > 0):
        warnings.warn("latent features are identically zero; reporting effective rank 1")
        return SpectrumReport(s, 1.0, degenerate=True)
    return SpectrumReport(s, effective_rank(s))


def build_networks(config: RunConfig, n_states: int, n_actions: int, seed_seq: np.random.SeedSequence):
    net = config.net
    k, h = net.latent_dim, net.hidden
    enc_seed, pred_seed = seed_seq.spawn(2)
    encoder = nets.init_params(
        [n_states] + [h] * net.encoder_layers + [k],
        [net.activation] * net.encoder_layers + ["linear"],
        int(enc_seed.generate_state(1)[0]),
        net.init_scale,
    )
    predictor = nets.init_params(
        [k + n_actions] + [h] * net.predictor_layers + [k],
        [net.activation] * net.predictor_layers + ["linear"],
        int(pred_seed.generate_state(1)[0]),
        net.init_scale,
    )
    return encoder, predictor


def spl_gradients(
    encoder: nets.MlpParams,
    predictor: nets.MlpParams,
    target_encoder: nets.MlpParams,
    observations,
    states,
    actions_x,
    next_states,
    spl_mask,
    selector: str,
    weights: losses.LossWeights,
    normalize: bool = False,
    enc_out=None,
    pred_out=None,
):
    """Gradients of SPL + regularizers for encoder and predictor.

    ``observations`` holds one input row per distinct observation and
    ``states`` / ``next_states`` index into it, so the encoder runs once per
    distinct row and per-sample latent gradients are summed back onto those
    rows. ``target_encoder`` encodes the next states under stop-gradient; the
    trainer passes the online encoder itself. Gradients are written into
    ``enc_out`` / ``pred_out`` when given. Returns
    ``(encoder_grad, predictor_grad, terms, z, z_next)``.
    """
    states = np.asarray(states)
    next_states = np.asarray(next_states)
    h_tab, enc_cache = nets.forward_encoder(encoder, observations)
    z_tab = nets.normalize_rows(h_tab) if normalize else h_tab
    if target_encoder is not encoder:
        t_tab, _ = nets.forward_encoder(target_encoder, observations, keep_cache=False)
        t_tab = nets.normalize_rows(t_tab) if normalize else t_tab
    else:
        t_tab = z_tab
    z = z_tab[states]
    z_next = t_tab[next_states]

    pred, pred_cache = nets.forward_predictor(predictor, z, actions_x)
    if spl_mask.all():
        spl = losses.spl_loss(pred, z_next)
        upstream = spl.gradient
    else:
        upstream = np.zeros_like(pred)
        if spl_mask.any():
            spl = losses.spl_loss(pred[spl_mask], z_next[spl_mask])
            upstream[spl_mask] = spl.gradient
        else:
            spl = losses.LossValue(0.0, upstream)
    pred_grad, pred_in_grad = nets.backward(predictor, pred_cache, upstream, pred_out)
    dz = pred_in_grad[:, : z.shape[1]]

    reg = losses.regularizer(z, selector, weights)
    if reg.terms:
        dz = dz + reg.gradient
    if normalize:
        dz = nets.normalize_rows(h_tab[states], dz)
    scatter = np.zeros((h_tab.shape[0], states.size))
    scatter[states, np.arange(states.size)] = 1.0
    enc_grad, _ = nets.backward(encoder, enc_cache, scatter @ dz, enc_out)
    terms = {"spl": spl.value, **reg.terms}
    return enc_grad, pred_grad, terms, z, z_next


def _check_finite(terms: dict, step: int, update: int):
    for name, value in terms.items():
        if not np.isfinite(value):
            raise TrainingDivergence(f"non-finite {name} loss at decision step {step} (update {update})")


def evaluate_greedy(mdp: TabularMDP, q_table, episodes: int, rng) -> float:
    """Mean discounted return of the greedy policy over ``episodes`` episodes."""
    greedy = np.argmax(q_table, axis=1)
    env = TabularEnv(mdp, rng)
    total = 0.0
    for _ in range(episodes):
        s = env.reset()
        ret, disc = 0.0, 1.0
        while True:
            s, r, terminal, truncated = env.step(int(greedy[env.state]))
            ret += disc * r
            disc *= mdp.gamma
            if terminal or truncated:
                break
        total += ret
    return total / episodes


def _checkpoint_steps(total: int, count: int) -> set[int]:
    return {int(round((i + 1) * total / count)) for i in range(count)}


def run_training(config: RunConfig, on_update=None) -> RunLog:
    """Train one seed and return its :class:`RunLog`.

    ``on_update``, when given, is called after every gradient update with a
    dict holding the batch latents, loss terms and gradients (used by tests
    to audit the stop-gradient contract).
    """
    tr, netcfg, w = config.train, config.net, config.losses
    mdp = config.env.build()
    n_states, n_actions = mdp.n_states, mdp.n_actions
    root = np.random.SeedSequence(tr.seed)
    env_seq, buf_seq, net_seq, act_seq, eval_seq = root.spawn(5)

    encoder, predictor = build_networks(config, n_states, n_actions, net_seq)
    # Both nets live in one buffer so a single elementwise Adam step covers them.
    n_enc = encoder.flat.size
    joint = np.concatenate([encoder.flat, predictor.flat])
    encoder = nets.MlpParams(encoder.sizes, encoder.activations, joint[:n_enc])
    predictor = nets.MlpParams(predictor.sizes, predictor.activations, joint[n_enc:])
    joint_grad = np.empty_like(joint)
    enc_out, pred_out = joint_grad[:n_enc], joint_grad[n_enc:]
    learning_steps = tr.total_steps - min(tr.warmup_steps, tr.total_steps)
    horizon = max(learning_steps * tr.utd_ratio, 1)
    opt = nets.AdamState(joint.size, netcfg.lr_init, netcfg.lr_end, horizon)
    q = QHead.zeros(netcfg.latent_dim, n_actions)
    buffer = ReplayBuffer(tr.buffer_capacity, int(buf_seq.generate_state(1)[0]))
    env = TabularEnv(mdp, np.random.default_rng(env_seq))
    act_rng = np.random.default_rng(act_seq)
    eval_rng = np.random.default_rng(eval_seq)

    eye_s = np.eye(n_states)
    eye_a = np.eye(n_actions)
    normalize = netcfg.normalize_latent
    checkpoint_at = _checkpoint_steps(tr.total_steps, tr.checkpoints)
    monitor_every = tr.monitor_every or max(tr.total_steps // 100, 1)
    decay_steps = max(int(tr.epsilon_decay_fraction * learning_steps), 1)

    history = np.zeros((learning_steps * tr.utd_ratio, len(LOSS_TERMS)))
    log = RunLog(config.to_dict(), tr.seed)
    updates = 0
    last_monitor_update = 0
    checkpoint_index = 0

    def latent_table():
        z, _ = nets.forward_encoder(encoder, eye_s, keep_cache=False)
        return nets.normalize_rows(z) if normalize else z

    def monitor(step):
        nonlocal last_monitor_update
        report = monitor_effective_rank(encoder, eye_s, normalize)
        window = history[last_monitor_update:updates]
        means = window.mean(axis=0) if len(window) else np.zeros(len(LOSS_TERMS))
        log.events.append({
            "type": "monitor",
            "step": step,
            "updates": updates,
            "effective_rank": report.effective_rank,
            "degenerate": report.degenerate,
            "singular_values": report.singular_values.tolist(),
            "losses": dict(zip(LOSS_TERMS, means.tolist())),
        })
        last_monitor_update = updates

    monitor(0)
    s = env.reset()
    for step in range(1, tr.total_steps + 1):
        learning = step > tr.warmup_steps
        if not learning:
            a = int(act_rng.integers(n_actions))
        else:
            frac = min((step - tr.warmup_steps - 1) / decay_steps, 1.0)
            eps = tr.epsilon_start + (tr.epsilon_end - tr.epsilon_start) * frac
            if act_rng.random() < eps:
                a = int(act_rng.integers(n_actions))
            else:
                z_s, _ = nets.forward_encoder(encoder, eye_s[s : s + 1], keep_cache=False)
                if normalize:
                    z_s = nets.normalize_rows(z_s)
                a = int(np.argmax(q.values(z_s)[0]))
        s_next, r, terminal, truncated = env.step(a)
        buffer.push(Transition(s, a, r, s_next, terminal))
        s = env.reset() if terminal or truncated else s_next

        if learning:
            for _ in range(tr.utd_ratio):
                batch = buffer.sample(tr.batch_size)
                enc_grad, pred_grad, terms, z, z_next = spl_gradients(
                    encoder, predictor, encoder,
                    eye_s, batch.states, eye_a[batch.actions], batch.next_states,
                    ~batch.terminals, tr.selector, w, normalize, enc_out, pred_out,
                )
                _check_finite(terms, step, updates)
                nets.adam_update(opt, joint, joint_grad, opt.learning_rate())
                delta = rl_block_update(
                    q, z, batch.actions, batch.rewards, z_next, batch.terminals, mdp.gamma, tr.q_lr
                )
                td = float(np.mean(delta * delta))
                _check_finite({"td": td}, step, updates)
                row = history[updates]
                row[0] = terms["spl"]
                row[1] = terms.get("rr", 0.0)
                row[2] = terms.get("var", 0.0)
                row[3] = terms.get("cov", 0.0)
                row[4] = td
                if on_update is not None:
                    on_update({"step": step, "update": updates, "z": z, "z_next": z_next,
                               "terms": terms, "encoder_grad": enc_grad, "predictor_grad": pred_grad})
                updates += 1

        if step % monitor_every == 0:
            monitor(step)
        if step in checkpoint_at:
            q_table = q.values(latent_table())
            ret = evaluate_greedy(mdp, q_table, tr.eval_episodes, eval_rng)
            log.events.append({"type": "checkpoint", "index": checkpoint_index, "step": step, "return": ret})
            checkpoint_index += 1

    expected = tr.utd_ratio * learning_steps
    if updates != expected:
        raise AssertionError(f"performed {updates} updates, expected {expected}")
    v_opt, _ = value_iteration(mdp, horizon=mdp.horizon)
    log.summary = {
        "decision_steps": tr.total_steps,
        "learning_steps": learning_steps,
        "updates": updates,
        "utd_ratio": tr.utd_ratio,
        "checkpoints": checkpoint_index,
        "optimal_return": float(v_opt[mdp.start_state]),
        "final_effective_rank": log.monitors[-1]["effective_rank"],
    }
    log.loss_history = history
    qhead = nets.MlpParams([netcfg.latent_dim, n_actions], ["linear"])
    qhead.weights[0][...] = q.weights
    qhead.biases[0][...] = q.bias
    log.params = {"encoder": encoder, "predictor": predictor, "q_head": qhead}
    return log
