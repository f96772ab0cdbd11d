"""Offline actor-critic objectives and the per-step training update.

Five algorithms share one critic update (TD regression against aggregated
target critics) and differ in the actor objective: TD3 maximizes Q at
policy samples, TD3+BC adds a scaled behavior-cloning term, AWAC weights
data log-likelihood by softmax advantages within the minibatch, IQL does
the same with advantages from an expectile-fitted value function, and
ASAC drops the weights by sampling the actor minibatch from a log-space
priority tree over exponentiated advantages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDistributionError, PoisonedStateError
from .logtree import LogSumExpTree
from .nets import (
    AdamState,
    adam_step,
    make_critic_ensemble,
    make_policy,
    make_value_net,
)

ALGORITHMS = ("TD3", "TD3BC", "AWAC", "IQL", "ASAC")


@dataclass
class AlgoConfig:
    """Hyper-parameters shared by the training step and the CLI."""

    algorithm: str = "AWAC"
    gamma: float = 0.99
    rho: float = 0.995          # polyak coefficient for target critics
    beta: float = 1.0           # advantage temperature (AWAC/IQL/ASAC)
    alpha: float = 1.0          # behavior-cloning strength (TD3+BC)
    tau: float = 0.7            # expectile (IQL)
    lam: float = 0.5            # ensemble pessimism
    n_critics: int = 2
    m_eval: int = 50            # action samples for evaluation sampling
    a_max: float = math.inf     # advantage clip
    k_adv: int = 1              # action samples for the advantage baseline
    batch_size: int = 512
    lr: float = 3e-4
    train_steps: int = 10_000
    policy_delay: int = 2

    def validate(self, prefix="algo"):
        """Raise ValueError naming the offending field path."""
        checks = [
            ("algorithm", self.algorithm in ALGORITHMS,
             f"must be one of {ALGORITHMS}"),
            ("gamma", 0.0 <= self.gamma < 1.0, "must be in [0, 1)"),
            ("rho", 0.0 < self.rho < 1.0, "must be in (0, 1)"),
            ("beta", self.beta > 0.0, "must be positive"),
            ("alpha", self.alpha >= 0.0, "must be >= 0"),
            ("tau", 0.0 < self.tau < 1.0, "must be in (0, 1)"),
            ("lam", self.lam >= 0.0, "must be >= 0"),
            ("n_critics", self.n_critics >= 2, "must be >= 2"),
            ("m_eval", self.m_eval >= 1, "must be >= 1"),
            ("a_max", self.a_max > 0.0, "must be positive or inf"),
            ("k_adv", self.k_adv >= 1, "must be >= 1"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("lr", self.lr > 0.0, "must be positive"),
            ("train_steps", self.train_steps >= 1, "must be >= 1"),
            ("policy_delay", self.policy_delay >= 1, "must be >= 1"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ValueError(
                    f"{prefix}.{name}: {msg} (got {getattr(self, name)!r})")
        return self


def ensemble_aggregate(q, lam):
    """Mean of the member values minus a pessimism penalty on disagreement.

    q has members on the leading axis. The penalty averages |q_i - q_j|
    over ordered pairs i != j, scaled by lam; lam = 0.5 with two members
    recovers the pairwise minimum, lam = 0 the plain mean.
    """
    q = np.asarray(q, dtype=np.float64)
    n = q.shape[0]
    if n < 2:
        raise ValueError(f"ensemble aggregation needs >= 2 values, got {n}")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    mean = q.mean(axis=0)
    if lam == 0.0:
        return mean
    if n == 2:
        # algebraically identical two-member form; evaluating it this way
        # makes lam = 0.5 recover the pairwise minimum exactly
        lo = np.minimum(q[0], q[1])
        hi = np.maximum(q[0], q[1])
        return lo * (0.5 + lam) + hi * (0.5 - lam)
    penalty = np.zeros_like(mean)
    for i in range(n):
        for j in range(i + 1, n):
            penalty += np.abs(q[i] - q[j])
    return mean - lam / (n * n - n) * (2.0 * penalty)


def td_target(rewards, terminals, next_states, policy, critics, gamma, lam, rng):
    """y = r + gamma * (1 - terminal) * aggregate(Q_targets(s', a')), with
    a' one policy sample per next state."""
    a_next = policy.sample(next_states, rng)
    q_next = critics.q_values(next_states, a_next, target=True)
    cont = 1.0 - np.asarray(terminals, dtype=np.float64)
    return np.asarray(rewards, dtype=np.float64) \
        + gamma * cont * ensemble_aggregate(q_next, lam)


def critic_loss(critics, states, actions, y):
    """Mean squared TD error over batch and members, with per-member
    parameter gradients (every member regresses to the shared y)."""
    x = np.concatenate([states, actions], axis=1)
    batch = x.shape[0]
    n = critics.n
    total = 0.0
    member_grads = []
    for net in critics.members:
        q, cache = net.forward_cached(x)
        err = q[:, 0] - y
        total += float((err ** 2).mean())
        upstream = (2.0 / (batch * n)) * err[:, None]
        grads, _ = net.backward(cache, upstream)
        member_grads.append(grads)
    return total / n, member_grads


def advantage(critics, policy, states, actions, k_adv, a_max, rng):
    """First-member advantage Q1(s, a) minus a k-sample policy baseline,
    clipped from above at a_max."""
    if k_adv < 1:
        raise ValueError(f"k_adv must be >= 1, got {k_adv}")
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    member = critics.members[0]
    q = member.forward(np.concatenate([states, actions], axis=1))[:, 0]
    rep = np.repeat(states, k_adv, axis=0)
    a_pi = policy.sample(rep, rng)
    q_base = member.forward(np.concatenate([rep, a_pi], axis=1))[:, 0]
    baseline = q_base.reshape(states.shape[0], k_adv).mean(axis=1)
    return np.minimum(q - baseline, a_max)


def softmax_weights(advantages, beta):
    """Shift-by-max softmax of advantages / beta; weights sum to one."""
    z = np.asarray(advantages, dtype=np.float64) / beta
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def weighted_nll_loss(states, actions, weights, policy, out=None):
    """-sum_i w_i log pi(a_i | s_i) and its policy gradients; the weights
    are treated as constants (the sign is folded into them, so the value
    returned by the weighted log-prob pass is already the loss)."""
    weights = np.asarray(weights, dtype=np.float64)
    return policy.weighted_log_prob_grads(states, actions, -weights, out)


def awac_actor_loss(states, actions, policy, critics, beta, a_max, k_adv, rng,
                    out=None):
    """Within-batch softmax-advantage-weighted negative log-likelihood."""
    adv = advantage(critics, policy, states, actions, k_adv, a_max, rng)
    weights = softmax_weights(adv, beta)
    loss, grads = weighted_nll_loss(states, actions, weights, policy, out)
    return loss, grads, adv


def td3bc_actor_loss(states, actions, policy, critics, alpha, rng, q_bar=None,
                     out=None):
    """-mean[Q1(s, a~) + alpha * Qbar * log pi(a|s)] with a~ a policy
    sample and Qbar the batch mean |Q1| treated as a constant (pass q_bar
    to pin the scale explicitly, e.g. for gradient checks)."""
    batch = states.shape[0]
    a_tilde, cache = policy.sample_cached(states, rng)
    member = critics.members[0]
    q, qcache = member.forward_cached(np.concatenate([states, a_tilde], axis=1))
    if q_bar is None:
        q_bar = float(np.abs(q[:, 0]).mean())
    # cloning term first (writes the buffers), Q term accumulates into it
    bc_value, grads = policy.weighted_log_prob_grads(
        states, actions, np.full(batch, -(alpha * q_bar) / batch), out)
    _, dx = member.backward(qcache, np.full((batch, 1), -1.0 / batch))
    grads = policy.sample_backward(cache, dx[:, states.shape[1]:], grads,
                                   accumulate=True)
    loss = -float(q[:, 0].mean()) + bc_value
    return loss, grads


def expectile_loss(u, tau):
    """tau * u^2 above zero, (1 - tau) * u^2 below; elementwise."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    u = np.asarray(u, dtype=np.float64)
    return np.abs(tau - (u < 0.0)) * u ** 2


def iql_losses(states, actions, rewards, terminals, next_states, value_net,
               critics, policy, tau, beta, gamma, lam, a_max=math.inf):
    """Value, critic, and actor losses of the implicit-Q update.

    Only dataset state-action pairs are ever pushed through the critics;
    TD targets bootstrap from the value network at s'.
    """
    q_target = ensemble_aggregate(critics.q_values(states, actions, target=True),
                                  lam)
    batch = states.shape[0]
    v, v_cache = value_net.forward_cached(states)
    v = v[:, 0]
    u = q_target - v
    value_loss = float(expectile_loss(u, tau).mean())
    dv = (-2.0 / batch) * np.abs(tau - (u < 0.0)) * u
    value_grads, _ = value_net.backward(v_cache, dv[:, None])

    v_next = value_net.forward(next_states)[:, 0]
    cont = 1.0 - np.asarray(terminals, dtype=np.float64)
    y = np.asarray(rewards, dtype=np.float64) + gamma * cont * v_next
    c_loss, c_grads = critic_loss(critics, states, actions, y)

    adv = np.minimum(u, a_max)
    weights = softmax_weights(adv, beta)
    a_loss, a_grads = weighted_nll_loss(states, actions, weights, policy)
    return {
        "value_loss": value_loss, "value_grads": value_grads,
        "critic_loss": c_loss, "critic_grads": c_grads,
        "actor_loss": a_loss, "actor_grads": a_grads,
        "advantages": adv, "td_targets": y,
    }


def asac_tree_logit(advantages, beta, a_max=math.inf):
    """Leaf log-weight for the priority tree: min(A, a_max) / beta."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return np.minimum(np.asarray(advantages, dtype=np.float64), a_max) / beta


def asac_refresh(tree, indices, advantages, beta, a_max=math.inf):
    """Write fresh logits for the given rows; all other leaves stay stale."""
    tree.set_logits(indices, asac_tree_logit(advantages, beta, a_max))


def asac_actor_loss(states, actions, policy, out=None):
    """Plain negative log-likelihood over a tree-sampled minibatch."""
    batch = states.shape[0]
    if batch == 0:
        raise EmptyDistributionError("empty actor minibatch")
    return weighted_nll_loss(states, actions, np.full(batch, 1.0 / batch),
                             policy, out)


def evaluation_sampling_action(policy, critics, state, m, rng, lam_es=0.0):
    """Best of m policy samples under the aggregated critic (ties go to
    the lowest sample index)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    state = np.asarray(state, dtype=np.float64)
    states = np.tile(state, (m, 1))
    candidates = policy.sample(states, rng)
    scores = ensemble_aggregate(critics.q_values(states, candidates), lam_es)
    return candidates[int(np.argmax(scores))]


# ----------------------------------------------------------------------
# Training loop state

@dataclass
class TrainState:
    algorithm: str
    policy: object
    critics: object
    rng: np.random.Generator
    value_net: object = None        # IQL only
    tree: LogSumExpTree = None      # ASAC only
    opt_policy: AdamState = None
    opt_critics: list = field(default_factory=list)
    opt_value: AdamState = None
    step: int = 0


def init_train_state(config: AlgoConfig, dataset, preset, seed) -> TrainState:
    """Builds networks for the dataset's dimensions and seeds everything."""
    config.validate()
    rng = np.random.default_rng(seed)
    sd, ad = dataset.meta.state_dim, dataset.meta.action_dim
    policy = make_policy(preset, sd, ad, rng)
    critics = make_critic_ensemble(preset, sd, ad, config.n_critics, rng)
    state = TrainState(algorithm=config.algorithm, policy=policy,
                       critics=critics, rng=rng)
    state.opt_policy = AdamState.for_params(policy.params)
    state.opt_critics = [AdamState.for_params(net.params)
                         for net in critics.members]
    if config.algorithm == "IQL":
        state.value_net = make_value_net(preset, sd, rng)
        state.opt_value = AdamState.for_params(state.value_net.params)
    if config.algorithm == "ASAC":
        # uniform priorities before any advantage has been computed
        state.tree = LogSumExpTree.from_logits(np.zeros(len(dataset)))
    return state


def _actor_due(state: TrainState, config: AlgoConfig) -> bool:
    return (state.step + 1) % config.policy_delay == 0


def train_step(state: TrainState, dataset, config: AlgoConfig) -> dict:
    """One critic update, a delayed actor update, target polyak averaging,
    and (ASAC) a priority refresh on the touched rows.

    Returns the step metrics record; raises PoisonedStateError carrying
    the step index if any loss goes NaN.
    """
    rng = state.rng
    n = len(dataset)
    idx_cr = rng.integers(0, n, size=config.batch_size)
    s = dataset.states[idx_cr]
    a = dataset.actions[idx_cr]
    r = dataset.rewards[idx_cr]
    s2 = dataset.next_states[idx_cr]
    term = dataset.terminals[idx_cr]

    try:
        mean_adv = math.nan
        if state.algorithm == "IQL":
            q_target = ensemble_aggregate(
                state.critics.q_values(s, a, target=True), config.lam)
            v, v_cache = state.value_net.forward_cached(s)
            u = q_target - v[:, 0]
            value_loss = float(expectile_loss(u, config.tau).mean())
            _check_loss(value_loss, state.step, "value")
            dv = (-2.0 / len(u)) * np.abs(config.tau - (u < 0.0)) * u
            value_grads, _ = state.value_net.backward(
                v_cache, dv[:, None], out=state.value_net.grad_buffers())
            adam_step(state.value_net.params, value_grads, state.opt_value,
                      config.lr)
            y = r + config.gamma * (1.0 - term) \
                * state.value_net.forward(s2)[:, 0]
            mean_adv = float(np.minimum(u, config.a_max).mean())
        else:
            y = td_target(r, term, s2, state.policy, state.critics,
                          config.gamma, config.lam, rng)

        c_loss, c_grads = critic_loss(state.critics, s, a, y)
        _check_loss(c_loss, state.step, "critic")
        for net, grads, opt in zip(state.critics.members, c_grads,
                                   state.opt_critics):
            adam_step(net.params, grads, opt, config.lr)

        a_loss = math.nan
        idx_ac = None
        if _actor_due(state, config):
            if state.algorithm == "ASAC":
                idx_ac = state.tree.sample_many(rng.random(config.batch_size))
            else:
                idx_ac = rng.integers(0, n, size=config.batch_size)
            s_ac = dataset.states[idx_ac]
            a_ac = dataset.actions[idx_ac]
            buffers = state.policy.grad_buffers()
            if state.algorithm in ("TD3", "TD3BC"):
                alpha = config.alpha if state.algorithm == "TD3BC" else 0.0
                a_loss, a_grads = td3bc_actor_loss(
                    s_ac, a_ac, state.policy, state.critics, alpha, rng,
                    out=buffers)
            elif state.algorithm == "AWAC":
                a_loss, a_grads, adv = awac_actor_loss(
                    s_ac, a_ac, state.policy, state.critics, config.beta,
                    config.a_max, config.k_adv, rng, out=buffers)
                mean_adv = float(adv.mean())
            elif state.algorithm == "IQL":
                q_t = ensemble_aggregate(
                    state.critics.q_values(s_ac, a_ac, target=True), config.lam)
                adv = np.minimum(
                    q_t - state.value_net.forward(s_ac)[:, 0], config.a_max)
                weights = softmax_weights(adv, config.beta)
                a_loss, a_grads = weighted_nll_loss(
                    s_ac, a_ac, weights, state.policy, out=buffers)
            else:  # ASAC
                a_loss, a_grads = asac_actor_loss(s_ac, a_ac, state.policy,
                                                  out=buffers)
            _check_loss(a_loss, state.step, "actor")
            adam_step(state.policy.params, a_grads, state.opt_policy, config.lr)
            state.policy.clamp_log_std()

        state.critics.polyak_update(config.rho)

        if state.algorithm == "ASAC":
            touched = idx_cr if idx_ac is None else np.concatenate(
                [idx_ac, idx_cr])
            touched = np.unique(touched)
            adv = advantage(state.critics, state.policy,
                            dataset.states[touched], dataset.actions[touched],
                            config.k_adv, config.a_max, rng)
            asac_refresh(state.tree, touched, adv, config.beta, config.a_max)
            mean_adv = float(adv.mean())
        elif state.algorithm in ("TD3", "TD3BC") and idx_ac is not None:
            # diagnostic only; sampled on actor steps to keep the policy
            # forward off the critic-only steps
            adv = advantage(state.critics, state.policy,
                            dataset.states[idx_ac], dataset.actions[idx_ac],
                            config.k_adv, config.a_max, rng)
            mean_adv = float(adv.mean())
    except PoisonedStateError as exc:
        if exc.step is None:
            raise PoisonedStateError(str(exc), step=state.step) from exc
        raise

    state.step += 1
    return {
        "step": state.step,
        "critic_loss": c_loss,
        "actor_loss": a_loss,
        "mean_advantage": mean_adv,
        "tree_log_norm": state.tree.log_norm()
        if state.algorithm == "ASAC" else math.nan,
    }


def _check_loss(value, step, what):
    if math.isnan(value):
        raise PoisonedStateError(f"{what} loss is NaN", step=step)
