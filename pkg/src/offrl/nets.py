"""Dense networks with hand-written gradients, all in float64 numpy.

Parameters live in flat lists of arrays (declaration order), so the Adam
state, polyak updates and checkpoints treat every architecture uniformly.
Two network families share one interface (forward / forward_cached /
backward / descriptor / state_arrays): plain rectifier MLPs and residual
stacks with layer normalization and spectrally-normalized linear layers.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, PoisonedStateError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LN_EPS = 1e-5
SN_EPS = 1e-12


def _tail_grad(net_grads, tail, out, accumulate):
    """Append (or fold into out[-1]) the trailing non-network gradient."""
    if out is None:
        return net_grads + [tail]
    if accumulate:
        out[-1] += tail
    else:
        out[-1][...] = tail
    return out


def _put(grads, i, a, b, accumulate):
    """grads[i] (+)= a @ b, writing in place when a buffer is present."""
    if grads[i] is None:
        grads[i] = a @ b
    elif accumulate:
        grads[i] += a @ b
    else:
        np.matmul(a, b, out=grads[i])


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    elif x.ndim == 2:
        squeeze = False
    else:
        raise ValueError(f"{what} must be 1-d or 2-d, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ValueError(f"{what} has dimension {x.shape[1]}, expected {dim}")
    return x, squeeze


def _fan_in_init(rng, din, dout):
    bound = 1.0 / np.sqrt(din)
    w = rng.uniform(-bound, bound, size=(din, dout))
    b = rng.uniform(-bound, bound, size=dout)
    return w, b


class Mlp:
    """Fully-connected network with rectifiers between hidden layers."""

    kind = "mlp"

    def __init__(self, layer_dims, rng):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ValueError(f"bad layer dims {layer_dims}")
        self.layer_dims = layer_dims
        self.in_dim = layer_dims[0]
        self.out_dim = layer_dims[-1]
        self.params = []
        for din, dout in zip(layer_dims[:-1], layer_dims[1:]):
            w, b = _fan_in_init(rng, din, dout)
            self.params += [w, b]
        self.buffers = []

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x):
        x, squeeze = _as_batch(x, self.in_dim)
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h[0] if squeeze else h

    def forward_cached(self, x):
        """Returns (output, cache); cache holds each layer's input."""
        x, _ = _as_batch(x, self.in_dim)
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
                acts.append(h)
        return h, acts

    def backward(self, cache, upstream, out=None, accumulate=False):
        """Gradients of sum_b <upstream_b, forward(x_b)> w.r.t. params and input.

        With out (a list shaped like params) gradients are written, or
        added when accumulate is set, into those persistent buffers;
        reusing one buffer list across steps avoids re-faulting large
        freshly-allocated gradient arrays every update.
        """
        acts = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape != (acts[0].shape[0], self.out_dim):
            raise ValueError(
                f"upstream shape {upstream.shape} does not match "
                f"({acts[0].shape[0]}, {self.out_dim})")
        grads = [None] * len(self.params) if out is None else out
        delta = upstream
        for i in reversed(range(len(self.params) // 2)):
            _put(grads, 2 * i, acts[i].T, delta, accumulate)
            if out is None:
                grads[2 * i + 1] = delta.sum(axis=0)
            elif accumulate:
                grads[2 * i + 1] += delta.sum(axis=0)
            else:
                delta.sum(axis=0, out=grads[2 * i + 1])
            delta = delta @ self.params[2 * i].T
            if i > 0:
                delta = delta * (acts[i] > 0.0)
        return grads, delta

    def grad_buffers(self):
        """Persistent gradient buffers matching params (lazily created)."""
        if not hasattr(self, "_grad_buf"):
            self._grad_buf = [np.zeros_like(p) for p in self.params]
        return self._grad_buf

    def descriptor(self):
        return {"kind": self.kind, "layer_dims": list(self.layer_dims)}

    def state_arrays(self):
        return list(self.params)

    def load_state_arrays(self, arrays):
        _copy_arrays(self.params, arrays, "mlp parameters")


def layer_norm_forward(x, gamma, beta):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def layer_norm_backward(cache, gamma, dy):
    xhat, inv_std = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std * (dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dgamma, dbeta


def power_iteration(w, u, iters=1):
    """Refine the leading right-singular direction u of w.

    Returns (sigma_estimate, u). sigma is ||w u|| with the refined u, a
    lower bound converging to the true spectral norm.
    """
    for _ in range(iters):
        v = w @ u
        v /= max(np.linalg.norm(v), SN_EPS)
        u = w.T @ v
        u /= max(np.linalg.norm(u), SN_EPS)
    return max(np.linalg.norm(w @ u), SN_EPS), u


def spectral_norm_estimate(w, iters=50, seed=0):
    """Power-iteration estimate of the spectral norm from a random start."""
    u = np.random.default_rng(seed).standard_normal(w.shape[1])
    u /= np.linalg.norm(u)
    sigma, _ = power_iteration(w, u, iters)
    return sigma


class _SnLinear:
    """Linear layer whose weight is divided by a power-iteration estimate
    of its spectral norm. The estimate treats the persistent direction u
    as a constant, which makes sigma = ||V u|| exactly differentiable with
    gradient v u^T (v = V u / sigma); backward() uses that identity.
    """

    def __init__(self, din, dout, rng):
        self.v_raw, self.bias = _fan_in_init(rng, din, dout)
        u = rng.standard_normal(dout)
        self.u = u / np.linalg.norm(u)

    def forward(self, x, power_iterate):
        if power_iterate:
            _, self.u = power_iteration(self.v_raw, self.u, iters=1)
        wu = self.v_raw @ self.u
        sigma = max(np.linalg.norm(wu), SN_EPS)
        v_dir = wu / sigma
        w_bar = self.v_raw / sigma
        out = x @ w_bar + self.bias
        return out, (x, w_bar, v_dir, sigma)

    def backward(self, cache, dz):
        x, w_bar, v_dir, sigma = cache
        db = dz.sum(axis=0)
        g = x.T @ dz
        dv_raw = (g - np.tensordot(g, w_bar, axes=2) * np.outer(v_dir, self.u)) / sigma
        dx = dz @ w_bar.T
        return dx, dv_raw, db


class ModernBlock:
    """Residual unit: x + SN-linear(relu(SN-linear(layernorm(x)))).

    Output shape equals input shape; both linear layers are width
    hidden_dim and spectrally normalized via one power iteration per
    training forward with a persistent direction vector.
    """

    def __init__(self, hidden_dim, rng):
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        self.hidden_dim = hidden_dim
        self.gamma = np.ones(hidden_dim)
        self.beta = np.zeros(hidden_dim)
        self.lin1 = _SnLinear(hidden_dim, hidden_dim, rng)
        self.lin2 = _SnLinear(hidden_dim, hidden_dim, rng)

    @property
    def params(self):
        return [self.gamma, self.beta, self.lin1.v_raw, self.lin1.bias,
                self.lin2.v_raw, self.lin2.bias]

    @property
    def buffers(self):
        return [self.lin1.u, self.lin2.u]

    def forward(self, x, power_iterate=False):
        x, squeeze = _as_batch(x, self.hidden_dim)
        out, _ = self.forward_cached(x, power_iterate)
        return out[0] if squeeze else out

    def forward_cached(self, x, power_iterate):
        ln_out, ln_cache = layer_norm_forward(x, self.gamma, self.beta)
        z1, c1 = self.lin1.forward(ln_out, power_iterate)
        h1 = np.maximum(z1, 0.0)
        z2, c2 = self.lin2.forward(h1, power_iterate)
        return x + z2, (ln_cache, c1, h1, c2)

    def backward(self, cache, dh):
        """dh is the gradient at the block output; returns (dx, grads)."""
        ln_cache, c1, h1, c2 = cache
        dh1, dv2, db2 = self.lin2.backward(c2, dh)
        dz1 = dh1 * (h1 > 0.0)
        dln, dv1, db1 = self.lin1.backward(c1, dz1)
        dres, dgamma, dbeta = layer_norm_backward(ln_cache, self.gamma, dln)
        return dh + dres, [dgamma, dbeta, dv1, db1, dv2, db2]


def modern_block_forward(block, x, power_iterate=False):
    """Residual-block forward pass (see ModernBlock)."""
    return block.forward(x, power_iterate)


class ModernNet:
    """Input projection, residual blocks, output projection."""

    kind = "modern"

    def __init__(self, in_dim, hidden_dim, n_blocks, out_dim, rng):
        if min(in_dim, hidden_dim, out_dim) < 1 or n_blocks < 1:
            raise ValueError("dimensions and block count must be positive")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.out_dim = out_dim
        self.power_iterate = True
        w_in, b_in = _fan_in_init(rng, in_dim, hidden_dim)
        self._blocks = [ModernBlock(hidden_dim, rng) for _ in range(n_blocks)]
        w_out, b_out = _fan_in_init(rng, hidden_dim, out_dim)
        self.params = [w_in, b_in]
        for block in self._blocks:
            self.params += block.params
        self.params += [w_out, b_out]
        self.buffers = []
        for block in self._blocks:
            self.buffers += block.buffers

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x):
        x, squeeze = _as_batch(x, self.in_dim)
        out, _ = self._forward(x)
        return out[0] if squeeze else out

    def forward_cached(self, x):
        x, _ = _as_batch(x, self.in_dim)
        return self._forward(x)

    def _forward(self, x):
        h = x @ self.params[0] + self.params[1]
        block_caches = []
        for block in self._blocks:
            h, cache = block.forward_cached(h, self.power_iterate)
            block_caches.append(cache)
        out = h @ self.params[-2] + self.params[-1]
        return out, (x, block_caches, h)

    def backward(self, cache, upstream, out=None, accumulate=False):
        x, block_caches, h_last = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        grads = [None] * len(self.params)
        grads[-2] = h_last.T @ upstream
        grads[-1] = upstream.sum(axis=0)
        dh = upstream @ self.params[-2].T
        for bi in reversed(range(self.n_blocks)):
            dh, block_grads = self._blocks[bi].backward(block_caches[bi], dh)
            base = 2 + 6 * bi
            grads[base:base + 6] = block_grads
        grads[0] = x.T @ dh
        grads[1] = dh.sum(axis=0)
        dx = dh @ self.params[0].T
        if out is not None:
            for buf, g in zip(out, grads):
                if accumulate:
                    buf += g
                else:
                    buf[...] = g
            grads = out
        return grads, dx

    def grad_buffers(self):
        if not hasattr(self, "_grad_buf"):
            self._grad_buf = [np.zeros_like(p) for p in self.params]
        return self._grad_buf

    def descriptor(self):
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "hidden_dim": self.hidden_dim,
            "n_blocks": self.n_blocks,
            "out_dim": self.out_dim,
        }

    def state_arrays(self):
        return list(self.params) + list(self.buffers)

    def load_state_arrays(self, arrays):
        n = len(self.params)
        _copy_arrays(self.params, arrays[:n], "modern parameters")
        _copy_arrays(self.buffers, arrays[n:], "modern buffers")


def net_from_descriptor(desc):
    rng = np.random.default_rng(0)
    kind = desc.get("kind")
    if kind == "mlp":
        return Mlp(desc["layer_dims"], rng)
    if kind == "modern":
        return ModernNet(desc["in_dim"], desc["hidden_dim"], desc["n_blocks"],
                         desc["out_dim"], rng)
    raise CheckpointError(f"unknown network kind {kind!r}")


class GaussianPolicy:
    """Diagonal Gaussian over the action box [-1, 1]^d.

    The mean is state-dependent; log-stds are a free per-dimension vector
    clamped to [LOG_STD_MIN, LOG_STD_MAX]. Samples are clipped to the box;
    densities are evaluated with the unclipped mean.
    """

    kind = "gaussian_policy"

    def __init__(self, mean_net, log_std_init=0.0):
        self.mean_net = mean_net
        self.action_dim = mean_net.out_dim
        self.log_std = np.full(self.action_dim, float(log_std_init))

    @property
    def params(self):
        return self.mean_net.params + [self.log_std]

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def mean_action(self, states):
        return np.clip(self.mean_net.forward(states), -1.0, 1.0)

    def sample(self, states, rng):
        states, squeeze = _as_batch(states, self.mean_net.in_dim, "states")
        mu = self.mean_net.forward(states)
        z = rng.standard_normal(mu.shape)
        a = np.clip(mu + np.exp(self.log_std) * z, -1.0, 1.0)
        return a[0] if squeeze else a

    def sample_cached(self, states, rng):
        """Reparameterized sample with the pieces needed for a backward pass."""
        states, _ = _as_batch(states, self.mean_net.in_dim, "states")
        mu, net_cache = self.mean_net.forward_cached(states)
        z = rng.standard_normal(mu.shape)
        raw = mu + np.exp(self.log_std) * z
        actions = np.clip(raw, -1.0, 1.0)
        inside = (raw > -1.0) & (raw < 1.0)
        return actions, (net_cache, z, inside)

    def grad_buffers(self):
        """Persistent gradient buffers matching params (lazily created)."""
        if not hasattr(self, "_grad_buf"):
            self._grad_buf = self.mean_net.grad_buffers() \
                + [np.zeros_like(self.log_std)]
        return self._grad_buf

    def sample_backward(self, cache, d_actions, out=None, accumulate=False):
        """Gradients of <d_actions, actions> w.r.t. policy params (clip
        boundaries contribute zero)."""
        net_cache, z, inside = cache
        g = d_actions * inside
        net_grads, _ = self.mean_net.backward(
            net_cache, g, None if out is None else out[:-1], accumulate)
        d_log_std = (g * np.exp(self.log_std) * z).sum(axis=0)
        return _tail_grad(net_grads, d_log_std, out, accumulate)

    def log_prob(self, states, actions):
        states, squeeze = _as_batch(states, self.mean_net.in_dim, "states")
        actions, _ = _as_batch(actions, self.action_dim, "actions")
        mu = self.mean_net.forward(states)
        lp = self._log_prob_from_mean(mu, actions)
        return float(lp[0]) if squeeze else lp

    def _log_prob_from_mean(self, mu, actions):
        sigma = np.exp(self.log_std)
        zs = (actions - mu) / sigma
        return -0.5 * (zs ** 2).sum(axis=1) - self.log_std.sum() \
            - 0.5 * self.action_dim * np.log(2.0 * np.pi)

    def weighted_log_prob_grads(self, states, actions, weights, out=None,
                                accumulate=False):
        """Value and parameter gradients of sum_i weights_i * log pi(a_i|s_i)."""
        states, _ = _as_batch(states, self.mean_net.in_dim, "states")
        actions, _ = _as_batch(actions, self.action_dim, "actions")
        weights = np.asarray(weights, dtype=np.float64)
        mu, net_cache = self.mean_net.forward_cached(states)
        sigma = np.exp(self.log_std)
        zs = (actions - mu) / sigma
        value = float(weights @ self._log_prob_from_mean(mu, actions))
        d_mu = weights[:, None] * zs / sigma
        net_grads, _ = self.mean_net.backward(
            net_cache, d_mu, None if out is None else out[:-1], accumulate)
        d_log_std = (weights[:, None] * (zs ** 2 - 1.0)).sum(axis=0)
        return value, _tail_grad(net_grads, d_log_std, out, accumulate)

    def descriptor(self):
        return {"kind": self.kind, "mean_net": self.mean_net.descriptor()}

    def state_arrays(self):
        return self.mean_net.state_arrays() + [self.log_std]

    def load_state_arrays(self, arrays):
        self.mean_net.load_state_arrays(arrays[:-1])
        _copy_arrays([self.log_std], arrays[-1:], "policy log_std")

    @classmethod
    def from_descriptor(cls, desc):
        return cls(net_from_descriptor(desc["mean_net"]))


class CriticEnsemble:
    """n independent state-action critics plus delayed (polyak) copies."""

    kind = "critic_ensemble"

    def __init__(self, members):
        if len(members) < 2:
            raise ValueError("ensemble needs at least 2 members")
        self.members = list(members)
        self.targets = copy.deepcopy(self.members)
        for t in self.targets:
            if hasattr(t, "power_iterate"):
                t.power_iterate = False  # delayed copies run frozen

    @property
    def n(self):
        return len(self.members)

    def q_values(self, states, actions, target=False):
        """Per-member Q at (s, a); shape (n, batch)."""
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        nets = self.targets if target else self.members
        return np.stack([net.forward(x)[:, 0] for net in nets])

    def polyak_update(self, rho):
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {rho}")
        for online, target in zip(self.members, self.targets):
            for p_o, p_t in zip(online.params, target.params):
                p_t[...] = rho * p_t + (1.0 - rho) * p_o
            for b_o, b_t in zip(online.buffers, target.buffers):
                b_t[...] = b_o

    def descriptor(self):
        return {"kind": self.kind, "n": self.n,
                "member": self.members[0].descriptor()}

    def state_arrays(self):
        arrays = []
        for net in self.members + self.targets:
            arrays += net.state_arrays()
        return arrays

    def load_state_arrays(self, arrays):
        per = len(self.members[0].state_arrays())
        for i, net in enumerate(self.members + self.targets):
            net.load_state_arrays(arrays[i * per:(i + 1) * per])

    @classmethod
    def from_descriptor(cls, desc):
        members = [net_from_descriptor(desc["member"]) for _ in range(desc["n"])]
        return cls(members)


def polyak_update(ensemble, rho):
    """target <- rho * target + (1 - rho) * online, per parameter."""
    ensemble.polyak_update(rho)


# ----------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    _scratch: list = field(default_factory=list, repr=False)

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   _scratch=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard Adam update, in place, with bias correction."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    for g in grads:
        if np.isnan(g).any():
            raise PoisonedStateError("NaN gradient reached the optimizer")
    if not state._scratch:  # states built before scratch buffers existed
        state._scratch = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v, t in zip(params, grads, state.m, state.v, state._scratch):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        np.multiply(g, g, out=t)
        v *= beta2
        v += (1.0 - beta2) * t
        np.divide(v, bc2, out=t)
        np.sqrt(t, out=t)
        t += eps
        np.divide(m, t, out=t)
        t *= lr / bc1
        p -= t


# ----------------------------------------------------------------------
# Architecture presets (actor / critic / value shapes per preset name)

ARCHITECTURE_PRESETS = ("simple-small", "simple-large", "modern-large")


def make_actor_net(preset, state_dim, action_dim, rng):
    if preset == "simple-small":
        return Mlp([state_dim, 256, 256, action_dim], rng)
    if preset == "simple-large":
        return Mlp([state_dim] + [1024] * 5 + [action_dim], rng)
    if preset == "modern-large":
        return ModernNet(state_dim, 1024, 2, action_dim, rng)
    raise ValueError(f"unknown preset {preset!r}")


def make_critic_net(preset, state_dim, action_dim, rng):
    if preset == "simple-small":
        return Mlp([state_dim + action_dim, 256, 256, 1], rng)
    if preset == "simple-large":
        return Mlp([state_dim + action_dim, 256, 256, 256, 1], rng)
    if preset == "modern-large":
        return ModernNet(state_dim + action_dim, 256, 1, 1, rng)
    raise ValueError(f"unknown preset {preset!r}")


def make_value_net(preset, state_dim, rng):
    if preset == "simple-small":
        return Mlp([state_dim, 256, 256, 1], rng)
    if preset in ("simple-large", "modern-large"):
        return Mlp([state_dim, 1024, 1024, 1], rng)
    raise ValueError(f"unknown preset {preset!r}")


def make_policy(preset, state_dim, action_dim, rng):
    return GaussianPolicy(make_actor_net(preset, state_dim, action_dim, rng))


def make_critic_ensemble(preset, state_dim, action_dim, n_critics, rng):
    members = [make_critic_net(preset, state_dim, action_dim, rng)
               for _ in range(n_critics)]
    return CriticEnsemble(members)


# ----------------------------------------------------------------------
# Checkpoints: magic, uint32 header length, JSON header ending in a
# newline, then one flat little-endian float64 array covering every
# component's state arrays in declaration order.

CHECKPOINT_MAGIC = b"OFFRLCK1"

_COMPONENT_KINDS = {
    "mlp": net_from_descriptor,
    "modern": net_from_descriptor,
    "gaussian_policy": GaussianPolicy.from_descriptor,
    "critic_ensemble": CriticEnsemble.from_descriptor,
}


def save_checkpoint(path, components):
    """Write named components ({name: object with descriptor/state_arrays})."""
    entries = []
    flat_parts = []
    for name, obj in components.items():
        arrays = obj.state_arrays()
        entries.append({
            "name": name,
            "descriptor": obj.descriptor(),
            "shapes": [list(a.shape) for a in arrays],
        })
        flat_parts += [np.ascontiguousarray(a, dtype=np.float64).ravel()
                       for a in arrays]
    header = json.dumps({"format_version": 1, "components": entries}) + "\n"
    header_bytes = header.encode("utf-8")
    flat = (np.concatenate(flat_parts) if flat_parts
            else np.zeros(0, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into freshly-built components ({name: object})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint header")
    (header_len,) = struct.unpack("<I", data[8:12])
    header_end = 12 + header_len
    if len(data) < header_end:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unparseable checkpoint header: {exc}") from exc
    payload = data[header_end:]
    if len(payload) % 8:
        raise CheckpointError("checkpoint payload truncated mid-value")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    components = {}
    offset = 0
    for entry in header.get("components", []):
        desc = entry["descriptor"]
        builder = _COMPONENT_KINDS.get(desc.get("kind"))
        if builder is None:
            raise CheckpointError(f"unknown component kind {desc.get('kind')!r}")
        obj = builder(desc)
        arrays = []
        for shape in entry["shapes"]:
            size = int(np.prod(shape)) if shape else 1
            if offset + size > flat.size:
                raise CheckpointError("checkpoint payload shorter than header claims")
            arrays.append(flat[offset:offset + size].reshape(shape))
            offset += size
        obj.load_state_arrays(arrays)
        components[entry["name"]] = obj
    if offset != flat.size:
        raise CheckpointError("checkpoint payload longer than header claims")
    return components


def _copy_arrays(dest, src, what):
    if len(dest) != len(src):
        raise CheckpointError(f"{what}: expected {len(dest)} arrays, got {len(src)}")
    for d, s in zip(dest, src):
        s = np.asarray(s, dtype=np.float64)
        if d.shape != s.shape:
            raise CheckpointError(f"{what}: shape {s.shape} != expected {d.shape}")
        d[...] = s
