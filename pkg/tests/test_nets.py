import numpy as np
import pytest

from offrl.errors import CheckpointError, PoisonedStateError
from offrl.nets import (
    AdamState,
    CriticEnsemble,
    GaussianPolicy,
    Mlp,
    ModernNet,
    adam_step,
    load_checkpoint,
    make_actor_net,
    make_critic_net,
    make_policy,
    make_value_net,
    polyak_update,
    power_iteration,
    save_checkpoint,
    spectral_norm_estimate,
)


def fd_grads(f, params, h=1e-5):
    """Central finite differences of scalar f() w.r.t. every param entry."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def reference_forward(mlp, x):
    """Independent loop-based forward pass used as an oracle."""
    h = list(x)
    n_layers = len(mlp.params) // 2
    for li in range(n_layers):
        w, b = mlp.params[2 * li], mlp.params[2 * li + 1]
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            out.append(acc)
        if li < n_layers - 1:
            out = [v if v > 0 else 0.0 for v in out]
        h = out
    return np.array(h)


class TestMlpForward:
    def test_zero_net_outputs_zero(self):
        net = Mlp([3, 4, 2], np.random.default_rng(0))
        for p in net.params:
            p[...] = 0.0
        assert np.all(net.forward(np.ones(3)) == 0.0)

    def test_identity_linear_echoes_input(self):
        net = Mlp([3, 3], np.random.default_rng(0))
        net.params[0][...] = np.eye(3)
        net.params[1][...] = 0.0
        x = np.array([0.3, -1.2, 2.0])
        assert np.allclose(net.forward(x), x, atol=0)

    def test_matches_reference_forward(self):
        rng = np.random.default_rng(1)
        for dims in ([2, 5, 3], [4, 8, 8, 2], [3, 1]):
            net = Mlp(dims, rng)
            x = rng.standard_normal(dims[0])
            assert np.allclose(net.forward(x), reference_forward(net, x),
                               rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        net = Mlp([3, 2], np.random.default_rng(0))
        with pytest.raises(ValueError):
            net.forward(np.ones(4))

    def test_param_count(self):
        dims = [4, 7, 5, 2]
        net = Mlp(dims, np.random.default_rng(0))
        expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        assert net.n_params == expected


class TestGradients:
    @pytest.mark.parametrize("dims", [[3, 2], [2, 5, 3], [4, 6, 6, 2]])
    def test_mlp_fd_check(self, dims):
        rng = np.random.default_rng(2)
        net = Mlp(dims, rng)
        x = rng.standard_normal((4, dims[0]))
        up = rng.standard_normal((4, dims[-1]))
        _, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, up)
        num = fd_grads(lambda: float((net.forward(x) * up).sum()), net.params)
        assert max_rel_err(grads, num) < 1e-4

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = Mlp([3, 5, 2], rng)
        x = rng.standard_normal((2, 3))
        up = rng.standard_normal((2, 2))
        _, cache = net.forward_cached(x)
        _, dx = net.backward(cache, up)
        h = 1e-5
        num = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                num[i, j] = ((net.forward(xp) * up).sum()
                             - (net.forward(xm) * up).sum()) / (2 * h)
        assert max_rel_err([dx], [num]) < 1e-4

    def test_zero_upstream_zero_grads(self):
        net = Mlp([3, 4, 2], np.random.default_rng(4))
        x = np.ones((2, 3))
        _, cache = net.forward_cached(x)
        grads, dx = net.backward(cache, np.zeros((2, 2)))
        assert all(np.all(g == 0) for g in grads)
        assert np.all(dx == 0)

    def test_linear_unit_upstream_gradient_is_input(self):
        # d<e_j, W^T x + b>/dW = x in column j, zero elsewhere
        rng = np.random.default_rng(5)
        net = Mlp([4, 3], rng)
        x = rng.standard_normal(4)
        _, cache = net.forward_cached(x)
        up = np.zeros(3)
        up[1] = 1.0
        grads, _ = net.backward(cache, up)
        assert np.allclose(grads[0][:, 1], x)
        assert np.all(grads[0][:, [0, 2]] == 0)

    def test_modern_net_fd_check(self):
        rng = np.random.default_rng(6)
        net = ModernNet(3, 8, 2, 2, rng)
        net.power_iterate = False  # freeze the direction vectors for FD
        x = rng.standard_normal((3, 3))
        up = rng.standard_normal((3, 2))
        _, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, up)
        num = fd_grads(lambda: float((net.forward(x) * up).sum()), net.params)
        assert max_rel_err(grads, num) < 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        rng = np.random.default_rng(7)
        params = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        before = [p.copy() for p in params]
        state = AdamState.for_params(params)
        adam_step(params, [np.zeros_like(p) for p in params], state, lr=1e-3)
        assert all(np.array_equal(p, b) for p, b in zip(params, before))

    def test_first_step_magnitude(self):
        # bias-corrected first step with constant gradient moves by ~lr
        params = [np.zeros(4)]
        state = AdamState.for_params(params)
        g = np.array([0.5, -2.0, 1e-3, 10.0])
        adam_step(params, [g], state, lr=0.01)
        assert np.allclose(params[0], -0.01 * np.sign(g), rtol=1e-4)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(8)
            params = [rng.standard_normal((4, 4))]
            state = AdamState.for_params(params)
            for _ in range(25):
                adam_step(params, [rng.standard_normal((4, 4))], state, lr=3e-4)
            return params[0]

        assert np.array_equal(run(), run())

    def test_nan_gradient_poisons(self):
        params = [np.zeros(2)]
        state = AdamState.for_params(params)
        with pytest.raises(PoisonedStateError):
            adam_step(params, [np.array([1.0, np.nan])], state, lr=1e-3)


class TestPolyak:
    def make_ensemble(self):
        rng = np.random.default_rng(9)
        return CriticEnsemble([Mlp([3, 4, 1], rng) for _ in range(2)])

    def test_paper_coefficient(self):
        ens = self.make_ensemble()
        for net in ens.targets:
            for p in net.params:
                p[...] = 0.0
        for net in ens.members:
            for p in net.params:
                p[...] = 1.0
        polyak_update(ens, 0.995)
        for net in ens.targets:
            for p in net.params:
                assert np.all(p == 0.995 * 0.0 + (1 - 0.995) * 1.0)

    def test_half_averages_exactly(self):
        ens = self.make_ensemble()
        old = [[p.copy() for p in net.params] for net in ens.targets]
        polyak_update(ens, 0.5)
        for net, olds, online in zip(ens.targets, old, ens.members):
            for p, o, q in zip(net.params, olds, online.params):
                assert np.array_equal(p, 0.5 * o + 0.5 * q)

    def test_rho_one_rejected(self):
        ens = self.make_ensemble()
        with pytest.raises(ValueError):
            polyak_update(ens, 1.0)

    def test_geometric_convergence(self):
        ens = self.make_ensemble()
        rho = 0.9
        diffs0 = [p_t - p_o for net_t, net_o in zip(ens.targets, ens.members)
                  for p_t, p_o in zip(net_t.params, net_o.params)]
        for _ in range(50):
            polyak_update(ens, rho)
        diffs = [p_t - p_o for net_t, net_o in zip(ens.targets, ens.members)
                 for p_t, p_o in zip(net_t.params, net_o.params)]
        for d0, d in zip(diffs0, diffs):
            assert np.allclose(d, rho ** 50 * d0, rtol=1e-9, atol=1e-12)


class TestGaussianPolicy:
    def make_policy(self, state_dim=3, action_dim=2, seed=10):
        net = Mlp([state_dim, 8, action_dim], np.random.default_rng(seed))
        return GaussianPolicy(net)

    def test_log_prob_at_mode_unit_std(self):
        pol = self.make_policy()
        s = np.zeros(3)
        mu = pol.mean_net.forward(s)
        lp = pol.log_prob(s, mu)
        assert lp == pytest.approx(-(2 / 2) * np.log(2 * np.pi), abs=1e-12)

    def test_log_prob_one_sigma_away(self):
        pol = self.make_policy(action_dim=1)
        s = np.zeros(3)
        mu = float(pol.mean_net.forward(s)[0])
        lp = pol.log_prob(s, np.array([mu + 1.0]))
        assert lp == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5, abs=1e-12)

    def test_density_normalizes(self):
        # uniform-proposal Monte Carlo integral of exp(log_prob) over a
        # wide box around the mean must come back as 1
        pol = self.make_policy(action_dim=1)
        pol.log_std[...] = -0.5
        rng = np.random.default_rng(11)
        s = np.zeros(3)
        mu = float(pol.mean_net.forward(s)[0])
        sigma = float(np.exp(pol.log_std[0]))
        lo, hi = mu - 8 * sigma, mu + 8 * sigma
        a = rng.uniform(lo, hi, size=(1_000_000, 1))
        states = np.zeros((a.shape[0], 3))
        integral = np.exp(pol.log_prob(states, a)).mean() * (hi - lo)
        assert integral == pytest.approx(1.0, rel=0.01)

    def test_sample_inside_box(self):
        pol = self.make_policy()
        pol.log_std[...] = 1.5
        a = pol.sample(np.zeros((1000, 3)), np.random.default_rng(12))
        assert np.all(a >= -1.0) and np.all(a <= 1.0)

    def test_degenerate_std_sticks_to_mean(self):
        pol = self.make_policy()
        pol.log_std[...] = -5.0
        s = np.zeros((100000, 3))
        mu = np.clip(pol.mean_net.forward(s[0]), -1, 1)
        a = pol.sample(s, np.random.default_rng(13))
        assert np.abs(a - mu).max() <= 6.8e-3 * 6.0

    def test_sample_mean_matches_network(self):
        pol = self.make_policy()
        for p in pol.mean_net.params:
            p *= 0.1  # keep the mean well inside the box
        pol.log_std[...] = -2.0
        s = np.zeros((100000, 3))
        mu = pol.mean_net.forward(s[0])
        a = pol.sample(s, np.random.default_rng(14))
        se = np.exp(-2.0) / np.sqrt(len(a))
        assert np.all(np.abs(a.mean(axis=0) - mu) < 3 * se)

    def test_weighted_log_prob_fd(self):
        rng = np.random.default_rng(15)
        pol = self.make_policy()
        states = rng.standard_normal((5, 3))
        actions = rng.uniform(-1, 1, (5, 2))
        w = rng.random(5)
        val, grads = pol.weighted_log_prob_grads(states, actions, w)
        assert val == pytest.approx(float(w @ pol.log_prob(states, actions)))
        num = fd_grads(lambda: float(w @ pol.log_prob(states, actions)), pol.params)
        assert max_rel_err(grads, num) < 1e-4

    def test_sample_backward_fd(self):
        rng = np.random.default_rng(16)
        pol = self.make_policy()
        for p in pol.mean_net.params:
            p *= 0.1
        pol.log_std[...] = -1.0
        states = rng.standard_normal((4, 3))
        d_actions = rng.standard_normal((4, 2))

        def sample_value():
            a, _ = pol.sample_cached(states, np.random.default_rng(99))
            return float((a * d_actions).sum())

        actions, cache = pol.sample_cached(states, np.random.default_rng(99))
        grads = pol.sample_backward(cache, d_actions)
        num = fd_grads(sample_value, pol.params)
        assert max_rel_err(grads, num) < 1e-4


class TestModernNet:
    def test_zero_block_is_identity(self):
        from offrl.nets import ModernBlock, modern_block_forward
        rng = np.random.default_rng(17)
        block = ModernBlock(5, rng)
        block.lin1.v_raw[...] = 0.0
        block.lin1.bias[...] = 0.0
        block.lin2.v_raw[...] = 0.0
        block.lin2.bias[...] = 0.0
        x = rng.standard_normal((4, 5))
        assert np.allclose(modern_block_forward(block, x), x, atol=1e-12)

    def test_block_output_shape_matches_input(self):
        from offrl.nets import ModernBlock
        block = ModernBlock(6, np.random.default_rng(18))
        x = np.random.default_rng(19).standard_normal((7, 6))
        assert block.forward(x).shape == x.shape
        with pytest.raises(ValueError):
            block.forward(np.ones(5))

    def test_zero_blocks_net_is_identity(self):
        rng = np.random.default_rng(17)
        net = ModernNet(3, 3, 1, 3, rng)
        net.params[0][...] = np.eye(3)
        net.params[1][...] = 0.0
        net.params[-2][...] = np.eye(3)
        net.params[-1][...] = 0.0
        for block in net._blocks:
            block.lin1.v_raw[...] = 0.0
            block.lin1.bias[...] = 0.0
            block.lin2.v_raw[...] = 0.0
            block.lin2.bias[...] = 0.0
        x = rng.standard_normal(3)
        assert np.allclose(net.forward(x), x, atol=1e-12)

    def test_power_iteration_known_singular_value(self):
        w = np.diag([3.0, 1.0])
        assert spectral_norm_estimate(w, iters=50) == pytest.approx(3.0, rel=0.01)

    def test_normalized_weight_estimate_near_one(self):
        rng = np.random.default_rng(18)
        net = ModernNet(4, 32, 1, 2, rng)
        for _ in range(100):  # one power iteration per forward
            net.forward(rng.standard_normal((8, 4)))
        for block in net._blocks:
            for lin in (block.lin1, block.lin2):
                sigma_hat, _ = power_iteration(lin.v_raw, lin.u.copy(), iters=0)
                w_bar = lin.v_raw / sigma_hat
                # estimate along the persistent vector
                assert np.linalg.norm(w_bar @ lin.u) == pytest.approx(1.0, abs=1e-9)
                # long fresh power iteration agrees within tolerance
                assert 0.95 <= spectral_norm_estimate(w_bar, iters=200) <= 1.05

    def test_output_shape_matches_input_shape(self):
        net = ModernNet(5, 16, 2, 5, np.random.default_rng(19))
        x = np.random.default_rng(20).standard_normal((7, 5))
        assert net.forward(x).shape == (7, 5)

    def test_dimension_mismatch_raises(self):
        net = ModernNet(5, 16, 1, 2, np.random.default_rng(21))
        with pytest.raises(ValueError):
            net.forward(np.ones(4))


class TestPresets:
    def test_actor_shapes(self):
        rng = np.random.default_rng(22)
        small = make_actor_net("simple-small", 10, 4, rng)
        assert small.layer_dims == [10, 256, 256, 4]
        large = make_actor_net("simple-large", 10, 4, rng)
        assert large.layer_dims == [10] + [1024] * 5 + [4]
        modern = make_actor_net("modern-large", 10, 4, rng)
        assert (modern.hidden_dim, modern.n_blocks) == (1024, 2)

    def test_critic_shapes(self):
        rng = np.random.default_rng(23)
        assert make_critic_net("simple-small", 10, 4, rng).layer_dims == \
            [14, 256, 256, 1]
        assert make_critic_net("simple-large", 10, 4, rng).layer_dims == \
            [14, 256, 256, 256, 1]
        modern = make_critic_net("modern-large", 10, 4, rng)
        assert (modern.hidden_dim, modern.n_blocks) == (256, 1)

    def test_value_shapes(self):
        rng = np.random.default_rng(24)
        assert make_value_net("simple-small", 10, rng).layer_dims == \
            [10, 256, 256, 1]
        assert make_value_net("simple-large", 10, rng).layer_dims == \
            [10, 1024, 1024, 1]
        assert make_value_net("modern-large", 10, rng).layer_dims == \
            [10, 1024, 1024, 1]

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            make_actor_net("huge", 4, 2, np.random.default_rng(0))


class TestCheckpoints:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(25)
        policy = make_policy("simple-small", 6, 3, rng)
        critics = CriticEnsemble([Mlp([9, 16, 1], rng) for _ in range(3)])
        path = tmp_path / "state.ck"
        save_checkpoint(path, {"policy": policy, "critics": critics})
        loaded = load_checkpoint(path)
        for a, b in zip(policy.state_arrays(), loaded["policy"].state_arrays()):
            assert np.array_equal(a, b)
        for a, b in zip(critics.state_arrays(), loaded["critics"].state_arrays()):
            assert np.array_equal(a, b)
        assert loaded["critics"].n == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ck"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(26)
        policy = make_policy("simple-small", 4, 2, rng)
        path = tmp_path / "state.ck"
        save_checkpoint(path, {"policy": policy})
        data = path.read_bytes()
        path.write_bytes(data[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_modern_roundtrip(self, tmp_path):
        rng = np.random.default_rng(27)
        net = ModernNet(4, 8, 1, 2, rng)
        net.forward(rng.standard_normal((3, 4)))  # move the persistent vectors
        path = tmp_path / "m.ck"
        save_checkpoint(path, {"net": net})
        loaded = load_checkpoint(path)["net"]
        for a, b in zip(net.state_arrays(), loaded.state_arrays()):
            assert np.array_equal(a, b)
