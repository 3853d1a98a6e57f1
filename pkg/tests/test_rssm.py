import numpy as np
import pytest

from clothlab.masks import rotate90_bits, transform_bits
from clothlab.nn import core
from clothlab.nn.core import Tape
from clothlab.nn.gradcheck import finite_diff_check
from clothlab.rssm import (
    GoalConditionedRSSM,
    RSSMConfig,
    TrajectoryBatch,
    augment_goal,
    augment_trajectory,
    elbo_loss,
    overshoot_loss,
    transform_actions,
)

TINY = RSSMConfig(deterministic_dim=16, stochastic_dim=6, hidden_dim=16,
                  obs_resolution=32, batch_size=2, sequence_length=4,
                  free_nats=0.5)


def tiny_batch(cfg=TINY, seed=0, b=None, t=None):
    rng = np.random.default_rng(seed)
    b = b or cfg.batch_size
    t = t or cfg.sequence_length
    r = cfg.obs_resolution
    return TrajectoryBatch(
        obs=(rng.random((b, t, r * r)) < 0.3).astype(float),
        actions=rng.uniform(-1, 1, (b, t, 4)),
        rewards=rng.random((b, t)) * 0.5,
        goal=(rng.random((b, r * r)) < 0.3).astype(float),
        validity=np.ones((b, t)),
    )


@pytest.fixture(scope="module")
def model():
    return GoalConditionedRSSM(TINY)


class TestEncode:
    def test_deterministic(self, model):
        mask = (np.random.default_rng(0).random((1, 32 * 32)) < 0.4).astype(float)
        a = model.encode(mask)
        b = model.encode(mask)
        assert np.array_equal(a.data, b.data)

    def test_distinct_masks_differ(self, model):
        rng = np.random.default_rng(1)
        m1 = (rng.random((1, 1024)) < 0.4).astype(float)
        m2 = (rng.random((1, 1024)) < 0.4).astype(float)
        assert not np.array_equal(model.encode(m1).data, model.encode(m2).data)

    def test_resolution_mismatch(self, model):
        from clothlab.errors import DimensionError

        with pytest.raises(DimensionError):
            model.encode(np.zeros((1, 64 * 64)))

    def test_shared_encoder_parameter_identity(self, model):
        # the goal path and the obs path must hit the same parameter objects
        mask = np.zeros((1, 1024))
        before = {k: id(v) for k, v in model.store.params.items() if k.startswith("enc.")}
        model.encode(mask)
        after = {k: id(v) for k, v in model.store.params.items() if k.startswith("enc.")}
        assert before == after
        assert any(k.startswith("enc.") for k in model.store.params)
        # no separate goal-encoder parameter family exists
        assert not any("goal" in k for k in model.store.params)


class TestLatentHeads:
    def test_std_floor_everywhere(self, model):
        rng = np.random.default_rng(0)
        h = model.initial_state(3)
        h_t = model.recurrent_step(h, rng.uniform(-1, 1, (3, 4)))
        e = model.encode((rng.random((3, 1024)) < 0.5).astype(float))
        post = model.posterior(h_t, e, e, rng=rng)
        prior = model.prior(h_t, e, rng=rng)
        assert post.std.data.min() >= TINY.min_std
        assert prior.std.data.min() >= TINY.min_std
        assert post.kind == "posterior" and prior.kind == "prior"

    def test_same_noise_same_sample(self, model):
        rng = np.random.default_rng(0)
        h = model.initial_state(1)
        h_t = model.recurrent_step(h, np.zeros((1, 4)))
        e = model.encode(np.ones((1, 1024)))
        noise = np.random.default_rng(5).standard_normal((1, TINY.stochastic_dim))
        a = model.posterior(h_t, e, e, noise=noise)
        b = model.posterior(h_t, e, e, noise=noise)
        assert np.array_equal(a.z.data, b.z.data)

    def test_goal_sensitivity(self, model):
        rng = np.random.default_rng(2)
        h = model.initial_state(1)
        h_t = model.recurrent_step(h, np.zeros((1, 4)))
        e_x = model.encode((rng.random((1, 1024)) < 0.4).astype(float))
        e_g1 = model.encode((rng.random((1, 1024)) < 0.4).astype(float))
        e_g2 = model.encode((rng.random((1, 1024)) < 0.4).astype(float))
        p1 = model.posterior(h_t, e_x, e_g1)
        p2 = model.posterior(h_t, e_x, e_g2)
        assert not np.array_equal(p1.mean.data, p2.mean.data)
        q1 = model.prior(h_t, e_g1)
        q2 = model.prior(h_t, e_g2)
        assert not np.array_equal(q1.mean.data, q2.mean.data)

    def test_recurrent_step_shapes_and_determinism(self, model):
        state = model.initial_state(2)
        action = np.random.default_rng(0).uniform(-1, 1, (2, 4))
        h1 = model.recurrent_step(state, action)
        h2 = model.recurrent_step(state, action)
        assert h1.data.shape == (2, TINY.deterministic_dim)
        assert np.array_equal(h1.data, h2.data)

    def test_decoder_shapes(self, model):
        rng = np.random.default_rng(1)
        state = model.initial_state(2)
        h_t = model.recurrent_step(state, np.zeros((2, 4)))
        e = model.encode(np.zeros((2, 1024)))
        post = model.posterior(h_t, e, e, rng=rng)
        logits = model.decode_obs(post)
        assert logits.data.shape == (2, 1024)
        r_mean, r_std = model.decode_reward(post)
        assert r_mean.data.shape == (2, 1)
        assert r_std.data.min() >= TINY.min_std

    def test_action_gradient_matches_finite_difference(self, model):
        # d(scalar of h_t)/d(action) via the tape vs central differences
        action = np.array([[0.2, -0.3, 0.1, 0.4]])
        state = model.initial_state(1)

        def scalar_of(a):
            h = model.recurrent_step(state, a)
            return float((h.data ** 2).sum())

        act_t = core.Tensor(action, requires=True)
        with Tape() as tape:
            h = model.recurrent_step(
                type(state)(state.h, state.z, state.mean, state.std, state.kind),
                act_t)
            tape.backward(core.total(core.square(h)))
        eps = 1e-6
        for i in range(4):
            up, down = action.copy(), action.copy()
            up[0, i] += eps
            down[0, i] -= eps
            fd = (scalar_of(up) - scalar_of(down)) / (2 * eps)
            assert fd == pytest.approx(act_t.grad[0, i], rel=1e-4, abs=1e-8)


class TestElboLoss:
    def test_posterior_equals_prior_zero_kl(self):
        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=3,
                         free_nats=0.0)
        model = GoalConditionedRSSM(cfg)
        # forcing identical head weights makes posterior == prior impossible in
        # general (different inputs), so check the KL term on equal dists directly
        m = np.zeros((2, 4))
        s = np.ones((2, 4))
        kl = core.kl_diag_gaussians_per_row(m, s, m, s)
        assert np.allclose(kl.data, 0.0)

    def test_free_nats_hinge(self):
        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=3,
                         free_nats=1000.0)
        model = GoalConditionedRSSM(cfg)
        batch = tiny_batch(cfg)
        loss, parts, _ = elbo_loss(model, batch, rng=np.random.default_rng(0))
        assert parts["kl_hinged"] == 0.0
        assert parts["kl"] > 0.0

    def test_validity_masks_steps(self, model):
        batch = tiny_batch()
        batch.validity[:, -1] = 0.0
        full = tiny_batch()
        loss_masked, parts_masked, _ = elbo_loss(model, batch, rng=np.random.default_rng(0))
        loss_full, parts_full, _ = elbo_loss(model, full, rng=np.random.default_rng(0))
        assert parts_masked["nll_obs"] < parts_full["nll_obs"]

    def test_gradients_pass_finite_diff(self):
        cfg = RSSMConfig(deterministic_dim=5, stochastic_dim=3, hidden_dim=5,
                         obs_resolution=32, batch_size=2, sequence_length=2,
                         free_nats=0.1)
        model = GoalConditionedRSSM(cfg)
        batch = tiny_batch(cfg)

        def fn():
            loss, _, _ = elbo_loss(model, batch, rng=np.random.default_rng(11))
            return loss

        fn()
        assert finite_diff_check(fn, model.store, epsilon=1e-5) < 1e-3

    def test_non_finite_loss_raises(self):
        from clothlab.errors import TrainingDivergenceError

        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=2)
        model = GoalConditionedRSSM(cfg)
        model.store.params["dec.logits.w"].data[:] = np.inf
        with pytest.raises(TrainingDivergenceError):
            elbo_loss(model, tiny_batch(cfg), rng=np.random.default_rng(0))


class TestOvershoot:
    def test_zero_horizon_contributes_zero(self):
        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=3,
                         overshoot_horizon=0)
        model = GoalConditionedRSSM(cfg)
        extra, table = overshoot_loss(model, tiny_batch(cfg), rng=np.random.default_rng(0))
        assert float(extra.data) == 0.0
        assert table == {}

    def test_k1_matches_main_kl_values(self, model):
        batch = tiny_batch()
        rng = np.random.default_rng(3)
        loss, parts, cache = elbo_loss(model, batch, rng=rng)
        _, table = overshoot_loss(model, batch, cache=cache)
        assert table[1] == pytest.approx(cache.kl_values[1:].mean(), abs=1e-12)

    def test_goal_gradient_blocked_in_overshoot_only(self):
        from clothlab.rssm import loss as loss_mod

        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=3,
                         free_nats=0.0)
        model = GoalConditionedRSSM(cfg)
        batch = tiny_batch(cfg)

        # drive the real filter with a live (requires-grad) goal input, then
        # backprop the overshooting term alone: the goal input must stay dry
        goal_t = core.Tensor(batch.goal, requires=True)
        with Tape() as tape:
            _, _, _, cache = loss_mod._filter(
                model, batch, np.random.default_rng(0), [goal_t] * cfg.sequence_length)
            term, table = overshoot_loss(model, batch, cache=cache)
            tape.backward(term)
        assert table, "overshoot must produce at least one depth"
        assert goal_t.grad is None
        # the term still trains network parameters
        assert any(p.grad is not None and np.abs(p.grad).max() > 0
                   for name, p in model.store.params.items() if name.startswith("prior."))

        # the main objective does reach the goal input
        model.store.zero_grads()
        goal_t = core.Tensor(batch.goal, requires=True)
        with Tape() as tape:
            nll_obs, nll_rew, kl, _ = loss_mod._filter(
                model, batch, np.random.default_rng(0), [goal_t] * cfg.sequence_length)
            tape.backward(core.add(core.add(nll_obs, nll_rew), kl))
        assert goal_t.grad is not None and np.abs(goal_t.grad).max() > 0


class TestAugmentation:
    def test_identity_transform_preserves(self):
        rng = np.random.default_rng(0)
        obs = (rng.random((3, 32, 32)) < 0.3).astype(np.uint8)
        acts = rng.uniform(-1, 1, (3, 4))
        goal = (rng.random((32, 32)) < 0.3).astype(np.uint8)
        new_obs = np.stack([transform_bits(m, 0, False) for m in obs])
        assert np.array_equal(new_obs, obs)
        assert np.allclose(transform_actions(acts, 0, False), acts)

    def test_quarter_turn_action_map(self):
        acts = np.array([[0.5, -0.25, -0.1, 0.8]])
        rotated = transform_actions(acts, 1, False)
        # (x, y) -> (-y, x) for both pick and place
        assert np.allclose(rotated, [[0.25, 0.5, -0.8, -0.1]])

    def test_rerendered_rotation_matches_pixel_exact(self):
        # simulate an episode, rotate its start state and actions by 90 deg,
        # re-simulate, and compare against rotating the rendered masks
        from clothlab.sim import (PnPAction, SimParams, Window, crumple,
                                  execute_pnp, load_template, render_mask)

        tpl = load_template("square")
        params = SimParams()
        window = Window()
        state = crumple(tpl, seed=3, difficulty=0.8, params=params)
        rng = np.random.default_rng(0)
        actions = [PnPAction((0.1, -0.2), (0.5, 0.4)), PnPAction((-0.3, 0.1), (0.2, -0.5))]

        masks, states = [], []
        st = state.copy()
        for act in actions:
            st, _ = execute_pnp(st, act, tpl, params, rng, window)
            masks.append(render_mask(st, tpl, window, 32).bits)

        rot_state = state.copy()
        x, y = rot_state.positions[:, 0].copy(), rot_state.positions[:, 1].copy()
        rot_state.positions[:, 0] = -y
        rot_state.positions[:, 1] = x
        vx, vy = rot_state.velocities[:, 0].copy(), rot_state.velocities[:, 1].copy()
        rot_state.velocities[:, 0] = -vy
        rot_state.velocities[:, 1] = vx
        rng2 = np.random.default_rng(0)
        st = rot_state
        for i, act in enumerate(actions):
            arr = transform_actions(act.as_array()[None], 1, False)[0]
            st, _ = execute_pnp(st, PnPAction((arr[0], arr[1]), (arr[2], arr[3])),
                                tpl, params, rng2, window)
            rotated_mask = render_mask(st, tpl, window, 32).bits
            assert np.array_equal(rotated_mask, rotate90_bits(masks[i], 1)), \
                f"step {i}: rotated rollout diverged from rotated masks"

    def test_goal_translation_pixel_arithmetic(self):
        goal = np.zeros((64, 64), np.uint8)
        goal[28:36, 28:36] = 1

        class FixedRng:
            def __init__(self):
                self.normals = iter([0.2, 0.0])

            def integers(self, n):
                return 0  # identity rotation, no flip

            def normal(self, loc, scale):
                return next(self.normals)

        out = augment_goal(goal, FixedRng(), translate_std=0.2)
        # x shift of 0.2 normalized units = round(0.2 * 64 / 2) = 6 px right
        expected = np.zeros_like(goal)
        expected[28:36, 34:42] = 1
        assert np.array_equal(out, expected)

    def test_zero_variance_keeps_silhouette_area(self):
        rng = np.random.default_rng(0)
        goal = (rng.random((32, 32)) < 0.2).astype(np.uint8)
        out = augment_goal(goal, np.random.default_rng(1), translate_std=0.0)
        assert out.sum() == goal.sum()

    def test_translation_std_monte_carlo(self):
        goal = np.zeros((64, 64), np.uint8)
        goal[30:34, 30:34] = 1
        rng = np.random.default_rng(123)
        shifts = []
        for _ in range(10_000):
            out = augment_goal(goal, rng, translate_std=0.2)
            rows, cols = np.nonzero(out)
            shifts.append((cols.mean() - 31.5) * 2 / 64)
        std = np.std(shifts)
        assert std == pytest.approx(0.2, abs=0.01)

    def test_trajectory_transform_applied_uniformly(self):
        rng = np.random.default_rng(5)
        obs = (rng.random((4, 32, 32)) < 0.3).astype(np.uint8)
        acts = rng.uniform(-1, 1, (4, 4))
        goal = (rng.random((32, 32)) < 0.3).astype(np.uint8)
        new_obs, new_acts, new_goal = augment_trajectory(obs, acts, goal,
                                                         np.random.default_rng(9))
        # recover the transform from the goal and check every step matches
        for quarter in range(4):
            for flip in (False, True):
                if np.array_equal(transform_bits(goal, quarter, flip), new_goal):
                    for t in range(4):
                        assert np.array_equal(transform_bits(obs[t], quarter, flip),
                                              new_obs[t])
                        assert np.allclose(
                            transform_actions(acts[t], quarter, flip), new_acts[t])
                    return
        pytest.fail("no single rotation/flip explains the augmented goal")


class TestTrainLoop:
    def test_fixed_seed_bit_identical(self):
        from clothlab.dataset import TrajectoryRecord
        from clothlab.rssm import train

        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32, batch_size=2, sequence_length=3)
        rng = np.random.default_rng(0)
        records = []
        for i in range(3):
            steps = 5
            records.append(TrajectoryRecord(
                masks=(rng.random((steps, 32, 32)) < 0.3).astype(np.uint8),
                actions=rng.uniform(-1, 1, (steps, 4)),
                rewards=rng.random(steps) * 0.5,
                miss=np.zeros(steps, np.uint8),
                goal_mask=(rng.random((32, 32)) < 0.3).astype(np.uint8),
                policy_tag="random", garment="square", seed=i))

        def run():
            model, _ = train(records, cfg, np.random.default_rng(42), steps=5)
            return model.store.state_dict()

        a, b = run(), run()
        assert set(a) == set(b)
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = RSSMConfig(deterministic_dim=8, stochastic_dim=4, hidden_dim=8,
                         obs_resolution=32)
        model = GoalConditionedRSSM(cfg)
        path = str(tmp_path / "model.lgnn")
        model.save(path)
        loaded = GoalConditionedRSSM.load(path)
        assert loaded.config.deterministic_dim == 8
        for k, v in model.store.state_dict().items():
            assert np.array_equal(loaded.store.params[k].data, v)

    def test_prior_rollout_properties(self, model):
        state = model.initial_state(1)
        goal_e = model.encode(np.zeros((1, 1024)))
        assert model.prior_rollout(state, np.zeros((0, 4)), goal_e) == []
        steps = model.prior_rollout(state, np.zeros((3, 4)), goal_e)
        assert len(steps) == 3
        again = model.prior_rollout(state, np.zeros((3, 4)), goal_e)
        for (s1, r1, l1), (s2, r2, l2) in zip(steps, again):
            assert np.array_equal(s1.z.data, s2.z.data)
            assert np.array_equal(r1[0].data, r2[0].data)
