import numpy as np
import pytest

from uavmc import fbl
from uavmc.env import (ClusteringStrategy, EnvConfig, NetworkEnv,
                       PowerAllocation, objective_value, recompute_step_sinr)
from uavmc.fbl import ReliabilityTargets
from uavmc.geometry import MobilityParams, ServiceArea


def small_cfg(**overrides):
    base = dict(
        n_users=3, k_aps=5,
        area=ServiceArea(800.0, 800.0, 60.0, 120.0),
        mobility=MobilityParams(sigma=3.0, memory_a=0.8, dt=0.1),
        targets=ReliabilityTargets(eps_max=1e-3, outage_max=1e-2),
        episode_len=20, seed=7)
    base.update(overrides)
    return EnvConfig(**base)


def paper_cfg(**overrides):
    base = dict(n_users=6, k_aps=19, episode_len=10, seed=5)
    base.update(overrides)
    return EnvConfig(**base)


def random_actions(env, rng):
    bits = rng.random((env.n, env.k)) < 0.5
    raws = rng.random((env.k, env.n))
    return bits, raws


class TestConfig:
    def test_infeasible_config_rejected(self):
        with pytest.raises(ValueError):
            small_cfg(k_aps=0)
        with pytest.raises(ValueError):
            small_cfg(n_users=0)

    def test_altitude_band_must_fit_path_loss_model(self):
        with pytest.raises(ValueError, match="altitude"):
            small_cfg(area=ServiceArea(800.0, 800.0, 10.0, 120.0))

    def test_obs_dims(self):
        cfg = paper_cfg()
        # 3N + K + 2NK + N and N(5 + K)
        assert cfg.high_obs_dim == 18 + 19 + 228 + 6
        assert cfg.low_obs_dim == 6 * 24 == 144


class TestReset:
    def test_same_seed_same_observation(self):
        obs_a = NetworkEnv(small_cfg()).reset()
        obs_b = NetworkEnv(small_cfg()).reset()
        assert np.array_equal(obs_a, obs_b)

    def test_initial_clustering_is_closest_ap(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        assert np.array_equal(env.assign.argmax(axis=1),
                              env.d3d.argmin(axis=1))
        assert np.all(env.assign.sum(axis=1) == 1)

    def test_initial_powers_half_max(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        p_max = env.cfg.radio.p_max
        assert np.all(env.powers[env.assign] == p_max / 2.0)
        assert np.all(env.powers[~env.assign] == 0.0)

    def test_high_obs_length(self):
        env = NetworkEnv(paper_cfg())
        assert env.reset().size == env.cfg.high_obs_dim


class TestHighObs:
    def test_values_within_unit_interval(self):
        env = NetworkEnv(small_cfg())
        obs = env.reset()
        rng = np.random.default_rng(0)
        for _ in range(30):
            assert np.all(obs >= -1.0) and np.all(obs <= 1.0)
            _, obs = env.step(*random_actions(env, rng))

    def test_previous_clustering_segment_is_passthrough(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        rng = np.random.default_rng(1)
        bits, raws = random_actions(env, rng)
        _, obs = env.step(bits, raws)
        n, k = env.n, env.k
        start = 3 * n + k + n * k
        segment = obs[start:start + n * k].reshape(n, k)
        assert np.array_equal(segment.astype(bool), env.assign)

    def test_inactive_users_zero_filled(self):
        env = NetworkEnv(small_cfg(departure_prob=1.0))
        env.reset()
        rng = np.random.default_rng(2)
        _, obs = env.step(*random_actions(env, rng))
        n, k = env.n, env.k
        assert not env.active.any()
        assert np.all(obs[:3 * n] == 0.0)          # positions
        gains = obs[3 * n + k:3 * n + k + n * k]
        assert np.all(gains == 0.0)
        assert np.all(obs[-n:] == 0.0)             # activity bits


class TestHighAction:
    def test_all_true_unchanged(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        strategy = env.apply_high_action(np.ones((env.n, env.k)))
        assert strategy.assign.all()
        assert not env._repair_fired

    def test_empty_row_repaired_to_best_gain(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        best = np.argmax(env._gain_db(), axis=1)
        strategy = env.apply_high_action(np.zeros((env.n, env.k)))
        assert env._repair_fired
        assert np.all(strategy.assign.sum(axis=1) == 1)
        assert np.array_equal(strategy.assign.argmax(axis=1), best)

    def test_repair_leaves_valid_rows_alone(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        bits = np.zeros((env.n, env.k))
        bits[0, 3] = 1.0  # row 0 valid, rows 1..n empty
        strategy = env.apply_high_action(bits)
        assert strategy.assign[0, 3]
        assert strategy.assign[0].sum() == 1

    def test_double_apply_rejected(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        env.apply_high_action(np.ones((env.n, env.k)))
        with pytest.raises(RuntimeError):
            env.apply_high_action(np.ones((env.n, env.k)))


class TestLowObs:
    def test_ordering_contract(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        with pytest.raises(RuntimeError, match="ordering"):
            env.low_obs(0)

    def test_layout_and_passthrough(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        bits = np.ones((env.n, env.k))
        env.apply_high_action(bits)
        obs = env.low_obs(2).reshape(env.n, 5 + env.k)
        assert np.all(obs[:, 0] == 1.0)  # all assigned to AP 2
        # cluster-row segment equals the applied strategy rows
        assert np.array_equal(obs[:, 5:].astype(bool), env.assign)

    def test_unserved_ap_all_zero(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        bits = np.zeros((env.n, env.k))
        bits[:, 0] = 1.0  # everyone on AP 0 only
        env.apply_high_action(bits)
        assert np.all(env.low_obs(1) == 0.0)

    def test_length(self):
        env = NetworkEnv(paper_cfg())
        env.reset()
        env.apply_high_action(np.ones((env.n, env.k)))
        assert env.low_obs(0).size == 144


class TestLowAction:
    def test_full_power_on_assigned(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        env.apply_high_action(np.ones((env.n, env.k)))
        row = env.apply_low_action(0, np.ones(env.n))
        assert np.all(row == env.cfg.radio.p_max)

    def test_mask_precedence(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        bits = np.ones((env.n, env.k))
        bits[1, 0] = 0.0
        env.apply_high_action(bits)
        row = env.apply_low_action(0, np.ones(env.n))
        assert row[1] == 0.0

    def test_linear_scaling(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        env.apply_high_action(np.ones((env.n, env.k)))
        row = env.apply_low_action(0, np.full(env.n, 0.5))
        assert np.all(row == env.cfg.radio.p_max / 2.0)


class TestRewards:
    def test_high_reward_examples(self):
        env = NetworkEnv(small_cfg(n_users=6, k_aps=4, weights_high=(1.0, 1.0)))
        env.reset()
        eligible = np.ones(6, dtype=bool)
        # all stable, no outages -> 1.0
        changed = np.zeros(6, dtype=bool)
        outage = np.zeros(6)
        assert env._high_reward(eligible, changed, outage) == 1.0
        # all changed, all in outage -> -1.0
        assert env._high_reward(eligible, ~changed, np.ones(6)) == -1.0
        # 3 stable, 2 outage users -> 3/6 - 2/6
        changed = np.array([False, False, False, True, True, True])
        outage = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        expected = 1.0 * (3 / 6) - 1.0 * (2 / 6)
        assert env._high_reward(eligible, changed, outage) == expected

    def test_high_reward_empty_network(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        none = np.zeros(env.n, dtype=bool)
        assert env._high_reward(none, none, np.zeros(env.n)) == 0.0

    def test_low_reward_examples(self):
        env = NetworkEnv(small_cfg(weights_low=(1.0, 1.0)))
        env.reset()
        p_max = env.cfg.radio.p_max
        env.assign[:] = False
        env.active[:] = True
        # AP 0 serves users 0 and 1
        env.assign[0, 0] = env.assign[1, 0] = True
        powers = np.zeros((env.n, env.k))
        dep_vals = np.full(env.n, np.nan)

        # zero power, zero violations -> 1.0
        dep_vals[:2] = 0.0
        assert env._low_rewards(powers, dep_vals)[0] == 1.0

        # |N_k|=2, sum P = P_max, one violation -> 1 - 0.5 - 0.5 = 0
        powers[0, 0] = p_max
        dep_vals[0] = 1.0  # violates eps_max
        assert env._low_rewards(powers, dep_vals)[0] == 0.0

        # all users at P_max with violations -> -1
        powers[0, 0] = powers[1, 0] = p_max
        dep_vals[0] = dep_vals[1] = 1.0
        assert env._low_rewards(powers, dep_vals)[0] == -1.0

    def test_idle_ap_reward_is_max(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        env.assign[:] = False
        rewards = env._low_rewards(np.zeros((env.n, env.k)),
                                   np.zeros(env.n))
        assert np.all(rewards == 1.0)


class TestStep:
    def test_determinism(self):
        outcomes = []
        for _ in range(2):
            env = NetworkEnv(small_cfg())
            env.reset()
            rng = np.random.default_rng(9)
            trace = []
            for _ in range(env.cfg.episode_len):
                out, _ = env.step(*random_actions(env, rng))
                trace.append((out.high_reward, tuple(out.low_rewards),
                              tuple(out.sinr[out.active])))
            outcomes.append(trace)
        assert outcomes[0] == outcomes[1]

    def test_step_one_stability_vs_reset_clustering(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        seed_assign = env.assign.copy()
        out, _ = env.step(seed_assign, np.full((env.k, env.n), 0.5))
        assert not out.cluster_changed.any()
        out2, _ = env.step(~seed_assign | seed_assign[:, ::-1],
                           np.full((env.k, env.n), 0.5))
        assert out2.cluster_changed.any()

    def test_step_carries_low_observations(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        rng = np.random.default_rng(8)
        out, _ = env.step(*random_actions(env, rng))
        assert len(out.low_obs) == env.k
        assert all(obs.size == env.cfg.low_obs_dim for obs in out.low_obs)

    def test_power_sum_bookkeeping(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        rng = np.random.default_rng(3)
        bits, raws = random_actions(env, rng)
        out, _ = env.step(bits, raws)
        assert np.allclose(out.power_sum, out.links.powers.sum(axis=0))

    def test_ordering_error(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        with pytest.raises(RuntimeError):
            env.complete_step(np.zeros((env.k, env.n)))

    def test_done_flag_at_episode_end(self):
        env = NetworkEnv(small_cfg(episode_len=3))
        env.reset()
        rng = np.random.default_rng(0)
        flags = []
        for _ in range(3):
            out, _ = env.step(*random_actions(env, rng))
            flags.append(out.done)
        assert flags == [False, False, True]

    def test_sinr_recomputation_matches_exactly(self):
        env = NetworkEnv(small_cfg())
        env.reset()
        rng = np.random.default_rng(5)
        for _ in range(10):
            out, _ = env.step(*random_actions(env, rng))
            again = recompute_step_sinr(out.links, env.cfg)
            act = out.active
            assert np.array_equal(out.sinr[act], again[act])
            dep_again = fbl.dep(env.cfg.blocklength_n,
                                out.bits[act], again[act])
            assert np.array_equal(out.dep[act], np.atleast_1d(dep_again))

    def test_constraints_hold_under_random_actions(self):
        env = NetworkEnv(small_cfg(arrival_prob=0.1, departure_prob=0.05))
        env.reset()
        rng = np.random.default_rng(11)
        p_max = env.cfg.radio.p_max
        w1h, w2h = env.cfg.weights_high
        w2l = env.cfg.weights_low[1]
        for _ in range(400):
            out, _ = env.step(*random_actions(env, rng))
            links = out.links
            # C2: power cap and clustering mask
            assert np.all(links.powers >= 0.0)
            assert np.all(links.powers <= p_max + 1e-12)
            assert np.all(links.powers[~links.assign] == 0.0)
            # C3: every active user has a nonempty cluster
            assert np.all(links.assign[links.active].sum(axis=1) >= 1)
            # reward bounds
            assert -w2h - 1e-12 <= out.high_reward <= w1h + 1e-12
            assert np.all(out.low_rewards >= -w2l - 1e-12)
            assert np.all(out.low_rewards <= 1.0 + 1e-12)
            # epsilon and gamma are always reported for active users
            assert np.all(np.isfinite(out.sinr[out.active]))
            assert np.all(np.isfinite(out.dep[out.active]))
            if out.done:
                env.reset()


class TestLifecycleInEnv:
    def test_departure_clears_only_own_row(self):
        env = NetworkEnv(small_cfg(departure_prob=0.5, arrival_prob=0.0))
        env.reset()
        rng = np.random.default_rng(21)
        for _ in range(50):
            before_active = env.active.copy()
            before_assign = env.assign.copy()
            out, _ = env.step(before_assign, np.full((env.k, env.n), 0.5))
            survivors = before_active & env.active
            # survivors keep the clustering rows this step applied
            assert np.array_equal(env.assign[survivors],
                                  before_assign[survivors])
            if out.done:
                break

    def test_arrival_gets_seed_cluster_and_exclusion(self):
        env = NetworkEnv(small_cfg(departure_prob=0.0, arrival_prob=1.0))
        env.reset()
        env.active[2] = False
        env.assign[2] = False
        env.prev_assign[2] = False
        keep = env.assign.copy()
        out, _ = env.step(keep, np.full((env.k, env.n), 0.5))
        assert env.active[2]           # slot refilled
        assert env.newly_arrived[2]
        assert env.assign[2].sum() == 1  # closest-AP seed
        out2, _ = env.step(env.assign.copy(), np.full((env.k, env.n), 0.5))
        # first rewarded step excludes the newcomer from the stability sums
        assert not out2.eligible[2] or not env.user_ids[2] >= env.n


class TestObjective:
    def _outcome(self, stable, bits_each, p_total, n_users=2):
        from uavmc.env import LinkSnapshot, StepOutcome
        eligible = np.ones(n_users, dtype=bool)
        changed = np.zeros(n_users, dtype=bool) if stable else \
            np.ones(n_users, dtype=bool)
        snap = LinkSnapshot(*(np.zeros((1, 1)),) * 5, np.zeros((1, 1)),
                            np.zeros((1, 1), bool), np.ones(1, bool), 1.0,
                            "steered")
        return StepOutcome(
            t=0, high_reward=0.0, low_rewards=np.zeros(1),
            sinr=np.ones(n_users), dep=np.zeros(n_users),
            outage_prob=np.zeros(n_users), cluster_changed=changed,
            cluster_size=np.ones(n_users, int), eligible=eligible,
            active=np.ones(n_users, bool), user_ids=np.arange(n_users),
            bits=np.full(n_users, bits_each),
            power_sum=np.array([p_total]),
            power_fraction=np.zeros(n_users), repair_fired=False,
            done=False, links=snap)

    def test_hand_value(self):
        # 2 stable users, 32 bits each, n=400, eps=1e-5, P_total=2
        out = self._outcome(stable=True, bits_each=32, p_total=2.0)
        value = objective_value([out], eps_max=1e-5, blocklength_n=400)
        assert value == pytest.approx(1.0 + 64.0 * (1.0 - 1e-5) / 800.0)
        assert value == pytest.approx(1.0800, abs=1e-4)

    def test_huge_power_and_changes_drive_to_zero(self):
        out = self._outcome(stable=False, bits_each=32, p_total=1e12)
        assert objective_value([out], 1e-5, 400) == pytest.approx(0.0,
                                                                  abs=1e-9)

    def test_second_term_reciprocal_in_power(self):
        a = self._outcome(stable=False, bits_each=32, p_total=1.0)
        b = self._outcome(stable=False, bits_each=32, p_total=2.0)
        va = objective_value([a], 1e-5, 400)
        vb = objective_value([b], 1e-5, 400)
        assert va == pytest.approx(2.0 * vb, rel=1e-12)

    def test_zero_power_contributes_stability_only(self):
        out = self._outcome(stable=True, bits_each=32, p_total=0.0)
        assert objective_value([out], 1e-5, 400) == 1.0

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            objective_value([], 1e-5, 400)


class TestDataTypes:
    def test_clustering_strategy_helpers(self):
        strategy = ClusteringStrategy(np.array([[1, 0], [1, 1]]))
        assert strategy.cluster_of(0).tolist() == [0]
        assert strategy.cluster_sizes().tolist() == [1, 2]

    def test_power_allocation_total(self):
        allocation = PowerAllocation(np.array([[0.25, 0.5], [0.0, 1.0]]))
        assert allocation.total() == pytest.approx(1.75)

    def test_interference_mode_validation(self):
        with pytest.raises(ValueError):
            small_cfg(interference_mode="bogus")
