"""Spectral-efficiency metrics, baselines and Monte Carlo sweeps."""

import numpy as np
import pytest

from spimmimo import channel, manifold, metrics, spim
from spimmimo.channel import PathSet, ScenarioConfig
from spimmimo.exceptions import EvaluationError, InvalidInputError

CFG = manifold.AltMinConfig(seed=0)


def desk_scenario(**kw):
    base = dict(n_tx=32, n_rx=4, users=2, paths=2, noise_var=1e-2,
                gains=(0.5, 0.5), seed=0)
    base.update(kw)
    return ScenarioConfig(**base)


def orthogonal_single_user(gamma1, noise_var=1e-3):
    """U=1, M=2 scenario with paths orthogonal on both array sides.

    Angle pairs are chosen so the steering-vector inner products vanish
    (sin spacing = 2k/N), removing inter-path leakage; the two-path rate
    comparison is then analytic in the gains.
    """
    n_rx, n_tx = 4, 32
    sc = ScenarioConfig(n_tx=n_tx, n_rx=n_rx, users=1, paths=2,
                        noise_var=noise_var, theta_min=0.0, theta_max=89.0,
                        gains=(gamma1, 1.0 - gamma1), seed=0)
    aoa = np.array([[0.0, 30.0]])                       # sin: 0, 1/2 = 2/4
    aod = np.degrees(np.arcsin([0.0, 1.0 / 16.0]))[None, :]  # sin: 0, 2/32
    paths = PathSet(aoa=aoa, aod=aod, gains=np.array([[gamma1, 1.0 - gamma1]]))
    return sc, paths


class TestSinr:
    def test_scalar_chain(self):
        H = np.array([[3.0 + 0j]])
        F_rf = np.array([[1.0 + 0j]])
        F_bb = np.array([[1.0 + 0j]])
        w = np.array([1.0 + 0j])
        assert abs(metrics.sinr(0, H, F_rf, F_bb, w, 0.5) - 9.0 / 0.5) < 1e-12

    def test_perfect_zf_no_interference(self):
        # diagonal effective channel: ZF leaves exactly zero leakage
        H = np.array([[[1.0 + 0j, 0.0]], [[0.0, 2.0 + 0j]]])  # users x 1 x 2
        F_rf = np.eye(2, dtype=complex)
        H_eff = spim.effective_channel(H, np.ones((1, 2), dtype=complex), F_rf)
        F_bb = spim.baseband_zf(H_eff, F_rf)
        for u in range(2):
            w = np.array([1.0 + 0j])
            eff = w.conj() @ (H[u] @ (F_rf @ F_bb))
            sig = abs(eff[u]) ** 2
            interf = np.sum(np.abs(eff) ** 2) - sig
            assert interf <= 1e-12 * sig

    def test_vanishes_at_high_noise(self):
        rng = np.random.default_rng(0)
        H = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        F_rf = np.eye(4, dtype=complex)[:, :2]
        F_bb = np.eye(2, dtype=complex)
        w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        assert metrics.sinr(0, H, F_rf, F_bb, w, 1e15) < 1e-10

    def test_diverges_as_noise_vanishes(self):
        H = np.array([[1.0 + 0j]])
        one = np.array([[1.0 + 0j]])
        w = np.array([1.0 + 0j])
        assert metrics.sinr(0, H, one, one, w, 1e-12) > 1e6

    def test_combiner_scale_invariance(self):
        rng = np.random.default_rng(1)
        H = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        F_rf = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        F_bb = np.eye(2, dtype=complex)
        w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        a = metrics.sinr(1, H, F_rf, F_bb, w, 0.3)
        b = metrics.sinr(1, H, F_rf, F_bb, (2.0 - 1.0j) * w, 0.3)
        assert abs(a - b) < 1e-10 * a


class TestSpimRate:
    def test_m1_equals_mmwave_exactly(self):
        sc = desk_scenario(paths=1, gains=(1.0,))
        paths = channel.draw_paths(sc, spim.rng_stream(sc.seed, 1, 0))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        r_spim = metrics.spim_rate(bank, channels, sc.noise_var)
        r_mm = metrics.mmwave_rate(sc, channels, paths, CFG)
        assert r_spim.index_bits == 0.0
        assert r_spim.total_se == r_mm.total_se
        np.testing.assert_array_equal(r_spim.sinr, r_mm.sinr)

    def test_index_bits_accounting(self):
        sc = desk_scenario(n_tx=16, n_rx=2, users=3, paths=2,
                           gains=(0.5, 0.5))
        paths = channel.draw_paths(sc, np.random.default_rng(0))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        with_bits = metrics.spim_rate(bank, channels, sc.noise_var)
        without = metrics.spim_rate(bank, channels, sc.noise_var,
                                    include_index_bits=False)
        assert with_bits.index_bits == 3.0  # U log2 M = 3
        assert without.index_bits == 0.0
        assert abs(with_bits.total_se - without.total_se - 3.0) < 1e-12

    def test_pattern_subset_restriction(self):
        sc = desk_scenario()
        paths = channel.draw_paths(sc, np.random.default_rng(1))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        full = metrics.spim_rate(bank, channels, sc.noise_var,
                                 include_index_bits=False)
        sub = metrics.spim_rate(bank, channels, sc.noise_var,
                                include_index_bits=False, patterns=[0, 2])
        assert sub.pattern_se.shape == (2,)
        np.testing.assert_array_equal(sub.pattern_se,
                                      full.pattern_se[[0, 2]])

    def test_invalid_patterns_skipped(self):
        sc = desk_scenario()
        paths = channel.draw_paths(sc, np.random.default_rng(2))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        bank.valid[1] = False
        r = metrics.spim_rate(bank, channels, sc.noise_var,
                              include_index_bits=False)
        assert r.pattern_se.shape == (3,)
        assert 2 not in r.pattern_indices.tolist()

    def test_no_valid_patterns_raises(self):
        sc = desk_scenario()
        paths = channel.draw_paths(sc, np.random.default_rng(3))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        bank.valid[:] = False
        with pytest.raises(EvaluationError):
            metrics.spim_rate(bank, channels, sc.noise_var)


class TestMmwaveRate:
    def test_tie_breaks_to_first_path(self):
        sc = desk_scenario(gains=(0.5, 0.5))
        paths = channel.draw_paths(sc, np.random.default_rng(4))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        tied = metrics.mmwave_rate(sc, channels, paths, CFG)
        forced = PathSet(aoa=paths.aoa, aod=paths.aod,
                         gains=np.array([[0.5, 0.4], [0.5, 0.4]]))
        first = metrics.mmwave_rate(sc, channels, forced, CFG)
        assert tied.total_se == first.total_se

    def test_gamma_one_zero_equals_forced_pattern(self):
        sc = desk_scenario(gains=(1.0, 0.0))
        paths = channel.draw_paths(sc, spim.rng_stream(sc.seed, 1, 5))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        forced = metrics.spim_rate(bank, channels, sc.noise_var,
                                   include_index_bits=False, patterns=[0])
        mm = metrics.mmwave_rate(sc, channels, paths, CFG)
        assert forced.total_se == mm.total_se

    def test_monotone_in_snr(self):
        sc = desk_scenario()
        grid = [0, 10, 20]
        rows = metrics.sweep("snr", grid, trials=5, scenario=sc,
                             methods=metrics.SWEEP_METHODS, config=CFG)
        for m in metrics.SWEEP_METHODS:
            curve = [r.mean_se for r in rows if r.method == m]
            assert curve == sorted(curve)


class TestWangRate:
    def test_m1_equals_steering_plus_zf(self):
        sc = desk_scenario(paths=1, gains=(1.0,))
        paths = channel.draw_paths(sc, np.random.default_rng(6))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        got = metrics.wang_rate(sc, channels, paths)
        # independent recomputation: steering columns, one ZF solve
        F_rf = np.stack([channel.steering_vector(sc.n_tx, paths.aod[u, 0])
                         for u in range(sc.users)], axis=1)
        W_rf = np.stack([channel.steering_vector(sc.n_rx, paths.aoa[u, 0])
                         for u in range(sc.users)], axis=1)
        H_eff = spim.effective_channel(channels, W_rf, F_rf)
        F_bb = spim.baseband_zf(H_eff, F_rf)
        se = sum(
            np.log2(1.0 + metrics.sinr(u, channels[u], F_rf, F_bb,
                                       W_rf[:, u], sc.noise_var))
            for u in range(sc.users))
        assert abs(got.total_se - se) < 1e-12
        assert got.index_bits == 0.0  # log2(1) = 0

    def test_power_constraint_every_pattern(self):
        sc = desk_scenario(noise_var=1.0)
        paths = channel.draw_paths(sc, np.random.default_rng(7))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        r = metrics.wang_rate(sc, channels, paths)
        # reconstruct the frozen baseband and check the applied scaling
        strongest = np.argmax(paths.gains, axis=1)
        F_full = np.empty((sc.users, sc.n_tx, sc.paths), dtype=complex)
        W_full = np.empty((sc.users, sc.n_rx, sc.paths), dtype=complex)
        for u in range(sc.users):
            for m in range(sc.paths):
                F_full[u, :, m] = channel.steering_vector(sc.n_tx, paths.aod[u, m])
                W_full[u, :, m] = channel.steering_vector(sc.n_rx, paths.aoa[u, m])
        anchor = spim.SpatialPattern(
            spim.pattern_position(tuple(int(m) + 1 for m in strongest), sc.paths) + 1,
            tuple(int(m) + 1 for m in strongest))
        F_a, W_a = spim.select_pattern(F_full, W_full, anchor)
        F_bb = spim.baseband_zf(spim.effective_channel(channels, W_a, F_a), F_a)
        for i, pat in enumerate(spim.enumerate_patterns(sc.paths, sc.users)):
            F_rf, W_rf = spim.select_pattern(F_full, W_full, pat)
            scale = np.sqrt(sc.users) / np.linalg.norm(F_rf @ F_bb)
            assert abs(np.linalg.norm(F_rf @ (scale * F_bb)) ** 2 - sc.users) < 1e-10
            se = sum(
                np.log2(1.0 + metrics.sinr(u, channels[u], F_rf, scale * F_bb,
                                           W_rf[:, u], sc.noise_var))
                for u in range(sc.users))
            assert abs(se - r.pattern_se[i]) < 1e-12

    def test_deterministic(self):
        sc = desk_scenario()
        paths = channel.draw_paths(sc, np.random.default_rng(8))
        channels = np.asarray(channel.synthesize_all(paths, sc))
        a = metrics.wang_rate(sc, channels, paths)
        b = metrics.wang_rate(sc, channels, paths)
        assert a.total_se == b.total_se


class TestAnalyticCrossing:
    @pytest.mark.parametrize("gamma1,positive", [(0.75, True), (0.85, False)])
    def test_sign_flips_at_four_to_one(self, gamma1, positive):
        # interference-free single user, orthogonal paths, high SNR: the
        # two-path average beats the strongest path iff gamma1 <= 4*gamma2
        sc, paths = orthogonal_single_user(gamma1)
        channels = np.asarray(channel.synthesize_all(paths, sc))
        bank = spim.build_bank(sc, channels, CFG, paths)
        r_spim = metrics.spim_rate(bank, channels, sc.noise_var)
        r_mm = metrics.mmwave_rate(sc, channels, paths, CFG)
        diff = r_spim.total_se - r_mm.total_se
        assert (diff > 0) == positive


class TestSweep:
    def test_snr_to_noise_var(self):
        assert metrics.snr_db_to_noise_var(0.0) == 1.0
        assert abs(metrics.snr_db_to_noise_var(20.0) - 0.01) < 1e-15

    def test_gamma1_requires_two_paths(self):
        sc = desk_scenario(paths=1, gains=(1.0,))
        with pytest.raises(InvalidInputError):
            metrics.run_trial("gamma1", [0.5], sc, ["mmwave"], CFG, 0)

    def test_unknown_kind_rejected(self):
        sc = desk_scenario()
        with pytest.raises(InvalidInputError):
            metrics.run_trial("power", [1.0], sc, ["mmwave"], CFG, 0)

    def test_unknown_method_rejected(self):
        with pytest.raises(InvalidInputError):
            metrics.sweep("snr", [0.0], 1, desk_scenario(), methods=["bogus"])

    def test_repeat_identical(self):
        sc = desk_scenario()
        a = metrics.sweep("snr", [10.0], 1, sc, config=CFG)
        b = metrics.sweep("snr", [10.0], 1, sc, config=CFG)
        assert [(r.x, r.method, r.mean_se, r.std_se) for r in a] == \
               [(r.x, r.method, r.mean_se, r.std_se) for r in b]

    def test_precomputed_trials_match_inline(self):
        sc = desk_scenario()
        grid = [0.4, 0.6]
        mats = [metrics.run_trial("gamma1", grid, sc, list(metrics.SWEEP_METHODS),
                                  CFG, t) for t in range(3)]
        inline = metrics.sweep("gamma1", grid, 3, sc, config=CFG)
        injected = metrics.sweep("gamma1", grid, 3, sc, config=CFG,
                                 trial_results=mats)
        assert [(r.mean_se, r.std_se) for r in inline] == \
               [(r.mean_se, r.std_se) for r in injected]

    def test_population_std(self):
        sc = desk_scenario()
        grid = [0.5]
        mats = [metrics.run_trial("gamma1", grid, sc, ["mmwave"], CFG, t)
                for t in range(4)]
        rows = metrics.sweep("gamma1", grid, 4, sc, methods=["mmwave"],
                             config=CFG, trial_results=mats)
        vals = np.array([m[0, 0] for m in mats])
        assert abs(rows[0].mean_se - vals.mean()) < 1e-14
        assert abs(rows[0].std_se - vals.std(ddof=0)) < 1e-14

    def test_gamma_grid_bounds_checked(self):
        sc = desk_scenario()
        with pytest.raises(InvalidInputError):
            metrics.run_trial("gamma1", [1.5], sc, ["mmwave"], CFG, 0)
