import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from falsify import mtl
from falsify.refsim import (
    HEADING_LIMIT,
    OFF_RUNWAY_CTE,
    RUNWAY_LENGTH,
    TAXI_SPEED,
    BiasRule,
    ConstantBias,
    ControllerGains,
    FaultProfile,
    GroundTruth,
    PlantState,
    ProfileError,
    SineBias,
    Stub,
    control,
    default_profile,
    make_runner,
    mode_from_modes,
    perceive,
    run_episode,
    step,
)


def config(features, modes=None, duration=30.0, period=0.1):
    return SimpleNamespace(features=features, duration=duration, period=period, modes=modes or {})


def quiet_profile(**kwargs):
    """Profile with no noise so bias effects are exact."""
    return FaultProfile(cte_noise=0.0, he_noise=0.0, **kwargs)


class TestController:
    def test_equilibrium(self):
        assert control(0.0, 0.0) == 0.0

    def test_positive_cte_steers_left(self):
        assert control(2.0, 0.0) < 0.0

    def test_positive_he_steers_left(self):
        assert control(0.0, 10.0) < 0.0

    def test_saturation_exact(self):
        assert control(100.0, 0.0) == -25.0
        assert control(-100.0, 0.0) == 25.0

    def test_custom_gains(self):
        g = ControllerGains(k_p=2.0, k_h=0.0, u_max=100.0)
        assert control(3.0, 99.0, g) == -6.0


class TestStep:
    def test_straight_roll(self):
        after = step(PlantState(s=10.0, cte=1.0, he=0.0), 0.0, 0.1)
        assert after.cte == 1.0
        assert after.he == 0.0
        assert after.s == pytest.approx(10.0 + TAXI_SPEED * 0.1)

    def test_perpendicular_heading_moves_sideways(self):
        state = PlantState(s=100.0, cte=0.0, he=90.0)
        after = step(state, 0.0, 0.01)
        assert after.s == pytest.approx(100.0, abs=1e-9)
        assert after.cte == pytest.approx(TAXI_SPEED * 0.01)

    def test_heading_integrates_steering(self):
        after = step(PlantState(), 10.0, 0.1)
        assert after.he == pytest.approx(1.0)

    def test_heading_clamped(self):
        assert step(PlantState(he=89.95), 10.0, 0.1).he == HEADING_LIMIT
        assert step(PlantState(he=-89.95), -10.0, 0.1).he == -HEADING_LIMIT

    def test_runway_end_clamps(self):
        assert step(PlantState(s=RUNWAY_LENGTH - 0.1, he=0.0), 0.0, 1.0).s == RUNWAY_LENGTH
        assert step(PlantState(s=0.2, he=90.0), 0.0, 1.0).s == pytest.approx(0.2, abs=1e-9)

    def test_hand_computed_tick(self):
        after = step(PlantState(s=50.0, cte=-2.0, he=10.0), 5.0, 0.1)
        assert after.he == pytest.approx(10.5)
        assert after.cte == pytest.approx(-2.0 + 5.0 * math.sin(math.radians(10.5)) * 0.1)
        assert after.s == pytest.approx(50.0 + 5.0 * math.cos(math.radians(10.5)) * 0.1)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            step(PlantState(), 0.0, 0.0)


class TestProfile:
    def test_default_profile_rules(self):
        prof = default_profile()
        assert [r.name for r in prof.rules] == ["intersection", "early_morning", "shadow"]
        assert prof.cte_noise > 0.0
        assert prof.he_noise > 0.0

    def test_round_trip(self):
        prof = default_profile()
        again = FaultProfile.from_dict(prof.to_dict())
        assert again == prof
        assert FaultProfile.from_json(json.dumps(prof.to_dict())) == prof

    def test_without_rules(self):
        prof = default_profile().without_rules(["shadow", "nonexistent"])
        assert [r.name for r in prof.rules] == ["intersection", "early_morning"]

    def test_duplicate_names_rejected(self):
        with pytest.raises(ProfileError):
            FaultProfile(rules=(BiasRule(name="a"), BiasRule(name="a")))

    def test_negative_noise_rejected(self):
        with pytest.raises(ProfileError):
            FaultProfile(cte_noise=-0.1)

    def test_inverted_interval_rejected(self):
        with pytest.raises(ProfileError):
            FaultProfile.from_json('{"rules": [{"name": "r", "guard": {"s": [5, 1]}}]}')

    def test_bad_bias_rejected(self):
        with pytest.raises(ProfileError):
            FaultProfile.from_json('{"rules": [{"name": "r", "cte_bias": {"kind": "square"}}]}')
        with pytest.raises(ProfileError):
            FaultProfile.from_json('{"rules": [{"name": "r", "cte_bias": {"kind": "sine", "amplitude": 1, "period": 0}}]}')

    def test_bad_guard_rejected(self):
        with pytest.raises(ProfileError):
            FaultProfile.from_json('{"rules": [{"name": "r", "guard": {"s": [1, 2, 3]}}]}')

    def test_not_json(self):
        with pytest.raises(ProfileError):
            FaultProfile.from_json("nope{")


class TestPerceive:
    def test_ground_truth_identity(self):
        state = PlantState(s=100.0, cte=2.0, he=5.0)
        assert perceive(GroundTruth(), state, {}, np.random.default_rng(0)) == (2.0, 5.0)

    def test_ground_truth_consumes_no_randomness(self):
        rng = np.random.default_rng(0)
        perceive(GroundTruth(), PlantState(), {}, rng)
        assert rng.standard_normal() == np.random.default_rng(0).standard_normal()

    def test_intersection_bias_inside_zone(self):
        mode = Stub(default_profile().without_rules(["early_morning", "shadow"]))
        state = PlantState(s=1450.0, cte=0.5, he=0.0)
        feats = {"start_s": 1450.0, "time_of_day": 10.0, "clouds": "overcast"}
        got, _ = perceive(Stub(quiet_profile(rules=mode.profile.rules)), state, feats, np.random.default_rng(0))
        assert got == pytest.approx(0.5 + 6.0)

    def test_intersection_needs_both_state_and_start(self):
        prof = quiet_profile(rules=default_profile().without_rules(["early_morning", "shadow"]).rules)
        rng = np.random.default_rng(0)
        # started elsewhere: driving through the zone alone does not fire the rule
        assert perceive(Stub(prof), PlantState(s=1450.0), {"start_s": 700.0}, rng) == (0.0, 0.0)
        # started in the zone but already past it
        assert perceive(Stub(prof), PlantState(s=1501.0), {"start_s": 1450.0}, rng) == (0.0, 0.0)

    def test_shadow_bias_matches_formula(self):
        prof = quiet_profile(rules=default_profile().without_rules(["intersection", "early_morning"]).rules)
        feats = {"time_of_day": 14.0, "clouds": "clear"}
        got, _ = perceive(Stub(prof), PlantState(), feats, np.random.default_rng(0))
        expect = 6.0 * math.sin(2.0 * math.pi * (14.0 - 12.0) / 1.5)
        assert got == pytest.approx(expect)

    def test_shadow_needs_clear_sky(self):
        prof = quiet_profile(rules=default_profile().without_rules(["intersection", "early_morning"]).rules)
        feats = {"time_of_day": 14.0, "clouds": "overcast"}
        assert perceive(Stub(prof), PlantState(), feats, np.random.default_rng(0)) == (0.0, 0.0)

    def test_early_morning_he_bias(self):
        prof = quiet_profile(rules=default_profile().without_rules(["intersection", "shadow"]).rules)
        feats = {"time_of_day": 7.0, "clouds": "overcast", "start_s": 100.0}
        cte_est, he_est = perceive(Stub(prof), PlantState(), feats, np.random.default_rng(0))
        assert cte_est == pytest.approx(0.6)
        assert he_est == pytest.approx(-0.3)

    def test_unknown_guard_feature_raises(self):
        prof = quiet_profile(rules=(BiasRule(name="r", guard={"visibility": (0.0, 1.0)}),))
        with pytest.raises(ProfileError, match="visibility"):
            perceive(Stub(prof), PlantState(), {}, np.random.default_rng(0))

    def test_tag_guard_on_numeric_value_raises(self):
        prof = quiet_profile(rules=(BiasRule(name="r", guard={"clouds": (0.0, 1.0)}),))
        with pytest.raises(ProfileError):
            perceive(Stub(prof), PlantState(), {"clouds": "clear"}, np.random.default_rng(0))

    def test_noise_applied(self):
        prof = FaultProfile(cte_noise=1.0, he_noise=2.0)
        rng = np.random.default_rng(42)
        expect = np.random.default_rng(42).standard_normal(2)
        cte_est, he_est = perceive(Stub(prof), PlantState(cte=1.0, he=3.0), {}, rng)
        assert cte_est == pytest.approx(1.0 + expect[0])
        assert he_est == pytest.approx(3.0 + 2.0 * expect[1])

    def test_sine_over_distance(self):
        rule = BiasRule(name="washboard", cte_bias=SineBias(amplitude=2.0, period=100.0, over="s"))
        got, _ = perceive(Stub(quiet_profile(rules=(rule,))), PlantState(s=25.0), {}, np.random.default_rng(0))
        assert got == pytest.approx(2.0)


class TestModeSelection:
    def test_default_is_stub_with_bundled_profile(self):
        mode = mode_from_modes({})
        assert isinstance(mode, Stub)
        assert mode.profile == default_profile()

    def test_ground_truth(self):
        assert mode_from_modes({"perception": "ground-truth"}) == GroundTruth()

    def test_disable_rules_list_and_string(self):
        for flag in (["shadow"], "shadow"):
            mode = mode_from_modes({"disable_rules": flag})
            assert [r.name for r in mode.profile.rules] == ["intersection", "early_morning"]

    def test_unknown_perception(self):
        with pytest.raises(ValueError):
            mode_from_modes({"perception": "oracle"})

    def test_explicit_profile(self):
        prof = quiet_profile()
        assert mode_from_modes({}, prof) == Stub(prof)


class TestEpisode:
    def test_sample_count_and_times(self):
        trace = run_episode(config({}, duration=30.0, period=0.1), GroundTruth())
        assert len(trace) == 301
        assert trace.times[0] == 0.0
        assert trace.times[-1] == 30.0
        assert trace.times[137] == 13.7
        assert set(trace.names) == {"cte", "he", "s", "off_runway"}

    def test_centered_start_stays_centered(self):
        trace = run_episode(config({"start_cte": 0.0, "start_he": 0.0}), GroundTruth())
        assert np.all(trace.signal("cte") == 0.0)
        assert mtl.robustness(mtl.hold_within(), trace) == pytest.approx(1.5)

    def test_start_features(self):
        feats = {"start_s": 700.0, "start_cte": 3.0, "start_he": -10.0}
        trace = run_episode(config(feats), GroundTruth())
        assert trace.signal("s")[0] == 700.0
        assert trace.signal("cte")[0] == 3.0
        assert trace.signal("he")[0] == -10.0

    def test_start_pose_clamped(self):
        trace = run_episode(config({"start_s": 99999.0, "start_he": 120.0}, duration=0.1), GroundTruth())
        assert trace.signal("s")[0] == RUNWAY_LENGTH
        assert trace.signal("he")[0] == HEADING_LIMIT

    def test_envelope_recovery_ground_truth(self):
        phi = mtl.reach_and_hold()
        for cte0 in (-8.0, 8.0):
            for he0 in (-30.0, 0.0, 30.0):
                trace = run_episode(config({"start_cte": cte0, "start_he": he0}), GroundTruth())
                assert mtl.robustness(phi, trace) > 0.0

    def test_mirror_symmetry(self):
        mode = GroundTruth()
        for cte0, he0 in [(4.0, -20.0), (8.0, 30.0), (1.0, 0.0)]:
            a = run_episode(config({"start_cte": cte0, "start_he": he0, "start_s": 500.0}), mode)
            b = run_episode(config({"start_cte": -cte0, "start_he": -he0, "start_s": 500.0}), mode)
            assert np.array_equal(a.signal("cte"), -b.signal("cte"))
            assert np.array_equal(a.signal("he"), -b.signal("he"))
            assert np.array_equal(a.signal("s"), b.signal("s"))

    def test_determinism_bitwise(self):
        feats = {"start_cte": 2.0, "start_s": 1450.0, "time_of_day": 13.0, "clouds": "clear", "rain": 0.0}
        cfg = config(feats, modes={"seed": 99})
        mode = mode_from_modes(cfg.modes)
        a = run_episode(cfg, mode)
        b = run_episode(cfg, mode)
        assert a.equals(b)

    def test_seed_changes_noise(self):
        feats = {"start_cte": 2.0, "start_s": 600.0, "time_of_day": 10.0, "clouds": "overcast", "rain": 0.0}
        a = run_episode(config(feats, modes={"seed": 1}), mode_from_modes({"seed": 1}))
        b = run_episode(config(feats, modes={"seed": 2}), mode_from_modes({"seed": 2}))
        assert not np.array_equal(a.signal("cte"), b.signal("cte"))

    def test_bad_seed_flag(self):
        with pytest.raises(ValueError):
            run_episode(config({}, modes={"seed": "abc"}), GroundTruth())

    def test_quiet_stub_equals_ground_truth(self):
        feats = {"start_cte": 5.0, "start_he": 10.0, "start_s": 200.0}
        a = run_episode(config(feats, modes={"seed": 5}), Stub(quiet_profile()))
        b = run_episode(config(feats, modes={"seed": 5}), GroundTruth())
        assert a.equals(b)

    def test_intersection_start_violates(self):
        feats = {"start_cte": 0.0, "start_he": 0.0, "start_s": 1430.0,
                 "time_of_day": 10.0, "clouds": "overcast", "rain": 0.0}
        cfg = config(feats, modes={"seed": 3})
        trace = run_episode(cfg, mode_from_modes(cfg.modes))
        assert mtl.robustness(mtl.reach_and_hold(), trace) <= 0.0

    def test_off_runway_flag(self):
        runaway = quiet_profile(rules=(BiasRule(name="hard_over", he_bias=ConstantBias(400.0)),))
        trace = run_episode(config({}, duration=15.0), Stub(runaway))
        flag = trace.signal("off_runway")
        assert flag[0] == 0.0
        assert flag[-1] == 1.0
        assert np.all(np.abs(trace.signal("cte"))[flag == 1.0] > OFF_RUNWAY_CTE)

    def test_runner_interprets_modes(self):
        runner = make_runner()
        feats = {"start_cte": 2.0, "start_s": 600.0, "time_of_day": 14.0, "clouds": "clear", "rain": 0.0}
        shadowed = runner(config(feats, modes={"seed": 7}))
        plain = runner(config(feats, modes={"seed": 7, "disable_rules": ["shadow"]}))
        gt = runner(config(feats, modes={"perception": "ground-truth"}))
        assert np.abs(shadowed.signal("cte")).max() > np.abs(plain.signal("cte")).max()
        assert np.abs(gt.signal("cte")).max() <= 2.0 + 1e-9
