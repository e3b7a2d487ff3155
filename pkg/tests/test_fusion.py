import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from noisepair.detector import PredictionSeries
from noisepair.fusion import (
    BUNDLED_ONE,
    BUNDLED_TWO,
    Branch,
    FusionConfig,
    FusionVerdict,
    bundle,
    bundle_by_name,
    fuse_stream,
    fuse_window,
    xcorr_max,
)

STEP = 0.375


def series(probs, t0=0.0, device="d"):
    probs = np.asarray(probs, dtype=float)
    times = t0 + np.arange(len(probs)) * STEP
    return PredictionSeries(times=times, probs=probs, device_id=device)


def window_pair(src_probs, rcv_probs, t0=0.0):
    return series(src_probs, t0, "src"), series(rcv_probs, t0, "rcv")


def impulse(n, at, height=1.0):
    x = np.zeros(n)
    x[at] = height
    return x


class TestXcorrMax:
    def test_identical_series_is_one_at_zero_lag(self):
        a = np.array([0.1, 0.9, 0.2, 0.05])
        value, lag = xcorr_max(a, a, 0)
        assert value == pytest.approx(1.0, abs=1e-12)
        assert lag == 0

    def test_shifted_impulse_recovers_lag(self):
        value, lag = xcorr_max(impulse(70, 5), impulse(70, 9), 27)
        assert value == pytest.approx(1.0)
        assert lag == 4

    def test_orthogonal_supports_zero(self):
        a = np.zeros(20)
        a[:3] = 1.0
        b = np.zeros(20)
        b[15:] = 1.0
        value, _ = xcorr_max(a, b, 2)
        assert value == 0.0

    def test_all_zero_is_defined(self):
        assert xcorr_max(np.zeros(10), np.ones(10), 5) == (0.0, 0)
        assert xcorr_max(np.ones(10), np.zeros(10), 5) == (0.0, 0)

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(3, 90))
            a = rng.random(n)
            b = rng.random(n)
            max_lag = int(rng.integers(0, 30))
            got_v, got_l = xcorr_max(a, b, max_lag)
            want_v, want_l = oracles.brute_force_xcorr_max(a, b, max_lag)
            assert got_v == pytest.approx(want_v, abs=1e-12)
            assert got_l == want_l

    def test_lag_recovery_exact_for_all_drift_lags(self):
        for true_lag in range(-27, 28):
            a = impulse(70, 34)
            b = impulse(70, 34 + true_lag)
            value, lag = xcorr_max(a, b, 27)
            assert value == pytest.approx(1.0)
            assert lag == true_lag

    def test_lag_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.random(40)
            b = rng.random(40)
            va, la = xcorr_max(a, b, 10)
            vb, lb = xcorr_max(b, a, 10)
            assert va == pytest.approx(vb, abs=1e-12)
            assert la == -lb

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.random(30)
        b = rng.random(30)
        v1, l1 = xcorr_max(a, b, 8)
        v2, l2 = xcorr_max(3.7 * a, 0.2 * b, 8)
        assert v1 == pytest.approx(v2, abs=1e-12)
        assert l1 == l2

    def test_tie_breaks_toward_smaller_then_negative_lag(self):
        # constant series: every lag overlap of equal length has equal value
        a = np.ones(5)
        b = np.ones(9)
        _, lag = xcorr_max(a, b, 2)
        assert lag == 0
        # two equal impulse matches at +2 and -2 only
        a2 = np.zeros(9)
        a2[[2, 6]] = 1.0
        b2 = impulse(9, 4)
        _, lag2 = xcorr_max(a2, b2, 3)
        assert lag2 == -2


class TestFuseWindow:
    def test_source_gate_zeroes_everything(self):
        src, rcv = window_pair(np.full(70, 0.5), np.full(70, 0.99))
        verdict = fuse_window(src, rcv)
        assert verdict.score == 0.0
        assert verdict.branch == Branch.NO_SOURCE_ACTIVITY

    def test_confident_receiver_is_representative(self):
        src, rcv = window_pair(impulse(70, 10, 0.95), impulse(70, 12, 0.9))
        verdict = fuse_window(src, rcv)
        assert verdict.score == pytest.approx(0.9)
        assert verdict.branch == Branch.RECEIVER_CONFIDENT

    def test_quiet_receiver_falls_back_to_xcorr(self):
        src = impulse(70, 20, 0.95)
        rcv = np.roll(src, 8) * (0.4 / 0.95)
        verdict = fuse_window(*window_pair(src, rcv))
        assert verdict.branch == Branch.CROSS_CORRELATION
        assert verdict.score == pytest.approx(1.0, abs=1e-12)
        assert verdict.best_lag_s == pytest.approx(8 * STEP)

    def test_xcorr_score_matches_oracle(self):
        rng = np.random.default_rng(3)
        src_probs = np.clip(impulse(70, 30, 0.9) + rng.random(70) * 0.1, 0, 1)
        rcv_probs = rng.random(70) * 0.5
        verdict = fuse_window(*window_pair(src_probs, rcv_probs))
        want_v, want_l = oracles.brute_force_xcorr_max(src_probs, rcv_probs, 27)
        assert verdict.branch == Branch.CROSS_CORRELATION
        assert verdict.score == pytest.approx(want_v, abs=1e-12)
        assert verdict.best_lag_s == pytest.approx(want_l * STEP)

    def test_boundary_source_at_threshold_is_gated(self):
        src, rcv = window_pair(np.full(70, 0.8), np.full(70, 0.9))
        assert fuse_window(src, rcv).branch == Branch.NO_SOURCE_ACTIVITY

    def test_boundary_receiver_at_threshold_goes_to_xcorr(self):
        src, rcv = window_pair(impulse(70, 5, 0.9), np.full(70, 0.6))
        assert fuse_window(src, rcv).branch == Branch.CROSS_CORRELATION

    def test_incompatible_steps_rejected(self):
        src = series(np.zeros(10))
        rcv = PredictionSeries(
            times=np.arange(10) * 0.5, probs=np.zeros(10), device_id="r"
        )
        with pytest.raises(ValueError, match="incompatible prediction series"):
            fuse_window(src, rcv)

    def test_padded_receiver_confidence_limited_to_nominal_span(self):
        # receiver peak sits in the padding, before the nominal window
        src = series(impulse(70, 30, 0.9), t0=13.0)
        rcv = series(impulse(124, 2, 0.95), t0=13.0 - 10.125)
        verdict = fuse_window(src, rcv, window_start=13.0)
        assert verdict.branch == Branch.CROSS_CORRELATION

    def test_caption_max_aggregation_flag(self):
        cfg = FusionConfig(caption_max_aggregation=True)
        src, rcv = window_pair(impulse(70, 10, 0.95), impulse(70, 12, 0.4))
        verdict = fuse_window(src, rcv, cfg)
        assert verdict.branch == Branch.CAPTION_MAX
        assert verdict.score == pytest.approx(0.95)
        # the source gate still applies
        gated = fuse_window(*window_pair(np.full(70, 0.1), np.full(70, 0.9)), cfg)
        assert gated.score == 0.0


class TestBranchProperties:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_exactly_one_branch_and_contracts_hold(self, seed):
        rng = np.random.default_rng(seed)
        src, rcv = window_pair(rng.random(70), rng.random(70))
        cfg = FusionConfig()
        verdict = fuse_window(src, rcv, cfg)
        assert verdict.branch in (
            Branch.NO_SOURCE_ACTIVITY,
            Branch.RECEIVER_CONFIDENT,
            Branch.CROSS_CORRELATION,
        )
        if verdict.branch == Branch.NO_SOURCE_ACTIVITY:
            assert verdict.score == 0.0
            assert src.probs.max() <= cfg.threshold_source
        elif verdict.branch == Branch.RECEIVER_CONFIDENT:
            assert verdict.score > cfg.threshold_receiver
            assert src.probs.max() > cfg.threshold_source
        else:
            assert src.probs.max() > cfg.threshold_source
            assert rcv.probs.max() <= cfg.threshold_receiver
            assert 0.0 <= verdict.score <= 1.0 + 1e-12

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
    @settings(max_examples=200, deadline=None)
    def test_gate_monotone_in_source_threshold(self, seed, thr_lo, thr_hi):
        lo, hi = sorted((thr_lo, thr_hi))
        rng = np.random.default_rng(seed)
        src, rcv = window_pair(rng.random(70), rng.random(70))
        v_lo = fuse_window(src, rcv, FusionConfig(threshold_source=lo))
        v_hi = fuse_window(src, rcv, FusionConfig(threshold_source=hi))
        if v_lo.score == 0.0 and v_lo.branch == Branch.NO_SOURCE_ACTIVITY:
            assert v_hi.branch == Branch.NO_SOURCE_ACTIVITY
            assert v_hi.score == 0.0


class TestFuseStream:
    def test_52s_hop_13_gives_three_windows(self):
        n = round(52 / STEP)  # spans [0, 52)
        src = series(np.zeros(n))
        rcv = series(np.zeros(n))
        verdicts = fuse_stream(src, rcv)
        assert [v.window_start_s for v in verdicts] == [0.0, 13.0, 26.0]

    def test_all_zero_source_all_gated(self):
        rng = np.random.default_rng(4)
        n = round(80 / STEP)
        verdicts = fuse_stream(series(np.zeros(n)), series(rng.random(n)))
        assert all(v.score == 0.0 for v in verdicts)

    def test_single_window_span_equals_fuse_window(self):
        rng = np.random.default_rng(5)
        src = series(rng.random(70))
        rcv = series(rng.random(70))
        verdicts = fuse_stream(src, rcv)
        assert len(verdicts) == 1
        direct = fuse_window(
            src.slice_time(0.0, 26.0),
            rcv.slice_time(-10.0, 36.0),
            window_start=0.0,
        )
        assert verdicts[0] == direct

    def test_empty_series_rejected(self):
        src = series(np.zeros(70))
        empty = PredictionSeries(times=np.array([]), probs=np.array([]))
        with pytest.raises(ValueError, match="no predictions"):
            fuse_stream(src, empty)

    def test_verdicts_ordered_by_start(self):
        rng = np.random.default_rng(6)
        n = round(120 / STEP)
        verdicts = fuse_stream(series(rng.random(n)), series(rng.random(n)))
        starts = [v.window_start_s for v in verdicts]
        assert starts == sorted(starts)

    def test_drift_lag_recovery_within_one_step(self):
        # an impulsive pair with the receiver clock shifted by delta
        for delta in (-10.0, -5.0, 0.0, 5.0, 10.0):
            n = round(26 / STEP)
            src_probs = impulse(n, 30, 0.95)
            rcv = PredictionSeries(
                times=delta + np.arange(n) * STEP,
                probs=impulse(n, 30, 0.4),
                device_id="rcv",
            )
            verdict = fuse_window(
                series(src_probs, 0.0, "src"),
                rcv.slice_time(-10.125, 36.125),
                window_start=0.0,
            )
            assert verdict.branch == Branch.CROSS_CORRELATION
            got = round(verdict.best_lag_s / STEP)
            assert abs(got - round(delta / STEP)) <= 1


class TestBundles:
    def test_shipped_bundles(self):
        assert (BUNDLED_ONE.receiver_order, BUNDLED_ONE.source_order) == (0, 3)
        assert (BUNDLED_TWO.receiver_order, BUNDLED_TWO.source_order) == (1, 3)
        assert BUNDLED_ONE.name == "bundled_one"

    def test_custom_bundle_passthrough(self):
        spec = bundle(2, 2)
        assert spec.name == "custom"
        assert (spec.receiver_order, spec.source_order) == (2, 2)

    def test_invalid_order_rejected(self):
        with pytest.raises(ValueError, match="unsupported stack order"):
            bundle(4, 0)

    def test_lookup_by_name(self):
        assert bundle_by_name("one") == BUNDLED_ONE
        assert bundle_by_name("two") == BUNDLED_TWO
        with pytest.raises(ValueError, match="unknown bundle"):
            bundle_by_name("three")


class TestConfig:
    def test_max_lag_steps_is_27(self):
        assert FusionConfig().max_lag_steps == 27

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            FusionConfig(threshold_source=1.2)
        with pytest.raises(ValueError):
            FusionConfig(window_hop_s=0.0)
        with pytest.raises(ValueError):
            FusionConfig(max_drift_s=20.0)

    def test_gated_verdict_must_score_zero(self):
        with pytest.raises(ValueError, match="must score 0"):
            FusionVerdict(0.0, 0.5, Branch.NO_SOURCE_ACTIVITY)
