import numpy as np
import pytest

import oracles
from noisepair.frontend import LevelSeries
from noisepair.hmm import Hmm2, decode, fit, label_stream, segments


def series(values, start=0.0):
    return LevelSeries(values=np.asarray(values, dtype=float), start_time_s=start)


def random_levels(rng, n=None):
    """Two-state-ish series: quiet background with loud runs."""
    n = n or rng.integers(30, 120)
    quiet = rng.normal(-65, 3, n)
    state = np.zeros(n, dtype=bool)
    t = 0
    while t < n:
        if rng.random() < 0.2:
            run = int(rng.integers(1, 5))
            state[t : t + run] = True
            t += run
        t += 1
    values = np.where(state, rng.normal(-15, 3, n), quiet)
    return series(values)


class TestFit:
    def test_two_cluster_means_recovered(self):
        rng = np.random.default_rng(0)
        vals = []
        for _ in range(20):
            vals.extend(rng.normal(-70, 1, 6))
            vals.extend(rng.normal(-10, 1, 3))
        result = fit(series(vals), seed=0)
        means = np.sort(result.hmm.means)
        assert abs(means[0] - (-70)) < 3
        assert abs(means[1] - (-10)) < 3

    def test_loglik_nondecreasing_on_random_series(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            result = fit(random_levels(rng), seed=1)
            steps = np.diff(result.history)
            assert np.all(steps > -1e-8)

    def test_seed_determinism(self):
        rng = np.random.default_rng(9)
        lv = random_levels(rng)
        a = fit(lv, seed=7)
        b = fit(lv, seed=7)
        assert np.array_equal(a.hmm.means, b.hmm.means)
        assert np.array_equal(a.hmm.transition, b.hmm.transition)
        assert a.history == b.history

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError, match="degenerate level series"):
            fit(series(np.full(50, -60.0)))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="degenerate level series"):
            fit(series([-60.0, -10.0, -60.0]))

    def test_std_floor_respected(self):
        vals = np.tile([-70.0, -70.0, -10.0], 30) + np.random.default_rng(2).normal(0, 0.01, 90)
        result = fit(series(vals), seed=0)
        assert np.all(result.hmm.stds >= 0.5 - 1e-12)


class TestDecode:
    def fitted(self):
        return Hmm2(
            initial=np.array([0.6, 0.4]),
            transition=np.array([[0.85, 0.15], [0.3, 0.7]]),
            means=np.array([-65.0, -15.0]),
            stds=np.array([4.0, 6.0]),
        )

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(123)
        hmm = self.fitted()
        for _ in range(100):
            n = int(rng.integers(2, 9))
            vals = rng.uniform(-80, 0, n)
            path = decode(hmm, series(vals))

            z = (vals[:, None] - hmm.means[None, :]) / hmm.stds[None, :]
            log_b = -0.5 * z**2 - np.log(np.sqrt(2 * np.pi) * hmm.stds[None, :])
            want, _ = oracles.viterbi_by_enumeration(
                np.log(hmm.initial), np.log(hmm.transition), log_b
            )
            assert np.array_equal(path, want)

    def test_all_quiet_stays_in_low_state(self):
        hmm = self.fitted()
        path = decode(hmm, series(np.full(40, -66.0)))
        assert np.all(path == 0)

    def test_impulse_run_covered_by_high_state(self):
        hmm = self.fitted()
        vals = np.full(30, -66.0)
        vals[12:15] = -12.0
        path = decode(hmm, series(vals))
        assert np.all(path[12:15] == 1)
        assert path[:10].sum() == 0


class TestSegments:
    def test_single_run(self):
        labels = segments(np.array([0, 0, 1, 1, 1, 0]), 0.125, event_state=1)
        assert len(labels) == 1
        assert labels[0].start_s == pytest.approx(0.25)
        assert labels[0].end_s == pytest.approx(0.625)

    def test_no_events(self):
        assert segments(np.zeros(10, dtype=int), 0.125) == []

    def test_alternating_states(self):
        labels = segments(np.array([0, 1, 0, 1]), 0.125)
        assert len(labels) == 2
        assert labels[0].start_s == pytest.approx(0.125)
        assert labels[1].start_s == pytest.approx(0.375)

    def test_run_at_end_is_closed(self):
        labels = segments(np.array([0, 1, 1]), 0.125)
        assert labels[0].end_s == pytest.approx(0.375)

    def test_inverse_consistency(self):
        rng = np.random.default_rng(31)
        states = (rng.random(60) < 0.3).astype(int)
        labels = segments(states, 0.125)
        rebuilt = np.zeros(60, dtype=int)
        for ev in labels:
            lo = round(ev.start_s / 0.125)
            hi = round(ev.end_s / 0.125)
            rebuilt[lo:hi] = 1
        assert np.array_equal(states, rebuilt)

    def test_start_time_offset(self):
        labels = segments(np.array([1, 0]), 0.125, event_state=1, start_time_s=100.0)
        assert labels[0].start_s == pytest.approx(100.0)


class TestLabelStream:
    def test_end_to_end_segments_cover_loud_runs(self):
        rng = np.random.default_rng(4)
        vals = rng.normal(-65, 1.5, 200)
        for start in (40, 100, 160):
            vals[start : start + 3] = rng.normal(-12, 1.0, 3)
        labels = label_stream(series(vals), seed=0)
        assert len(labels) == 3
        for ev, start in zip(labels, (40, 100, 160)):
            assert ev.start_s == pytest.approx(start * 0.125, abs=0.3)
