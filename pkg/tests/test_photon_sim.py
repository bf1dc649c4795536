import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netfusion import analysis as an
from netfusion import photon_sim as ps
from netfusion.atwm_plan import plan_pumps
from netfusion.photon_sim import DetectorParams, LinkParams, SourceParams

PERFECT = DetectorParams(efficiency=1.0, dark_rate=0.0)
LOSSLESS = LinkParams(1.0)


def run(channels, duration, seed=1, detector=PERFECT, link=LOSSLESS, source=SourceParams(), **kw):
    sched = plan_pumps(channels)
    dets, links = ps.uniform_params(sched, detector, link)
    return sched, ps.simulate_network(sched, source, dets, links, duration, seed, **kw)


def within(observed, expected, n_sigma=4):
    return abs(observed - expected) <= n_sigma * math.sqrt(max(expected, 1))


class TestParams:
    def test_defaults(self):
        assert SourceParams().period_ps == pytest.approx(16666.667, abs=1e-3)
        assert DetectorParams().efficiency == 0.7

    @pytest.mark.parametrize("mu", [-0.1, 0.5])
    def test_mu_range(self, mu):
        with pytest.raises(ValueError):
            SourceParams(mu=mu)

    def test_probabilities(self):
        with pytest.raises(ValueError):
            DetectorParams(efficiency=1.2)
        with pytest.raises(ValueError):
            LinkParams(-0.1)

    def test_stream_validation(self):
        with pytest.raises(ValueError):
            ps.TimeTagStream("x", np.array([5, 3]), 10)
        with pytest.raises(ValueError):
            ps.TimeTagStream("x", np.array([5, 10]), 10)


class TestRateOracles:
    def test_pair_rate_closed_form(self):
        d, l_ = DetectorParams(0.7, 70), LinkParams(0.17)
        r = ps.expected_pair_rate(SourceParams(0.01, 60e6), d, d, l_, l_)
        assert r == pytest.approx(0.01 * 60e6 * (0.7 * 0.17) ** 2, rel=1e-12)
        assert r == pytest.approx(8496.6, abs=0.01)

    def test_dark_only_accidentals(self):
        d = DetectorParams(0.7, 100)
        r = ps.expected_accidental_rate(SourceParams(0.0), d, d, LOSSLESS, LOSSLESS)
        assert r == pytest.approx(2e-6, rel=1e-12)

    def test_same_slot_is_reduced(self):
        d = DetectorParams(0.7, 0)
        src = SourceParams()
        unrelated = ps.expected_accidental_rate(src, d, d, LOSSLESS, LOSSLESS, True)
        own = ps.expected_accidental_rate(src, d, d, LOSSLESS, LOSSLESS, False)
        assert own == pytest.approx(unrelated * 0.3, rel=1e-12)

    def test_transmission_for_rate_inverts(self):
        src = SourceParams()
        t = ps.transmission_for_rate(1e4 / 5, src, 0.7)
        l_ = LinkParams(t)
        d = DetectorParams(0.7, 0)
        assert ps.expected_pair_rate(src, d, d, l_, l_) == pytest.approx(2000, rel=1e-12)

    def test_unreachable_rate(self):
        with pytest.raises(ValueError):
            ps.transmission_for_rate(1e9, SourceParams(), 0.7)


class TestSimulation:
    def test_deterministic(self):
        _, a = run([31, 32, 33], 0.01, seed=5)
        _, b = run([31, 32, 33], 0.01, seed=5)
        assert a == b

    def test_seed_changes_output(self):
        _, a = run([31, 32, 33], 0.01, seed=5)
        _, b = run([31, 32, 33], 0.01, seed=6)
        assert a[31] != b[31]

    def test_zero_duration(self):
        _, s = run([31, 32, 33], 0.0)
        assert all(len(t) == 0 and t.duration_ps == 0 for t in s.values())

    def test_tags_sorted_in_range_and_int(self):
        _, s = run(range(31, 36), 0.02, detector=DetectorParams(0.7, 1e4, 30), chunk_pulses=1 << 16)
        for stream in s.values():
            assert stream.tags.dtype == np.int64
            assert np.all(np.diff(stream.tags) >= 0)
            assert stream.tags.size == 0 or (stream.tags[0] >= 0 and stream.tags[-1] < stream.duration_ps)

    def test_lossless_one_second_rate(self):
        _, s = run([31, 32], 1.0, seed=11)
        n = an.count_coincidences(s[31], s[32], 100)
        assert within(n, 6e5, n_sigma=3)
        # with no loss every tag has its partner
        assert len(s[31]) == len(s[32]) == n

    def test_chunking_preserves_statistics(self):
        _, s = run([31, 32], 0.2, seed=3, chunk_pulses=1 << 14)
        assert within(an.count_coincidences(s[31], s[32], 100), 1.2e5)

    def test_dark_count_rate(self):
        det = DetectorParams(1.0, 5e4)
        _, s = run([31, 32], 0.5, source=SourceParams(0.0), detector=det)
        for stream in s.values():
            assert within(len(stream), 2.5e4)

    def test_dark_dark_accidentals_match_oracle(self):
        det = DetectorParams(1.0, 2e6)
        src = SourceParams(0.0)
        _, s = run([31, 32], 1.0, source=src, detector=det, seed=9)
        expected = ps.expected_accidental_rate(src, det, det, LOSSLESS, LOSSLESS)
        assert expected == pytest.approx(800.0)
        assert within(an.count_coincidences(s[31], s[32], 100), expected)

    def test_slot_isolation_zero_jitter(self):
        sched, s = run(range(31, 36), 0.05, seed=2)
        for ch, stream in s.items():
            phase = (stream.tags - ps.pulse_start(np.round(stream.tags / sched.rep_period), sched.rep_period))
            allowed = {slot.time_offset for slot in sched.slots if any(ch in (a.channel_number, b.channel_number) for a, b in slot.served_pairs)}
            assert set(np.unique(phase).tolist()) <= allowed

    def test_jitter_spread(self):
        det = DetectorParams(1.0, 0.0, 40.0)
        sched, s = run([31, 32], 0.05, detector=det, seed=4)
        t = s[31].tags
        phase = t - ps.pulse_start(np.round(t / sched.rep_period), sched.rep_period)
        assert np.std(phase) == pytest.approx(40.0, rel=0.05)

    def test_missing_parameters(self):
        sched = plan_pumps([31, 32])
        with pytest.raises(ValueError):
            ps.simulate_network(sched, SourceParams(), {31: PERFECT}, {31: LOSSLESS}, 0.01, 0)


class TestHom:
    def test_curve_shape(self):
        m = ps.HomModel(0.8, 100.0, 50.0)
        c = ps.hom_coincidence_curve(m, [50.0, 50.0 + 1e6])
        assert c[0] == pytest.approx(0.2)
        assert c[1] == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ps.HomModel(1.2, 10)
        with pytest.raises(ValueError):
            ps.HomModel(0.5, 0)

    def test_identical_filters(self):
        assert ps.mode_overlap_from_filters(0.8, 0.8) == pytest.approx(1.0, abs=1e-12)
        assert ps.mode_overlap_from_filters(0.8, 0.8, calibration=0.835) == pytest.approx(0.835, abs=1e-12)

    def test_bandwidth_ratio(self):
        # 2 s_a s_b / (s_a^2 + s_b^2) with s_b = 2 s_a
        assert ps.mode_overlap_from_filters(1.0, 2.0) == pytest.approx(0.8, abs=1e-12)

    def test_model_consistent_with_overlap(self):
        m = ps.hom_model_from_filters(0.8, 1.2)
        for tau in (0.0, 2.0, 7.5):
            assert 1 - ps.hom_coincidence_curve(m, [tau])[0] == pytest.approx(
                ps.mode_overlap_from_filters(0.8, 1.2, tau), abs=1e-12
            )

    @given(
        st.floats(0.05, 5),
        st.floats(0.05, 5),
        st.floats(0, 50),
        st.floats(0, 1),
    )
    def test_overlap_properties(self, a, b, tau, cal):
        x = ps.mode_overlap_from_filters(a, b, tau, calibration=cal)
        assert 0 <= x <= cal + 1e-15
        assert x == pytest.approx(ps.mode_overlap_from_filters(b, a, tau, calibration=cal), rel=1e-12, abs=1e-300)
        assert ps.mode_overlap_from_filters(a, b, tau + 1, calibration=cal) <= x + 1e-15
