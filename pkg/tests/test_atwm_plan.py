import itertools

import networkx as nx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netfusion import atwm_plan as ap
from netfusion.atwm_plan import ItuChannel

C = 299792.458


def oracle_slots(channel_numbers):
    """Group pairs by frequency sum and rank the distinct sums (GHz integers)."""
    freq = {c: 190_000 + 100 * c for c in channel_numbers}
    groups = {}
    for a, b in itertools.combinations(sorted(channel_numbers), 2):
        groups.setdefault(freq[a] + freq[b], []).append((a, b))
    return [(s, sorted(groups[s])) for s in sorted(groups)]


class TestItuGrid:
    def test_ch31_frequency(self):
        assert ItuChannel(31).frequency == pytest.approx(193.1, abs=1e-12)

    def test_ch31_wavelength(self):
        assert ItuChannel(31).wavelength == pytest.approx(C / 193.1, abs=1e-9)
        assert ItuChannel(31).wavelength == pytest.approx(1552.52, abs=0.01)

    def test_ordering_and_str(self):
        assert ItuChannel(31) < ItuChannel(32)
        assert str(ItuChannel(45)) == "CH45"

    def test_coerce(self):
        assert ItuChannel.coerce(40) == ItuChannel(40)


class TestPlanPumps:
    def test_twenty_users_endpoints(self):
        s = ap.plan_pumps(range(31, 51))
        assert len(s.slots) == 37
        assert s.slots[0].telecom_wavelength == pytest.approx(1552.12, abs=0.01)
        assert s.slots[-1].telecom_wavelength == pytest.approx(1537.79, abs=0.01)

    def test_ten_users_endpoint(self):
        s = ap.plan_pumps(range(31, 41))
        assert len(s.slots) == 17
        assert s.slots[-1].telecom_wavelength == pytest.approx(1545.72, abs=0.05)

    def test_frozen_derived_wavelengths(self):
        # c / (sum/2) for the extreme sums of CH31..CH50
        s = ap.plan_pumps(range(31, 51))
        assert s.slots[0].telecom_wavelength == pytest.approx(1552.1225, abs=1e-4)
        assert s.slots[-1].telecom_wavelength == pytest.approx(1537.7915, abs=1e-4)
        assert s.slots[0].sh_wavelength == pytest.approx(1552.1225 / 2, abs=1e-4)

    def test_two_users(self):
        s = ap.plan_pumps([31, 32])
        assert len(s.slots) == 1
        assert s.slots[0].served_pairs == ((ItuChannel(31), ItuChannel(32)),)

    def test_time_offsets(self):
        s = ap.plan_pumps(range(31, 41), delta_t=300)
        assert [x.time_offset for x in s.slots] == [300 * k for k in range(17)]

    def test_matches_frequency_sum_oracle(self):
        chans = list(range(31, 51))
        s = ap.plan_pumps(chans)
        oracle = oracle_slots(chans)
        assert len(oracle) == len(s.slots)
        for slot, (sum_ghz, pairs) in zip(s.slots, oracle):
            assert slot.sh_frequency == pytest.approx(sum_ghz / 1000, abs=1e-9)
            assert sorted((a.channel_number, b.channel_number) for a, b in slot.served_pairs) == pairs

    def test_duplicate_channels(self):
        with pytest.raises(ValueError, match="CH31"):
            ap.plan_pumps([31, 31, 32])

    def test_too_few_users(self):
        with pytest.raises(ValueError):
            ap.plan_pumps([31])

    def test_uneven_spacing_rejected(self):
        with pytest.raises(ValueError):
            ap.plan_pumps([31, 32, 34])

    def test_infeasible(self):
        with pytest.raises(ap.ScheduleInfeasibleError, match=r"\(2N−3\)·Δt < period"):
            ap.plan_pumps(range(31, 51), delta_t=500)

    def test_feasibility_boundary(self):
        period = 37 * 300 + 1
        ap.plan_pumps(range(31, 51), delta_t=300, rep_period=period)
        with pytest.raises(ap.ScheduleInfeasibleError):
            ap.plan_pumps(range(31, 51), delta_t=300, rep_period=37 * 300)

    def test_input_order_irrelevant(self):
        assert ap.plan_pumps([33, 31, 32]) == ap.plan_pumps([31, 32, 33])

    def test_serialization_round_trip(self):
        s = ap.plan_pumps(range(31, 41), network_id="A")
        assert ap.schedule_from_dict(ap.schedule_to_dict(s)) == ap.schedule_from_dict(
            ap.schedule_to_dict(ap.schedule_from_dict(ap.schedule_to_dict(s)))
        )
        back = ap.schedule_from_dict(ap.schedule_to_dict(s))
        assert back.slots == s.slots and back.channels == s.channels


class TestSlotOfPair:
    def setup_method(self):
        self.s = ap.plan_pumps(range(31, 51))

    def test_extremes_share_middle_slot(self):
        assert ap.slot_of_pair(self.s, 31, 50) == 19
        assert ap.slot_of_pair(self.s, 40, 41) == 19

    def test_first_and_last(self):
        assert ap.slot_of_pair(self.s, 31, 32) == 1
        assert ap.slot_of_pair(self.s, 49, 50) == 37

    def test_symmetric(self):
        assert ap.slot_of_pair(self.s, 45, 33) == ap.slot_of_pair(self.s, 33, 45)

    def test_self_pair(self):
        with pytest.raises(ValueError):
            ap.slot_of_pair(self.s, 31, 31)

    def test_unknown_channel(self):
        with pytest.raises(ValueError):
            ap.slot_of_pair(self.s, 31, 60)

    def test_deleted_slot(self):
        with pytest.raises(ValueError):
            ap.slot_of_pair(self.s.without_slot(1), 31, 32)


class TestConnectivity:
    def test_full(self):
        rep = ap.verify_full_connectivity(ap.plan_pumps(range(31, 41)))
        assert rep.fully_connected
        assert rep.graph.edge_count() == 45
        assert nx.is_isomorphic(_to_nx(rep.graph), nx.complete_graph(10))

    @pytest.mark.parametrize("slot", [1, 9, 17])
    def test_deleting_slot_reports_its_pairs(self, slot):
        s = ap.plan_pumps(range(31, 41))
        rep = ap.verify_full_connectivity(s.without_slot(slot))
        assert not rep.fully_connected
        assert set(rep.missing_pairs) == set(s.slot(slot).served_pairs)
        assert rep.graph.edge_count() == 45 - len(s.slot(slot).served_pairs)

    def test_graph_round_trip(self):
        g = ap.verify_full_connectivity(ap.plan_pumps([31, 32, 33], network_id="X")).graph
        assert ap.TopologyGraph.from_dict(g.to_dict()) == g


def _to_nx(g):
    out = nx.Graph()
    out.add_nodes_from(g.nodes)
    for e, kind in g.edges.items():
        out.add_edge(*sorted(e), kind=kind)
    return out


class TestFusion:
    def fused(self, m=10, n=10):
        ga = ap.verify_full_connectivity(ap.plan_pumps(range(31, 31 + m), network_id="A")).graph
        gb = ap.verify_full_connectivity(ap.plan_pumps(range(31, 31 + n), network_id="B")).graph
        return ap.fuse_topologies(ga, gb, "A:CH31", "B:CH31")

    def test_ten_by_ten(self):
        g = self.fused()
        assert len(g.nodes) == 18
        assert g.edge_count() == 153
        assert g.edge_count(ap.DIRECT) == 72
        assert g.edge_count(ap.SWAPPED) == 81
        assert g.is_complete()
        assert nx.is_isomorphic(_to_nx(g), nx.complete_graph(18))

    @pytest.mark.parametrize("m,n", [(2, 2), (3, 7), (6, 4)])
    def test_sizes(self, m, n):
        g = self.fused(m, n)
        k = m + n - 2
        assert g.edge_count() == k * (k - 1) // 2
        assert g.edge_count(ap.SWAPPED) == (m - 1) * (n - 1)

    def test_sacrificed_node_absent(self):
        g = self.fused()
        assert "A:CH31" not in g.nodes and "B:CH31" not in g.nodes

    def test_unknown_sacrifice(self):
        ga = ap.verify_full_connectivity(ap.plan_pumps([31, 32], network_id="A")).graph
        gb = ap.verify_full_connectivity(ap.plan_pumps([31, 32], network_id="B")).graph
        with pytest.raises(ValueError):
            ap.fuse_topologies(ga, gb, "A:CH40", "B:CH31")

    def test_shared_names(self):
        ga = ap.verify_full_connectivity(ap.plan_pumps([31, 32])).graph
        with pytest.raises(ValueError):
            ap.fuse_topologies(ga, ga, "CH31", "CH31")

    def test_incomplete_input(self):
        s = ap.plan_pumps([31, 32, 33], network_id="A")
        ga = ap.verify_full_connectivity(s.without_slot(1)).graph
        gb = ap.verify_full_connectivity(ap.plan_pumps([31, 32], network_id="B")).graph
        with pytest.raises(ValueError):
            ap.fuse_topologies(ga, gb, "A:CH31", "B:CH31")


class TestAlignment:
    def test_latin_square(self):
        idlers = list(range(32, 41))
        settings = ap.alignment_schedule(idlers, idlers)
        assert len(settings) == 9
        pairs = [p for s in settings for p in s.pairs]
        assert len(pairs) == len(set(pairs)) == 81
        for s in settings:
            assert len({a for a, _ in s.pairs}) == len({b for _, b in s.pairs}) == 9

    def test_first_setting_diagonal(self):
        s = ap.alignment_schedule([32, 33], [32, 33])[0]
        assert s.pairs == ((ItuChannel(32), ItuChannel(32)), (ItuChannel(33), ItuChannel(33)))

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            ap.alignment_schedule([32, 33], [32])

    def test_delay_offsets(self):
        sa = ap.plan_pumps(range(31, 41), network_id="A")
        sb = ap.plan_pumps(range(31, 41), network_id="B")
        setting = ap.alignment_schedule(range(32, 41), range(32, 41))[1]
        offsets = ap.bsm_delay_offsets(sa, sb, setting, 31)
        for ca, cb in setting.pairs:
            # CH31 pairs with CH(31+k) in slot k, so the shift is (rank_a - rank_b) * dt
            assert offsets[cb.channel_number] == 300 * (ca.channel_number - cb.channel_number)


@given(st.integers(2, 64), st.integers(1, 60))
def test_connectivity_law(n, first):
    s = ap.plan_pumps(range(first, first + n), delta_t=1, rep_period=1e6)
    assert len(s.slots) == 2 * n - 3
    pairs = [p for slot in s.slots for p in slot.served_pairs]
    assert len(pairs) == len(set(pairs)) == n * (n - 1) // 2
    assert all(len(slot.served_pairs) >= 1 for slot in s.slots)
    assert ap.verify_full_connectivity(s).fully_connected


@given(st.integers(3, 30))
def test_slot_sums_strictly_increase(n):
    s = ap.plan_pumps(range(20, 20 + n), delta_t=1, rep_period=1e6)
    sums = [slot.sh_ticks for slot in s.slots]
    assert sums == sorted(set(sums))
    for slot in s.slots:
        assert {a.ticks + b.ticks for a, b in slot.served_pairs} == {slot.sh_ticks}
