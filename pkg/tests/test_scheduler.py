import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesch.dynamics import ConstantRate
from mesch.scheduler import (
    Action,
    GapParams,
    RobotDecision,
    RobotSlot,
    Trigger,
    eware,
    gap_flag,
    gware,
    remaining_battery_time,
    schedule,
    sort_by_remaining_time,
)

PARAMS = GapParams(T_ch=0.0, T_delta=15.0, T_L=6.0, T_C=12.0)


def slot(i, T_F, soc=(90.0, 80.0), floor=15.0, has_committed=True):
    return RobotSlot(i, T_F, None if soc is None else np.asarray(soc, float), floor, has_committed)


class TestRemainingTime:
    def test_full_battery(self):
        r = remaining_battery_time(100.0, ConstantRate(0.667))
        assert r.seconds == pytest.approx(100 / 0.667)
        assert round(r.seconds, 2) == 149.93
        assert not r.depleted

    def test_at_floor(self):
        assert remaining_battery_time(10.0, ConstantRate(0.667, e_min=10.0)).seconds == 0.0

    def test_below_floor_flags_depletion(self):
        r = remaining_battery_time(5.0, ConstantRate(0.667, e_min=10.0))
        assert r == (0.0, True)

    def test_halving_rate_doubles_time(self):
        a = remaining_battery_time(73.0, ConstantRate(0.6, e_min=10.0)).seconds
        b = remaining_battery_time(73.0, ConstantRate(0.3, e_min=10.0)).seconds
        assert b == pytest.approx(2 * a, rel=1e-15)

    def test_reserve_shortens(self):
        batt = ConstantRate(0.5, e_min=10.0)
        assert remaining_battery_time(60.0, batt, reserve=5.0).seconds == pytest.approx(90.0)
        assert remaining_battery_time(12.0, batt, reserve=5.0).seconds == 0.0


class TestGapFlag:
    def test_default_constants(self):
        assert gap_flag(40.0, 1, PARAMS) is True
        assert gap_flag(40.0, 2, PARAMS) is False

    def test_strict_boundary(self):
        assert gap_flag(33.0, 1, PARAMS) is False
        assert gap_flag(33.0 + 1e-9, 1, PARAMS) is True

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            gap_flag(100.0, 0, PARAMS)

    def test_slot_quantized_to_period(self):
        assert PARAMS.slot == 15.0
        assert GapParams(0.0, 15.0, 6.0, 12.0, T_E=2.0).slot == 16.0
        assert GapParams(0.0, 16.0, 6.0, 12.0, T_E=2.0).slot == 18.0
        assert GapParams(1.0, 2.0, 6.0, 12.0, T_E=0.5).slot == 3.5
        assert GapParams(0.0, 15.0, 6.0, 12.0, T_E=2.0, margin=2.0).slot == 18.0
        assert GapParams(0.0, 15.0, 6.0, 12.0, margin=0.5).slot == 15.5

    def test_negative_params(self):
        with pytest.raises(ValueError):
            GapParams(-1.0, 15.0, 6.0, 12.0)
        with pytest.raises(ValueError):
            GapParams(0.0, 15.0, 6.0, 12.0, T_E=0.0)


class TestGware:
    def test_single_robot_never_violates(self):
        violation, decisions, flags, order = gware([slot(0, 1.0)], PARAMS)
        assert violation is False and decisions == () and flags == ()

    def test_two_robots_clear(self):
        violation, decisions, flags, _ = gware([slot(0, 20.0), slot(1, 40.0)], PARAMS)
        assert violation is False and decisions == ()
        assert flags[0].value == 22.0 and flags[0].ok

    def test_three_robots_violation(self):
        violation, decisions, flags, order = gware([slot(0, 40.0), slot(1, 20.0), slot(2, 25.0)], PARAMS)
        assert violation is True
        assert order == (1, 2, 0)
        assert decisions[0] == RobotDecision(1, Action.KEEP, land=True, trigger=Trigger.GAP)
        assert {d.id: d.action for d in decisions[1:]} == {2: Action.COMMIT, 0: Action.COMMIT}
        # k=1: 25 - 18 = 7 > 15 fails; k=2: 40 - 18 = 22 > 30 fails
        assert [f.ok for f in flags] == [False, False]
        assert flags[1].value == 22.0

    def test_lead_without_previous_commits_and_lands(self):
        _, decisions, _, _ = gware([slot(0, 20.0, has_committed=False), slot(1, 25.0)], PARAMS)
        assert decisions[0] == RobotDecision(0, Action.COMMIT, land=True, trigger=Trigger.GAP)

    def test_invalid_candidate_of_follower_falls_back(self):
        _, decisions, _, _ = gware([slot(0, 20.0), slot(1, 25.0, soc=None)], PARAMS)
        assert decisions[1] == RobotDecision(1, Action.KEEP, land=True, trigger=Trigger.INVALID)


class TestEware:
    def test_all_comfortable(self):
        out = eware([slot(i, 100.0) for i in range(3)])
        assert all(d.action is Action.COMMIT and not d.land for d in out)

    def test_one_dips(self):
        slots = [slot(0, 100.0), slot(1, 100.0, soc=[40, 20, 14.9, 14.0]), slot(2, 100.0)]
        out = {d.id: d for d in eware(slots)}
        assert out[1] == RobotDecision(1, Action.KEEP, land=True, trigger=Trigger.RESERVE)
        assert out[0].action is Action.COMMIT and out[2].action is Action.COMMIT

    def test_equality_commits(self):
        out = eware([slot(0, 50.0, soc=[30.0, 20.0, 10.0], floor=10.0)])
        assert out[0].action is Action.COMMIT

    def test_no_previous_commits_and_lands(self):
        out = eware([slot(0, 50.0, soc=[12.0, 9.0], floor=10.0, has_committed=False)])
        assert out[0] == RobotDecision(0, Action.COMMIT, land=True, trigger=Trigger.RESERVE)

    def test_invalid_candidate(self):
        out = eware([slot(0, 50.0, soc=None)])
        assert out[0] == RobotDecision(0, Action.KEEP, land=True, trigger=Trigger.INVALID)


class TestSchedule:
    def test_gap_violation_short_circuits_eware(self):
        # robot 2's candidate would breach its reserve, but eware never runs
        slots = [slot(0, 20.0), slot(1, 25.0), slot(2, 40.0, soc=[20, 5])]
        d = schedule(slots, PARAMS)
        assert d.gap_violation and not d.ran_eware
        assert d.by_id()[2] == RobotDecision(2, Action.COMMIT)
        assert all(x.trigger is not Trigger.RESERVE for x in d.decisions)

    def test_all_commit(self):
        d = schedule([slot(0, 20.0), slot(1, 40.0)], PARAMS)
        assert not d.gap_violation and d.ran_eware
        assert all(x.action is Action.COMMIT and not x.land for x in d.decisions)

    def test_hand_trace_three_robots(self):
        # sorted order: 2 (T_F 30), 0 (52), 1 (70)
        # k=1: 52 - 18 = 34 > 15 ok; k=2: 70 - 18 = 52 > 30 ok -> no gap violation
        # eware: robot 0 dips to 14 < 15 -> keep + land, others commit
        slots = [slot(0, 52.0, soc=[30, 14]), slot(1, 70.0), slot(2, 30.0)]
        d = schedule(slots, PARAMS)
        assert d.order == (2, 0, 1)
        assert [(f.k, f.id, f.value, f.ok) for f in d.flags] == [(1, 0, 34.0, True), (2, 1, 52.0, True)]
        assert d.by_id() == {
            0: RobotDecision(0, Action.KEEP, land=True, trigger=Trigger.RESERVE),
            1: RobotDecision(1, Action.COMMIT),
            2: RobotDecision(2, Action.COMMIT),
        }

    def test_returning_reference(self):
        d = schedule([slot(0, 20.0), slot(1, 25.0)], PARAMS, reference_returning=True)
        assert not d.gap_violation and d.ran_eware
        assert [f.k for f in d.flags] == [1, 2]
        assert all(x.action is Action.COMMIT for x in d.decisions)

    def test_pure(self):
        slots = [slot(i, t) for i, t in enumerate([40.0, 20.0, 25.0, 90.0])]
        assert schedule(slots, PARAMS) == schedule(list(slots), PARAMS)

    def test_ties_broken_by_id(self):
        slots = [slot(3, 20.0), slot(1, 20.0), slot(2, 20.0)]
        assert [s.id for s in sort_by_remaining_time(slots)] == [1, 2, 3]
        d = schedule(slots, PARAMS)
        assert d.decisions[0].id == 1 and d.by_id()[1].land


slot_lists = st.lists(
    st.tuples(st.floats(0, 300), st.booleans()), min_size=1, max_size=8,
).map(lambda rows: [slot(i, T, soc=[50.0, 30.0 if ok else 5.0]) for i, (T, ok) in enumerate(rows)])


@settings(max_examples=200, deadline=None)
@given(slot_lists)
def test_at_most_one_gap_landing(slots):
    d = schedule(slots, PARAMS)
    gap_landings = [x for x in d.decisions if x.trigger is Trigger.GAP]
    assert len(gap_landings) <= 1
    if d.gap_violation:
        assert gap_landings[0].id == d.order[0]


@settings(max_examples=200, deadline=None)
@given(slot_lists)
def test_eware_never_flags_safe_candidates(slots):
    d = schedule(slots, PARAMS)
    if d.ran_eware:
        by_id = d.by_id()
        for s in slots:
            assert by_id[s.id].land is (not s.candidate_ok)


@settings(max_examples=200, deadline=None)
@given(slot_lists, st.randoms())
def test_independent_of_input_order(slots, rnd):
    shuffled = list(slots)
    rnd.shuffle(shuffled)
    a, b = schedule(slots, PARAMS), schedule(shuffled, PARAMS)
    assert a.decisions == b.decisions and a.order == b.order and a.flags == b.flags


@settings(max_examples=200, deadline=None)
@given(slot_lists)
def test_one_decision_per_robot(slots):
    d = schedule(slots, PARAMS)
    assert sorted(x.id for x in d.decisions) == sorted(s.id for s in slots)
