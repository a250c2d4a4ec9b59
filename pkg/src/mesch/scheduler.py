"""Recharge scheduling: remaining battery time, gap flags, gware, eware.

Each scheduling round receives one slot per robot still on mission. The
gap-aware pass orders robots by remaining battery time and checks that the
k-th robot in that order leaves ``k`` separation slots behind the first; if
not, the first robot is sent home now. Otherwise the energy-aware pass lets
every robot commit its new candidate only when the candidate keeps enough
charge in hand to finish a worst-case landing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from .dynamics import BatteryModel


class Action(str, Enum):
    COMMIT = "commit"
    KEEP = "keep"


class Trigger(str, Enum):
    NONE = "none"
    GAP = "gap-violation"
    RESERVE = "reserve-violation"
    INVALID = "invalid-candidate"


class RemainingTime(NamedTuple):
    seconds: float
    depleted: bool


def remaining_battery_time(e: float, battery: BatteryModel, reserve: float = 0.0) -> RemainingTime:
    """Time until SoC reaches ``e_min + reserve`` at the battery's worst-case rate.

    Args:
        e: current SoC.
        reserve: SoC held back above ``e_min``; zero gives the plain
            ``(e - e_min) / rate`` figure.
    """
    margin = e - battery.e_min - reserve
    if e < battery.e_min:
        return RemainingTime(0.0, True)
    return RemainingTime(max(margin, 0.0) / battery.max_rate(), False)


@dataclass(frozen=True)
class GapParams:
    """Timing constants of the gap condition.

    Args:
        T_E: scheduling period. When given, each separation slot is rounded up
            to the next whole number of periods above ``T_ch + T_delta``;
            returns can only start on period boundaries, and the plain slot
            lets two touchdowns land up to one period closer than required.
            ``None`` keeps the continuous-time slot ``T_ch + T_delta``.
        margin: extra seconds added before rounding up to whole periods. It
            absorbs changes in the reserve between rounds, which make the
            remaining battery time drop by slightly more than one period.
    """

    T_ch: float
    T_delta: float
    T_L: float
    T_C: float
    T_E: float | None = None
    margin: float = 0.0

    def __post_init__(self):
        vals = [self.T_ch, self.T_delta, self.T_L, self.T_C, self.margin]
        if any(v < 0 for v in vals):
            raise ValueError("gap parameters must be non-negative")
        if self.T_E is not None and self.T_E <= 0:
            raise ValueError("T_E must be positive")

    @property
    def min_gap(self) -> float:
        return self.T_ch + self.T_delta

    @property
    def slot(self) -> float:
        if self.T_E is None:
            return self.min_gap + self.margin
        return self.T_E * (math.floor((self.min_gap + self.margin) / self.T_E + 1e-12) + 1)


def gap_flag(T_F_k: float, k: int, params: GapParams) -> bool:
    """Whether the ``k``-th robot in the sorted order is clear of the first robot's return."""
    if k < 1:
        raise ValueError("gap flags are defined for k >= 1")
    return (T_F_k - params.T_L - params.T_C) > k * params.slot


@dataclass(frozen=True)
class RobotSlot:
    """What the scheduler needs to know about one robot this round.

    Args:
        candidate_soc: SoC samples of this round's candidate, or ``None`` when
            candidate construction failed.
        soc_floor: SoC the candidate must keep at every sample (``e_min`` plus
            the landing budget and reserve).
        has_committed: whether a previously committed trajectory exists to
            fall back on.
    """

    id: int
    T_F: float
    candidate_soc: NDArray[np.float64] | None
    soc_floor: float
    has_committed: bool = True

    @property
    def candidate_ok(self) -> bool:
        return self.candidate_soc is not None and bool(np.min(self.candidate_soc) >= self.soc_floor)


@dataclass(frozen=True)
class RobotDecision:
    id: int
    action: Action
    land: bool = False
    trigger: Trigger = Trigger.NONE


@dataclass(frozen=True)
class FlagRecord:
    k: int
    id: int
    T_F: float
    value: float
    ok: bool


@dataclass(frozen=True)
class ScheduleDecision:
    decisions: tuple[RobotDecision, ...]
    gap_violation: bool = False
    order: tuple[int, ...] = ()
    flags: tuple[FlagRecord, ...] = field(default=())
    ran_eware: bool = True

    def by_id(self) -> dict[int, RobotDecision]:
        return {d.id: d for d in self.decisions}


def sort_by_remaining_time(slots: Sequence[RobotSlot]) -> list[RobotSlot]:
    """Ascending ``T_F``; ties broken by robot id."""
    return sorted(slots, key=lambda s: (s.T_F, s.id))


def evaluate_flags(ordered: Sequence[RobotSlot], params: GapParams, first_k: int = 1) -> list[FlagRecord]:
    out = []
    for k, s in enumerate(ordered, start=first_k):
        value = s.T_F - params.T_L - params.T_C
        out.append(FlagRecord(k, s.id, s.T_F, value, gap_flag(s.T_F, k, params)))
    return out


def _commit_or_fallback(s: RobotSlot) -> RobotDecision:
    if s.candidate_soc is None:
        return RobotDecision(s.id, Action.KEEP, land=True, trigger=Trigger.INVALID)
    return RobotDecision(s.id, Action.COMMIT)


def gware(slots: Sequence[RobotSlot], params: GapParams):
    """Gap-aware pass.

    Returns:
        ``(violation, decisions, flags, order)``. On a violation the first robot
        in sorted order keeps its committed trajectory and is sent to land at
        the end of it, and every other robot commits its candidate.
    """
    ordered = sort_by_remaining_time(slots)
    flags = evaluate_flags(ordered[1:], params)
    order = tuple(s.id for s in ordered)
    if all(f.ok for f in flags):
        return False, (), tuple(flags), order
    first = ordered[0]
    if first.has_committed:
        lead = RobotDecision(first.id, Action.KEEP, land=True, trigger=Trigger.GAP)
    else:
        lead = RobotDecision(first.id, Action.COMMIT, land=True, trigger=Trigger.GAP)
    decisions = (lead,) + tuple(_commit_or_fallback(s) for s in ordered[1:])
    return True, decisions, tuple(flags), order


def eware(slots: Sequence[RobotSlot]) -> tuple[RobotDecision, ...]:
    """Energy-aware pass: commit each candidate that keeps SoC above its floor throughout."""
    out = []
    for s in sorted(slots, key=lambda s: s.id):
        if s.candidate_ok:
            out.append(RobotDecision(s.id, Action.COMMIT))
        elif s.candidate_soc is None:
            out.append(RobotDecision(s.id, Action.KEEP, land=True, trigger=Trigger.INVALID))
        elif s.has_committed:
            out.append(RobotDecision(s.id, Action.KEEP, land=True, trigger=Trigger.RESERVE))
        else:
            # nothing to fall back on: fly the candidate and land at its end
            out.append(RobotDecision(s.id, Action.COMMIT, land=True, trigger=Trigger.RESERVE))
    return tuple(out)


def schedule(slots: Sequence[RobotSlot], params: GapParams, reference_returning: bool = False) -> ScheduleDecision:
    """One scheduling round: gware first, eware only when gware found no violation.

    Args:
        reference_returning: a robot already on its way home is still too close
            to its touchdown for another return to be started. It then acts as
            the first robot of the order, flags are evaluated for every active
            robot from ``k = 1`` for the record, and nobody is sent home by the
            gap pass.
    """
    if reference_returning:
        ordered = sort_by_remaining_time(slots)
        flags = tuple(evaluate_flags(ordered, params, first_k=1))
        return ScheduleDecision(eware(slots), False, tuple(s.id for s in ordered), flags)
    violation, decisions, flags, order = gware(slots, params)
    if violation:
        return ScheduleDecision(tuple(sorted(decisions, key=lambda d: d.id)), True, order, flags, ran_eware=False)
    return ScheduleDecision(eware(slots), False, order, flags)
