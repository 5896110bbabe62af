"""Builders and validators for the pulse sequences used by the experiments.

All sequences start from the lower level.  The preparation pi/2 pulse has
phase 0 (it puts the spin on +y), refocusing pi pulses default to phase
pi/2 relative to it (the robust echo convention), and the readout pi/2
pulse carries the scannable ``readout_phase``.  With these conventions a
fully refocused spin gives a readout fringe ``P2 = (1 + cos(phase))/2``,
maximal at ``readout_phase = 0``.

Durations: instantaneous pulses contribute nothing, so the sum of segment
durations equals the requested total time exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .bloch import DriveSegment, InstantPulse, TWO_PI

PI = math.pi
PI_HALF = math.pi / 2.0


class SequenceKind(Enum):
    RAMSEY = "ramsey"
    HAHN = "hahn"
    CPMG = "cpmg"
    UHRIG = "uhrig"
    CONTINUOUS_DRIVE = "continuous_drive"
    RABI = "rabi"


@dataclass(frozen=True)
class SequenceSpec:
    """Parameters from which a concrete pulse sequence is built.

    ``phase_switch_period`` applies to CONTINUOUS_DRIVE only (the drive
    phase flips by pi every such period; the total time must be an even
    multiple of it).  ``n_pulses`` applies to CPMG and UHRIG.
    """

    kind: SequenceKind
    total_time: float
    rabi: float = 0.0
    detuning_offset: float = 0.0
    phase_switch_period: float | None = None
    n_pulses: int = 1


@dataclass(frozen=True)
class PulseSequence:
    """An ordered tuple of drive segments and instantaneous pulses."""

    elements: tuple
    readout_phase: float = 0.0

    @property
    def total_duration(self) -> float:
        return sum(el.duration for el in self.elements if isinstance(el, DriveSegment))


def uhrig_times(n: int, total_time: float) -> list[float]:
    """Pi-pulse instants ``total_time * sin(pi*j/(2n+2))**2`` for j = 1..n.

    Strictly increasing, symmetric about ``total_time / 2``; n = 1 reduces
    to the single mid-point pulse of a plain echo.

    Raises
    ------
    ValueError
        If ``n < 1`` or ``total_time <= 0``.
    """
    if n < 1:
        raise ValueError(f"number of pulses must be >= 1, got {n}")
    if not total_time > 0.0:
        raise ValueError(f"total_time must be > 0, got {total_time}")
    return [total_time * math.sin(PI * j / (2 * n + 2)) ** 2 for j in range(1, n + 1)]


def _pi_train(pulse_times: list[float], total: float, offset: float, readout_phase: float):
    """Free-evolution segments interleaved with pi pulses at the given times."""
    elements = [InstantPulse(PI_HALF, 0.0)]
    t_prev = 0.0
    for t_pi in pulse_times:
        elements.append(DriveSegment(t_pi - t_prev, 0.0, 0.0, offset))
        elements.append(InstantPulse(PI, PI_HALF))
        t_prev = t_pi
    elements.append(DriveSegment(total - t_prev, 0.0, 0.0, offset))
    elements.append(InstantPulse(PI_HALF, readout_phase))
    return elements


def build_sequence(spec: SequenceSpec, readout_phase: float = 0.0) -> PulseSequence:
    """Construct the pulse sequence described by ``spec``.

    Sequence layouts:

    * RAMSEY: pi/2, free evolution (with ``detuning_offset``), pi/2(readout)
    * HAHN: pi/2, free T/2, pi, free T/2, pi/2(readout)
    * CPMG(n): pi pulses at odd multiples of T/(2n)
    * UHRIG(n): pi pulses at ``uhrig_times``
    * CONTINUOUS_DRIVE: pi/2, then drive segments of the phase-switch
      period with phases alternating 0, pi, then pi/2(readout)
    * RABI: one drive segment of the full duration, no pulses

    Raises
    ------
    ValueError
        On nonpositive durations, or a CONTINUOUS_DRIVE total time that is
        not an even multiple of the phase-switch period.
    """
    if not spec.total_time > 0.0:
        raise ValueError(f"total_time must be > 0, got {spec.total_time}")
    if spec.rabi < 0.0:
        raise ValueError(f"rabi must be >= 0, got {spec.rabi}")
    total = spec.total_time
    offset = spec.detuning_offset

    if spec.kind is SequenceKind.RAMSEY:
        elements = [
            InstantPulse(PI_HALF, 0.0),
            DriveSegment(total, 0.0, 0.0, offset),
            InstantPulse(PI_HALF, readout_phase),
        ]
    elif spec.kind is SequenceKind.HAHN:
        elements = _pi_train([0.5 * total], total, offset, readout_phase)
    elif spec.kind is SequenceKind.CPMG:
        if spec.n_pulses < 1:
            raise ValueError(f"n_pulses must be >= 1, got {spec.n_pulses}")
        times = [(2 * j - 1) * total / (2 * spec.n_pulses) for j in range(1, spec.n_pulses + 1)]
        elements = _pi_train(times, total, offset, readout_phase)
    elif spec.kind is SequenceKind.UHRIG:
        elements = _pi_train(uhrig_times(spec.n_pulses, total), total, offset, readout_phase)
    elif spec.kind is SequenceKind.CONTINUOUS_DRIVE:
        ts = spec.phase_switch_period
        if ts is None or not ts > 0.0:
            raise ValueError("continuous drive requires a positive phase_switch_period")
        m = round(total / ts)
        if m < 2 or m % 2 != 0 or abs(m * ts - total) > 1e-9 * max(total, ts):
            raise ValueError(
                f"total_time ({total}) must be an even multiple of the "
                f"phase_switch_period ({ts})"
            )
        elements = [InstantPulse(PI_HALF, 0.0)]
        for j in range(m):
            elements.append(DriveSegment(ts, spec.rabi, PI * (j % 2), offset))
        elements.append(InstantPulse(PI_HALF, readout_phase))
    elif spec.kind is SequenceKind.RABI:
        elements = [DriveSegment(total, spec.rabi, 0.0, offset)]
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown sequence kind {spec.kind}")

    return PulseSequence(tuple(elements), readout_phase)


def validate_sequence(seq: PulseSequence) -> list[str]:
    """Report every invariant violation of a sequence; empty list if valid.

    Checked: non-empty element list, nonnegative segment durations and Rabi
    amplitudes, pulse angles in (0, 2*pi], and even parity of any run of
    phase-alternated drive segments (an odd number of alternating segments
    leaves the drive-phase error uncancelled).
    """
    problems: list[str] = []
    if not seq.elements:
        problems.append("sequence is empty")
        return problems
    for i, el in enumerate(seq.elements):
        if isinstance(el, DriveSegment):
            if el.duration < 0.0:
                problems.append(f"element {i}: negative duration {el.duration}")
            if el.rabi < 0.0:
                problems.append(f"element {i}: negative Rabi amplitude {el.rabi}")
        elif isinstance(el, InstantPulse):
            if not 0.0 < el.angle <= TWO_PI:
                problems.append(f"element {i}: pulse angle {el.angle} outside (0, 2*pi]")
        else:
            problems.append(f"element {i}: unknown element type {type(el).__name__}")
    if not math.isfinite(seq.total_duration):
        problems.append("total duration is not finite")

    # Parity of phase-alternated drive runs: group maximal runs of driven
    # segments with equal duration/amplitude and phases hopping by pi.
    run_len = 0
    prev = None
    for el in list(seq.elements) + [None]:
        is_alt = (
            isinstance(el, DriveSegment)
            and el.rabi > 0.0
            and prev is not None
            and isinstance(prev, DriveSegment)
            and prev.rabi == el.rabi
            and prev.duration == el.duration
            and abs(abs(el.phase - prev.phase) - PI) < 1e-12
        )
        if is_alt:
            run_len += 1
        else:
            if run_len >= 2 and run_len % 2 == 1:
                problems.append(
                    f"phase-alternation parity violation: run of {run_len} "
                    "alternating drive segments (must be even)"
                )
            run_len = 1 if isinstance(el, DriveSegment) and el.rabi > 0.0 else 0
        prev = el
    return problems
