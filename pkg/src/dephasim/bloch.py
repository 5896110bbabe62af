"""Exact dynamics of a driven two-level system on the Bloch sphere.

A two-level system is represented by its Bloch vector ``(u, v, w)``: ``u``
and ``v`` are the in-phase and quadrature coherences, ``w = P2 - P1`` the
population inversion, so ``P2 = (1 + w) / 2``.  In the rotating frame the
Hamiltonian is piecewise constant (it only changes at pulses and collision
events), so every evolution step is an exact axis-angle rotation.  There is
no ODE time-stepping and therefore no integration error.

Conventions, fixed once and used everywhere in the package:

* a drive with Rabi amplitude ``rabi`` (rad/s), phase ``phase`` (rad) and
  detuning ``delta`` (rad/s) rotates the Bloch vector about the axis
  ``(rabi*cos(phase), rabi*sin(phase), delta)`` at the angular rate
  ``sqrt(rabi**2 + delta**2)``, with the right-hand rule;
* an instantaneous pulse of rotation angle ``angle`` about the equatorial
  axis at azimuth ``phase`` is the zero-duration limit of a strong drive;
* angular frequencies are rad/s and durations are seconds; published
  "2*pi*x Hz" values must be converted at the boundary;
* the lower level sits at the south pole (``w = -1``), the upper level at
  the north pole (``w = +1``).

The rotation kernels broadcast over numpy arrays; the ensemble engine uses
them on whole-ensemble component arrays, while the ``SpinState`` functions
wrap the same kernels for single atoms, so both paths share one set of
floating-point operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpinState:
    """Bloch vector of one two-level system.

    Attributes
    ----------
    u, v : float
        In-phase and quadrature coherence components.
    w : float
        Population inversion, ``w = P2 - P1``.
    """

    u: float = 0.0
    v: float = 0.0
    w: float = -1.0

    @classmethod
    def ground(cls) -> "SpinState":
        """All population in the lower level: ``(0, 0, -1)``."""
        return cls(0.0, 0.0, -1.0)

    @property
    def p2(self) -> float:
        """Upper-level population ``(1 + w) / 2``."""
        return 0.5 * (1.0 + self.w)

    def norm(self) -> float:
        return math.sqrt(self.u * self.u + self.v * self.v + self.w * self.w)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w], dtype=float)


@dataclass(frozen=True)
class DriveSegment:
    """A constant-drive interval.

    ``extra_detuning`` is a sequence-level offset (e.g. a deliberately
    detuned synthesizer) added to whatever detuning the atom itself has.
    A free-evolution interval is simply ``rabi = 0``.
    """

    duration: float
    rabi: float = 0.0
    phase: float = 0.0
    extra_detuning: float = 0.0


@dataclass(frozen=True)
class InstantPulse:
    """An idealized zero-duration rotation about an equatorial axis."""

    angle: float
    phase: float = 0.0


def rotate_bloch(u, v, w, nx, ny, nz, angle):
    """Rotate Bloch components about the unit axis ``(nx, ny, nz)``.

    Rodrigues formula with the right-hand rule; all arguments broadcast,
    so this serves both single atoms and whole ensembles.  The axis must
    be normalized by the caller (or the angle must be zero).
    """
    c = np.cos(angle)
    s = np.sin(angle)
    k = 1.0 - c
    d = nx * u + ny * v + nz * w
    u2 = u * c + (ny * w - nz * v) * s + nx * d * k
    v2 = v * c + (nz * u - nx * w) * s + ny * d * k
    w2 = w * c + (nx * v - ny * u) * s + nz * d * k
    return u2, v2, w2


def drive_rotation(u, v, w, rabi, phase, delta, duration):
    """Evolve Bloch components under a constant drive for ``duration``.

    Rotation about ``(rabi*cos(phase), rabi*sin(phase), delta)`` by
    ``sqrt(rabi**2 + delta**2) * duration``.  ``delta`` and ``duration``
    may be arrays (per-atom values); ``rabi`` and ``phase`` are scalars
    within one segment.  A zero effective rate leaves the state unchanged.
    """
    oeff = np.sqrt(rabi * rabi + delta * delta)
    safe = np.where(oeff > 0.0, oeff, 1.0)
    nx = (rabi * np.cos(phase)) / safe
    ny = (rabi * np.sin(phase)) / safe
    nz = delta / safe
    return rotate_bloch(u, v, w, nx, ny, nz, oeff * duration)


def pulse_rotation(u, v, w, angle, phase):
    """Apply an instantaneous rotation about ``(cos(phase), sin(phase), 0)``."""
    return rotate_bloch(u, v, w, np.cos(phase), np.sin(phase), 0.0, angle)


def evolve_segment(state: SpinState, atom_detuning: float, seg: DriveSegment) -> SpinState:
    """Evolve a single spin through one constant-drive segment.

    The effective detuning is ``atom_detuning + seg.extra_detuning``.
    Norm is preserved exactly (up to floating point); with both the drive
    and the detuning zero the input state is returned unchanged.

    Raises
    ------
    ValueError
        If ``seg.duration`` is negative or ``seg.rabi`` is negative.
    """
    if seg.duration < 0.0:
        raise ValueError(f"segment duration must be >= 0, got {seg.duration}")
    if seg.rabi < 0.0:
        raise ValueError(f"Rabi amplitude must be >= 0, got {seg.rabi}")
    delta = atom_detuning + seg.extra_detuning
    u, v, w = drive_rotation(state.u, state.v, state.w, seg.rabi, seg.phase, delta, seg.duration)
    return SpinState(float(u), float(v), float(w))


def apply_pulse(state: SpinState, pulse: InstantPulse) -> SpinState:
    """Apply an instantaneous pulse to a single spin.

    Raises
    ------
    ValueError
        If the rotation angle is outside ``(0, 2*pi]``.
    """
    if not 0.0 < pulse.angle <= TWO_PI:
        raise ValueError(f"pulse angle must be in (0, 2*pi], got {pulse.angle}")
    u, v, w = pulse_rotation(state.u, state.v, state.w, pulse.angle, pulse.phase)
    return SpinState(float(u), float(v), float(w))


def rabi_population(delta, rabi, t):
    """Upper-level population of a driven spin that starts in the lower level.

    Closed form ``P2(t) = (rabi**2 / oeff**2) * sin(oeff*t/2)**2`` with
    ``oeff = sqrt(rabi**2 + delta**2)``.  Used as the independent oracle for
    driven-evolution checks; broadcasts over arrays.

    Raises
    ------
    ValueError
        If ``rabi`` is negative.
    """
    if np.any(np.asarray(rabi) < 0.0):
        raise ValueError("Rabi amplitude must be >= 0")
    oeff_sq = np.asarray(rabi) ** 2 + np.asarray(delta) ** 2
    safe = np.where(oeff_sq > 0.0, oeff_sq, 1.0)
    amp = np.asarray(rabi) ** 2 / safe
    out = amp * np.sin(0.5 * np.sqrt(oeff_sq) * np.asarray(t)) ** 2
    if np.isscalar(delta) and np.isscalar(rabi) and np.isscalar(t):
        return float(out)
    return out
