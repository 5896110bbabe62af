"""Per-atom detuning statistics and the collision jump process.

The detuning of a trapped atom is proportional to its motional energy.  For
a thermal cloud in a 3D harmonic trap the energy density is E**2 * exp(-E/kT),
i.e. a Gamma distribution with shape 3, so the detuning is drawn from
Gamma(shape=3, scale=beta_kt) where ``beta_kt`` is the product of the
energy-to-detuning slope and the thermal energy.  The magnitude of the
ensemble coherence under free evolution is then exactly

    |<exp(i*delta*t)>| = (1 + (beta_kt * t)**2) ** -1.5

which is the standard fringe-envelope fit form with its constant written as
0.95; the exact constant that makes ``tau`` the 1/e time is e**(2/3) - 1
(= 0.9477..., i.e. 0.95 rounded).  Calibration uses the exact constant, the
fitting model keeps the conventional 0.95.

Velocity-changing elastic collisions are modeled as a Poisson process: at
rate ``rate`` the atom's detuning is re-drawn from the full distribution
(full rethermalization — jumps are independent of the previous value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

#: Rounded envelope constant used by the published fringe-envelope fit form.
ENVELOPE_SHAPE_CONSTANT = 0.95

#: Exact constant e**(2/3) - 1 that makes tau the 1/e time of the envelope.
EXACT_ENVELOPE_CONSTANT = math.expm1(2.0 / 3.0)


class ResampleRule(Enum):
    """How a collision changes the atom's detuning."""

    FULL_RETHERMALIZE = "full-rethermalize"


@dataclass(frozen=True)
class ThermalDetuningModel:
    """Static detuning law of the ensemble.

    Parameters
    ----------
    beta_kt : float
        Scale of the Gamma(3) detuning distribution in rad/s (product of
        the energy-to-detuning slope and the thermal energy).
    wings_fraction : float
        Fraction of atoms carrying the fixed extra detuning of the trap
        wings, in [0, 1).
    wings_offset : float
        Extra detuning (rad/s) added to the draws of the wings sub-ensemble.
    """

    beta_kt: float
    wings_fraction: float = 0.0
    wings_offset: float = 0.0

    def __post_init__(self):
        if self.beta_kt < 0.0:
            raise ValueError(f"beta_kt must be >= 0, got {self.beta_kt}")
        if not 0.0 <= self.wings_fraction < 1.0:
            raise ValueError(f"wings_fraction must be in [0, 1), got {self.wings_fraction}")


@dataclass(frozen=True)
class CollisionProcess:
    """Poisson jump process re-sampling an atom's detuning at ``rate`` (1/s)."""

    rate: float
    resample: ResampleRule = ResampleRule.FULL_RETHERMALIZE

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValueError(f"collision rate must be >= 0, got {self.rate}")


@dataclass(frozen=True)
class RelaxationModel:
    """Phenomenological population-relaxation envelope exp(-t/t1).

    Applied multiplicatively to ensemble coherence magnitudes and fringe
    contrasts at analysis time; it is not a dynamical channel.  The default
    is no relaxation (t1 = inf).
    """

    t1: float = math.inf

    def __post_init__(self):
        if not self.t1 > 0.0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")

    def envelope(self, t):
        return np.exp(-np.asarray(t, dtype=float) / self.t1)


def sample_detuning(model: ThermalDetuningModel, rng: np.random.Generator, size=None):
    """Draw detunings from the thermal law (Gamma(3) plus optional wings offset).

    Moments without wings: mean ``3 * beta_kt``, std ``sqrt(3) * beta_kt``.
    With probability ``wings_fraction`` the fixed ``wings_offset`` is added.
    Returns a float for ``size=None``, else an ndarray.
    """
    if model.beta_kt == 0.0:
        draws = np.zeros(size if size is not None else 1, dtype=float)
    else:
        draws = rng.gamma(3.0, model.beta_kt, size=size if size is not None else 1)
        draws = np.atleast_1d(np.asarray(draws, dtype=float))
    if model.wings_fraction > 0.0:
        in_wings = rng.random(draws.shape) < model.wings_fraction
        draws = draws + model.wings_offset * in_wings
    if size is None:
        return float(draws[0])
    return draws


def calibrate_beta_kt(tau0: float) -> float:
    """Detuning scale whose free-evolution coherence has 1/e time ``tau0``.

    Inverts the exact envelope ``(1 + (beta_kt*t)**2)**-1.5``:
    ``beta_kt = sqrt(e**(2/3) - 1) / tau0 ~= 0.97352 / tau0``.
    ``tau0 = inf`` gives 0 (no broadening).

    Raises
    ------
    ValueError
        If ``tau0 <= 0``.
    """
    if not tau0 > 0.0:
        raise ValueError(f"tau0 must be > 0, got {tau0}")
    return math.sqrt(EXACT_ENVELOPE_CONSTANT) / tau0


def thermal_coherence(t, beta_kt: float):
    """Exact free-evolution coherence magnitude of the Gamma(3) detuning law.

    ``(1 + (beta_kt * t)**2) ** -1.5`` — the modulus of the characteristic
    function of Gamma(3, beta_kt).  This is the calibration-grade form; the
    conventional fit form with the rounded 0.95 constant is
    :func:`ramsey_envelope`.
    """
    if beta_kt < 0.0:
        raise ValueError(f"beta_kt must be >= 0, got {beta_kt}")
    x = np.asarray(t, dtype=float) * beta_kt
    out = (1.0 + x * x) ** -1.5
    return float(out) if np.isscalar(t) else out


def ramsey_envelope(t, tau: float):
    """Fringe-envelope fit form ``(1 + 0.95*(t/tau)**2) ** -1.5``.

    Equals 1 at t = 0 and decreases monotonically; at t = tau it is
    0.3672, within 0.2% of 1/e (the 0.95 is the rounded exact constant).
    The affine wrapping ``a + b * envelope`` lives in the fitting module.

    Raises
    ------
    ValueError
        If ``tau <= 0`` or any ``t < 0``.
    """
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("t must be >= 0")
    out = (1.0 + ENVELOPE_SHAPE_CONSTANT * (t_arr / tau) ** 2) ** -1.5
    return float(out) if np.isscalar(t) else out


def next_collision_interval(proc: CollisionProcess, rng: np.random.Generator, size=None):
    """Waiting time to the next collision: Exponential(mean 1/rate).

    A zero rate returns the no-collision sentinel ``inf``.
    """
    if proc.rate == 0.0:
        if size is None:
            return math.inf
        return np.full(size, np.inf)
    if size is None:
        return float(rng.exponential(1.0 / proc.rate))
    return rng.exponential(1.0 / proc.rate, size=size)


def collision_schedule(
    model: ThermalDetuningModel,
    proc: CollisionProcess,
    rng: np.random.Generator,
    total_time: float,
):
    """Pre-draw one atom's noise realization over ``[0, total_time]``.

    Returns ``(delta0, times, deltas)``: the initial detuning, the sorted
    collision times in ``(0, total_time]`` and the detuning in force after
    each collision.  Exponential intervals are drawn in batches for speed;
    the draw order is fixed, so results are reproducible for a given
    generator state.
    """
    delta0 = sample_detuning(model, rng)
    rate = proc.rate
    if rate == 0.0 or total_time <= 0.0:
        return delta0, np.empty(0), np.empty(0)
    mean_n = rate * total_time
    batch = int(mean_n + 6.0 * math.sqrt(mean_n)) + 8
    times = rng.exponential(1.0 / rate, size=batch)
    np.cumsum(times, out=times)
    while times[-1] <= total_time:
        extra = rng.exponential(1.0 / rate, size=batch)
        np.cumsum(extra, out=extra)
        times = np.concatenate([times, times[-1] + extra])
    n_col = int(np.searchsorted(times, total_time, side="right"))
    times = times[:n_col].copy()
    deltas = np.atleast_1d(sample_detuning(model, rng, size=n_col)) if n_col else np.empty(0)
    return delta0, times, deltas
