"""Measurement pipeline: envelopes, least-squares fits, coherence times.

The fit models are the ones used throughout the experiments:

* ``EXPONENTIAL``       a * exp(-t/tau) + b
* ``GAUSSIAN``          a * exp(-t**2/tau**2) + b
* ``THERMAL_ENVELOPE``  a + b * (1 + 0.95*(t/tau)**2)**-1.5
* ``COSINE_FRINGE``     A * cos(k*x + pi/2) + B   (k fixable)
* ``LINEAR``            m * x + c

``fit_curve`` is a damped Gauss-Newton (Levenberg-Marquardt style) solver
with a central-difference Jacobian (per-parameter relative step 1e-6).  It
stops when the relative parameter step drops below 1e-10 or the relative
residual decrease below 1e-12, capped at 500 iterations.  Standard errors
come from the linearized covariance at the optimum.  Non-convergence is
reported through ``FitResult.converged``, not an exception; genuinely
singular normal equations (a parameter without any effect on the model)
raise :class:`FitDegeneracyError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .noise import ENVELOPE_SHAPE_CONSTANT


class FitDegeneracyError(Exception):
    """The normal equations are singular: some parameter has no effect."""


class FitKind(Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    THERMAL_ENVELOPE = "thermal_envelope"
    COSINE_FRINGE = "cosine_fringe"
    LINEAR = "linear"


_PARAM_NAMES = {
    FitKind.EXPONENTIAL: ("a", "tau", "b"),
    FitKind.GAUSSIAN: ("a", "tau", "b"),
    FitKind.THERMAL_ENVELOPE: ("a", "b", "tau"),
    FitKind.COSINE_FRINGE: ("amplitude", "k", "offset"),
    FitKind.LINEAR: ("slope", "intercept"),
}

_TINY_TAU = 1e-300


def evaluate_model(kind: FitKind, x, params):
    """Evaluate a fit model at ``x`` for the given parameter vector."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(params, dtype=float)
    if kind is FitKind.EXPONENTIAL:
        a, tau, b = p
        return a * np.exp(-x / tau) + b
    if kind is FitKind.GAUSSIAN:
        a, tau, b = p
        return a * np.exp(-(x * x) / (tau * tau)) + b
    if kind is FitKind.THERMAL_ENVELOPE:
        a, b, tau = p
        return a + b * (1.0 + ENVELOPE_SHAPE_CONSTANT * (x / tau) ** 2) ** -1.5
    if kind is FitKind.COSINE_FRINGE:
        amp, k, off = p
        return amp * np.cos(k * x + 0.5 * math.pi) + off
    if kind is FitKind.LINEAR:
        m, c = p
        return m * x + c
    raise ValueError(f"unknown fit kind {kind}")


def _first_crossing(xs, ys, level):
    """First x where ys crosses below ``level`` (linear interpolation)."""
    below = np.nonzero(ys < level)[0]
    if below.size == 0 or below[0] == 0:
        return None
    i = below[0]
    y0, y1 = ys[i - 1], ys[i]
    frac = (y0 - level) / (y0 - y1) if y1 != y0 else 0.5
    return xs[i - 1] + frac * (xs[i] - xs[i - 1])


def initial_guess(kind: FitKind, xs, ys) -> np.ndarray:
    """Data-derived starting parameters: amplitude from the data range,
    decay constants from the first crossing of (max+min)/2."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    span = xs.max() - xs.min() if xs.size else 1.0
    mid = 0.5 * (ys.max() + ys.min())
    x_half = _first_crossing(xs, ys, mid)
    if x_half is None or x_half <= 0:
        x_half = max(span / 3.0, _TINY_TAU)
    if kind is FitKind.EXPONENTIAL:
        b = ys[-1]
        return np.array([ys[0] - b, x_half / math.log(2.0), b])
    if kind is FitKind.GAUSSIAN:
        b = ys[-1]
        return np.array([ys[0] - b, x_half / math.sqrt(math.log(2.0)), b])
    if kind is FitKind.THERMAL_ENVELOPE:
        a = ys[-1]
        # envelope = 1/2 at (t/tau)**2 = (2**(2/3)-1)/0.95
        tau = x_half * math.sqrt(ENVELOPE_SHAPE_CONSTANT / (2.0 ** (2.0 / 3.0) - 1.0))
        return np.array([a, ys[0] - a, tau])
    if kind is FitKind.COSINE_FRINGE:
        return np.array([0.5 * (ys.max() - ys.min()), 1.0, ys.mean()])
    if kind is FitKind.LINEAR:
        vx = xs - xs.mean()
        denom = float(vx @ vx)
        m = float(vx @ (ys - ys.mean())) / denom if denom > 0 else 0.0
        return np.array([m, ys.mean() - m * xs.mean()])
    raise ValueError(f"unknown fit kind {kind}")


def default_bounds(kind: FitKind) -> list[tuple[float, float]]:
    """Default per-parameter intervals; decay constants are kept positive."""
    inf = math.inf
    if kind in (FitKind.EXPONENTIAL, FitKind.GAUSSIAN):
        return [(-inf, inf), (_TINY_TAU, inf), (-inf, inf)]
    if kind is FitKind.THERMAL_ENVELOPE:
        return [(-inf, inf), (-inf, inf), (_TINY_TAU, inf)]
    if kind is FitKind.COSINE_FRINGE:
        return [(-inf, inf), (-inf, inf), (-inf, inf)]
    return [(-inf, inf), (-inf, inf)]


@dataclass
class FitModel:
    """A fit-form selection with optional starting point and bounds.

    ``fix_k`` freezes the fringe wavenumber of COSINE_FRINGE at its initial
    value (the phase-scan frequency is known exactly in simulation).
    """

    kind: FitKind
    initial_guess: tuple | None = None
    bounds: list | None = None
    fix_k: bool = True

    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self.kind]


@dataclass
class FitResult:
    parameters: np.ndarray
    std_errors: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    param_names: tuple = ()

    def as_dict(self) -> dict:
        return dict(zip(self.param_names, (float(p) for p in self.parameters)))


def fit_curve(model: FitModel, xs, ys, weights=None) -> FitResult:
    """Weighted least-squares fit by damped Gauss-Newton iteration.

    Parameters
    ----------
    model : FitModel
        Fit form, optional starting point and bounds.
    xs, ys : array-like
        Data; must be finite, with at least (free parameters + 1) points.
    weights : array-like, optional
        Per-point weights multiplying the residuals (1/sigma).

    Raises
    ------
    ValueError
        On too few points, non-finite data, or an initial guess outside
        the bounds.
    FitDegeneracyError
        If a free parameter has no effect on the model at the current
        point (all-zero Jacobian column).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("fit data must be finite")
    kind = model.kind
    p = (
        np.asarray(model.initial_guess, dtype=float)
        if model.initial_guess is not None
        else initial_guess(kind, xs, ys)
    )
    names = _PARAM_NAMES[kind]
    if p.size != len(names):
        raise ValueError(f"{kind.value} takes {len(names)} parameters, got {p.size}")
    bounds = model.bounds if model.bounds is not None else default_bounds(kind)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if np.any(p < lo) or np.any(p > hi):
        raise ValueError("initial guess lies outside the bounds")
    free = np.ones(p.size, dtype=bool)
    if kind is FitKind.COSINE_FRINGE and model.fix_k:
        free[1] = False
    n_free = int(free.sum())
    if xs.size < n_free + 1:
        raise ValueError(f"need at least {n_free + 1} points, got {xs.size}")
    sw = np.sqrt(np.asarray(weights, dtype=float)) if weights is not None else None

    def residuals(params):
        with np.errstate(all="ignore"):
            r = evaluate_model(kind, xs, params) - ys
        return r * sw if sw is not None else r

    def jacobian(params):
        cols = []
        for j in np.nonzero(free)[0]:
            h = 1e-6 * max(abs(params[j]), 1e-6)
            pp = params.copy()
            pm = params.copy()
            pp[j] = min(params[j] + h, hi[j])
            pm[j] = max(params[j] - h, lo[j])
            dp = pp[j] - pm[j]
            if dp == 0.0:
                cols.append(np.zeros(xs.size))
                continue
            cols.append((residuals(pp) - residuals(pm)) / dp)
        return np.column_stack(cols)

    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    jtj = None
    for it in range(1, 501):
        jac = jacobian(p)
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        if np.any(diag == 0.0):
            dead = [names[j] for j, d in zip(np.nonzero(free)[0], diag) if d == 0.0]
            raise FitDegeneracyError(
                f"singular normal equations: parameter(s) {dead} have no effect"
            )
        g = jac.T @ r
        accepted = False
        step_rel = math.inf
        while lam < 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p.copy()
            trial[free] = p[free] + delta
            np.clip(trial, lo, hi, out=trial)
            r_try = residuals(trial)
            cost_try = float(r_try @ r_try)
            if math.isfinite(cost_try) and cost_try <= cost:
                step_rel = float(
                    np.max(np.abs(trial - p) / np.maximum(np.abs(p), 1e-300))
                )
                rel_decrease = (cost - cost_try) / max(cost, 1e-300)
                p, r, cost = trial, r_try, cost_try
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if step_rel < 1e-10 or rel_decrease < 1e-12:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # No damping level improves the cost: we are at a (local) optimum.
            converged = True
        if converged:
            break

    std = np.zeros(p.size)
    dof = xs.size - n_free
    if jtj is not None and dof > 0:
        try:
            cov = np.linalg.inv(jtj) * (cost / dof)
            std[free] = np.sqrt(np.maximum(np.diag(cov), 0.0))
        except np.linalg.LinAlgError:
            std[free] = math.inf
    return FitResult(
        parameters=p,
        std_errors=std,
        residual_norm=cost,
        converged=converged,
        iterations=it,
        param_names=names,
    )


class EnvelopeSeries(NamedTuple):
    times: np.ndarray
    values: np.ndarray


def rolling_std_envelope(times, values=None, window: int = 24) -> EnvelopeSeries:
    """Sliding-window standard deviation of a signal.

    Accepts either ``(times, values)`` arrays or a single object with
    ``.times`` and ``.p2`` attributes (a TimeSeries).  Output timestamps
    are the window centers, so the result is ``window - 1`` points shorter
    than the input.  Constant offsets and slowly accumulating carrier
    phase noise drop out: the window std only sees the oscillation RMS.

    Raises
    ------
    ValueError
        If ``window < 2`` or ``window > len(values)``.
    """
    if values is None:
        times, values = times.times, times.p2
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window < 2 or window > values.size:
        raise ValueError(f"window must be in [2, {values.size}], got {window}")
    view = np.lib.stride_tricks.sliding_window_view(values, window)
    env = view.std(axis=1)
    centers = 0.5 * (times[: times.size - window + 1] + times[window - 1 :])
    return EnvelopeSeries(centers, env)


@dataclass
class RabiEnvelopeResult:
    """Coherence time extracted from a driven-oscillation record."""

    tau_c: float
    fit: FitResult
    envelope: EnvelopeSeries


def rabi_envelope_coherence_time(times, p2, window: int = 24) -> RabiEnvelopeResult:
    """Rolling-std envelope of driven oscillations plus an exponential fit.

    Returns the fitted 1/e time of ``a*exp(-t/tau)+b`` applied to the
    envelope; ``fit.converged`` tells whether the fit is trustworthy.
    """
    env = rolling_std_envelope(times, p2, window=window)
    fit = fit_curve(FitModel(FitKind.EXPONENTIAL), env.times, env.values)
    return RabiEnvelopeResult(tau_c=float(fit.parameters[1]), fit=fit, envelope=env)


def coherence_time_from_contrasts(a1: float, t1: float, a2: float, t2: float) -> float:
    """1/e coherence time from two fringe contrasts, assuming A(T) = A0*exp(-T/tau).

    ``tau = (t2 - t1) / ln(a1/a2)``; positive when the larger contrast
    comes earlier and symmetric under swapping both pairs.  Equal contrasts
    give the no-decay sentinel ``inf``.

    Raises
    ------
    ValueError
        On nonpositive contrasts or equal times.
    """
    if a1 <= 0.0 or a2 <= 0.0:
        raise ValueError("contrasts must be > 0")
    if t1 == t2:
        raise ValueError("contrast times must differ")
    if a1 == a2:
        return math.inf
    return (t2 - t1) / math.log(a1 / a2)


@dataclass(frozen=True)
class CoherenceTimePrediction:
    """Scaling-law coherence time and whether the regime condition holds."""

    tau_c: float
    in_regime: bool


def predict_coherence_time(
    gamma0: float, gamma_col: float, rabi: float, regime_factor: float = 10.0
) -> CoherenceTimePrediction:
    """Scaling-law prediction ``tau_c = rabi / (pi * gamma0 * gamma_col)``.

    Linear in the drive amplitude and inversely proportional to both the
    inhomogeneous dephasing rate and the collision rate.  The derivation
    requires ``rabi/pi >> gamma_col``; the result is flagged out-of-regime
    when ``rabi/pi < regime_factor * gamma_col``.

    Raises
    ------
    ValueError
        On nonpositive inputs.
    """
    if gamma0 <= 0.0 or gamma_col <= 0.0 or rabi <= 0.0:
        raise ValueError("gamma0, gamma_col and rabi must all be > 0")
    tau_c = rabi / (math.pi * gamma0 * gamma_col)
    return CoherenceTimePrediction(tau_c, rabi / math.pi >= regime_factor * gamma_col)


def one_over_e_time(times, values) -> float:
    """First time the series crosses below 1/e of its initial value.

    Linear interpolation between samples; ``inf`` if the series never
    crosses within the record.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    crossing = _first_crossing(times, values, values[0] / math.e)
    return math.inf if crossing is None else float(crossing)
