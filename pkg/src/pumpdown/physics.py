"""Vacuum pump-down physics.

A chamber of constant volume ``V_c`` evacuated by a pump with volume-flow
rate ``S`` and lumped in-flows ``Q = Q_leak + Q_surface`` follows

    P(t) = Q/S + (P0 - Q/S) * exp(-t * S / V_c)

For pure pumping (Q = 0) the pressure decays exponentially, and the mean
pumping speed over an interval can be recovered from the observed pressure
drop:

    S_eff = (V_c / t) * ln(P0 / P_t)

This module keeps the positive-for-falling-pressure sign convention for
effective speeds so that mixtures of speed profiles stay non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChamberSpec",
    "PumpDownCurve",
    "pressure_at",
    "effective_speed",
    "reconstruct_curve",
]


@dataclass(frozen=True)
class ChamberSpec:
    """Constant-volume vacuum chamber with lumped gas in-flows.

    leak_flow and surface_flow are lumped scalars in mbar*m^3/s; their finer
    structure (conductances, degassing coefficients) is not modeled.
    """

    volume_m3: float
    leak_flow: float = 0.0
    surface_flow: float = 0.0

    def __post_init__(self):
        if self.volume_m3 <= 0:
            raise ValueError(f"chamber volume must be > 0, got {self.volume_m3}")
        if self.leak_flow < 0:
            raise ValueError(f"leak_flow must be >= 0, got {self.leak_flow}")
        if self.surface_flow < 0:
            raise ValueError(f"surface_flow must be >= 0, got {self.surface_flow}")

    @property
    def total_inflow(self) -> float:
        """Combined leak and outgassing flow, mbar*m^3/s."""
        return self.leak_flow + self.surface_flow


@dataclass(frozen=True)
class PumpDownCurve:
    """One pumping event: timestamped pressures plus the chamber it ran in.

    times_s starts at 0 and is strictly increasing; pressures_mbar are all
    positive. The first pressure is the event's initial pressure, the
    minimum over the curve is its minimum pressure.
    """

    event_id: str
    times_s: np.ndarray
    pressures_mbar: np.ndarray
    chamber: ChamberSpec

    def __post_init__(self):
        times = np.asarray(self.times_s, dtype=float)
        pressures = np.asarray(self.pressures_mbar, dtype=float)
        object.__setattr__(self, "times_s", times)
        object.__setattr__(self, "pressures_mbar", pressures)
        if times.ndim != 1 or pressures.ndim != 1:
            raise ValueError("times_s and pressures_mbar must be 1-D")
        if len(times) != len(pressures):
            raise ValueError(
                f"length mismatch: {len(times)} times vs {len(pressures)} pressures"
            )
        if len(times) < 2:
            raise ValueError("a pump-down curve needs at least 2 samples")
        if times[0] != 0.0:
            raise ValueError(f"times_s must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times_s must be strictly increasing")
        if np.any(pressures <= 0):
            raise ValueError("all pressures must be > 0")

    @property
    def initial_pressure(self) -> float:
        return float(self.pressures_mbar[0])

    @property
    def min_pressure(self) -> float:
        return float(np.min(self.pressures_mbar))

    @property
    def duration_s(self) -> float:
        return float(self.times_s[-1])


def pressure_at(chamber: ChamberSpec, p0: float, speed: float, t) -> float:
    """Pressure after pumping for time t at constant speed.

    Evaluates Q/S + (p0 - Q/S) * exp(-t*S/V_c). For p0 above the asymptote
    Q/S the result decreases strictly in t and approaches Q/S.

    t may be a scalar or an array; the return type matches.
    """
    if speed <= 0:
        raise ValueError(f"pumping speed must be > 0, got {speed}")
    if p0 <= 0:
        raise ValueError(f"initial pressure must be > 0, got {p0}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    floor = chamber.total_inflow / speed
    result = floor + (p0 - floor) * np.exp(-t * speed / chamber.volume_m3)
    return float(result) if result.ndim == 0 else result


def effective_speed(chamber: ChamberSpec, p0: float, p_t: float, t: float) -> float:
    """Mean pumping speed explaining a pressure drop from p0 to p_t over t.

    Returns (V_c/t) * ln(p0/p_t): positive when pressure fell, zero when it
    did not change, negative when it rose (noise blips).
    """
    if p0 <= 0:
        raise ValueError(f"initial pressure must be > 0, got {p0}")
    if p_t <= 0:
        raise ValueError(f"pressure must be > 0, got {p_t}")
    if t <= 0:
        raise ValueError(f"elapsed time must be > 0, got {t}")
    return chamber.volume_m3 / t * float(np.log(p0 / p_t))


def reconstruct_curve(
    chamber: ChamberSpec,
    p0: float,
    speed_profile,
    dt: float,
    event_id: str = "reconstructed",
) -> PumpDownCurve:
    """Integrate a stepwise speed profile into a pump-down curve.

    Each step applies one interval of exponential decay,
    P[k+1] = P[k] * exp(-speed[k] * dt / V_c), which keeps every pressure
    strictly positive for any non-negative profile.
    """
    if p0 <= 0:
        raise ValueError(f"initial pressure must be > 0, got {p0}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    speeds = np.asarray(speed_profile, dtype=float)
    if speeds.ndim != 1 or len(speeds) == 0:
        raise ValueError("speed_profile must be a non-empty 1-D sequence")
    if np.any(speeds < 0):
        raise ValueError("speed_profile entries must be >= 0")

    # cumulative decay exponent; clipped so exp never underflows to 0.0
    decay = np.concatenate(([0.0], np.cumsum(speeds) * dt / chamber.volume_m3))
    max_decay = np.log(p0) - np.log(np.finfo(float).tiny)
    pressures = p0 * np.exp(-np.minimum(decay, max_decay))
    times = dt * np.arange(len(speeds) + 1, dtype=float)
    return PumpDownCurve(
        event_id=event_id,
        times_s=times,
        pressures_mbar=pressures,
        chamber=chamber,
    )
