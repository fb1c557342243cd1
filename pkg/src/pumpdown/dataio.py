"""Ground-truth corpus ingestion and synthetic corpus generation.

A corpus is a directory of per-event CSV files (``<event_id>.csv`` with
header ``time_s,pressure_mbar``) plus a ``manifest.json``. The synthetic
generator stands in for real furnace data: it draws initial pressure and
pump-down time from Gaussians, picks one of a few smooth logistic-decay
speed profiles, integrates it at 1 s steps, and applies bounded
multiplicative noise.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .physics import ChamberSpec, PumpDownCurve, reconstruct_curve

__all__ = [
    "GroundTruthSet",
    "SyntheticCorpusSpec",
    "load_ground_truth",
    "generate_synthetic",
    "write_ground_truth",
    "archetype_speed",
]

# decimal serialization contract: 9 significant digits, stable under
# parse/format roundtrips
_FMT = "%.9g"
_MIN_EVENT_SECONDS = 30.0


class CorpusFormatError(ValueError):
    """Raised for malformed or invalid corpus files."""


@dataclass(frozen=True)
class GroundTruthSet:
    """An immutable collection of pump-down events from one chamber."""

    curves: tuple
    label: str

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if len(self.curves) < 1:
            raise CorpusFormatError("no events found")
        volumes = {c.chamber.volume_m3 for c in self.curves}
        if len(volumes) != 1:
            raise CorpusFormatError(
                f"all curves must share one chamber volume, got {sorted(volumes)}"
            )

    def __len__(self) -> int:
        return len(self.curves)

    @property
    def chamber(self) -> ChamberSpec:
        return self.curves[0].chamber

    def initial_pressures(self) -> np.ndarray:
        return np.array([c.initial_pressure for c in self.curves])

    def pump_down_times(self) -> np.ndarray:
        return np.array([c.duration_s for c in self.curves])


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Parameters of a synthetic ground-truth corpus."""

    n_events: int
    chamber: ChamberSpec
    p0_mean: float = 1000.0
    p0_std: float = 16.84
    t_mean: float = 333.59
    t_std: float = 262.52
    speed_archetypes: int = 3
    noise_rel: float = 0.0
    scale_jitter: float = 0.0
    seed: int = 0
    label: str = "synthetic"

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError(f"n_events must be >= 1, got {self.n_events}")
        if self.p0_std < 0 or self.t_std < 0:
            raise ValueError("standard deviations must be >= 0")
        if self.t_mean <= 0:
            raise ValueError(f"t_mean must be > 0, got {self.t_mean}")
        if self.speed_archetypes < 1:
            raise ValueError("need at least one speed archetype")
        if not 0.0 <= self.noise_rel < 0.1:
            raise ValueError(f"noise_rel must be in [0, 0.1), got {self.noise_rel}")
        if not 0.0 <= self.scale_jitter < 1.0:
            raise ValueError(
                f"scale_jitter must be in [0, 1), got {self.scale_jitter}"
            )
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "chamber": {
                "volume_m3": self.chamber.volume_m3,
                "leak_flow": self.chamber.leak_flow,
                "surface_flow": self.chamber.surface_flow,
            },
            "p0_mean": self.p0_mean,
            "p0_std": self.p0_std,
            "t_mean": self.t_mean,
            "t_std": self.t_std,
            "speed_archetypes": self.speed_archetypes,
            "noise_rel": self.noise_rel,
            "scale_jitter": self.scale_jitter,
            "seed": self.seed,
            "label": self.label,
        }


def archetype_speed(index: int, total: int, volume_m3: float, tau) -> np.ndarray:
    """Smooth logistic-decay pumping-speed profile on normalized time.

    Profiles start fast and settle to a low plateau; the drop point,
    steepness, and level shift with the archetype index so distinct
    archetypes stay clearly separable. Speeds scale with chamber volume so
    the induced decay rates are volume-independent.
    """
    if not 0 <= index < total:
        raise ValueError(f"archetype index {index} out of range [0, {total})")
    tau = np.asarray(tau, dtype=float)
    frac = index / max(total - 1, 1)
    hi = volume_m3 * (0.050 + 0.020 * frac)
    lo = volume_m3 * (0.004 + 0.003 * frac)
    steepness = 6.0 + 6.0 * frac
    midpoint = 0.18 + 0.22 * frac
    return lo + (hi - lo) / (1.0 + np.exp(steepness * (tau - midpoint)))


def generate_synthetic(spec: SyntheticCorpusSpec) -> GroundTruthSet:
    """Deterministically generate a synthetic ground-truth corpus.

    Per event: P0 ~ N(p0_mean, p0_std) truncated to > 0, pump-down time
    T ~ N(t_mean, t_std) truncated to >= 30 s, one archetype profile
    sampled at interval midpoints and integrated at 1 s steps. scale_jitter
    rescales the whole profile per event (pump performance drift between
    days); noise_rel applies multiplicative noise (uniform in +-noise_rel)
    to every sample after the first, so the initial pressure stays exactly
    at its draw.
    """
    rng = np.random.default_rng(spec.seed)
    curves = []
    for i in range(spec.n_events):
        p0 = _draw_truncated(rng, spec.p0_mean, spec.p0_std, lower=1e-12)
        t = _draw_truncated(rng, spec.t_mean, spec.t_std, lower=_MIN_EVENT_SECONDS)
        n_steps = int(round(t))
        archetype = int(rng.integers(spec.speed_archetypes))
        midpoints = (np.arange(n_steps) + 0.5) / n_steps
        speeds = archetype_speed(
            archetype, spec.speed_archetypes, spec.chamber.volume_m3, midpoints
        )
        if spec.scale_jitter > 0:
            speeds = speeds * (1.0 + spec.scale_jitter * rng.uniform(-1.0, 1.0))
        curve = reconstruct_curve(
            spec.chamber, p0, speeds, dt=1.0, event_id=f"event-{i:05d}"
        )
        pressures = curve.pressures_mbar
        if spec.noise_rel > 0:
            factors = 1.0 + spec.noise_rel * rng.uniform(-1.0, 1.0, size=n_steps)
            pressures = pressures.copy()
            pressures[1:] *= factors
            curve = PumpDownCurve(
                curve.event_id, curve.times_s, pressures, spec.chamber
            )
        curves.append(curve)
    return GroundTruthSet(curves=tuple(curves), label=spec.label)


def _draw_truncated(rng, mean, std, lower):
    if std == 0.0:
        if mean < lower:
            raise ValueError(f"degenerate draw {mean} below lower bound {lower}")
        return mean
    for _ in range(100_000):
        x = rng.normal(mean, std)
        if x >= lower:
            return float(x)
    raise RuntimeError("truncated draw failed: bounds too far from the mean")


def write_ground_truth(gts: GroundTruthSet, out_dir, spec=None) -> None:
    """Write one CSV per event plus a manifest.

    Values use the 9-significant-digit contract so a write/load/write cycle
    is byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for curve in gts.curves:
        with open(out / f"{curve.event_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "pressure_mbar"])
            for t, p in zip(curve.times_s, curve.pressures_mbar):
                writer.writerow([_FMT % t, _FMT % p])
    manifest = {
        "label": gts.label,
        "n_events": len(gts),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if spec is not None:
        manifest["spec"] = spec.to_dict()
        manifest["seed"] = spec.seed
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_ground_truth(path, chamber: ChamberSpec) -> GroundTruthSet:
    """Load and validate every ``*.csv`` event file under `path`."""
    root = Path(path)
    if not root.is_dir():
        raise CorpusFormatError(f"corpus directory not found: {root}")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise CorpusFormatError(f"no events found in {root}")

    label = root.name
    manifest = root / "manifest.json"
    if manifest.exists():
        try:
            label = json.loads(manifest.read_text()).get("label", label)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{manifest}: invalid JSON ({exc})") from exc

    curves = [_load_event(f, chamber) for f in files]
    return GroundTruthSet(curves=tuple(curves), label=label)


def _load_event(file: Path, chamber: ChamberSpec) -> PumpDownCurve:
    times, pressures = [], []
    with open(file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["time_s", "pressure_mbar"]:
            raise CorpusFormatError(f"{file}:1: expected header 'time_s,pressure_mbar'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CorpusFormatError(f"{file}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError as exc:
                raise CorpusFormatError(f"{file}:{lineno}: {exc}") from exc
            if not (math.isfinite(t) and math.isfinite(p)):
                raise CorpusFormatError(f"{file}:{lineno}: non-finite value")
            if p <= 0:
                raise CorpusFormatError(f"{file}:{lineno}: pressure must be > 0, got {p}")
            times.append(t)
            pressures.append(p)
    if len(times) < 2:
        raise CorpusFormatError(f"{file}: fewer than 2 samples")
    if times[0] != 0.0:
        raise CorpusFormatError(f"{file}: time must start at 0, got {times[0]}")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise CorpusFormatError(f"{file}: timestamps must be strictly increasing")
    return PumpDownCurve(
        event_id=file.stem,
        times_s=np.array(times),
        pressures_mbar=np.array(pressures),
        chamber=chamber,
    )
