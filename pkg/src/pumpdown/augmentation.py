"""Generation of augmented pump-down samples.

Every sample mixes dictionary atoms with a random sparse weight vector on
the unit simplex, draws an initial pressure and a pump-down time from the
fitted (and range-truncated) distributions, and integrates the mixed speed
profile over the drawn duration. Samples are physically plausible by
construction: positive pressures, non-increasing under non-negative speeds,
and scalars inside the observed ground-truth ranges.

Each sample index owns an independent counter-based RNG stream, so parallel
and serial generation produce identical sets.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decomposition import ScalarDistribution, SpeedDictionary, dictionary_sha256
from .physics import ChamberSpec, PumpDownCurve, reconstruct_curve

__all__ = [
    "SparseWeights",
    "AugmentedSample",
    "AugmentedSet",
    "sample_sparse_weights",
    "sample_bounded_scalar",
    "generate_augmented",
    "first_minute_features",
    "save_augmented",
    "load_augmented",
]

FIRST_MINUTE_SECONDS = 60
_MAX_TIME_REJECTIONS = 1000


@dataclass(frozen=True)
class SparseWeights:
    """Non-negative mixing weights summing to one, few entries nonzero."""

    weights: np.ndarray
    nnz: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise ValueError("weights must be 1-D")
        if np.any(w < 0):
            raise ValueError("weights must be >= 0")
        if abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {np.sum(w)}")
        if self.nnz != int(np.count_nonzero(w)):
            raise ValueError("nnz does not match the weight vector")


@dataclass(frozen=True)
class AugmentedSample:
    """One synthesized pump-down event plus the recipe that produced it."""

    curve: PumpDownCurve
    weights: SparseWeights
    p0: float
    pump_down_time: float
    min_pressure: float
    first_minute: np.ndarray


@dataclass(frozen=True)
class AugmentedSet:
    """A reproducible batch of augmented samples."""

    samples: tuple
    seed: int
    m: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) != self.m:
            raise ValueError(f"expected {self.m} samples, got {len(self.samples)}")

    def __len__(self) -> int:
        return len(self.samples)

    def feature_matrix(self) -> np.ndarray:
        """(m, 60) matrix of first-minute pressures."""
        return np.stack([s.first_minute for s in self.samples])

    def targets(self) -> np.ndarray:
        """(m,) vector of minimum pressures."""
        return np.array([s.min_pressure for s in self.samples])


def sample_sparse_weights(atom_count: int, rng, max_nnz: int = 3) -> SparseWeights:
    """Random sparse point on the unit simplex over `atom_count` atoms.

    The number of nonzero entries is uniform on {1, ..., min(max_nnz,
    atom_count)}; the chosen atoms get normalized uniform weights.
    """
    if atom_count < 1:
        raise ValueError("atom_count must be >= 1")
    if max_nnz < 1:
        raise ValueError("max_nnz must be >= 1")
    nnz = int(rng.integers(1, min(max_nnz, atom_count) + 1))
    idx = rng.choice(atom_count, size=nnz, replace=False)
    raw = rng.uniform(0.0, 1.0, size=nnz)
    while np.any(raw == 0.0):  # keep every selected weight strictly positive
        raw = rng.uniform(0.0, 1.0, size=nnz)
    weights = np.zeros(atom_count)
    weights[idx] = raw / raw.sum()
    return SparseWeights(weights=weights, nnz=nnz)


def sample_bounded_scalar(dist: ScalarDistribution, rng) -> float:
    """Draw from N(mean, std) restricted to the observed data range.

    Rejection sampling; degenerate distributions (std = 0) return the mean.
    Raises when the acceptance probability is below 1e-6 instead of
    spinning.
    """
    lo, hi = dist.observed_min, dist.observed_max
    if lo >= hi:
        raise ValueError("observed_min must be < observed_max")
    if dist.std == 0.0:
        if not lo <= dist.mean <= hi:
            raise ValueError("degenerate distribution mean outside bounds")
        return dist.mean

    def cdf(x):
        return 0.5 * (1.0 + math.erf((x - dist.mean) / (dist.std * math.sqrt(2.0))))

    accept_p = cdf(hi) - cdf(lo)
    if accept_p < 1e-6:
        raise ValueError(
            f"acceptance probability {accept_p:.2e} below 1e-6 for bounds "
            f"[{lo}, {hi}] around mean {dist.mean}"
        )
    for _ in range(10_000_000):  # unreachable for accept_p >= 1e-6
        x = rng.normal(dist.mean, dist.std)
        if lo <= x <= hi:
            return float(x)
    raise RuntimeError("rejection sampling failed to accept a draw")


def first_minute_features(curve: PumpDownCurve) -> np.ndarray:
    """Pressures at seconds 1..60, linearly resampled from the curve."""
    if curve.duration_s < FIRST_MINUTE_SECONDS:
        raise ValueError(
            f"curve covers only {curve.duration_s} s, need {FIRST_MINUTE_SECONDS}"
        )
    grid = np.arange(1, FIRST_MINUTE_SECONDS + 1, dtype=float)
    return np.interp(grid, curve.times_s, curve.pressures_mbar)


def _generate_one(
    index: int,
    seed_seq: np.random.SeedSequence,
    dictionary: SpeedDictionary,
    p0_dist: ScalarDistribution,
    t_dist: ScalarDistribution,
    chamber: ChamberSpec,
    max_nnz: int,
) -> AugmentedSample:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    psi = sample_sparse_weights(dictionary.n_atoms, rng, max_nnz)
    profile = dictionary.mix(psi.weights)
    p0 = sample_bounded_scalar(p0_dist, rng)
    t = None
    for _ in range(_MAX_TIME_REJECTIONS):
        candidate = sample_bounded_scalar(t_dist, rng)
        if candidate >= FIRST_MINUTE_SECONDS:
            t = candidate
            break
    if t is None:
        raise RuntimeError(
            f"no pump-down time >= {FIRST_MINUTE_SECONDS} s in "
            f"{_MAX_TIME_REJECTIONS} draws; check the fitted time range"
        )
    dt = t / dictionary.resolution
    curve = reconstruct_curve(chamber, p0, profile, dt, event_id=f"aug-{index:06d}")
    return AugmentedSample(
        curve=curve,
        weights=psi,
        p0=p0,
        pump_down_time=t,
        min_pressure=curve.min_pressure,
        first_minute=first_minute_features(curve),
    )


def generate_augmented(
    dictionary: SpeedDictionary,
    p0_dist: ScalarDistribution,
    t_dist: ScalarDistribution,
    chamber: ChamberSpec,
    m: int,
    seed: int,
    max_nnz: int = 3,
    workers: int = 1,
) -> AugmentedSet:
    """Generate `m` augmented samples, bit-reproducible for a fixed seed.

    Sample i draws from stream i of a counter-based generator keyed on
    `seed`, so the result is identical for any worker count.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if dictionary.n_atoms < 1:
        raise ValueError("dictionary must contain at least one atom")
    streams = np.random.SeedSequence(seed).spawn(m)

    def build(i):
        return _generate_one(
            i, streams[i], dictionary, p0_dist, t_dist, chamber, max_nnz
        )

    if workers <= 1:
        samples = [build(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(build, range(m), chunksize=max(1, m // (8 * workers))))
    return AugmentedSet(samples=tuple(samples), seed=seed, m=m)


# serialization follows the corpus contract: 9 significant digits
_FMT = "%.9g"


def save_augmented(aset: AugmentedSet, out_dir, dictionary: SpeedDictionary,
                   p0_dist: ScalarDistribution, t_dist: ScalarDistribution) -> None:
    """Write augmented curves as CSV plus a manifest with the recipes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in aset.samples:
        with open(out / f"{s.curve.event_id}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "pressure_mbar"])
            for t, p in zip(s.curve.times_s, s.curve.pressures_mbar):
                writer.writerow([_FMT % t, _FMT % p])
    manifest = {
        "seed": aset.seed,
        "m": aset.m,
        "dictionary_sha256": dictionary_sha256(dictionary),
        "p0_dist": p0_dist.to_dict(),
        "t_dist": t_dist.to_dict(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "recipes": [
            {
                "event_id": s.curve.event_id,
                "p0": s.p0,
                "pump_down_time": s.pump_down_time,
                "min_pressure": s.min_pressure,
                "weights": {
                    str(i): float(w)
                    for i, w in enumerate(s.weights.weights)
                    if w != 0.0
                },
            }
            for s in aset.samples
        ],
    }
    with open(out / "augmented_manifest.json", "w") as fh:
        json.dump(manifest, fh)


def load_augmented(path, chamber: ChamberSpec, n_atoms: int) -> AugmentedSet:
    """Rebuild an AugmentedSet from a directory written by save_augmented."""
    root = Path(path)
    manifest_path = root / "augmented_manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing augmented_manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for recipe in manifest["recipes"]:
        event_id = recipe["event_id"]
        times, pressures = [], []
        with open(root / f"{event_id}.csv", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for row in reader:
                times.append(float(row[0]))
                pressures.append(float(row[1]))
        curve = PumpDownCurve(event_id, np.array(times), np.array(pressures), chamber)
        weights = np.zeros(n_atoms)
        for key, value in recipe["weights"].items():
            weights[int(key)] = value
        samples.append(
            AugmentedSample(
                curve=curve,
                weights=SparseWeights(weights, int(np.count_nonzero(weights))),
                p0=recipe["p0"],
                pump_down_time=recipe["pump_down_time"],
                min_pressure=recipe["min_pressure"],
                first_minute=first_minute_features(curve),
            )
        )
    return AugmentedSet(samples=tuple(samples), seed=manifest["seed"], m=manifest["m"])
