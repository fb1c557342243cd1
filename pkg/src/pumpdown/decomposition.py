"""Decomposition of a ground-truth corpus into scalar distributions and a
pumping-speed dictionary.

Each event contributes (i) its initial pressure and pump-down time to
Gaussian MLE fits and (ii) a speed vector: per-interval effective pumping
speeds resampled onto a fixed-length normalized-time grid. A greedy learner
then reduces the collection of speed vectors to a small dictionary of
independent atoms such that every training vector is representable within a
residual tolerance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .physics import PumpDownCurve

__all__ = [
    "ScalarDistribution",
    "SpeedDictionary",
    "fit_scalar_mle",
    "extract_speed_vector",
    "learn_dictionary",
    "greedy_represent",
    "dictionary_sha256",
    "save_decomposition",
    "load_decomposition",
]

# speed points needed before cubic splines take over from linear interpolation
_MIN_SPLINE_POINTS = 4


@dataclass(frozen=True)
class ScalarDistribution:
    """Gaussian fit of a scalar quantity plus the observed data range."""

    mean: float
    std: float
    observed_min: float
    observed_max: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"std must be >= 0, got {self.std}")
        if self.observed_min > self.observed_max:
            raise ValueError("observed_min must not exceed observed_max")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "observed_min": self.observed_min,
            "observed_max": self.observed_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarDistribution":
        return cls(d["mean"], d["std"], d["observed_min"], d["observed_max"])


@dataclass(frozen=True)
class SpeedDictionary:
    """Matrix of independent pumping-speed vectors at fixed resolution.

    atoms has shape (n_atoms, resolution), one speed vector per row, in
    selection order. max_residual_history records the max training residual
    before each atom was added plus the final value after the last one.
    """

    atoms: np.ndarray
    resolution: int
    epsilon: float
    max_residual_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValueError("atoms must be a non-empty 2-D array")
        if atoms.shape[1] != self.resolution:
            raise ValueError(
                f"atom length {atoms.shape[1]} != resolution {self.resolution}"
            )
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def n_atoms(self) -> int:
        return int(self.atoms.shape[0])

    def mix(self, weights) -> np.ndarray:
        """Linear combination of atoms: returns atoms.T @ weights."""
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.n_atoms,):
            raise ValueError(f"weights must have shape ({self.n_atoms},)")
        return self.atoms.T @ w


def fit_scalar_mle(samples) -> ScalarDistribution:
    """Maximum-likelihood Gaussian fit: sample mean and biased (1/n) std."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("need at least 2 samples for an MLE fit")
    return ScalarDistribution(
        mean=float(np.mean(x)),
        std=float(np.std(x)),  # ddof=0: MLE, not the unbiased estimator
        observed_min=float(np.min(x)),
        observed_max=float(np.max(x)),
    )


def extract_speed_vector(curve: PumpDownCurve, resolution: int) -> np.ndarray:
    """Per-interval effective speeds of a curve on a normalized-time grid.

    Consecutive pressure pairs give interval-mean speeds
    (V_c/dt)*ln(P_k/P_{k+1}); upward noise blips are clamped to zero speed.
    The sequence, placed at interval midpoints in normalized time, is
    resampled to `resolution` uniform points with a cubic spline (linear
    interpolation when fewer than 4 interval speeds exist).
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    times = curve.times_s
    pressures = curve.pressures_mbar
    vc = curve.chamber.volume_m3

    dt = np.diff(times)
    speeds = vc * np.log(pressures[:-1] / pressures[1:]) / dt
    np.maximum(speeds, 0.0, out=speeds)

    duration = times[-1]
    midpoints = (times[:-1] + times[1:]) / (2.0 * duration)
    grid = np.linspace(0.0, 1.0, resolution)
    if len(speeds) >= _MIN_SPLINE_POINTS:
        resampled = CubicSpline(midpoints, speeds)(grid)
    else:
        resampled = np.interp(grid, midpoints, speeds)
    return np.maximum(resampled, 0.0)


def _unit_rows(atoms: np.ndarray):
    norms = np.linalg.norm(atoms, axis=1)
    usable = norms > 0
    unit = np.zeros_like(atoms)
    unit[usable] = atoms[usable] / norms[usable, None]
    return unit, usable, norms


def _omp_residual(atoms, unit, usable, norms, target, epsilon):
    """Core greedy loop: returns (selected_indices, residual, residual_norm).

    Selection projects the residual onto the normalized atoms; each pick is
    orthogonalized incrementally against the previous picks, which keeps the
    residual equal to the least-squares residual on the selected set without
    refitting from scratch.
    """
    residual = np.asarray(target, dtype=float).copy()
    res_norm = float(np.linalg.norm(residual))
    scale = max(res_norm, float(np.max(norms, initial=0.0)), 1e-300)
    selectable = usable.copy()
    selected: list[int] = []
    ortho = np.empty((int(usable.sum()), atoms.shape[1]))  # orthonormal rows
    k = 0

    while res_norm > epsilon and selectable.any():
        corr = np.where(selectable, unit @ residual, 0.0)
        best = int(np.argmax(np.abs(corr)))
        if abs(corr[best]) <= 1e-13 * scale:
            break
        selectable[best] = False
        q = atoms[best].astype(float, copy=True)
        if k:  # classical Gram-Schmidt; second pass restores orthogonality
            q -= ortho[:k].T @ (ortho[:k] @ q)
            q -= ortho[:k].T @ (ortho[:k] @ q)
        q_norm = float(np.linalg.norm(q))
        if q_norm <= 1e-13 * scale:
            continue  # dependent atom: cannot reduce the residual
        q /= q_norm
        ortho[k] = q
        k += 1
        selected.append(best)
        residual -= (q @ residual) * q
        res_norm = float(np.linalg.norm(residual))
    return selected, residual, res_norm


def greedy_represent(atoms: np.ndarray, target: np.ndarray, epsilon: float):
    """Greedy sparse representation of `target` over `atoms`.

    Iteratively projects the residual onto L2-normalized atoms, picking the
    strongest match, keeping the residual orthogonal to the running
    selection. Stops once the residual norm drops to `epsilon`, no
    unselected atom correlates with the residual, or every atom is in use.

    Returns (weights, residual_norm): weights are coefficients w.r.t. the
    raw (unnormalized) atoms, zero outside the selected set.
    """
    atoms = np.asarray(atoms, dtype=float)
    target = np.asarray(target, dtype=float)
    unit, usable, norms = _unit_rows(atoms)
    selected, _, res_norm = _omp_residual(atoms, unit, usable, norms, target, epsilon)
    weights = np.zeros(atoms.shape[0])
    if selected:
        coef, *_ = np.linalg.lstsq(atoms[selected].T, target, rcond=None)
        weights[selected] = coef
    return weights, res_norm


def learn_dictionary(speeds, epsilon: float) -> SpeedDictionary:
    """Greedy extraction of independent speed vectors from a training set.

    Starting from an empty dictionary, repeatedly represent every training
    vector over the current atoms, find the one with the largest residual
    norm, and add it as a new atom, until the largest residual is at most
    `epsilon` or every vector has been consumed. The first atom is therefore
    the largest-norm training vector.
    """
    vectors = np.asarray(speeds, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError("need at least one speed vector")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")

    n = vectors.shape[0]
    atom_idx: list[int] = []
    history: list[float] = []

    residuals = np.linalg.norm(vectors, axis=1)  # empty dictionary: S itself
    while True:
        max_res = float(np.max(residuals))
        history.append(max_res)
        if max_res <= epsilon or len(atom_idx) == n:
            break
        atom_idx.append(int(np.argmax(residuals)))
        atoms = vectors[atom_idx]
        unit, usable, norms = _unit_rows(atoms)
        members = set(atom_idx)  # an atom reproduces itself exactly
        residuals = np.array(
            [
                0.0
                if i in members
                else _omp_residual(atoms, unit, usable, norms, v, epsilon)[2]
                for i, v in enumerate(vectors)
            ]
        )

    if not atom_idx:  # every vector already within epsilon of zero
        atom_idx = [int(np.argmax(np.linalg.norm(vectors, axis=1)))]
    return SpeedDictionary(
        atoms=vectors[atom_idx].copy(),
        resolution=int(vectors.shape[1]),
        epsilon=float(epsilon),
        max_residual_history=tuple(history),
    )


def dictionary_sha256(dictionary: SpeedDictionary) -> str:
    """Content hash identifying a dictionary across artifacts."""
    payload = json.dumps(
        {
            "resolution": dictionary.resolution,
            "epsilon": dictionary.epsilon,
            "atoms": dictionary.atoms.tolist(),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def save_decomposition(
    path,
    dictionary: SpeedDictionary,
    p0_dist: ScalarDistribution,
    t_dist: ScalarDistribution,
    source_label: str,
) -> None:
    """Persist a dictionary plus the fitted P0/T distributions as JSON."""
    payload = {
        "resolution": dictionary.resolution,
        "epsilon": dictionary.epsilon,
        "atoms": dictionary.atoms.tolist(),
        "source_label": source_label,
        "p0_dist": p0_dist.to_dict(),
        "t_dist": t_dist.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_decomposition(path):
    """Inverse of save_decomposition.

    Returns (dictionary, p0_dist, t_dist, source_label).
    """
    with open(path) as fh:
        payload = json.load(fh)
    dictionary = SpeedDictionary(
        atoms=np.asarray(payload["atoms"], dtype=float),
        resolution=int(payload["resolution"]),
        epsilon=float(payload["epsilon"]),
    )
    return (
        dictionary,
        ScalarDistribution.from_dict(payload["p0_dist"]),
        ScalarDistribution.from_dict(payload["t_dist"]),
        payload["source_label"],
    )
