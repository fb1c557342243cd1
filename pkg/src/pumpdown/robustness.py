"""Robustness scenarios, sub-oracles, and model ranking.

Three scenarios probe a trained model:

* feasibility  - predictions on augmented inputs must stay positive,
* ground truth - MAE / R^2 / max-error against held-out real data,
* volume       - how much input space the model covers with small residual.

The volume scenario gates augmented samples by prediction residual,
determines the rank of the gated point cloud, and measures the volume it
spans via Gram determinants. Three sub-oracles compare the scenario outputs
against thresholds; the main oracle is their conjunction, and passing
models rank by enclosed volume.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .augmentation import AugmentedSet
from .models import Dataset, TrainedModel, predict_batch

__all__ = [
    "Thresholds",
    "ScenarioResults",
    "OracleVerdict",
    "metric_mae",
    "metric_r2",
    "metric_linf",
    "simplex_volume",
    "enclosed_volume",
    "scenario_feasibility",
    "scenario_ground_truth",
    "scenario_volume",
    "evaluate_model",
    "run_oracles",
    "rank_models",
    "write_report",
]

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class Thresholds:
    """Pass/fail limits for the sub-oracles.

    Volume checking supports two modes: `absolute` compares the gated
    volume against v_min, `ratio` compares gated/total against t_v.
    """

    mae_max: float = 1.5
    r2_min: float = 0.8
    linf_max: float = 25.0
    residual_gate: float = 1.0
    volume_mode: str = "absolute"
    v_min: float = 1.0e-35
    t_v: float | None = None

    def __post_init__(self):
        if self.mae_max <= 0:
            raise ValueError("mae_max must be > 0")
        if self.linf_max <= 0 or self.residual_gate <= 0:
            raise ValueError("linf_max and residual_gate must be > 0")
        if self.volume_mode not in ("absolute", "ratio"):
            raise ValueError(f"unknown volume_mode {self.volume_mode!r}")
        if self.volume_mode == "ratio" and self.t_v is None:
            raise ValueError("ratio mode requires t_v")
        for name in ("mae_max", "r2_min", "linf_max", "residual_gate", "v_min"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScenarioResults:
    """Raw outputs of the three scenarios for one model."""

    feasibility_pass: bool
    mae: float
    r2: float
    linf_gt: float
    linf_aug: float
    v_t: float
    v_tot: float
    d_effective: int


@dataclass(frozen=True)
class OracleVerdict:
    """Sub-oracle and main-oracle outcomes for one model."""

    oracle1: bool
    oracle2: bool
    oracle3: bool
    main: bool
    ranking_volume: float

    def __post_init__(self):
        if self.main != (self.oracle1 and self.oracle2 and self.oracle3):
            raise ValueError("main oracle must be the conjunction of the sub-oracles")


def _paired(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError("inputs must be equal-length non-empty 1-D sequences")
    return a, b


def metric_mae(predicted, actual) -> float:
    """Mean absolute error."""
    p, a = _paired(predicted, actual)
    return float(np.mean(np.abs(a - p)))


def metric_r2(actual, predicted) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot (can be negative)."""
    a, p = _paired(actual, predicted)
    if len(a) < 2:
        raise ValueError("R^2 needs at least 2 observations")
    ss_tot = float(np.sum((a - np.mean(a)) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined: actual values are all identical")
    ss_res = float(np.sum((a - p) ** 2))
    return 1.0 - ss_res / ss_tot


def metric_linf(predicted, actual) -> float:
    """Maximum absolute error."""
    p, a = _paired(predicted, actual)
    return float(np.max(np.abs(a - p)))


# ---------------------------------------------------------------------------
# volume machinery
# ---------------------------------------------------------------------------


def _gram_log_volume(gram: np.ndarray, k: int) -> float:
    """sqrt(det(gram))/k! with a log-space fallback for extreme magnitudes."""
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0:
        return 0.0
    if -600.0 < logdet < 600.0:
        return math.sqrt(math.exp(logdet)) / math.factorial(k)
    return math.exp(0.5 * logdet - math.lgamma(k + 1))


def simplex_volume(points) -> float:
    """Volume of the simplex spanned by k+1 points in any ambient dimension.

    Uses difference vectors from the last point and their Gram determinant:
    V = sqrt(det(P^T P)) / k!. Degenerate simplices give 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("need at least 2 points of equal dimension")
    diffs = pts[:-1] - pts[-1]  # (k, dim)
    k = len(diffs)
    return _gram_log_volume(diffs @ diffs.T, k)


def enclosed_volume(coords) -> float:
    """Total r-dimensional volume spanned by a point cloud.

    Points are given in r coordinates. Lifting every point to [y; 1] and
    taking sqrt(det(B B^T))/r! sums, by Cauchy-Binet, the squared volumes of
    all (r+1)-point simplices in the cloud. The measure coincides with
    simplex_volume for exactly r+1 points, never decreases when points are
    added, and scales as c^r under coordinate scaling.
    """
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2:
        raise ValueError("coords must be 2-D")
    n, r = pts.shape
    if r == 0 or n < r + 1:
        return 0.0
    centered = pts - pts.mean(axis=0)  # conditioning only: volume is shift-invariant
    lifted = np.vstack([centered.T, np.ones(n)])  # (r+1, n)
    return _gram_log_volume(lifted @ lifted.T, r)


def _pivoted_basis(columns: np.ndarray, tol: float = _RANK_TOL):
    """Orthonormal basis of the column span by max-norm pivoted Gram-Schmidt.

    Returns (Q, pivots): Q has one orthonormal column per accepted pivot.
    Columns whose residual norm falls below tol times the largest initial
    norm count as dependent.
    """
    work = np.array(columns, dtype=float)  # (dim, n)
    dim, n = work.shape
    norms = np.linalg.norm(work, axis=0)
    scale = float(norms.max(initial=0.0))
    if scale == 0.0:
        return np.zeros((dim, 0)), []
    threshold = tol * scale
    basis, pivots = [], []
    for _ in range(min(dim, n)):
        norms = np.linalg.norm(work, axis=0)
        best = int(np.argmax(norms))
        if norms[best] <= threshold:
            break
        q = work[:, best] / norms[best]
        basis.append(q)
        pivots.append(best)
        work -= np.outer(q, q @ work)
    if not basis:
        return np.zeros((dim, 0)), []
    return np.column_stack(basis), pivots


def scenario_feasibility(model: TrainedModel, aug: AugmentedSet,
                         predictions=None) -> bool:
    """True iff the model predicts a positive pressure for every augmented sample."""
    if predictions is None:
        predictions = predict_batch(model, aug.feature_matrix())
    return bool(np.all(np.asarray(predictions) > 0.0))


def scenario_ground_truth(model: TrainedModel, gt_test: Dataset, aug: AugmentedSet,
                          predictions_aug=None):
    """Accuracy metrics on real data plus the max error on augmented data.

    Returns (mae, r2, linf_gt, linf_aug).
    """
    pred_gt = predict_batch(model, gt_test.features)
    if predictions_aug is None:
        predictions_aug = predict_batch(model, aug.feature_matrix())
    return (
        metric_mae(pred_gt, gt_test.targets),
        metric_r2(gt_test.targets, pred_gt),
        metric_linf(pred_gt, gt_test.targets),
        metric_linf(predictions_aug, aug.targets()),
    )


def scenario_volume(model: TrainedModel, aug: AugmentedSet, residual_gate: float,
                    predictions=None):
    """Input-space volume covered by the model within a residual gate.

    Augmented samples whose |prediction - target| falls under the gate form
    the gated cloud. Its difference vectors fix a rank-r orthonormal basis;
    the gated volume and the full-cloud volume are both measured in that
    basis so their ratio is well defined.

    Returns (v_t, v_tot, d_effective).
    """
    if residual_gate <= 0:
        raise ValueError("residual_gate must be > 0")
    X = aug.feature_matrix()
    y = aug.targets()
    if predictions is None:
        predictions = predict_batch(model, X)
    residuals = np.abs(np.asarray(predictions) - y)
    gated = X[residuals < residual_gate]

    if len(gated) >= 2:
        basis, _ = _pivoted_basis((gated[1:] - gated[0]).T)
        origin = gated[0]
    else:
        basis = np.zeros((X.shape[1], 0))
        origin = X[0]

    if basis.shape[1] == 0:
        # degenerate gate: report the full cloud in its own basis
        basis, _ = _pivoted_basis((X[1:] - X[0]).T)
        v_tot = enclosed_volume((X - X[0]) @ basis)
        return 0.0, v_tot, basis.shape[1]

    v_t = enclosed_volume((gated - origin) @ basis)
    v_tot = enclosed_volume((X - origin) @ basis)
    return v_t, v_tot, basis.shape[1]


def evaluate_model(model: TrainedModel, gt_test: Dataset, aug: AugmentedSet,
                   thresholds: Thresholds):
    """Run all three scenarios and the oracles for one model.

    Augmented-set predictions are computed once and shared across scenarios.

    Returns (ScenarioResults, OracleVerdict).
    """
    pred_aug = predict_batch(model, aug.feature_matrix())
    feasible = scenario_feasibility(model, aug, predictions=pred_aug)
    mae, r2, linf_gt, linf_aug = scenario_ground_truth(
        model, gt_test, aug, predictions_aug=pred_aug
    )
    v_t, v_tot, d_eff = scenario_volume(
        model, aug, thresholds.residual_gate, predictions=pred_aug
    )
    results = ScenarioResults(
        feasibility_pass=feasible,
        mae=mae,
        r2=r2,
        linf_gt=linf_gt,
        linf_aug=linf_aug,
        v_t=v_t,
        v_tot=v_tot,
        d_effective=d_eff,
    )
    return results, run_oracles(results, thresholds)


def run_oracles(results: ScenarioResults, thresholds: Thresholds) -> OracleVerdict:
    """Judge scenario outputs: three sub-oracles and their conjunction.

    Low error is good: oracle 2 passes when MAE and the max errors stay at
    or below their limits and R^2 reaches its minimum.
    """
    oracle1 = bool(results.feasibility_pass)
    oracle2 = (
        results.mae <= thresholds.mae_max
        and results.r2 >= thresholds.r2_min
        and max(results.linf_gt, results.linf_aug) <= thresholds.linf_max
    )
    if thresholds.volume_mode == "absolute":
        oracle3 = results.v_t >= thresholds.v_min
    else:
        ratio = results.v_t / results.v_tot if results.v_tot > 0 else 0.0
        oracle3 = ratio >= thresholds.t_v
    return OracleVerdict(
        oracle1=oracle1,
        oracle2=oracle2,
        oracle3=oracle3,
        main=oracle1 and oracle2 and oracle3,
        ranking_volume=results.v_t,
    )


def rank_models(verdicts: dict) -> list:
    """Model names ordered by robustness.

    Models passing the main oracle come first, largest enclosed volume
    first (name breaks ties); failing models follow in name order.
    """
    if not verdicts:
        raise ValueError("need at least one verdict")
    passed = sorted(
        (name for name, v in verdicts.items() if v.main),
        key=lambda name: (-verdicts[name].ranking_volume, name),
    )
    failed = sorted(name for name, v in verdicts.items() if not v.main)
    return passed + failed


def write_report(out_dir, entries: dict, thresholds: Thresholds,
                 metadata: dict | None = None) -> dict:
    """Write the robustness report JSON plus per-model prediction CSVs.

    `entries` maps model name to a dict with keys `results` (ScenarioResults),
    `verdict` (OracleVerdict), and optionally `actual`/`predicted` arrays for
    the plot CSV. Returns the report dictionary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdicts = {name: e["verdict"] for name, e in entries.items()}
    report = {
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "thresholds": thresholds.to_dict(),
        "ranking": rank_models(verdicts),
        "models": {
            name: {
                "metrics": {
                    "mae": e["results"].mae,
                    "r2": e["results"].r2,
                    "linf_gt": e["results"].linf_gt,
                    "linf_aug": e["results"].linf_aug,
                },
                "volumes": {
                    "v_t": e["results"].v_t,
                    "v_tot": e["results"].v_tot,
                    "d_effective": e["results"].d_effective,
                },
                "feasibility_pass": e["results"].feasibility_pass,
                "verdict": asdict(e["verdict"]),
            }
            for name, e in entries.items()
        },
    }
    report.update(metadata or {})
    with open(out / "robustness_report.json", "w") as fh:
        json.dump(report, fh, indent=2)

    for name, e in entries.items():
        if "actual" not in e:
            continue
        safe = name.replace(" ", "_").replace("(", "").replace(")", "")
        with open(out / f"predictions_{safe}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["actual", "predicted"])
            for a, p in zip(e["actual"], e["predicted"]):
                writer.writerow([repr(float(a)), repr(float(p))])
    return report
