"""Command-line pipeline: synth -> decompose -> augment -> test -> report.

All stages read one declarative JSON config; command-line flags override
config values. Exit codes: 0 success, 2 usage/config error, 3 external
model protocol failure. Failures of a model under test (infeasible
predictions, missed thresholds) are report content, not process errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augmentation import generate_augmented, load_augmented, save_augmented
from .dataio import (
    CorpusFormatError,
    SyntheticCorpusSpec,
    generate_synthetic,
    load_ground_truth,
    write_ground_truth,
)
from .decomposition import (
    dictionary_sha256,
    extract_speed_vector,
    fit_scalar_mle,
    learn_dictionary,
    load_decomposition,
    save_decomposition,
)
from .models import (
    ExternalModelSpec,
    ProtocolError,
    dataset_from_augmented,
    dataset_from_ground_truth,
    predict_batch,
    split_classic,
    train,
    wrap_external,
)
from .physics import ChamberSpec
from .robustness import Thresholds, evaluate_model, write_report

log = logging.getLogger("pumpdown")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class ModelSpec:
    kind: str
    name: str
    hyperparams: dict = field(default_factory=dict)
    external: ExternalModelSpec | None = None


@dataclass
class RunConfig:
    gt_dir: Path
    out_dir: Path
    chamber: ChamberSpec
    resolution: int = 500
    epsilon: float = 1e-3
    m: int | None = None
    aug_seed: int = 0
    max_nnz: int = 3
    models: list = field(default_factory=list)
    thresholds: Thresholds = field(default_factory=Thresholds)
    split_ratio: float = 0.8
    split_seed: int = 0


_SCHEMA = {
    "paths": {"gt_dir", "out_dir"},
    "chamber": {"volume_m3", "leak_flow", "surface_flow"},
    "decomposition": {"resolution", "epsilon"},
    "augmentation": {"m", "seed", "max_nnz"},
    "models": None,  # list, validated separately
    "thresholds": {
        "mae_max", "r2_min", "linf_max", "residual_gate",
        "volume_mode", "v_min", "t_v",
    },
    "split": {"ratio", "seed"},
}
_MODEL_KEYS = {"kind", "name", "hyperparams", "argv", "timeout_s", "batch_size"}


def _check_keys(section: str, given: dict, allowed: set) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in '{section}': {sorted(unknown)}; allowed: {sorted(allowed)}"
        )


def load_config(path) -> RunConfig:
    """Parse and validate the run configuration file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("config", raw, set(_SCHEMA))
    for section, allowed in _SCHEMA.items():
        if allowed is not None and section in raw:
            if not isinstance(raw[section], dict):
                raise ConfigError(f"'{section}' must be an object")
            _check_keys(section, raw[section], allowed)

    paths = raw.get("paths", {})
    if "gt_dir" not in paths or "out_dir" not in paths:
        raise ConfigError("config needs paths.gt_dir and paths.out_dir")

    chamber_cfg = raw.get("chamber", {})
    if "volume_m3" not in chamber_cfg:
        raise ConfigError("config needs chamber.volume_m3")
    try:
        chamber = ChamberSpec(
            volume_m3=float(chamber_cfg["volume_m3"]),
            leak_flow=float(chamber_cfg.get("leak_flow", 0.0)),
            surface_flow=float(chamber_cfg.get("surface_flow", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid chamber: {exc}") from exc

    deco = raw.get("decomposition", {})
    aug = raw.get("augmentation", {})
    split = raw.get("split", {})
    try:
        thresholds = Thresholds(**raw.get("thresholds", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid thresholds: {exc}") from exc

    models = []
    for i, entry in enumerate(raw.get("models", [])):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"models[{i}] must be an object with a 'kind'")
        _check_keys(f"models[{i}]", entry, _MODEL_KEYS)
        kind = entry["kind"]
        name = entry.get("name", kind)
        if kind == "external":
            if "argv" not in entry:
                raise ConfigError(f"models[{i}]: external model needs 'argv'")
            ext = ExternalModelSpec(
                argv=tuple(entry["argv"]),
                timeout_s=float(entry.get("timeout_s", 30.0)),
                batch_size=int(entry.get("batch_size", 1024)),
            )
            models.append(ModelSpec(kind=kind, name=name, external=ext))
        elif kind in ("ridge", "knn", "mlp"):
            models.append(
                ModelSpec(kind=kind, name=name,
                          hyperparams=dict(entry.get("hyperparams", {})))
            )
        else:
            raise ConfigError(f"models[{i}]: unknown kind {kind!r}")
    if not models:
        models = [ModelSpec(kind=k, name=k) for k in ("ridge", "knn", "mlp")]

    return RunConfig(
        gt_dir=Path(paths["gt_dir"]),
        out_dir=Path(paths["out_dir"]),
        chamber=chamber,
        resolution=int(deco.get("resolution", 500)),
        epsilon=float(deco.get("epsilon", 1e-3)),
        m=int(aug["m"]) if "m" in aug else None,
        aug_seed=int(aug.get("seed", 0)),
        max_nnz=int(aug.get("max_nnz", 3)),
        models=models,
        thresholds=thresholds,
        split_ratio=float(split.get("ratio", 0.8)),
        split_seed=int(split.get("seed", 0)),
    )


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    if getattr(args, "seed", None) is not None:
        cfg.aug_seed = args.seed
        cfg.split_seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    if not args.out:
        print("error: synth requires --out", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = SyntheticCorpusSpec(
            n_events=args.events,
            chamber=ChamberSpec(args.volume, args.leak_flow, args.surface_flow),
            p0_mean=args.p0_mean,
            p0_std=args.p0_std,
            t_mean=args.t_mean,
            t_std=args.t_std,
            speed_archetypes=args.archetypes,
            noise_rel=args.noise_rel,
            seed=args.seed if args.seed is not None else 0,
            label=args.label,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    gts = generate_synthetic(spec)
    write_ground_truth(gts, args.out, spec=spec)
    print(f"wrote {len(gts)} events to {args.out}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    gts = load_ground_truth(cfg.gt_dir, cfg.chamber)
    if len(gts) < 2:
        print("error: decomposition needs at least 2 events", file=sys.stderr)
        return EXIT_CONFIG
    p0_dist = fit_scalar_mle(gts.initial_pressures())
    t_dist = fit_scalar_mle(gts.pump_down_times())
    speeds = np.stack(
        [extract_speed_vector(c, cfg.resolution) for c in gts.curves]
    )
    dictionary = learn_dictionary(speeds, cfg.epsilon)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.out_dir / "decomposition.json"
    save_decomposition(out_path, dictionary, p0_dist, t_dist, gts.label)
    achieved = dictionary.max_residual_history[-1]
    log.info(
        "dictionary: %d atoms, max residual %.3e (epsilon %.1e)",
        dictionary.n_atoms, achieved, cfg.epsilon,
    )
    print(
        f"decomposed {len(gts)} events -> {dictionary.n_atoms} atoms, "
        f"max residual {achieved:.3e}, wrote {out_path}"
    )
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    deco_path = cfg.out_dir / "decomposition.json"
    if not deco_path.exists():
        print(f"error: missing dictionary {deco_path}; run decompose first",
              file=sys.stderr)
        return EXIT_CONFIG
    if cfg.m is None:
        print("error: config needs augmentation.m", file=sys.stderr)
        return EXIT_CONFIG
    dictionary, p0_dist, t_dist, _ = load_decomposition(deco_path)
    aset = generate_augmented(
        dictionary, p0_dist, t_dist, cfg.chamber,
        m=cfg.m, seed=cfg.aug_seed, max_nnz=cfg.max_nnz,
    )
    aug_dir = cfg.out_dir / "augmented"
    save_augmented(aset, aug_dir, dictionary, p0_dist, t_dist)
    p0s = np.array([s.p0 for s in aset.samples])
    ts = np.array([s.pump_down_time for s in aset.samples])
    print(
        f"wrote {aset.m} augmented samples to {aug_dir} "
        f"(P0 in [{p0s.min():.1f}, {p0s.max():.1f}], "
        f"T in [{ts.min():.1f}, {ts.max():.1f}])"
    )
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    deco_path = cfg.out_dir / "decomposition.json"
    aug_dir = cfg.out_dir / "augmented"
    if not deco_path.exists() or not aug_dir.exists():
        print("error: run decompose and augment before test", file=sys.stderr)
        return EXIT_CONFIG
    dictionary, p0_dist, t_dist, _ = load_decomposition(deco_path)
    gts = load_ground_truth(cfg.gt_dir, cfg.chamber)
    aset = load_augmented(aug_dir, cfg.chamber, dictionary.n_atoms)

    gt_data = dataset_from_ground_truth(gts)
    gt_train, gt_holdout = split_classic(gt_data, cfg.split_ratio, cfg.split_seed)
    aug_data = dataset_from_augmented(aset)

    entries = {}
    for mspec in cfg.models:
        for regime in ("classic", "aug"):
            name = f"{mspec.name} ({regime})"
            log.info("evaluating %s", name)
            if mspec.kind == "external":
                model = wrap_external(mspec.external, training_label=regime)
            elif regime == "classic":
                model = train(mspec.kind, gt_train, mspec.hyperparams,
                              seed=cfg.split_seed, training_label=regime)
            else:
                model = train(mspec.kind, aug_data, mspec.hyperparams,
                              seed=cfg.split_seed, training_label=regime)
            gt_test = gt_holdout if regime == "classic" else gt_data
            try:
                results, verdict = evaluate_model(
                    model, gt_test, aset, cfg.thresholds
                )
            except ProtocolError as exc:
                print(f"error: external model '{mspec.name}': {exc}",
                      file=sys.stderr)
                return EXIT_PROTOCOL
            entries[name] = {
                "results": results,
                "verdict": verdict,
                "actual": gt_test.targets,
                "predicted": predict_batch(model, gt_test.features),
            }

    report = write_report(
        cfg.out_dir,
        entries,
        cfg.thresholds,
        metadata={
            "dictionary_sha256": dictionary_sha256(dictionary),
            "seeds": {"split": cfg.split_seed, "augmentation": aset.seed},
        },
    )
    print(f"wrote report for {len(entries)} model runs to "
          f"{cfg.out_dir / 'robustness_report.json'}")
    for name in report["ranking"]:
        verdict = entries[name]["verdict"]
        status = "PASS" if verdict.main else "FAIL"
        print(f"  {status}  {name}  volume={verdict.ranking_volume:.3e}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.report) if args.report else Path(args.out or ".") / "robustness_report.json"
    if not path.exists():
        print(f"error: report not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    report = json.loads(path.read_text())
    print(f"robustness report ({path})")
    print(f"thresholds: {report['thresholds']}")
    header = f"{'model':<28} {'main':<5} {'mae':>8} {'r2':>7} {'linf':>8} {'volume':>12}"
    print(header)
    print("-" * len(header))
    for name in report["ranking"]:
        m = report["models"][name]
        print(
            f"{name:<28} {'PASS' if m['verdict']['main'] else 'FAIL':<5} "
            f"{m['metrics']['mae']:>8.3f} {m['metrics']['r2']:>7.3f} "
            f"{max(m['metrics']['linf_gt'], m['metrics']['linf_aug']):>8.2f} "
            f"{m['volumes']['v_t']:>12.3e}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the run configuration JSON")
    common.add_argument("--seed", type=int, default=None, help="override seeds")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--verbose", action="store_true", help="verbose logging")

    parser = argparse.ArgumentParser(
        prog="pumpdown",
        description="augment vacuum pump-down data and test model robustness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate a synthetic ground-truth corpus")
    p_synth.add_argument("--events", type=int, required=True)
    p_synth.add_argument("--volume", type=float, default=10.0,
                         help="chamber volume in m^3")
    p_synth.add_argument("--leak-flow", type=float, default=0.0)
    p_synth.add_argument("--surface-flow", type=float, default=0.0)
    p_synth.add_argument("--p0-mean", type=float, default=1000.0)
    p_synth.add_argument("--p0-std", type=float, default=16.84)
    p_synth.add_argument("--t-mean", type=float, default=333.59)
    p_synth.add_argument("--t-std", type=float, default=262.52)
    p_synth.add_argument("--archetypes", type=int, default=3)
    p_synth.add_argument("--noise-rel", type=float, default=0.0)
    p_synth.add_argument("--label", default="synthetic")

    for name, fn, help_text in (
        ("decompose", cmd_decompose, "fit distributions and learn the dictionary"),
        ("augment", cmd_augment, "generate augmented samples"),
        ("test", cmd_test, "train models and run the robustness oracles"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)

    p_report = sub.add_parser("report", parents=[common],
                              help="print a saved robustness report")
    p_report.add_argument("--report", help="path to robustness_report.json")
    p_report.set_defaults(func=cmd_report)

    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command in ("decompose", "augment", "test") and not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, CorpusFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"error: external model protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
