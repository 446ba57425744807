"""Command-line entry point for the sensor FDI experiments.

``python launcher.py <command> [--config PATH] [--seed N] ...`` where command is
one of generate, train, calibrate, run, verify, report. Every command reads the
experiment config, writes its artifacts into the output directory and exits
with 0 on success, 2 on a config error, 3 on numerical divergence, 4 on a
failed verification suite and 5 on a missing or mismatched artifact.
"""

from __future__ import annotations

from tools import clear_log_file as _clear_log_file

try:
    _clear_log_file()
except Exception:
    pass

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv

import db
from dynamics import latin_hypercube
from experiment_config import ENV_PATH, ExperimentConfig, load_config
from fdi_engine import FdiReport, calibrate, observer_quality, run_pipeline
from kkl_observer import TrainingDataset, generate_training_data
from neural_transform import ObserverModel, train
from scenarios import ScenarioId
from tools import (
    ArtifactError,
    ConfigError,
    DivergenceError,
    VerificationError,
    debug_print,
    derive_seed,
    fingerprint_file,
    set_debug,
    write_json,
)
from verification import run_verification

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFICATION = 4
EXIT_ARTIFACT = 5

TRAIN_DATASET = "dataset_train.db"
TEST_DATASET = "dataset_test.db"
GENERATION_REPORT = "generation_report.json"
MODEL_FILE = "model.db"
LOSS_CURVE = "loss_curve.csv"
THRESHOLDS_FILE = "thresholds.db"
VERIFY_REPORT = "verify_report.json"
SUMMARY_REPORT = "report.json"

# r_delta quoted for the reference Kuramoto setup; only an order-of-magnitude yardstick
REFERENCE_R_DELTA = 4.74

# derive_seed labels, one per independent random stream
_SEED_TRAIN_X0 = 100
_SEED_TEST_X0 = 101
_SEED_CALIBRATE = 110
_SEED_SCENARIO = 120
_SEED_QUALITY = 130
_SEED_EXCEEDANCE = 131


def _info(message: str) -> None:
    print(f"[INFO] {message}")


def _warn(message: str) -> None:
    print(f"[WARN] {message}")


def _error(message: str) -> None:
    print(f"[ERROR] {message}")


def scenario_series_name(scenario: ScenarioId) -> str:
    return f"scenario_{scenario.value}_series.csv"


def scenario_events_name(scenario: ScenarioId) -> str:
    return f"scenario_{scenario.value}_events.json"


def _x0_set(config: ExperimentConfig, count: int, label: int) -> np.ndarray:
    bounds = [config.get("plant", "x0_bounds")] * config.get("plant", "n")
    return latin_hypercube(count, bounds, derive_seed(config.seed, label))


def _t_span(config: ExperimentConfig) -> tuple[float, float]:
    return config.get("plant", "t_span")


def _prepare_out_dir(config: ExperimentConfig) -> Path:
    out = config.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"Cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ArtifactError(f"Output directory {out} is not writable.")
    return out


def _load_model_checked(config: ExperimentConfig, model_path: Path) -> ObserverModel:
    model = db.load_model(model_path)
    plant = config.plant()
    model.check_plant(plant)
    if model.plant_description != plant.describe():
        raise ArtifactError(
            f"Model {model_path} was trained for plant {model.plant_description}, config describes {plant.describe()}."
        )
    return model


# --- commands ----------------------------------------------------------------------------------

def cmd_generate(config: ExperimentConfig) -> dict:
    """LHS initial conditions -> truncation-method datasets for training and calibration."""
    out = _prepare_out_dir(config)
    plant, obs = config.plant(), config.observer()
    t_pre = config.burn_in(obs)
    n_samples = config.get("plant", "n_samples")
    report = {"config_fingerprint": config.fingerprint(), "seed": config.seed, "t_pre": t_pre, "splits": {}}
    worst = 0.0
    for split, count, label, filename in (
        ("train", config.get("plant", "n_train"), _SEED_TRAIN_X0, TRAIN_DATASET),
        ("test", config.get("plant", "n_test"), _SEED_TEST_X0, TEST_DATASET),
    ):
        _info(f"Generating {count} {split} trajectories ({n_samples} samples each)...")
        x0_set = _x0_set(config, count, label)
        dataset = generate_training_data(plant, obs, x0_set, t_pre, _t_span(config), n_samples)
        split_report = dataset.report(count)
        report["splits"][split] = split_report
        worst = max(worst, split_report["discarded_fraction"])
        db.save_dataset(
            out / filename,
            dataset,
            {"split": split, "config_fingerprint": config.fingerprint(), "plant": plant.describe(), "seed": config.seed},
        )
    write_json(out / GENERATION_REPORT, report)
    limit = config.get("observer", "max_discard_fraction")
    if worst > limit:
        raise DivergenceError(f"{worst:.1%} of trajectories were discarded (limit {limit:.1%}).", report)
    _info(f"Datasets written to {out}")
    return report


def cmd_train(config: ExperimentConfig, dataset_path: Optional[Path] = None) -> ObserverModel:
    out = _prepare_out_dir(config)
    dataset_path = Path(dataset_path) if dataset_path else out / TRAIN_DATASET
    dataset = db.load_dataset(dataset_path)
    test_path = out / TEST_DATASET
    validation: Optional[TrainingDataset] = db.load_dataset(test_path) if test_path.is_file() else None
    if validation is None:
        _warn("No test dataset found; the training report will not include held-out errors.")
    plant, obs = config.plant(), config.observer()
    train_config = config.train_config()
    _info(f"Training on {dataset.n_pairs} pairs for {train_config.epochs} epochs...")
    try:
        encoder, decoder, report = train(dataset, train_config, plant, obs, validation)
    except DivergenceError as exc:
        if exc.report is not None:
            exc.report.write_loss_curve(out / LOSS_CURVE)
        raise
    model = ObserverModel(
        decoder=decoder,
        encoder=encoder,
        obs=obs,
        train_config=train_config,
        report=report,
        plant_description=plant.describe(),
    )
    db.save_model(
        out / MODEL_FILE,
        model,
        {"config_fingerprint": config.fingerprint(), "dataset_fingerprint": fingerprint_file(dataset_path)},
    )
    report.write_loss_curve(out / LOSS_CURVE)
    _info(f"Model written to {out / MODEL_FILE} (final loss {report.final_loss:.6g})")
    return model


def cmd_calibrate(config: ExperimentConfig, model_path: Optional[Path] = None):
    out = _prepare_out_dir(config)
    model_path = Path(model_path) if model_path else out / MODEL_FILE
    test_path = out / TEST_DATASET
    if not test_path.is_file():
        raise ArtifactError(f"Calibration needs the test dataset {test_path}; run 'generate' first.")
    model = _load_model_checked(config, model_path)
    test_dataset = db.load_dataset(test_path)
    _info(f"Calibrating thresholds on {test_dataset.n_trajectories} fault-free runs...")
    thresholds = calibrate(
        model,
        config.plant(),
        test_dataset,
        config.noise(),
        derive_seed(config.seed, _SEED_CALIBRATE),
        t_c=config.t_c(model.obs),
        psi_override=config.psi_override(),
        workers=config.workers,
        provenance={
            "model_fingerprint": fingerprint_file(model_path),
            "dataset_fingerprint": fingerprint_file(test_path),
            "config_fingerprint": config.fingerprint(),
        },
    )
    db.save_thresholds(out / THRESHOLDS_FILE, thresholds)
    _info(f"tau = {np.array2string(thresholds.tau, precision=6)}, r_delta = {thresholds.r_delta:.6g}")
    return thresholds


def cmd_run(
    config: ExperimentConfig,
    scenario: ScenarioId | str,
    model_path: Optional[Path] = None,
    thresholds_path: Optional[Path] = None,
) -> FdiReport:
    out = _prepare_out_dir(config)
    scenario = ScenarioId(scenario)
    model_path = Path(model_path) if model_path else out / MODEL_FILE
    thresholds_path = Path(thresholds_path) if thresholds_path else out / THRESHOLDS_FILE
    model = _load_model_checked(config, model_path)
    thresholds = db.load_thresholds(thresholds_path)
    expected = thresholds.provenance.get("model_fingerprint")
    if expected != fingerprint_file(model_path):
        raise ArtifactError(f"Thresholds {thresholds_path} were calibrated for a different model than {model_path}.")
    profile = config.fault_profile(scenario)
    _info(f"Running scenario {scenario.value}: {scenario.description}")
    report = run_pipeline(
        model,
        config.plant(),
        profile,
        config.noise(),
        derive_seed(config.seed, _SEED_SCENARIO, list(ScenarioId).index(scenario)),
        thresholds,
        _t_span(config),
        config.get("plant", "n_samples"),
        x0_bounds=config.get("plant", "x0_bounds"),
    )
    report.meta["scenario"] = scenario.value
    report.meta["description"] = scenario.description
    report.write_series_csv(out / scenario_series_name(scenario))
    report.write_events_json(out / scenario_events_name(scenario))
    summary = report.summary()
    _info(
        f"Scenario {scenario.value}: {summary['detections']} detection(s), {summary['isolations']} isolation(s), "
        f"isolated sensors {summary['isolated_sensors']}"
    )
    return report


def cmd_verify(config: ExperimentConfig) -> dict:
    out = _prepare_out_dir(config)
    _info("Running numerical property suites...")
    result = run_verification(
        config.plant(),
        config.observer(),
        config.noise(),
        config.seed,
        mc_runs=config.get("verify", "mc_runs"),
        grid_points=config.get("verify", "grid_points"),
        random_matrices=config.get("verify", "random_matrices"),
        contraction_samples=config.get("verify", "contraction_samples"),
        horizon=config.get("verify", "horizon"),
    )
    write_json(out / VERIFY_REPORT, result)
    for suite in result["suites"]:
        (_info if suite["passed"] else _error)(f"{suite['name']}: {'pass' if suite['passed'] else 'FAIL'}")
    if not result["passed"]:
        failed = [s["name"] for s in result["suites"] if not s["passed"]]
        raise VerificationError(f"Verification failed: {', '.join(failed)}")
    return result


def cmd_report(config: ExperimentConfig, model_path: Optional[Path] = None, thresholds_path: Optional[Path] = None) -> dict:
    """Summarises every artifact present in the output directory and measures observer quality."""
    out = _prepare_out_dir(config)
    model_path = Path(model_path) if model_path else out / MODEL_FILE
    thresholds_path = Path(thresholds_path) if thresholds_path else out / THRESHOLDS_FILE
    summary: dict = {"config_fingerprint": config.fingerprint(), "seed": config.seed}

    datasets = {}
    for split, filename in (("train", TRAIN_DATASET), ("test", TEST_DATASET)):
        path = out / filename
        if path.is_file():
            meta = db.read_meta(path)
            datasets[split] = {key: meta[key] for key in ("n_trajectories", "n_samples", "n_x", "n_z", "delta", "t_pre")}
    summary["datasets"] = datasets

    model = None
    if model_path.is_file():
        model = _load_model_checked(config, model_path)
        summary["model"] = {
            "decoder_sizes": model.decoder.sizes,
            "encoder_sizes": model.encoder.sizes if model.encoder is not None else None,
            "observer": model.obs.describe(),
            "initial_loss": model.report.initial_loss,
            "final_loss": model.report.final_loss,
            "heldout": model.report.heldout,
        }
    else:
        _warn(f"No model at {model_path}; skipping model summary.")

    thresholds = None
    if thresholds_path.is_file():
        thresholds = db.load_thresholds(thresholds_path)
        summary["thresholds"] = thresholds.describe()
        summary["thresholds"]["reference_r_delta"] = REFERENCE_R_DELTA
        summary["thresholds"]["r_delta_ratio_to_reference"] = thresholds.r_delta / REFERENCE_R_DELTA

    scenarios = {}
    for scenario in ScenarioId:
        path = out / scenario_events_name(scenario)
        if path.is_file():
            scenarios[scenario.value] = json.loads(path.read_text(encoding="utf-8"))["summary"]
    summary["scenarios"] = scenarios

    if model is not None and thresholds is not None:
        plant, noise = config.plant(), config.noise()
        t_span, n_samples = _t_span(config), config.get("plant", "n_samples")
        _info("Measuring observer quality on fresh fault-free runs...")
        quality = observer_quality(
            model, plant, thresholds,
            _x0_set(config, config.get("report", "quality_runs"), _SEED_QUALITY),
            noise, t_span, n_samples, derive_seed(config.seed, _SEED_QUALITY), config.workers,
        )
        exceedance = observer_quality(
            model, plant, thresholds,
            _x0_set(config, config.get("report", "exceedance_runs"), _SEED_EXCEEDANCE),
            noise, t_span, n_samples, derive_seed(config.seed, _SEED_EXCEEDANCE), config.workers,
        )
        summary["observer_quality"] = {
            "runs": quality["runs"],
            "within_tau_fraction": quality["within_tau_fraction"],
            "min_within_tau_fraction": quality["min_within_tau_fraction"],
        }
        summary["fault_free_exceedance"] = {
            "runs": exceedance["runs"],
            "r_tilde_exceedance": exceedance["r_tilde_exceedance"],
            "max_r_tilde_exceedance": exceedance["max_r_tilde_exceedance"],
        }
    write_json(out / SUMMARY_REPORT, summary)
    _info(f"Report written to {out / SUMMARY_REPORT}")
    return summary


# --- argument handling -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Experiment TOML file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None, help="Override [experiment] seed")
    common.add_argument("--out", type=str, default=None, help="Override [experiment] out_dir")
    common.add_argument("--workers", type=int, default=None, help="Thread-pool size for per-trajectory work")
    common.add_argument("--debug", action="store_true", help="Echo log lines to stdout")

    parser = argparse.ArgumentParser(description="Sensor fault detection and isolation with a neural KKL observer.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="Generate training and test datasets")
    train_parser = sub.add_parser("train", parents=[common], help="Train the observer networks")
    train_parser.add_argument("--dataset", type=Path, default=None, help="Training dataset (default: <out>/dataset_train.db)")
    calibrate_parser = sub.add_parser("calibrate", parents=[common], help="Compute detection and isolation thresholds")
    calibrate_parser.add_argument("--model", type=Path, default=None)
    run_parser = sub.add_parser("run", parents=[common], help="Replay a fault scenario through the detector")
    run_parser.add_argument("--scenario", choices=[s.value for s in ScenarioId], default=None,
                            help="Scenario a..e (all five when omitted)")
    run_parser.add_argument("--model", type=Path, default=None)
    run_parser.add_argument("--thresholds", type=Path, default=None)
    sub.add_parser("verify", parents=[common], help="Run the numerical property suites")
    report_parser = sub.add_parser("report", parents=[common], help="Summarise artifacts and observer quality")
    report_parser.add_argument("--model", type=Path, default=None)
    report_parser.add_argument("--thresholds", type=Path, default=None)
    return parser


def dispatch(args: argparse.Namespace, config: ExperimentConfig) -> None:
    if args.command == "generate":
        cmd_generate(config)
    elif args.command == "train":
        cmd_train(config, args.dataset)
    elif args.command == "calibrate":
        cmd_calibrate(config, args.model)
    elif args.command == "run":
        scenarios = [ScenarioId(args.scenario)] if args.scenario else list(ScenarioId)
        for scenario in scenarios:
            cmd_run(config, scenario, args.model, args.thresholds)
    elif args.command == "verify":
        cmd_verify(config)
    elif args.command == "report":
        cmd_report(config, args.model, args.thresholds)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_dotenv(dotenv_path=ENV_PATH, override=False)
    set_debug(args.debug or os.getenv("SFDI_DEBUG", "0"))
    debug_print("Launcher", f"Command: {args.command}")
    try:
        config = load_config(args.config, args.seed, args.out, args.workers)
        dispatch(args, config)
    except ConfigError as exc:
        _error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except DivergenceError as exc:
        _error(f"Numerical divergence: {exc}")
        return EXIT_DIVERGENCE
    except VerificationError as exc:
        _error(str(exc))
        return EXIT_VERIFICATION
    except ArtifactError as exc:
        _error(f"Artifact error: {exc}")
        return EXIT_ARTIFACT
    except ValueError as exc:
        # precondition failures from the numerics (non-Hurwitz A, short burn-in, bad dimensions)
        _error(f"Invalid setup: {exc}")
        debug_print("Launcher", f"Rejected setup: {exc}", "ERROR")
        return EXIT_CONFIG
    _info("Done.")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
