import json

import numpy as np
import pytest

import launcher
from tools import fingerprint_file

TINY_CONFIG = """
[experiment]
seed = 11

[plant]
n = 3
measured = [1, 2]
t_span = [0.0, 2.0]
n_samples = 41
n_train = 4
n_test = 3

[observer]
eig_range = [-5.0, -8.0]

[training]
epochs = 3
batch_size = 32
hidden_layers = [8]
eval_samples = 32

[noise]
process_var = 0.0001
meas_var = 0.0001

[verify]
mc_runs = 3
grid_points = 10
random_matrices = 2
contraction_samples = 50
horizon = 0.3

[report]
quality_runs = 2
exceedance_runs = 2

[[faults.a.events]]
sensor = 2
onset = 1.2
kind = "complete_failure"

[[faults.b.events]]
sensor = 1
onset = 1.2
kind = "step_bias"
level = 3.0

[[faults.c.events]]
sensor = 2
onset = 1.2
kind = "sigmoid"
level = 2.0
rate = 4.0
center = 1.5

[[faults.d.events]]
sensor = 1
onset = 1.2
kind = "growing_white_noise"
ramp = 0.5
sigma = 1.0
seed = 0

[[faults.e.events]]
sensor = 2
onset = 1.2
kind = "growing_sinusoid"
amplitude = 5.0
frequency = 2.0
ramp = 0.5
"""


def _config_file(directory, text: str = TINY_CONFIG):
    path = directory / "tiny.toml"
    path.write_text(text, encoding="utf-8")
    return path


def _main(config, out, *extra) -> int:
    command, *rest = extra
    return launcher.main([command, "--config", str(config), "--out", str(out), *rest])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    config = _config_file(base)
    out = base / "out"
    codes = {}
    for command in ("generate", "train", "calibrate"):
        codes[command] = _main(config, out, command)
    codes["run"] = _main(config, out, "run")
    codes["report"] = _main(config, out, "report")
    return config, out, codes


def test_full_pipeline_succeeds(pipeline):
    _, out, codes = pipeline
    assert codes == {"generate": 0, "train": 0, "calibrate": 0, "run": 0, "report": 0}
    for name in (
        launcher.TRAIN_DATASET,
        launcher.TEST_DATASET,
        launcher.GENERATION_REPORT,
        launcher.MODEL_FILE,
        launcher.LOSS_CURVE,
        launcher.THRESHOLDS_FILE,
        launcher.SUMMARY_REPORT,
    ):
        assert (out / name).is_file(), name
    for sid in "abcde":
        assert (out / f"scenario_{sid}_series.csv").is_file()
        assert (out / f"scenario_{sid}_events.json").is_file()


def test_scenario_override_reaches_the_run(pipeline):
    _, out, _ = pipeline
    payload = json.loads((out / "scenario_b_events.json").read_text())
    assert payload["meta"]["scenario"] == "b"
    assert payload["meta"]["faults"] == [{"sensor": 1, "onset": 1.2, "kind": "step_bias", "level": 3.0}]
    assert payload["thresholds"]["t_c"] == pytest.approx(1.0)


def test_report_contents(pipeline):
    _, out, _ = pipeline
    report = json.loads((out / launcher.SUMMARY_REPORT).read_text())
    assert set(report["datasets"]) == {"train", "test"}
    assert report["datasets"]["test"]["n_trajectories"] == 3
    assert report["model"]["decoder_sizes"] == [14, 8, 3]
    assert report["thresholds"]["reference_r_delta"] == launcher.REFERENCE_R_DELTA
    assert set(report["scenarios"]) == set("abcde")
    assert report["observer_quality"]["runs"] == 2
    assert 0.0 <= report["fault_free_exceedance"]["max_r_tilde_exceedance"] <= 1.0


def test_rerun_is_byte_identical(pipeline, tmp_path):
    config, out, _ = pipeline
    second = tmp_path / "again"
    for command in ("generate", "train", "calibrate"):
        assert _main(config, second, command) == 0
    assert _main(config, second, "run", "--scenario", "c") == 0
    for name in (launcher.TRAIN_DATASET, launcher.MODEL_FILE, launcher.THRESHOLDS_FILE, "scenario_c_series.csv"):
        assert fingerprint_file(second / name) == fingerprint_file(out / name), name


def test_single_scenario_selection(pipeline, tmp_path):
    config, out, _ = pipeline
    code = launcher.main(
        [
            "run", "--config", str(config), "--out", str(tmp_path), "--scenario", "a",
            "--model", str(out / launcher.MODEL_FILE), "--thresholds", str(out / launcher.THRESHOLDS_FILE),
        ]
    )
    assert code == 0
    assert (tmp_path / "scenario_a_events.json").is_file()
    assert not (tmp_path / "scenario_b_events.json").exists()


def test_thresholds_for_another_model_are_rejected(pipeline, tmp_path):
    config, out, _ = pipeline
    other = _config_file(tmp_path, TINY_CONFIG.replace("epochs = 3", "epochs = 3\nseed = 5"))
    assert _main(other, tmp_path, "generate") == 0
    assert _main(other, tmp_path, "train") == 0
    code = _main(other, tmp_path, "run", "--scenario", "a", "--thresholds", str(out / launcher.THRESHOLDS_FILE))
    assert code == launcher.EXIT_ARTIFACT


def test_config_errors_exit_with_2(tmp_path):
    bad = _config_file(tmp_path, "[plant]\nsize = 3\n")
    assert _main(bad, tmp_path / "out", "generate") == launcher.EXIT_CONFIG
    unstable = _config_file(tmp_path, TINY_CONFIG.replace("eig_range = [-5.0, -8.0]", "eig_range = [1.0, 2.0]"))
    assert _main(unstable, tmp_path / "out", "generate") == launcher.EXIT_CONFIG
    assert launcher.main(["generate", "--config", str(tmp_path / "missing.toml")]) == launcher.EXIT_CONFIG


def test_missing_artifacts_exit_with_5(tmp_path):
    config = _config_file(tmp_path)
    assert _main(config, tmp_path / "empty", "train") == launcher.EXIT_ARTIFACT
    assert _main(config, tmp_path / "empty", "calibrate") == launcher.EXIT_ARTIFACT
    assert _main(config, tmp_path / "empty", "run", "--scenario", "a") == launcher.EXIT_ARTIFACT


def test_model_for_another_plant_is_rejected(pipeline, tmp_path):
    _, out, _ = pipeline
    other = _config_file(tmp_path, TINY_CONFIG.replace("n_test = 3", "n_test = 3\nparam_seed = 99"))
    code = _main(other, tmp_path, "run", "--scenario", "a", "--model", str(out / launcher.MODEL_FILE))
    assert code == launcher.EXIT_ARTIFACT


def test_training_divergence_exits_with_3(tmp_path):
    config = _config_file(tmp_path, TINY_CONFIG.replace("epochs = 3", "epochs = 3\nlearning_rate = 1e300"))
    assert _main(config, tmp_path, "generate") == 0
    with np.errstate(all="ignore"):
        code = _main(config, tmp_path, "train")
    assert code == launcher.EXIT_DIVERGENCE
    assert (tmp_path / launcher.LOSS_CURVE).is_file()


def test_verify_command(tmp_path):
    config = _config_file(tmp_path)
    assert _main(config, tmp_path, "verify") == 0
    report = json.loads((tmp_path / launcher.VERIFY_REPORT).read_text())
    assert report["passed"] is True
    assert report["seed"] == 11


def test_cli_requires_a_command():
    with pytest.raises(SystemExit):
        launcher.main([])
