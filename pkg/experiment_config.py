"""Experiment configuration: TOML file + .env overrides + command-line flags.

Every recognised key is declared once in SETTINGS_SCHEMA as
``(section, key): (default, data_type)``. Anything not in the table is rejected
before a single number is computed.
"""

from __future__ import annotations

import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from dynamics import KuramotoParams, KuramotoPlant, NoiseSpec
from fault_injection import FaultProfile, profile_from_dict, profile_to_dict
from kkl_observer import ObserverMatrices, build_matrices, default_burn_in
from neural_transform import TrainConfig
from scenarios import ScenarioFactory, ScenarioId
from tools import ConfigError, debug_print, fingerprint_payload, path_from_app_root

ENV_PATH = path_from_app_root(".env")

SETTINGS_SCHEMA: dict[tuple[str, str], tuple[Any, str]] = {
    # (section, key): (default_value, data_type)
    # data_type is one of: BOOL, INTEGER, FLOAT, TEXT, FLOAT_PAIR, INTEGER_LIST
    ("experiment", "seed"): (0, "INTEGER"),
    ("experiment", "out_dir"): ("out", "TEXT"),
    ("experiment", "workers"): (1, "INTEGER"),
    ("plant", "n"): (10, "INTEGER"),
    ("plant", "param_seed"): (7, "INTEGER"),
    ("plant", "omega_range"): ((-1.0, 1.0), "FLOAT_PAIR"),
    ("plant", "coupling_range"): ((0.0, 1.0), "FLOAT_PAIR"),
    ("plant", "conventional_sign"): (False, "BOOL"),
    ("plant", "measured"): ((1, 2, 3, 4, 5), "INTEGER_LIST"),
    ("plant", "x0_bounds"): ((-2.0, 2.0), "FLOAT_PAIR"),
    ("plant", "t_span"): ((0.0, 30.0), "FLOAT_PAIR"),
    ("plant", "n_samples"): (4000, "INTEGER"),
    ("plant", "n_train"): (50, "INTEGER"),
    ("plant", "n_test"): (100, "INTEGER"),
    ("observer", "eig_range"): ((-15.0, -21.0), "FLOAT_PAIR"),
    # 0 selects default_burn_in(c)
    ("observer", "t_pre"): (0.0, "FLOAT"),
    ("observer", "max_discard_fraction"): (0.1, "FLOAT"),
    ("training", "epochs"): (200, "INTEGER"),
    ("training", "batch_size"): (256, "INTEGER"),
    ("training", "learning_rate"): (1e-3, "FLOAT"),
    ("training", "lr_decay"): (0.5, "FLOAT"),
    ("training", "lr_interval"): (50, "INTEGER"),
    ("training", "chi"): (1.0, "FLOAT"),
    ("training", "lam"): (0.1, "FLOAT"),
    ("training", "seed"): (0, "INTEGER"),
    ("training", "enable_physics_loss"): (False, "BOOL"),
    ("training", "train_encoder"): (False, "BOOL"),
    ("training", "hidden_layers"): ((250, 250, 250), "INTEGER_LIST"),
    ("training", "betas"): ((0.9, 0.999), "FLOAT_PAIR"),
    ("training", "eval_samples"): (2048, "INTEGER"),
    ("noise", "process_var"): (0.02, "FLOAT"),
    ("noise", "meas_var"): (0.02, "FLOAT"),
    ("noise", "reading"): ("variance", "TEXT"),
    ("noise", "bound_sigmas"): (3.0, "FLOAT"),
    # 0 selects 5/c
    ("thresholds", "t_c"): (0.0, "FLOAT"),
    # negative means estimate psi(w_bar) by simulation
    ("thresholds", "psi_override"): (-1.0, "FLOAT"),
    ("verify", "mc_runs"): (100, "INTEGER"),
    ("verify", "grid_points"): (100, "INTEGER"),
    ("verify", "random_matrices"): (20, "INTEGER"),
    ("verify", "contraction_samples"): (1000, "INTEGER"),
    ("verify", "horizon"): (2.0, "FLOAT"),
    ("report", "quality_runs"): (10, "INTEGER"),
    ("report", "exceedance_runs"): (20, "INTEGER"),
}

TEXT_CHOICES = {
    ("noise", "reading"): ("variance", "std"),
}

# not part of the fingerprint: they change where and how fast, never what
UNFINGERPRINTED = {("experiment", "out_dir"), ("experiment", "workers")}


def coerce_value_for_type(value: Any, data_type: str) -> Any:
    """Normalise a value that already passed is_value_valid_for_type."""
    dt = data_type.upper()
    if dt == "BOOL":
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "t", "yes", "y", "on")
        return bool(value)
    if dt == "INTEGER":
        return int(value)
    if dt == "FLOAT":
        return float(value)
    if dt == "FLOAT_PAIR":
        return (float(value[0]), float(value[1]))
    if dt == "INTEGER_LIST":
        return tuple(int(v) for v in value)
    # default: TEXT
    return str(value)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def is_value_valid_for_type(value: Any, data_type: str) -> bool:
    dt = data_type.upper()
    if dt == "BOOL":
        if isinstance(value, str):
            return value.strip().lower() in ("0", "1", "true", "false", "t", "f", "yes", "no", "y", "n", "on", "off")
        return isinstance(value, bool)
    if dt == "INTEGER":
        if isinstance(value, str):
            v = value.strip()
            if v.startswith("-"):
                v = v[1:]
            return v.isdigit()
        return isinstance(value, int) and not isinstance(value, bool)
    if dt == "FLOAT":
        return _is_number(value)
    if dt == "FLOAT_PAIR":
        return isinstance(value, (list, tuple)) and len(value) == 2 and all(_is_number(v) for v in value)
    if dt == "INTEGER_LIST":
        return (
            isinstance(value, (list, tuple))
            and len(value) > 0
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        )
    # TEXT
    return isinstance(value, str)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[tuple[str, str], Any]
    faults: dict[str, list[dict]] = field(default_factory=dict)
    source: Optional[Path] = None

    def get(self, section: str, key: str) -> Any:
        try:
            return self.values[(section, key)]
        except KeyError:
            raise ConfigError(f"Unknown setting [{section}] {key}") from None

    def section(self, name: str) -> dict[str, Any]:
        return {key: value for (sec, key), value in self.values.items() if sec == name}

    @property
    def seed(self) -> int:
        return self.get("experiment", "seed")

    @property
    def out_dir(self) -> Path:
        out = Path(self.get("experiment", "out_dir"))
        return out if out.is_absolute() else path_from_app_root(str(out))

    @property
    def workers(self) -> int:
        return self.get("experiment", "workers")

    def plant(self) -> KuramotoPlant:
        params = KuramotoParams.from_seed(
            self.get("plant", "n"),
            self.get("plant", "param_seed"),
            omega_range=self.get("plant", "omega_range"),
            coupling_range=self.get("plant", "coupling_range"),
            conventional_sign=self.get("plant", "conventional_sign"),
        )
        return KuramotoPlant(params=params, measured=tuple(i - 1 for i in self.get("plant", "measured")))

    def observer(self) -> ObserverMatrices:
        lo, hi = self.get("observer", "eig_range")
        return build_matrices(self.get("plant", "n"), len(self.get("plant", "measured")), lo, hi)

    def burn_in(self, obs: ObserverMatrices) -> float:
        t_pre = self.get("observer", "t_pre")
        return t_pre if t_pre > 0 else default_burn_in(obs.c)

    def noise(self) -> NoiseSpec:
        process, meas = self.get("noise", "process_var"), self.get("noise", "meas_var")
        if self.get("noise", "reading") == "std":
            process, meas = process**2, meas**2
        return NoiseSpec.from_variances(process, meas, self.get("noise", "bound_sigmas"))

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.section("training"))
        except ValueError as exc:
            raise ConfigError(f"[training] {exc}") from None

    def t_c(self, obs: ObserverMatrices) -> float:
        t_c = self.get("thresholds", "t_c")
        return t_c if t_c > 0 else 5.0 / obs.c

    def psi_override(self) -> Optional[float]:
        psi = self.get("thresholds", "psi_override")
        return psi if psi >= 0 else None

    def fault_profile(self, scenario: ScenarioId | str) -> FaultProfile:
        scenario = ScenarioId(scenario)
        n_y = len(self.get("plant", "measured"))
        events = self.faults.get(scenario.value)
        try:
            if events is None:
                return ScenarioFactory.for_scenario(scenario, n_y=n_y, seed=self.seed)
            return profile_from_dict(n_y, events)
        except ValueError as exc:
            hint = "" if events is not None else f"; the default profile needs a [faults.{scenario.value}] table here"
            raise ConfigError(f"[faults.{scenario.value}] {exc}{hint}") from None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {}
        for (section, key), value in sorted(self.values.items()):
            data.setdefault(section, {})[key] = list(value) if isinstance(value, tuple) else value
        data["faults"] = {sid: profile_to_dict(self.fault_profile(sid)) for sid in sorted(self.faults)}
        return data

    def fingerprint(self) -> str:
        payload = self.to_dict()
        for section, key in UNFINGERPRINTED:
            payload.get(section, {}).pop(key, None)
        return fingerprint_payload(payload)


def _flatten(raw: dict[str, Any]) -> tuple[dict[tuple[str, str], Any], dict[str, list[dict]]]:
    known_sections = {section for section, _ in SETTINGS_SCHEMA}
    flat: dict[tuple[str, str], Any] = {}
    faults: dict[str, list[dict]] = {}
    for section, table in raw.items():
        if section == "faults":
            if not isinstance(table, dict):
                raise ConfigError("[faults] must be a table of scenario tables.")
            for sid, body in table.items():
                if sid not in {s.value for s in ScenarioId}:
                    raise ConfigError(f"Unknown fault scenario [faults.{sid}]")
                if not isinstance(body, dict) or set(body) != {"events"} or not isinstance(body["events"], list):
                    raise ConfigError(f"[faults.{sid}] must contain exactly one 'events' array.")
                faults[sid] = [dict(entry) for entry in body["events"]]
            continue
        if section not in known_sections:
            raise ConfigError(f"Unknown config section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table.")
        for key, value in table.items():
            if (section, key) not in SETTINGS_SCHEMA:
                raise ConfigError(f"Unknown setting [{section}] {key}")
            flat[(section, key)] = value
    return flat, faults


def _resolve(flat: dict[tuple[str, str], Any]) -> dict[tuple[str, str], Any]:
    values = {}
    for (section, key), (default, dtype) in SETTINGS_SCHEMA.items():
        value = flat.get((section, key), default)
        if not is_value_valid_for_type(value, dtype):
            raise ConfigError(f"[{section}] {key} = {value!r} is not a valid {dtype}")
        value = coerce_value_for_type(value, dtype)
        choices = TEXT_CHOICES.get((section, key))
        if choices is not None and value not in choices:
            raise ConfigError(f"[{section}] {key} must be one of {choices}, got {value!r}")
        values[(section, key)] = value
    return values


def _check_ranges(values: dict[tuple[str, str], Any]) -> None:
    n = values[("plant", "n")]
    if n < 1:
        raise ConfigError("[plant] n must be at least 1.")
    measured = values[("plant", "measured")]
    if any(i < 1 or i > n for i in measured) or len(set(measured)) != len(measured):
        raise ConfigError(f"[plant] measured must list distinct sensors in 1..{n}, got {list(measured)}")
    lo, hi = values[("plant", "x0_bounds")]
    if not lo < hi:
        raise ConfigError("[plant] x0_bounds must be an increasing pair.")
    t0, tf = values[("plant", "t_span")]
    if not tf > t0:
        raise ConfigError("[plant] t_span must be an increasing pair.")
    for key in ("n_samples", "n_train", "n_test"):
        if values[("plant", key)] < (2 if key == "n_samples" else 1):
            raise ConfigError(f"[plant] {key} is too small.")
    if values[("experiment", "workers")] < 1:
        raise ConfigError("[experiment] workers must be at least 1.")
    if not 0 <= values[("observer", "max_discard_fraction")] <= 1:
        raise ConfigError("[observer] max_discard_fraction must lie in [0, 1].")
    for key in ("process_var", "meas_var", "bound_sigmas"):
        if values[("noise", key)] < 0:
            raise ConfigError(f"[noise] {key} must be nonnegative.")
    for key, value in values.items():
        if key[0] in ("verify", "report") and value < 1:
            raise ConfigError(f"[{key[0]}] {key[1]} must be positive.")


def _env_overrides() -> dict[tuple[str, str], Any]:
    load_dotenv(dotenv_path=ENV_PATH, override=False)
    overrides: dict[tuple[str, str], Any] = {}
    if os.getenv("SFDI_OUT_DIR"):
        overrides[("experiment", "out_dir")] = os.environ["SFDI_OUT_DIR"]
    if os.getenv("SFDI_WORKERS"):
        overrides[("experiment", "workers")] = os.environ["SFDI_WORKERS"]
    return overrides


def load_config(
    path: Optional[Path] = None,
    seed_override: Optional[int] = None,
    out_override: Optional[str] = None,
    workers_override: Optional[int] = None,
) -> ExperimentConfig:
    """Reads and validates an experiment file. Precedence: flags > environment > file > defaults."""
    raw: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as handle:
                raw = tomllib.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid TOML: {exc}") from None
    flat, faults = _flatten(raw)
    flat.update(_env_overrides())
    if seed_override is not None:
        flat[("experiment", "seed")] = seed_override
    if out_override is not None:
        flat[("experiment", "out_dir")] = out_override
    if workers_override is not None:
        flat[("experiment", "workers")] = workers_override
    values = _resolve(flat)
    _check_ranges(values)
    config = ExperimentConfig(values=values, faults=faults, source=path)
    # surface bad fault tables and training combinations before any computation
    for sid in faults:
        config.fault_profile(sid)
    config.train_config()
    debug_print("Config", f"Loaded config {path or '<defaults>'} fingerprint={config.fingerprint()[:12]}")
    return config
