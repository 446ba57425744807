import datetime
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

DEBUG = False
_PROJECT_ROOT = Path(__file__).resolve().parent


class SfdiError(Exception):
    """Base class for every error raised by the s-FDI toolkit."""


class ConfigError(SfdiError):
    """Experiment configuration is malformed or inconsistent."""


class DimensionError(SfdiError, ValueError):
    """Array shapes do not line up."""


class NotHurwitzError(SfdiError, ValueError):
    """A matrix that must be Hurwitz has an eigenvalue with nonnegative real part."""


class ContractionError(SfdiError, ValueError):
    """The contraction hypothesis l_theta * l_eta < 1 does not hold."""


class ArtifactError(SfdiError):
    """An artifact file is missing, unreadable or does not match its provenance."""


class VerificationError(SfdiError):
    """A numerical property suite failed."""


class DivergenceError(SfdiError):
    """A numerical procedure produced non-finite values.

    The partial report (training losses, generation report...) is attached so
    callers can still persist it.
    """

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


def get_debug() -> bool:
    return DEBUG


def set_debug(value) -> None:
    """Sets the global DEBUG variable for entire project"""
    global DEBUG
    if value in [True, "True", "true", 1, "1"]:
        DEBUG = True
    else:
        DEBUG = False


def debug_print(module_name: str = None, text: str = None, print_type: str = "None") -> None:
    if not module_name or not text:
        print("debug_print called without required parameters.")
        return
    time = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    level = "ERROR" if print_type == "ERROR" else "DEBUG"
    line = f"[{time}][{level}][{module_name}] {text}"
    if DEBUG:
        print(line)
    try:
        append_log_file(line)
    except OSError:
        # read-only installs still get console output in debug mode
        pass


def get_app_root() -> Path:
    """Return the folder that holds runtime data (repo root when unfrozen, exe folder when bundled)."""
    if getattr(sys, "frozen", False):
        return Path(sys.executable).resolve().parent
    return _PROJECT_ROOT


def path_from_app_root(*parts: str) -> Path:
    """Join paths relative to the runtime root."""
    return get_app_root().joinpath(*parts)


def append_log_file(text: str) -> None:
    """Appends a line to logs/log.txt."""
    log_folder = path_from_app_root("logs")
    log_folder.mkdir(exist_ok=True)
    log_file = log_folder / "log.txt"
    with log_file.open("a", encoding="utf-8") as f:
        f.write(text + "\n")


def clear_log_file() -> None:
    """Clears the log file."""
    log_folder = path_from_app_root("logs")
    log_folder.mkdir(exist_ok=True)
    log_file = log_folder / "log.txt"
    with log_file.open("w", encoding="utf-8") as log:
        log.write("Log started at " + datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S") + "\n")


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent child seed from a base seed and integer labels.

    Used wherever work is split per trajectory / per run so that results are
    the same whatever order the pieces are scheduled in.
    """
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def fingerprint_payload(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def fingerprint_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(path: Path, payload: Any) -> None:
    """Writes JSON with sorted keys and full float precision so reruns are byte-identical."""
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    Path(path).write_text(text + "\n", encoding="utf-8")
