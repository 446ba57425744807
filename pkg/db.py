"""SQLite artifact store for datasets, models and thresholds.

Every artifact is a standalone SQLite file opened through an asqlite pool. The
``meta`` table holds JSON-encoded scalars (format version, kind, dimensions,
provenance); numeric arrays are little-endian float64 BLOBs with explicit row and
column counts, so a save/load round trip is bit-exact. The synchronous helpers
at the bottom drive the async code with ``asyncio.run``.

Dataset column order in ``samples``: traj, k, t, x (n_x floats), z (n_z floats).
"""

from __future__ import annotations

import asyncio
import json
import sqlite3
from pathlib import Path
from typing import Any, Optional

import asqlite
import numpy as np

from fdi_engine import ThresholdParams, Thresholds
from kkl_observer import ObserverMatrices, TrainingDataset
from neural_transform import Mlp, ObserverModel, TrainConfig, TrainReport
from tools import ArtifactError, canonical_json, debug_print

FORMAT_VERSION = 1
ARRAY_DTYPE = "<f8"

KIND_DATASET = "dataset"
KIND_MODEL = "model"
KIND_THRESHOLDS = "thresholds"


# --- schema ------------------------------------------------------------------------------------

async def setup_artifact(db: asqlite.Pool, kind: str) -> None:
    """Create the common schema plus the tables specific to ``kind``."""
    debug_print("Database", f"Creating {kind} artifact schema.")
    async with db.acquire() as connection:
        await connection.execute(
            """
            CREATE TABLE IF NOT EXISTS meta(
                key TEXT PRIMARY KEY,
                value TEXT NOT NULL
            )
            """
        )
        await connection.execute(
            """
            CREATE TABLE IF NOT EXISTS arrays(
                name TEXT PRIMARY KEY,
                rows INTEGER NOT NULL,
                cols INTEGER NOT NULL,
                data BLOB NOT NULL
            )
            """
        )
        if kind == KIND_DATASET:
            await connection.execute(
                """
                CREATE TABLE IF NOT EXISTS samples(
                    traj INTEGER NOT NULL,
                    k INTEGER NOT NULL,
                    t REAL NOT NULL,
                    x BLOB NOT NULL,
                    z BLOB NOT NULL,
                    PRIMARY KEY (traj, k)
                )
                """
            )
            await connection.execute(
                """
                CREATE TABLE IF NOT EXISTS trajectories(
                    traj INTEGER PRIMARY KEY,
                    source_index INTEGER NOT NULL
                )
                """
            )
            await connection.execute(
                """
                CREATE TABLE IF NOT EXISTS discarded(
                    source_index INTEGER PRIMARY KEY,
                    reason TEXT NOT NULL
                )
                """
            )


def _to_blob(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=ARRAY_DTYPE).tobytes()


def _from_blob(blob: bytes, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(blob, dtype=ARRAY_DTYPE).reshape(shape).astype(np.float64)


async def write_meta(connection, meta: dict[str, Any]) -> None:
    await connection.executemany(
        "INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)",
        [(key, canonical_json(value)) for key, value in sorted(meta.items())],
    )


async def read_meta_async(connection) -> dict[str, Any]:
    cursor = await connection.execute("SELECT key, value FROM meta ORDER BY key")
    rows = await cursor.fetchall()
    return {row["key"]: json.loads(row["value"]) for row in rows}


async def write_arrays(connection, arrays: dict[str, np.ndarray]) -> None:
    payload = []
    for name, array in sorted(arrays.items()):
        array = np.asarray(array, dtype=np.float64)
        matrix = array.reshape(array.shape[0], -1) if array.ndim == 2 else array.reshape(1, -1)
        payload.append((name, int(matrix.shape[0]), int(matrix.shape[1]), _to_blob(matrix)))
    await connection.executemany("INSERT OR REPLACE INTO arrays (name, rows, cols, data) VALUES (?, ?, ?, ?)", payload)


async def read_arrays(connection) -> dict[str, np.ndarray]:
    """Arrays stored as one row come back 1-D; everything else as (rows, cols)."""
    cursor = await connection.execute("SELECT name, rows, cols, data FROM arrays ORDER BY name")
    rows = await cursor.fetchall()
    arrays = {}
    for row in rows:
        matrix = _from_blob(row["data"], (row["rows"], row["cols"]))
        arrays[row["name"]] = matrix[0] if row["rows"] == 1 and not row["name"].startswith("obs.") else matrix
    return arrays


# --- dataset -----------------------------------------------------------------------------------

async def _save_dataset(db: asqlite.Pool, dataset: TrainingDataset, meta: dict) -> None:
    async with db.acquire() as connection:
        await connection.execute("BEGIN")
        await write_meta(connection, meta)
        times = dataset.times
        for traj in range(dataset.n_trajectories):
            await connection.executemany(
                "INSERT INTO samples (traj, k, t, x, z) VALUES (?, ?, ?, ?, ?)",
                [
                    (traj, k, float(times[k]), _to_blob(dataset.states[traj, k]), _to_blob(dataset.latents[traj, k]))
                    for k in range(dataset.n_samples)
                ],
            )
        await connection.executemany(
            "INSERT INTO trajectories (traj, source_index) VALUES (?, ?)",
            [(traj, int(source)) for traj, source in enumerate(dataset.source_indices)],
        )
        await connection.executemany(
            "INSERT INTO discarded (source_index, reason) VALUES (?, ?)",
            [(int(entry["index"]), entry["reason"]) for entry in dataset.discarded],
        )
        await connection.execute("COMMIT")


async def _load_dataset(db: asqlite.Pool) -> TrainingDataset:
    async with db.acquire() as connection:
        meta = await read_meta_async(connection)
        _check_kind(meta, KIND_DATASET)
        n_traj, n_samples = meta["n_trajectories"], meta["n_samples"]
        n_x, n_z = meta["n_x"], meta["n_z"]
        cursor = await connection.execute("SELECT x, z FROM samples ORDER BY traj, k")
        rows = await cursor.fetchall()
        if len(rows) != n_traj * n_samples:
            raise ArtifactError(f"Dataset holds {len(rows)} samples, expected {n_traj * n_samples}.")
        states = _from_blob(b"".join(row["x"] for row in rows), (n_traj, n_samples, n_x))
        latents = _from_blob(b"".join(row["z"] for row in rows), (n_traj, n_samples, n_z))
        cursor = await connection.execute("SELECT source_index FROM trajectories ORDER BY traj")
        sources = np.array([row["source_index"] for row in await cursor.fetchall()], dtype=np.int64)
        cursor = await connection.execute("SELECT source_index, reason FROM discarded ORDER BY source_index")
        discarded = [{"index": row["source_index"], "reason": row["reason"]} for row in await cursor.fetchall()]
    return TrainingDataset(
        t0=meta["t0"],
        delta=meta["delta"],
        states=states,
        latents=latents,
        source_indices=sources,
        t_pre=meta["t_pre"],
        discarded=discarded,
    )


def dataset_meta(dataset: TrainingDataset, extra: Optional[dict] = None) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_DATASET,
        "n_trajectories": dataset.n_trajectories,
        "n_samples": dataset.n_samples,
        "n_x": dataset.states.shape[-1],
        "n_z": dataset.latents.shape[-1],
        "t0": dataset.t0,
        "delta": dataset.delta,
        "t_pre": dataset.t_pre,
        "columns": ["traj", "k", "t", "x", "z"],
    }
    meta.update(extra or {})
    return meta


# --- model -------------------------------------------------------------------------------------

def _net_arrays(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    arrays = {
        f"{prefix}.in_mean": net.in_mean,
        f"{prefix}.in_scale": net.in_scale,
        f"{prefix}.out_mean": net.out_mean,
        f"{prefix}.out_scale": net.out_scale,
    }
    for l, (W, b) in enumerate(zip(net.weights, net.biases), start=1):
        arrays[f"{prefix}.W{l:02d}"] = W
        arrays[f"{prefix}.b{l:02d}"] = b
    return arrays


def _net_from_arrays(prefix: str, arrays: dict[str, np.ndarray], n_layers: int, activation: str) -> Mlp:
    try:
        weights = [np.atleast_2d(arrays[f"{prefix}.W{l:02d}"]) for l in range(1, n_layers + 1)]
        biases = [np.atleast_1d(arrays[f"{prefix}.b{l:02d}"]) for l in range(1, n_layers + 1)]
        return Mlp(
            weights=weights,
            biases=biases,
            in_mean=np.atleast_1d(arrays[f"{prefix}.in_mean"]),
            in_scale=np.atleast_1d(arrays[f"{prefix}.in_scale"]),
            out_mean=np.atleast_1d(arrays[f"{prefix}.out_mean"]),
            out_scale=np.atleast_1d(arrays[f"{prefix}.out_scale"]),
            activation=activation,
        )
    except KeyError as missing:
        raise ArtifactError(f"Model file is missing array {missing}") from None


def model_meta(model: ObserverModel, extra: Optional[dict] = None) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_MODEL,
        "activation": model.decoder.activation,
        "decoder_sizes": model.decoder.sizes,
        "encoder_sizes": model.encoder.sizes if model.encoder is not None else None,
        "observer": model.obs.describe(),
        "train_config": model.train_config.to_dict(),
        "train_config_fingerprint": model.train_config.fingerprint(),
        "train_report": model.report.to_dict(),
        "plant": model.plant_description,
        "weight_layout": "W[l] is (out, in) row-major; layer output = input @ W.T + b",
    }
    meta.update(extra or {})
    return meta


async def _save_model(db: asqlite.Pool, model: ObserverModel, meta: dict) -> None:
    arrays = _net_arrays("decoder", model.decoder)
    if model.encoder is not None:
        arrays.update(_net_arrays("encoder", model.encoder))
    arrays["obs.A"] = model.obs.A
    arrays["obs.B"] = model.obs.B
    async with db.acquire() as connection:
        await connection.execute("BEGIN")
        await write_meta(connection, meta)
        await write_arrays(connection, arrays)
        await connection.execute("COMMIT")


async def _load_model(db: asqlite.Pool) -> ObserverModel:
    async with db.acquire() as connection:
        meta = await read_meta_async(connection)
        _check_kind(meta, KIND_MODEL)
        arrays = await read_arrays(connection)
    info = meta["observer"]
    obs = ObserverMatrices(
        A=arrays["obs.A"],
        B=arrays["obs.B"],
        n_x=info["n_x"],
        n_y=info["n_y"],
        n_z=info["n_z"],
        c=info["c"],
        kappa_V=info["kappa_V"],
        eig_range=tuple(info["eig_range"]) if info["eig_range"] is not None else None,
        controllable=info["controllable"],
    )
    decoder = _net_from_arrays("decoder", arrays, len(meta["decoder_sizes"]) - 1, meta["activation"])
    encoder = None
    if meta["encoder_sizes"] is not None:
        encoder = _net_from_arrays("encoder", arrays, len(meta["encoder_sizes"]) - 1, meta["activation"])
    return ObserverModel(
        decoder=decoder,
        encoder=encoder,
        obs=obs,
        train_config=TrainConfig(**meta["train_config"]),
        report=TrainReport.from_dict(meta["train_report"]),
        plant_description=meta["plant"],
    )


# --- thresholds --------------------------------------------------------------------------------

async def _save_thresholds(db: asqlite.Pool, thresholds: Thresholds, meta: dict) -> None:
    async with db.acquire() as connection:
        await connection.execute("BEGIN")
        await write_meta(connection, meta)
        await write_arrays(connection, {"tau": thresholds.tau})
        await connection.execute("COMMIT")


async def _load_thresholds(db: asqlite.Pool) -> Thresholds:
    async with db.acquire() as connection:
        meta = await read_meta_async(connection)
        _check_kind(meta, KIND_THRESHOLDS)
        arrays = await read_arrays(connection)
    return Thresholds(
        tau=np.atleast_1d(arrays["tau"]),
        r_delta=meta["r_delta"],
        params=ThresholdParams.from_dict(meta["params"]),
        t_c=meta["t_c"],
        r_delta_norm=meta["r_delta_norm"],
        provenance=meta["provenance"],
    )


def thresholds_meta(thresholds: Thresholds) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": KIND_THRESHOLDS,
        "r_delta": thresholds.r_delta,
        "r_delta_norm": thresholds.r_delta_norm,
        "t_c": thresholds.t_c,
        "params": thresholds.params.to_dict(),
        "provenance": thresholds.provenance,
    }


# --- sync entry points -------------------------------------------------------------------------

def _check_kind(meta: dict, kind: str) -> None:
    if meta.get("kind") != kind:
        raise ArtifactError(f"Expected a {kind} artifact, found kind={meta.get('kind')!r}.")
    if meta.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"Unsupported {kind} format version {meta.get('format_version')!r}.")


async def _with_pool(path: Path, action, *args):
    pool = await asqlite.create_pool(str(path), size=1)
    try:
        return await action(pool, *args)
    finally:
        await pool.close()


def _write(path: Path, kind: str, action, *args) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # rewrite from scratch so reruns produce identical files
    for stale in (path, path.with_name(path.name + "-wal"), path.with_name(path.name + "-shm")):
        stale.unlink(missing_ok=True)

    async def _run(pool: asqlite.Pool) -> None:
        await setup_artifact(pool, kind)
        await action(pool, *args)

    try:
        asyncio.run(_with_pool(path, _run))
    except sqlite3.Error as exc:
        raise ArtifactError(f"Could not write {kind} artifact {path}: {exc}") from exc
    debug_print("Database", f"Wrote {kind} artifact to {path}")


def _read(path: Path, kind: str, action):
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"{kind.capitalize()} artifact not found: {path}")
    try:
        return asyncio.run(_with_pool(path, action))
    except sqlite3.Error as exc:
        raise ArtifactError(f"Could not read {kind} artifact {path}: {exc}") from exc


def save_dataset(path: Path, dataset: TrainingDataset, extra_meta: Optional[dict] = None) -> None:
    _write(path, KIND_DATASET, _save_dataset, dataset, dataset_meta(dataset, extra_meta))


def load_dataset(path: Path) -> TrainingDataset:
    return _read(path, KIND_DATASET, _load_dataset)


def save_model(path: Path, model: ObserverModel, extra_meta: Optional[dict] = None) -> None:
    _write(path, KIND_MODEL, _save_model, model, model_meta(model, extra_meta))


def load_model(path: Path) -> ObserverModel:
    return _read(path, KIND_MODEL, _load_model)


def save_thresholds(path: Path, thresholds: Thresholds) -> None:
    _write(path, KIND_THRESHOLDS, _save_thresholds, thresholds, thresholds_meta(thresholds))


def load_thresholds(path: Path) -> Thresholds:
    return _read(path, KIND_THRESHOLDS, _load_thresholds)


def read_meta(path: Path) -> dict[str, Any]:
    async def _action(pool: asqlite.Pool) -> dict[str, Any]:
        async with pool.acquire() as connection:
            return await read_meta_async(connection)

    return _read(path, "any", _action)
