"""On-disk cache for PLR curves and q tables.

One text file per kernel key.  The header carries the key fields, run
counts and a SHA-256 of the body; the body is a comma-separated table with
floats written via ``repr`` so a load reproduces the stored arrays bit for
bit.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import CacheIntegrityError, KernelMissingError
from .montecarlo import PlrCurve, QTable, Scenario, estimate_plr_curve, estimate_q_table
from .sic import DegreeLaw

FORMAT = "crdsa-kernel-v1"


def default_cache_dir() -> Path:
    return Path(os.environ.get("CRDSA_CACHE", Path.home() / ".cache" / "crdsa"))


def key_digest(key: tuple) -> str:
    return hashlib.sha256(json.dumps(list(key)).encode()).hexdigest()[:20]


def cache_path(cache_dir: Path | str, key: tuple) -> Path:
    kind, n_slots, degree, i_max = key[:4]
    tag = degree if ":" not in degree else "vr"
    return Path(cache_dir) / f"{kind}-ns{n_slots}-d{tag}-i{i_max}-{key_digest(key)}.csv"


def _body_plr(curve: PlrCurve) -> str:
    lines = ["g_in,plr,n_runs,std_err"]
    for g, p, r, e in zip(curve.g_in.tolist(), curve.plr.tolist(), curve.n_runs.tolist(), curve.std_err.tolist()):
        lines.append(f"{g!r},{p!r},{r},{e!r}")
    return "\n".join(lines) + "\n"


def _body_q(table: QTable) -> str:
    lines = ["n,n_runs,q(0|n)..q(n|n)"]
    for n in range(table.n_max + 1):
        col = ",".join(repr(v) for v in table.column(n).tolist())
        lines.append(f"{n},{int(table.n_runs[n])},{col}")
    return "\n".join(lines) + "\n"


def cache_store(cache_dir: Path | str, kernel: PlrCurve | QTable) -> Path:
    key = kernel.key()
    body = _body_plr(kernel) if isinstance(kernel, PlrCurve) else _body_q(kernel)
    header = {
        "format": FORMAT,
        "key": list(key),
        "sha256": hashlib.sha256(body.encode()).hexdigest(),
    }
    path = cache_path(cache_dir, key)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text("# " + json.dumps(header) + "\n" + body)
    tmp.replace(path)
    return path


def cache_load(cache_dir: Path | str, key: tuple) -> PlrCurve | QTable:
    """Load the kernel stored under ``key``.

    Raises :class:`KernelMissingError` when absent and
    :class:`CacheIntegrityError` when the file is damaged.
    """
    path = cache_path(cache_dir, key)
    if not path.exists():
        raise KernelMissingError(f"no cached kernel for key {key_digest(key)} in {cache_dir}")
    text = path.read_text()
    first, _, body = text.partition("\n")
    try:
        header = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise CacheIntegrityError(f"{path}: unreadable header") from exc
    if header.get("format") != FORMAT or tuple(_tuplify(header.get("key"))) != key:
        raise KernelMissingError(f"{path} holds a different kernel")
    if hashlib.sha256(body.encode()).hexdigest() != header.get("sha256"):
        raise CacheIntegrityError(f"{path}: checksum mismatch")
    rows = [line.split(",") for line in body.splitlines()[1:]]
    kind, n_slots, degree, i_max = key[:4]
    seed = key[-1]
    law = DegreeLaw.parse(degree)
    if kind == "plr":
        return PlrCurve(
            n_slots=n_slots,
            degree_law=law,
            i_max=i_max,
            seed=seed,
            g_in=[float(r[0]) for r in rows],
            plr=[float(r[1]) for r in rows],
            n_runs=[int(r[2]) for r in rows],
            std_err=[float(r[3]) for r in rows],
        )
    n_max = len(rows) - 1
    q = np.zeros((n_max + 1, n_max + 1))
    runs = []
    for row in rows:
        n = int(row[0])
        runs.append(int(row[1]))
        q[: n + 1, n] = [float(v) for v in row[2:]]
    return QTable(n_slots, law, i_max, seed, q, runs)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def cached_plr_curve(
    cache_dir: Path | str,
    scenario: Scenario,
    grid,
    n_runs,
    seed: int,
    compute: bool = True,
    workers: int = 1,
) -> tuple[PlrCurve, bool]:
    """Load the curve for this key or estimate and store it; returns ``(curve, cache_hit)``."""
    runs = [int(n_runs)] * len(grid) if np.isscalar(n_runs) else [int(r) for r in n_runs]
    key = (
        "plr",
        scenario.n_slots,
        scenario.degree_law.key(),
        scenario.i_max,
        tuple(float(g) for g in grid),
        tuple(runs),
        int(seed),
    )
    try:
        return cache_load(cache_dir, key), True
    except KernelMissingError:
        if not compute:
            raise
    curve = estimate_plr_curve(scenario, grid, runs, seed, workers)
    cache_store(cache_dir, curve)
    return curve, False


def cached_q_table(
    cache_dir: Path | str,
    scenario: Scenario,
    n_max: int,
    n_runs: int,
    seed: int,
    compute: bool = True,
    workers: int = 1,
) -> tuple[QTable, bool]:
    """Load or estimate a q table with ``n_runs`` runs per column."""
    runs = tuple([int(n_runs)] * (n_max + 1))
    key = ("q", scenario.n_slots, scenario.degree_law.key(), scenario.i_max, int(n_max), runs, int(seed))
    try:
        return cache_load(cache_dir, key), True
    except KernelMissingError:
        if not compute:
            raise
    table = estimate_q_table(scenario, n_max, list(runs), seed, workers)
    cache_store(cache_dir, table)
    return table, False
