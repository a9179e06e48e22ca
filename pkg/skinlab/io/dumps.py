"""Output files: JSON dumps validated by pydantic schemas, CSV tables, run manifests.

CSV floats are written with 17 significant digits. JSON floats use Python's
shortest round-trip repr, which reads back to the same double.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from skinlab import __version__
from skinlab.errors import ModelError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ErrorResponse(BaseModel):
    code: str
    message: str
    op: str


class SpectrumDump(BaseModel):
    L: int
    gamma: float
    t: float
    bc: str
    model: str
    precision: str
    eigenvalues: list[list[float]]
    gap: Optional[float] = None
    zero_mode_count: Optional[int] = None
    N: Optional[int] = None
    order: Optional[int] = None
    max_distance: Optional[float] = None

    def complex_eigenvalues(self) -> np.ndarray:
        arr = np.asarray(self.eigenvalues, dtype=float).reshape(-1, 2)
        return arr[:, 0] + 1j * arr[:, 1]


class CutoffDump(BaseModel):
    t_start: float
    plateau_level: float


class RelaxationDump(BaseModel):
    L: int
    gamma: float
    bc: str
    model: str
    init: str
    tau: float
    threshold: float
    gap: Optional[float] = None
    tau_times_gap: Optional[float] = None
    classification: Optional[str] = None
    normalized_tau_gap: Optional[float] = None
    loc_length: Optional[float] = None
    predicted_tau: Optional[float] = None
    fit_ratio: Optional[float] = None
    cutoff: Optional[CutoffDump] = None
    asymptotic_rate: Optional[float] = None
    N: Optional[int] = None


class FitDump(BaseModel):
    loc_length: float
    fit_range: tuple[int, int]
    residual: float
    theory_length: Optional[float] = None
    rejected: bool = False


class SteadyDump(BaseModel):
    L: int
    gamma: float
    bc: str
    model: str
    source: str
    states: list[str]
    fit: Optional[FitDump] = None
    trace_distance: Optional[float] = None


class Manifest(BaseModel):
    command: str
    version: str = __version__
    config: dict[str, Any]
    outputs: list[str] = Field(default_factory=list)
    started_at: float
    finished_at: float
    wall_time_s: float


def fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _parse(cell: str) -> Any:
    if cell == "":
        return None
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def _target(path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_json(path: PathLike, model: BaseModel) -> Path:
    p = _target(path)
    payload = json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=False, allow_nan=True)
    p.write_text(payload + "\n", encoding="utf-8")
    logger.debug("wrote %s", p)
    return p


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    p = _target(path)
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ModelError(f"row has {len(row)} cells, header has {len(header)}", op="write_table")
            w.writerow([fmt(c) for c in row])
    logger.debug("wrote %s", p)
    return p


def read_table(path: PathLike) -> tuple[list[str], list[list[Any]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [[_parse(c) for c in row] for row in r]


def _columns(path: PathLike) -> dict[str, np.ndarray]:
    header, rows = read_table(path)
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


# spectra


def spectrum_dump(
    spec,
    eigenvalues: Sequence[complex],
    precision: str = "double",
    gap: Optional[float] = None,
    zero_mode_count: Optional[int] = None,
    N: Optional[int] = None,
    order: Optional[int] = None,
) -> SpectrumDump:
    w = np.asarray(eigenvalues, dtype=complex)
    return SpectrumDump(
        L=spec.L,
        gamma=spec.gamma,
        t=spec.t,
        bc=spec.bc,
        model=spec.label,
        precision=precision,
        eigenvalues=[[float(z.real), float(z.imag)] for z in w],
        gap=None if gap is None or math.isnan(gap) else float(gap),
        zero_mode_count=zero_mode_count,
        N=N,
        order=order,
    )


def write_spectrum(path: PathLike, dump: SpectrumDump) -> Path:
    return write_json(path, dump)


def read_spectrum(path: PathLike) -> SpectrumDump:
    return SpectrumDump.model_validate_json(Path(path).read_text(encoding="utf-8"))


def write_mode_magnitudes(path: PathLike, maps: dict[int, np.ndarray]) -> Path:
    rows = []
    for mode in sorted(maps):
        m = np.asarray(maps[mode])
        for (i, j), v in np.ndenumerate(m):
            rows.append((mode, i + 1, j + 1, float(v)))
    return write_table(path, ("mode", "row", "col", "value"), rows)


def read_mode_magnitudes(path: PathLike) -> dict[int, np.ndarray]:
    _, rows = read_table(path)
    out: dict[int, dict[tuple[int, int], float]] = {}
    for mode, i, j, v in rows:
        out.setdefault(int(mode), {})[(int(i), int(j))] = float(v)
    maps = {}
    for mode, cells in out.items():
        n = max(max(i for i, _ in cells), max(j for _, j in cells))
        m = np.zeros((n, n))
        for (i, j), v in cells.items():
            m[i - 1, j - 1] = v
        maps[mode] = m
    return maps


# density matrices and profiles


def write_matrix(path: PathLike, rho: np.ndarray) -> Path:
    m = np.asarray(rho, dtype=complex)
    rows = [(i + 1, j + 1, float(v.real), float(v.imag)) for (i, j), v in np.ndenumerate(m)]
    return write_table(path, ("row", "col", "re", "im"), rows)


def read_matrix(path: PathLike) -> np.ndarray:
    cols = _columns(path)
    if cols["row"].size == 0:
        raise ModelError(f"{path} holds no matrix entries", op="read_matrix")
    n = int(max(cols["row"].max(), cols["col"].max()))
    m = np.zeros((n, n), dtype=complex)
    m[cols["row"].astype(int) - 1, cols["col"].astype(int) - 1] = cols["re"] + 1j * cols["im"]
    return m


def write_profile(path: PathLike, values: Sequence[float]) -> Path:
    return write_table(path, ("site", "value"), [(i + 1, float(v)) for i, v in enumerate(values)])


def read_profile(path: PathLike) -> np.ndarray:
    return _columns(path)["value"]


def write_steady(path: PathLike, dump: SteadyDump) -> Path:
    return write_json(path, dump)


def read_steady(path: PathLike) -> SteadyDump:
    return SteadyDump.model_validate_json(Path(path).read_text(encoding="utf-8"))


# dynamics


def write_evolution(path: PathLike, result, all_sites: bool = False) -> Path:
    obs = np.asarray(result.observables)
    L = obs.shape[1]
    sites = list(range(1, L + 1)) if all_sites else [1, L]
    header = ["t", "d"] + [f"n_{s}" for s in sites]
    rows = (
        [float(t), float(d)] + [float(obs[k, s - 1]) for s in sites]
        for k, (t, d) in enumerate(zip(result.times, result.distances))
    )
    return write_table(path, header, rows)


def read_evolution(path: PathLike) -> dict[str, np.ndarray]:
    return _columns(path)


def write_report(path: PathLike, dump: RelaxationDump) -> Path:
    return write_json(path, dump)


def read_report(path: PathLike) -> RelaxationDump:
    return RelaxationDump.model_validate_json(Path(path).read_text(encoding="utf-8"))


SCAN_HEADER = ("L", "gamma", "tau", "gap", "tau_times_gap", "classification", "error")
GAP_SCAN_HEADER = ("L", "gamma", "gap", "zero_mode_count", "error")


def _error_code(err: Optional[dict]) -> Optional[str]:
    return None if err is None else str(err.get("code", "error"))


def write_scan(path: PathLike, rows: Sequence) -> Path:
    return write_table(
        path,
        SCAN_HEADER,
        [(r.L, r.gamma, r.tau, r.gap, r.tau_times_gap, r.classification, _error_code(r.error)) for r in rows],
    )


def write_gap_scan(path: PathLike, rows: Sequence) -> Path:
    return write_table(
        path,
        GAP_SCAN_HEADER,
        [(r.L, r.gamma, r.gap, r.zero_mode_count, _error_code(r.error)) for r in rows],
    )


def read_scan(path: PathLike) -> list[dict[str, Any]]:
    header, rows = read_table(path)
    return [dict(zip(header, row)) for row in rows]


# trajectories


def write_trajectories(path: PathLike, ensemble, eta: Optional[np.ndarray] = None) -> Path:
    L = ensemble.mean.shape[1]
    header = ["t"] + [f"n_{s}" for s in range(1, L + 1)] + ["eta"] + [f"se_{s}" for s in range(1, L + 1)]
    if eta is None:
        from skinlab.manybody.trajectories import imbalance

        eta = imbalance(ensemble).eta
    rows = (
        [float(t)] + [float(x) for x in ensemble.mean[k]] + [float(eta[k])] + [float(x) for x in ensemble.stderr[k]]
        for k, t in enumerate(ensemble.times)
    )
    return write_table(path, header, rows)


def read_trajectories(path: PathLike) -> dict[str, np.ndarray]:
    cols = _columns(path)
    L = sum(1 for name in cols if name.startswith("n_"))
    return {
        "t": cols["t"],
        "mean": np.column_stack([cols[f"n_{s}"] for s in range(1, L + 1)]),
        "eta": cols["eta"],
        "stderr": np.column_stack([cols[f"se_{s}"] for s in range(1, L + 1)]),
    }


# manifests


def manifest_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(
    path: PathLike,
    command: str,
    config: dict[str, Any],
    started_at: float,
    finished_at: float,
    outputs: Sequence[PathLike] = (),
) -> Path:
    m = Manifest(
        command=command,
        config=config,
        outputs=[str(o) for o in outputs],
        started_at=started_at,
        finished_at=finished_at,
        wall_time_s=max(0.0, finished_at - started_at),
    )
    return write_json(manifest_path(path), m)


def read_manifest(path: PathLike) -> Manifest:
    p = Path(path)
    if not p.name.endswith(".manifest.json"):
        p = manifest_path(p)
    return Manifest.model_validate_json(p.read_text(encoding="utf-8"))
