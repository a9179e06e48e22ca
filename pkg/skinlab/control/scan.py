from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from skinlab.control.pool import run_tasks_sync
from skinlab.core.dynamics import RelaxationRow, local_slopes, loglog_slope, relaxation_row
from skinlab.core.model import ModelSpec
from skinlab.core.superop import full_spectrum, vectorize_liouvillian
from skinlab.errors import ModelError

logger = logging.getLogger(__name__)

__all__ = [
    "GapRow",
    "parse_float_list",
    "parse_int_list",
    "scan_gap",
    "scan_relaxation",
    "loglog_slope",
    "local_slopes",
    "all_failed",
]


def _split(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def parse_int_list(text: str) -> list[int]:
    """'8,12' or 'start:stop:step' (stop inclusive)."""
    out: list[int] = []
    for part in _split(text):
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            if len(bits) not in (2, 3) or (len(bits) == 3 and bits[2] <= 0):
                raise ModelError(f"bad range {part!r}", op="parse_int_list")
            step = bits[2] if len(bits) == 3 else 1
            out.extend(range(bits[0], bits[1] + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise ModelError(f"empty list {text!r}", op="parse_int_list")
    return out


def parse_float_list(text: str) -> list[float]:
    out: list[float] = []
    for part in _split(text):
        if ":" in part:
            bits = [float(b) for b in part.split(":")]
            if len(bits) != 3 or bits[2] <= 0:
                raise ModelError(f"bad range {part!r}; use start:stop:step", op="parse_float_list")
            n = int(np.floor((bits[1] - bits[0]) / bits[2] + 1e-9)) + 1
            out.extend(float(round(bits[0] + i * bits[2], 12)) for i in range(n))
        else:
            out.append(float(part))
    if not out:
        raise ModelError(f"empty list {text!r}", op="parse_float_list")
    return out


def _grid(template: ModelSpec, Ls: Sequence[int], gammas: Sequence[float]) -> list[ModelSpec]:
    return [template.model_copy(update={"L": int(L), "gamma": float(g)}) for L in Ls for g in gammas]


@dataclass
class GapRow:
    L: int
    gamma: float
    gap: Optional[float] = None
    zero_mode_count: Optional[int] = None
    error: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _gap_row(spec: ModelSpec) -> GapRow:
    s = full_spectrum(vectorize_liouvillian(spec))
    return GapRow(L=spec.L, gamma=spec.gamma, gap=s.gap, zero_mode_count=s.zero_mode_count)


def scan_gap(template: ModelSpec, Ls: Sequence[int], gammas: Sequence[float], jobs: Optional[int] = None) -> list[GapRow]:
    specs = _grid(template, Ls, gammas)
    outcomes = run_tasks_sync(_gap_row, specs, jobs=jobs, op="scan_gap")
    return [o.value if o.ok else GapRow(L=s.L, gamma=s.gamma, error=o.error) for s, o in zip(specs, outcomes)]


def scan_relaxation(
    template: ModelSpec,
    Ls: Sequence[int],
    gammas: Sequence[float],
    init: str = "lastsite",
    threshold: float = 0.01,
    jobs: Optional[int] = None,
) -> list[RelaxationRow]:
    specs = _grid(template, Ls, gammas)
    outcomes = run_tasks_sync(lambda s: relaxation_row(s, init, threshold), specs, jobs=jobs, op="scan_relaxation")
    rows = [o.value if o.ok else RelaxationRow(L=s.L, gamma=s.gamma, error=o.error) for s, o in zip(specs, outcomes)]
    failed = sum(1 for r in rows if not r.ok)
    if failed:
        logger.warning("%d of %d scan rows failed", failed, len(rows))
    return rows


def all_failed(rows: Sequence) -> bool:
    return bool(rows) and all(not r.ok for r in rows)
