"""Steady states and localization-length fits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from skinlab.core.model import (
    Basis,
    DensityMatrix,
    ModelSpec,
    density,
    heff_localization,
    maximally_mixed,
    plane_wave,
)
from skinlab.core.superop import LiouvillianSpectrum, MatrixLike, _matrix
from skinlab.errors import FitError, ModelError, SteadyStateError

logger = logging.getLogger(__name__)

DIAG_FLOOR = 1e-13
MIN_FIT_SITES = 5
RESIDUAL_LIMIT = 0.5
PSD_FLOOR = -1e-8


def _dark_projector(L: int) -> DensityMatrix:
    # k = -pi/2 is j = 3L/4
    v = plane_wave(L, 3 * L // 4)
    return density(np.outer(v, v.conj()), Basis("site", L), check=False)


def analytic_steady_feedback_pbc(spec: ModelSpec) -> DensityMatrix:
    if not spec.feedback or spec.bc != "pbc":
        raise ModelError("analytic steady state needs feedback with PBC", op="analytic_steady_feedback_pbc")
    L = spec.L
    if L % 4 == 0:
        return _dark_projector(L)
    rho = np.zeros((L, L), dtype=complex)
    weights = []
    for j in range(L):
        s = math.sin(2.0 * math.pi * j / L)
        weights.append((1.0 - s) / (1.0 + s))
    total = math.fsum(weights)
    for j, w in enumerate(weights):
        v = plane_wave(L, j)
        rho += (w / total) * np.outer(v, v.conj())
    return density(rho, Basis("site", L))


def analytic_steady_nofeedback(spec: ModelSpec) -> list[DensityMatrix]:
    if spec.feedback:
        raise ModelError("analytic steady manifold is for the measurement-only model", op="analytic_steady_nofeedback")
    states = [maximally_mixed(spec.L)]
    if spec.bc == "pbc" and spec.L % 4 == 0:
        states.append(_dark_projector(spec.L))
    return states


def _hermitian_span(modes: list[np.ndarray]) -> list[np.ndarray]:
    # real span of the Hermitian and anti-Hermitian parts, rank-truncated
    d = modes[0].shape[0]
    parts = []
    for r in modes:
        parts.append(0.5 * (r + r.conj().T))
        parts.append(0.5j * (r - r.conj().T))
    real = np.array([np.concatenate([p.real.ravel(), p.imag.ravel()]) for p in parts])
    u, s, vt = np.linalg.svd(real, full_matrices=False)
    rank = int(np.sum(s > 1e-8 * s[0]))
    out = []
    for row in vt[:rank]:
        m = row[: d * d].reshape(d, d) + 1j * row[d * d :].reshape(d, d)
        out.append(0.5 * (m + m.conj().T))
    return out


def _extremal(base: np.ndarray, direction: np.ndarray) -> np.ndarray:
    # endpoints of {base + s X} inside the PSD cone; keep the purer one
    try:
        mu = scipy.linalg.eigh(-direction, base, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise SteadyStateError("steady base state is not positive definite", op="numeric_steady") from exc
    hi = 1.0 / mu.max() if mu.max() > 0 else None
    lo = 1.0 / mu.min() if mu.min() < 0 else None
    cands = [base + s * direction for s in (hi, lo) if s is not None]
    if not cands:
        raise SteadyStateError("unbounded steady direction", op="numeric_steady")
    return max(cands, key=lambda m: float(np.real(np.trace(m @ m))))


def numeric_steady(spectrum: LiouvillianSpectrum) -> list[DensityMatrix]:
    z = spectrum.zero_mode_count
    if z == 0:
        raise SteadyStateError("spectrum has no zero mode", op="numeric_steady")
    d = spectrum.hilbert_dim
    basis = spectrum.basis or Basis("site", d)
    if basis.kind == "vectorized":
        basis = Basis("site", basis.L)
    modes = [spectrum.right(i) for i in range(z)]

    if z == 1:
        r = modes[0]
        tr = np.trace(r)
        if abs(tr) < 1e-12 * max(np.max(np.abs(r)), 1e-300):
            raise SteadyStateError("zero mode is traceless", op="numeric_steady")
        m = r / tr
        states = [0.5 * (m + m.conj().T)]
    else:
        span = _hermitian_span(modes)
        traces = np.array([np.trace(h).real for h in span])
        if np.max(np.abs(traces)) < 1e-12:
            raise SteadyStateError("steady manifold carries no trace", op="numeric_steady")
        base = sum(t * h for t, h in zip(traces, span)) / float(np.sum(traces**2))
        traceless = [h - np.trace(h).real * base for h in span]
        flat = np.array([x.ravel() for x in traceless])
        _, s, vt = np.linalg.svd(flat, full_matrices=False)
        keep = [vt[i].reshape(d, d) for i in range(len(s)) if s[i] > 1e-8 * max(s[0], 1e-300)]
        keep = [0.5 * (x + x.conj().T) for x in keep]
        states = [base] + [_extremal(base, x) for x in keep]
        if len(states) != z:
            logger.warning("steady manifold rank %d differs from zero-mode count %d", len(states), z)

    out = []
    for m in states:
        m = m / np.trace(m).real
        lo = float(np.linalg.eigvalsh(m)[0])
        if lo < PSD_FLOOR:
            raise SteadyStateError(f"steady state has eigenvalue {lo:.3e}", op="numeric_steady", min_eig=lo)
        out.append(DensityMatrix(entries=np.array(m, dtype=complex), basis=basis))
    return out


def trace_distance(a: MatrixLike, b: MatrixLike) -> float:
    diff = _matrix(a) - _matrix(b)
    return float(np.sum(np.linalg.svd(diff, compute_uv=False)))


def diagonal_profile(rho: MatrixLike) -> np.ndarray:
    return np.real(np.diag(_matrix(rho))).copy()


@dataclass(frozen=True)
class ManifoldProjection:
    coefficients: np.ndarray
    residual: float


def project_onto_manifold(rho: MatrixLike, states: Sequence[MatrixLike]) -> ManifoldProjection:
    target = _matrix(rho).ravel()
    cols = np.column_stack([_matrix(s).ravel() for s in states])
    coeffs, *_ = np.linalg.lstsq(cols, target, rcond=None)
    rest = (target - cols @ coeffs).reshape(_matrix(rho).shape)
    return ManifoldProjection(coefficients=coeffs, residual=float(np.sum(np.linalg.svd(rest, compute_uv=False))))


@dataclass(frozen=True)
class LocalizationFit:
    loc_length: float
    fit_range: tuple[int, int]
    residual: float
    theory_length: Optional[float]
    rejected: bool = False
    singular_theory: bool = False


def default_fit_window(diag: np.ndarray) -> tuple[int, int]:
    # 1-based inclusive; skip two boundary sites, stop at the double-precision floor
    start = 3
    stop = start - 1
    for site in range(start, diag.shape[0] + 1):
        if diag[site - 1] < DIAG_FLOOR:
            break
        stop = site
    return start, stop


def fit_localization_length(
    rho: MatrixLike | np.ndarray,
    window: Optional[tuple[int, int]] = None,
    spec: Optional[ModelSpec] = None,
) -> LocalizationFit:
    arr = np.asarray(_matrix(rho))
    diag = np.real(np.diag(arr)) if arr.ndim == 2 else np.real(arr)
    first, last = window or default_fit_window(diag)
    if last - first + 1 < MIN_FIT_SITES:
        raise FitError(
            f"fit window {first}..{last} has fewer than {MIN_FIT_SITES} sites",
            op="fit_localization_length",
        )
    sites = np.arange(first, last + 1, dtype=float)
    values = diag[first - 1 : last]
    if np.any(values <= 0):
        raise FitError("diagonal must be positive over the fit window", op="fit_localization_length")
    logs = np.log(values)
    slope, intercept = np.polyfit(sites, logs, 1)
    if slope >= 0:
        raise FitError(f"profile does not decay (slope {slope:.3e})", op="fit_localization_length")
    residual = float(np.sqrt(np.mean((logs - (slope * sites + intercept)) ** 2)))
    theory = None
    singular = False
    if spec is not None:
        hn = heff_localization(spec)
        theory = hn.theory_length
        singular = hn.singular
    rejected = residual > RESIDUAL_LIMIT
    if rejected:
        logger.warning("localization fit rejected: residual %.3f over %d..%d", residual, first, last)
    return LocalizationFit(
        loc_length=float(-1.0 / slope),
        fit_range=(first, last),
        residual=residual,
        theory_length=theory,
        rejected=rejected,
        singular_theory=singular,
    )
