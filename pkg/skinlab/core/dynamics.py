"""Density-matrix evolution, trace-distance curves and relaxation analysis."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from skinlab import settings
from skinlab.core.model import DensityMatrix, ModelSpec, maximally_mixed, site_state
from skinlab.core.steady import analytic_steady_nofeedback, fit_localization_length, numeric_steady, trace_distance
from skinlab.core.superop import (
    LiouvillianSpectrum,
    MatrixLike,
    _matrix,
    expansion_coefficients,
    full_spectrum,
    liouvillian_sparse,
    steady_component,
    vectorize_liouvillian,
)
from skinlab.errors import DimensionCapError, FitError, IntegratorError, NotRelaxedError, SkinlabError

logger = logging.getLogger(__name__)

Method = Literal["spectral", "integrator", "auto"]

PLATEAU_BAND = 0.05
PLATEAU_MIN_DURATION = 10.0
DISTANCE_FLOOR = 1e-8


@dataclass
class EvolutionResult:
    times: np.ndarray
    distances: np.ndarray
    observables: np.ndarray
    method: str
    reference: np.ndarray
    traces: np.ndarray
    ill_conditioned: bool = False
    states: Optional[np.ndarray] = None

    def site_density(self, site: int) -> np.ndarray:
        """<n_site(t)> with ``site`` 1-based."""
        return self.observables[:, site - 1]


@dataclass(frozen=True)
class Cutoff:
    t_start: float
    plateau_level: float


@dataclass(frozen=True)
class RelaxationReport:
    tau: float
    threshold: float
    cutoff: Optional[Cutoff]
    asymptotic_rate: Optional[float]
    initial_distance: Optional[float] = None

    @property
    def has_cutoff(self) -> bool:
        return self.cutoff is not None

    @property
    def e_folds(self) -> float:
        """``ln(d(0)/threshold)``: e-folds a single mode needs to cross the threshold."""
        d0 = self.initial_distance
        if d0 is None or not d0 > self.threshold:
            return 1.0
        return math.log(d0 / self.threshold)


def initial_state(spec: ModelSpec, name: str = "lastsite") -> DensityMatrix:
    if name == "lastsite":
        return site_state(spec.L, spec.L)
    if name == "firstsite":
        return site_state(spec.L, 1)
    if name == "uniform":
        return maximally_mixed(spec.L)
    raise SkinlabError(f"unknown initial state {name!r}", op="initial_state")


def default_time_grid(t_max: float, n: int = 2000, early_fraction: float = 0.25) -> np.ndarray:
    # geometric up to 5% of t_max, uniform afterwards
    if t_max <= 0:
        raise SkinlabError("t_max must be positive", op="default_time_grid")
    n_geo = max(2, int(n * early_fraction))
    t_switch = 0.05 * t_max
    geo = np.geomspace(1e-4 * t_max, t_switch, n_geo, endpoint=False)
    lin = np.linspace(t_switch, t_max, n - n_geo)
    return np.concatenate([[0.0], geo, lin])


def default_t_max(spec: ModelSpec, gap: Optional[float] = None) -> float:
    if gap is None or not gap > 0:
        gap = spec.gamma * math.pi**2 / spec.L**2 if spec.gamma > 0 else 1.0 / spec.L
    return max(50.0 / gap, 10.0 * spec.L)


def conserved_manifold(spec: ModelSpec) -> Optional[tuple[list[np.ndarray], list[np.ndarray]]]:
    """Steady states and their conserved observables when the steady manifold is not unique."""
    if spec.feedback or spec.bc != "pbc" or spec.L % 4 != 0:
        return None
    states = [np.asarray(s.entries) for s in analytic_steady_nofeedback(spec)]
    # identity and the dark projector are both left zero modes
    observables = [np.eye(spec.L, dtype=complex), states[1]]
    return states, observables


def attractor(
    rho0: np.ndarray,
    generator: Union[np.ndarray, sp.spmatrix],
    manifold: Optional[tuple[list[np.ndarray], list[np.ndarray]]] = None,
) -> np.ndarray:
    d = rho0.shape[0]
    if manifold is not None:
        states, observables = manifold
        m = np.array([[np.trace(q.conj().T @ s) for s in states] for q in observables])
        rhs = np.array([np.trace(q.conj().T @ rho0) for q in observables])
        alpha = np.linalg.solve(m, rhs)
        return sum(a * s for a, s in zip(alpha, states))
    a = sp.lil_matrix(generator)
    # vec(I)^T A = 0, so the (0, 0) population equation is redundant
    a[0, :] = 0.0
    a[0, [i * d + i for i in range(d)]] = 1.0
    b = np.zeros(d * d, dtype=complex)
    b[0] = 1.0
    sol = spla.spsolve(sp.csc_matrix(a), b)
    rho = sol.reshape(d, d)
    return 0.5 * (rho + rho.conj().T)


def _spectral_states(spectrum: LiouvillianSpectrum, rho0: np.ndarray, times: np.ndarray, chunk: int = 256):
    coeffs = expansion_coefficients(spectrum, rho0)
    c = np.concatenate([coeffs.steady_values, coeffs.values])
    lam = spectrum.eigenvalues
    d = spectrum.hilbert_dim
    out = np.empty((times.shape[0], d, d), dtype=complex)
    for s in range(0, times.shape[0], chunk):
        tt = times[s : s + chunk]
        block = spectrum.right_modes @ (c[:, None] * np.exp(lam[:, None] * tt[None, :]))
        out[s : s + chunk] = block.T.reshape(-1, d, d)
    ref = steady_component(spectrum, coeffs)
    return out, 0.5 * (ref + ref.conj().T), coeffs.ill_conditioned


def _integrated_states(generator, rho0: np.ndarray, times: np.ndarray) -> np.ndarray:
    a = sp.csr_matrix(generator)
    d = rho0.shape[0]

    def rhs(_t, y):
        return a @ y

    sol = solve_ivp(
        rhs,
        (0.0, float(times[-1])),
        rho0.reshape(-1).astype(complex),
        method="DOP853",
        t_eval=times,
        rtol=settings.INTEGRATOR_RTOL,
        atol=settings.INTEGRATOR_ATOL,
    )
    if not sol.success:
        raise IntegratorError(f"integration failed: {sol.message}", op="evolve", t_reached=float(sol.t[-1]) if sol.t.size else 0.0)
    return sol.y.T.reshape(-1, d, d)


def evolve_generator(
    generator,
    rho0: MatrixLike,
    times: np.ndarray,
    method: Method = "auto",
    spectrum: Optional[LiouvillianSpectrum] = None,
    manifold=None,
    keep_states: bool = False,
) -> EvolutionResult:
    r0 = np.array(_matrix(rho0), dtype=complex)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise SkinlabError("times must be a non-empty increasing grid starting at t >= 0", op="evolve")
    n = r0.shape[0] ** 2

    if method == "auto":
        if spectrum is None and n <= settings.DENSE_DIM_CAP:
            dense = generator.toarray() if sp.issparse(generator) else generator
            spectrum = full_spectrum(dense)
        method = "spectral" if spectrum is not None and not spectrum.ill_conditioned else "integrator"
        logger.debug("auto evolution picked %s", method)

    ill = False
    if method == "spectral":
        if spectrum is None:
            if n > settings.DENSE_DIM_CAP:
                raise DimensionCapError(f"spectral path needs dense dim <= {settings.DENSE_DIM_CAP}", op="evolve", dim=n)
            dense = generator.toarray() if sp.issparse(generator) else generator
            spectrum = full_spectrum(dense)
        states, ref, ill = _spectral_states(spectrum, r0, times)
        if ill:
            logger.warning("spectral evolution uses ill-conditioned modes; consider method='integrator'")
    elif method == "integrator":
        states = _integrated_states(generator, r0, times)
        if spectrum is not None and not spectrum.ill_conditioned:
            _, ref, _ = _spectral_states(spectrum, r0, times[:1])
        else:
            ref = attractor(r0, generator, manifold)
    else:
        raise SkinlabError(f"unknown method {method!r}", op="evolve")

    traces = np.real(np.einsum("tii->t", states))
    drift = float(np.max(np.abs(traces - 1.0)))
    if drift > 1e-8:
        logger.warning("trace drift %.2e during %s evolution", drift, method)
    distances = np.array([trace_distance(s, ref) for s in states])
    observables = np.real(np.einsum("tii->ti", states)).copy()
    return EvolutionResult(
        times=times,
        distances=distances,
        observables=observables,
        method=method,
        reference=ref,
        traces=traces,
        ill_conditioned=ill,
        states=states if keep_states else None,
    )


def evolve(
    spec: ModelSpec,
    rho0: MatrixLike,
    times: Optional[np.ndarray] = None,
    method: Method = "auto",
    spectrum: Optional[LiouvillianSpectrum] = None,
    keep_states: bool = False,
) -> EvolutionResult:
    if times is None:
        times = default_time_grid(default_t_max(spec, spectrum.gap if spectrum is not None else None))
    if method == "integrator" and spectrum is None:
        generator = liouvillian_sparse(spec)
    elif spectrum is None and spec.L * spec.L <= settings.DENSE_DIM_CAP and method != "integrator":
        generator = vectorize_liouvillian(spec).entries
    else:
        generator = liouvillian_sparse(spec)
    logger.debug("evolve L=%d bc=%s gamma=%g method=%s points=%d", spec.L, spec.bc, spec.gamma, method, len(times))
    return evolve_generator(
        generator,
        rho0,
        times,
        method=method,
        spectrum=spectrum,
        manifold=conserved_manifold(spec),
        keep_states=keep_states,
    )


def _detect_cutoff(times: np.ndarray, d: np.ndarray) -> Optional[Cutoff]:
    level = float(d[0])
    if level <= 0:
        return None
    outside = np.abs(d - level) > PLATEAU_BAND * level
    if not outside.any():
        return None
    end = int(np.argmax(outside))
    duration = float(times[end] - times[0])
    if duration > PLATEAU_MIN_DURATION:
        return Cutoff(t_start=float(times[end]), plateau_level=level)
    return None


def _asymptotic_rate(times: np.ndarray, d: np.ndarray, start: int) -> Optional[float]:
    t = times[start:]
    y = d[start:]
    ok = y > DISTANCE_FLOOR
    t, y = t[ok], y[ok]
    if t.size < 5:
        return None
    # final decade above the floor
    low = float(y.min())
    sel = y <= 10.0 * low
    if sel.sum() < 5:
        sel = np.ones_like(y, dtype=bool)
    slope, _ = np.polyfit(t[sel], np.log(y[sel]), 1)
    return float(-slope)


def relaxation_time(result: EvolutionResult, threshold: float = 0.01) -> RelaxationReport:
    d = result.distances
    t = result.times
    below = d < threshold
    if not below[-1]:
        raise NotRelaxedError(
            f"distance {d[-1]:.3e} still above threshold {threshold} at t={t[-1]:.4g}",
            op="relaxation_time",
        )
    above = np.nonzero(~below)[0]
    idx = 0 if above.size == 0 else int(above[-1]) + 1
    if above.size and np.any(below[: above[-1]]):
        logger.debug("distance recrossed threshold; using the stays-below time")
    return RelaxationReport(
        tau=float(t[idx]),
        threshold=threshold,
        cutoff=_detect_cutoff(t, d),
        asymptotic_rate=_asymptotic_rate(t, d, idx),
        initial_distance=float(d[0]),
    )


def first_peak_time(times: np.ndarray, series: np.ndarray, prominence: float = 1e-6) -> Optional[float]:
    peaks, _ = find_peaks(np.asarray(series), prominence=prominence)
    if peaks.size == 0:
        return None
    return float(times[peaks[0]])


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise FitError("log-log fit needs at least two positive points", op="loglog_slope")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def local_slopes(xs: Sequence[float], ys: Sequence[float], window: int = 3) -> np.ndarray:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if window < 2 or x.size < window:
        raise FitError(f"need at least {window} points for windowed slopes", op="local_slopes")
    return np.array([loglog_slope(x[i : i + window], y[i : i + window]) for i in range(x.size - window + 1)])


Classification = Literal["Standard", "Accelerated", "SkinDelayed", "Unclassified"]


@dataclass(frozen=True)
class RelaxationClass:
    label: Classification
    tau_times_gap: float
    normalized: float
    predicted_tau: Optional[float] = None
    fit_ratio: Optional[float] = None


def detect_anomalous_relaxation(
    report: RelaxationReport,
    gap: float,
    spec: ModelSpec,
    loc_length: Optional[float] = None,
) -> RelaxationClass:
    """Label a relaxation by ``tau * gap / ln(d(0)/threshold)``.

    A single mode at the gap crosses the threshold at a normalized value of one.
    Below 0.5 is Accelerated, up to 3 Standard; above 3 the run is SkinDelayed
    only when a cutoff plateau was seen.
    """
    if not gap > 0:
        raise FitError("classification needs a positive gap", op="detect_anomalous_relaxation")
    x = report.tau * gap
    norm = x / report.e_folds
    if norm < 0.5:
        return RelaxationClass("Accelerated", x, norm)
    if norm <= 3.0:
        return RelaxationClass("Standard", x, norm)
    if not report.has_cutoff:
        logger.warning("tau*gap=%.2f (normalized %.2f) without a cutoff plateau (L=%d, gamma=%g)", x, norm, spec.L, spec.gamma)
        return RelaxationClass("Unclassified", x, norm)
    if loc_length is None:
        return RelaxationClass("SkinDelayed", x, norm)
    predicted = (1.0 / gap) * (1.0 + spec.L / loc_length)
    return RelaxationClass("SkinDelayed", x, norm, predicted_tau=predicted, fit_ratio=report.tau / predicted)


def steady_localization_length(spec: ModelSpec, spectrum: LiouvillianSpectrum) -> Optional[float]:
    """Edge localization length of the numeric steady state, or None where there is no edge profile."""
    if spec.bc != "obc" or spectrum.zero_mode_count != 1:
        return None
    try:
        fit = fit_localization_length(numeric_steady(spectrum)[0], spec=spec)
    except SkinlabError as exc:
        logger.info("no localization length for L=%d gamma=%g: %s", spec.L, spec.gamma, exc.message)
        return None
    if fit.rejected or fit.loc_length >= spec.L:
        return None
    return fit.loc_length


@dataclass
class RelaxationRow:
    L: int
    gamma: float
    tau: Optional[float] = None
    gap: Optional[float] = None
    tau_times_gap: Optional[float] = None
    classification: Optional[str] = None
    error: Optional[dict] = None
    loc_length: Optional[float] = None
    predicted_tau: Optional[float] = None
    fit_ratio: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def relaxation_row(spec: ModelSpec, init: str = "lastsite", threshold: float = 0.01, loc_length: Optional[float] = None) -> RelaxationRow:
    lv = vectorize_liouvillian(spec)
    spectrum = full_spectrum(lv)
    result = evolve(spec, initial_state(spec, init), spectrum=spectrum)
    report = relaxation_time(result, threshold)
    if loc_length is None:
        loc_length = steady_localization_length(spec, spectrum)
    cls = detect_anomalous_relaxation(report, spectrum.gap, spec, loc_length)
    return RelaxationRow(
        L=spec.L,
        gamma=spec.gamma,
        tau=report.tau,
        gap=spectrum.gap,
        tau_times_gap=report.tau * spectrum.gap,
        classification=cls.label,
        loc_length=loc_length,
        predicted_tau=cls.predicted_tau,
        fit_ratio=cls.fit_ratio,
    )


def tau_vs_gamma_scan(
    template: ModelSpec,
    gammas: Sequence[float],
    init: str = "lastsite",
    threshold: float = 0.01,
    jobs: Optional[int] = None,
) -> list[RelaxationRow]:
    from skinlab.control.scan import scan_relaxation

    return scan_relaxation(template, [template.L], gammas, init=init, threshold=threshold, jobs=jobs)
