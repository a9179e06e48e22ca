import math

import numpy as np
import pytest

from skinlab.core.dynamics import (
    Cutoff,
    EvolutionResult,
    RelaxationReport,
    default_t_max,
    default_time_grid,
    detect_anomalous_relaxation,
    evolve,
    first_peak_time,
    initial_state,
    local_slopes,
    loglog_slope,
    relaxation_row,
    relaxation_time,
    tau_vs_gamma_scan,
)
from skinlab.core.model import ModelSpec, plane_wave, site_state
from skinlab.core.superop import full_spectrum, vectorize_liouvillian
from skinlab.errors import FitError, NotRelaxedError, SkinlabError


def _result(times, distances):
    times = np.asarray(times, dtype=float)
    return EvolutionResult(
        times=times,
        distances=np.asarray(distances, dtype=float),
        observables=np.zeros((times.size, 2)),
        method="spectral",
        reference=np.eye(2) / 2,
        traces=np.ones(times.size),
    )


def test_time_grid_is_increasing_and_ends_at_t_max():
    t = default_time_grid(100.0, n=200)
    assert t[0] == 0.0
    assert t[-1] == pytest.approx(100.0)
    assert np.all(np.diff(t) > 0)
    assert t[1] == pytest.approx(1e-2)


def test_default_t_max_scales_with_inverse_gap():
    spec = ModelSpec(L=10, gamma=1.0)
    assert default_t_max(spec, 0.01) == pytest.approx(5000.0)
    assert default_t_max(spec, 100.0) == pytest.approx(100.0)


def test_initial_state_names():
    spec = ModelSpec(L=4)
    assert initial_state(spec, "lastsite").diagonal[-1] == 1.0
    assert initial_state(spec, "firstsite").diagonal[0] == 1.0
    assert np.allclose(initial_state(spec, "uniform").diagonal, 0.25)
    with pytest.raises(SkinlabError):
        initial_state(spec, "middle")


def test_spectral_and_integrator_paths_agree():
    spec = ModelSpec(L=5, bc="obc", gamma=0.6)
    rho0 = site_state(5, 5)
    times = np.linspace(0.0, 20.0, 41)
    a = evolve(spec, rho0, times, method="spectral")
    b = evolve(spec, rho0, times, method="integrator")
    assert a.method == "spectral"
    assert b.method == "integrator"
    assert np.allclose(a.distances, b.distances, atol=1e-6)
    assert np.allclose(a.observables, b.observables, atol=1e-6)
    assert np.allclose(a.traces, 1.0, atol=1e-8)
    assert a.distances[0] > 1.0
    assert np.allclose(a.site_density(5)[0], 1.0)


def test_evolution_rejects_bad_time_grid():
    spec = ModelSpec(L=3)
    with pytest.raises(SkinlabError):
        evolve(spec, site_state(3, 1), np.array([0.0, 2.0, 1.0]))


def test_bistable_evolution_relaxes_to_conserved_mixture():
    L = 8
    spec = ModelSpec(L=L, bc="pbc", gamma=1.0, feedback=False)
    dark = plane_wave(L, 3 * L // 4)
    p = np.outer(dark, dark.conj())
    rho0 = 0.5 * p + 0.5 * site_state(L, 1).entries
    # tr(rho0) and tr(P rho0) fix the mixture alpha I/L + beta P
    beta = (0.5 + 0.5 / L - 1.0 / L) / (1.0 - 1.0 / L)
    expected = (1.0 - beta) * np.eye(L) / L + beta * p
    times = np.linspace(0.0, 400.0, 81)
    for method in ("integrator", "spectral"):
        res = evolve(spec, rho0, times, method=method)
        assert np.allclose(res.reference, expected, atol=1e-8)
        assert res.distances[-1] < 1e-3


def test_relaxation_time_uses_last_crossing():
    t = np.linspace(0.0, 10.0, 101)
    report = relaxation_time(_result(t, np.exp(-t)), threshold=0.01)
    assert report.tau == pytest.approx(4.7)
    assert report.asymptotic_rate == pytest.approx(1.0, rel=1e-6)

    d = np.where(t < 2.0, 0.001, np.where(t < 5.0, 0.5, 0.001))
    assert relaxation_time(_result(t, d), threshold=0.01).tau == pytest.approx(5.0)


def test_relaxation_time_raises_when_not_relaxed():
    t = np.linspace(0.0, 1.0, 11)
    with pytest.raises(NotRelaxedError):
        relaxation_time(_result(t, np.ones_like(t)))


def test_cutoff_plateau_detection():
    t = np.linspace(0.0, 60.0, 601)
    plateau = np.where(t < 30.0, 2.0, 2.0 * np.exp(-(t - 30.0)))
    report = relaxation_time(_result(t, plateau))
    assert report.has_cutoff
    assert report.cutoff.plateau_level == pytest.approx(2.0)
    assert 30.0 <= report.cutoff.t_start <= 30.2

    assert not relaxation_time(_result(t, 2.0 * np.exp(-t))).has_cutoff


def test_obc_cutoff_depends_on_initial_state():
    spec = ModelSpec(L=16, bc="obc", gamma=0.6)
    from_edge = relaxation_time(evolve(spec, initial_state(spec, "lastsite")))
    assert from_edge.has_cutoff
    assert from_edge.cutoff.plateau_level > 1.9
    uniform = relaxation_time(evolve(spec, initial_state(spec, "uniform")))
    assert not uniform.has_cutoff


def test_first_peak_time():
    t = np.linspace(0.0, 10.0, 1001)
    assert first_peak_time(t, np.sin(t)) == pytest.approx(math.pi / 2, abs=0.01)
    assert first_peak_time(t, np.exp(-t)) is None


def test_pbc_first_return_peak_near_twice_ring_size():
    spec = ModelSpec(L=10, bc="pbc", gamma=2.0)
    times = np.linspace(0.0, 40.0, 2001)
    res = evolve(spec, initial_state(spec, "lastsite"), times)
    peak = first_peak_time(times, res.site_density(10), prominence=1e-2)
    assert peak is not None
    assert 15.0 < peak < 25.0


def test_loglog_slopes():
    xs = [8, 12, 16, 24]
    ys = [3.0 * x**2 for x in xs]
    assert loglog_slope(xs, ys) == pytest.approx(2.0)
    assert np.allclose(local_slopes(xs, ys, window=2), 2.0)
    with pytest.raises(FitError):
        loglog_slope([1.0], [1.0])
    with pytest.raises(FitError):
        loglog_slope([1.0, 2.0], [0.0, 1.0])
    with pytest.raises(FitError):
        local_slopes(xs, ys, window=5)


def test_classification_labels(caplog):
    spec = ModelSpec(L=20, gamma=0.6)
    report = RelaxationReport(tau=1.0, threshold=0.01, cutoff=None, asymptotic_rate=None)
    assert detect_anomalous_relaxation(report, 0.1, spec).label == "Accelerated"
    assert detect_anomalous_relaxation(report, 1.0, spec).label == "Standard"

    slow = RelaxationReport(tau=50.0, threshold=0.01, cutoff=None, asymptotic_rate=None)
    assert detect_anomalous_relaxation(slow, 1.0, spec).label == "Unclassified"
    assert "without a cutoff" in caplog.text

    delayed = RelaxationReport(tau=50.0, threshold=0.01, cutoff=Cutoff(20.0, 2.0), asymptotic_rate=1.0)
    cls = detect_anomalous_relaxation(delayed, 1.0, spec, loc_length=2.0)
    assert cls.label == "SkinDelayed"
    assert cls.predicted_tau == pytest.approx(11.0)
    assert cls.fit_ratio == pytest.approx(50.0 / 11.0)

    with pytest.raises(FitError):
        detect_anomalous_relaxation(report, 0.0, spec)


def test_tau_vs_gamma_scan_rows():
    rows = tau_vs_gamma_scan(ModelSpec(L=6, bc="obc"), [0.4, 0.6], jobs=2)
    assert [(r.L, r.gamma) for r in rows] == [(6, 0.4), (6, 0.6)]
    assert all(r.ok and r.tau > 0 for r in rows)


def test_classification_is_normalized_by_initial_distance():
    spec = ModelSpec(L=30, gamma=0.6, feedback=False)
    raw = RelaxationReport(tau=20.0, threshold=0.01, cutoff=None, asymptotic_rate=None)
    scaled = RelaxationReport(tau=20.0, threshold=0.01, cutoff=None, asymptotic_rate=None, initial_distance=2.0)
    assert raw.e_folds == 1.0
    assert scaled.e_folds == pytest.approx(math.log(200.0))
    assert detect_anomalous_relaxation(raw, 0.1, spec).label == "Standard"
    cls = detect_anomalous_relaxation(scaled, 0.1, spec)
    assert cls.label == "Accelerated"
    assert cls.tau_times_gap == pytest.approx(2.0)
    assert cls.normalized == pytest.approx(2.0 / math.log(200.0))


def test_single_exponential_decay_is_standard():
    t = np.linspace(0.0, 100.0, 5001)
    report = relaxation_time(_result(t, 2.0 * np.exp(-0.1 * t)))
    assert report.initial_distance == pytest.approx(2.0)
    cls = detect_anomalous_relaxation(report, 0.1, ModelSpec(L=10))
    assert cls.label == "Standard"
    assert cls.normalized == pytest.approx(1.0, abs=0.01)


@pytest.mark.slow
def test_reference_classifications_at_thirty_sites():
    pbc = relaxation_row(ModelSpec(L=30, bc="pbc", gamma=0.6, feedback=False))
    assert pbc.classification == "Accelerated"
    assert pbc.tau_times_gap < 1.0

    measure_obc = relaxation_row(ModelSpec(L=30, bc="obc", gamma=0.6, feedback=False))
    assert measure_obc.classification == "Standard"
    assert measure_obc.loc_length is None

    feedback_obc = relaxation_row(ModelSpec(L=30, bc="obc", gamma=0.6))
    assert feedback_obc.classification == "SkinDelayed"
    assert feedback_obc.loc_length > 0
    assert feedback_obc.predicted_tau == pytest.approx(
        (1.0 + 30 / feedback_obc.loc_length) / feedback_obc.gap
    )
    assert feedback_obc.fit_ratio == pytest.approx(feedback_obc.tau / feedback_obc.predicted_tau)


@pytest.mark.slow
def test_measure_obc_tau_tracks_inverse_gap():
    rows = [relaxation_row(ModelSpec(L=L, bc="obc", gamma=0.6, feedback=False)) for L in (16, 24, 32)]
    assert all(r.classification == "Standard" for r in rows)
    Ls = [r.L for r in rows]
    tau_slope = loglog_slope(Ls, [r.tau for r in rows])
    inverse_gap_slope = loglog_slope(Ls, [1.0 / r.gap for r in rows])
    assert abs(tau_slope - inverse_gap_slope) <= 0.2


@pytest.mark.slow
def test_feedback_pbc_relaxation_time_grows_quadratically():
    rows = [relaxation_row(ModelSpec(L=L, bc="pbc", gamma=1.0)) for L in (16, 24, 32, 48)]
    assert all(r.ok for r in rows)
    slope = loglog_slope([r.L for r in rows], [r.tau for r in rows])
    assert 1.8 <= slope <= 2.2


@pytest.mark.slow
def test_feedback_pbc_relaxation_time_falls_inversely_with_gamma():
    rows = tau_vs_gamma_scan(ModelSpec(L=24, bc="pbc"), [0.5, 1.0, 2.0], jobs=1)
    slope = loglog_slope([r.gamma for r in rows], [r.tau for r in rows])
    assert -1.15 <= slope <= -0.85


@pytest.mark.slow
def test_feedback_obc_relaxation_time_grows_linearly():
    rows = [relaxation_row(ModelSpec(L=L, bc="obc", gamma=0.6)) for L in (20, 30, 40, 60)]
    slope = loglog_slope([r.L for r in rows], [r.tau for r in rows])
    assert 0.8 <= slope <= 1.2


@pytest.mark.slow
def test_feedback_obc_tau_has_interior_minimum_in_gamma():
    rows = tau_vs_gamma_scan(ModelSpec(L=20, bc="obc"), [0.2, 0.6, 2.0], jobs=1)
    taus = [r.tau for r in rows]
    assert taus[1] < taus[0]
    assert taus[1] < taus[2]


@pytest.mark.slow
@pytest.mark.parametrize("L,expected", [(10, 20.0), (20, 42.0), (30, 62.0), (40, 83.0), (50, 103.0)])
def test_first_return_peak_of_last_site(L, expected):
    spec = ModelSpec(L=L, bc="pbc", gamma=2.0)
    times = np.linspace(0.0, 1.6 * expected, 4001)
    res = evolve(spec, initial_state(spec, "lastsite"), times)
    peak = first_peak_time(times, res.site_density(L), prominence=1e-3)
    assert peak == pytest.approx(expected, rel=0.1)


@pytest.mark.slow
def test_cutoff_plateau_lengthens_with_chain_and_decays_at_gap():
    cutoffs = []
    for L in (40, 60):
        spec = ModelSpec(L=L, bc="obc", gamma=0.6)
        spectrum = full_spectrum(vectorize_liouvillian(spec))
        report = relaxation_time(evolve(spec, initial_state(spec, "lastsite"), spectrum=spectrum))
        assert report.has_cutoff
        assert report.cutoff.plateau_level >= 1.9
        assert report.asymptotic_rate == pytest.approx(spectrum.gap, rel=0.2)
        cutoffs.append(report.cutoff.t_start)
        if L == 40:
            uniform = relaxation_time(evolve(spec, initial_state(spec, "uniform"), spectrum=spectrum))
            assert not uniform.has_cutoff
    assert cutoffs[1] > cutoffs[0]
