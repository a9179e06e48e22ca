import numpy as np
import pytest

from skinlab.core.dynamics import attractor
from skinlab.core.model import ModelSpec, maximally_mixed
from skinlab.core.steady import (
    analytic_steady_feedback_pbc,
    analytic_steady_nofeedback,
    default_fit_window,
    diagonal_profile,
    fit_localization_length,
    numeric_steady,
    project_onto_manifold,
    trace_distance,
)
from skinlab.core.superop import apply_lindbladian, full_spectrum, liouvillian_sparse, vectorize_liouvillian
from skinlab.errors import FitError, ModelError


def _numeric(spec):
    return numeric_steady(full_spectrum(vectorize_liouvillian(spec)))


@pytest.mark.parametrize("L", [6, 7, 8])
def test_feedback_pbc_numeric_steady_matches_closed_form(L):
    spec = ModelSpec(L=L, bc="pbc", gamma=1.0)
    states = _numeric(spec)
    assert len(states) == 1
    exact = analytic_steady_feedback_pbc(spec)
    assert trace_distance(states[0], exact) < 1e-6
    assert np.allclose(apply_lindbladian(spec, exact), 0.0, atol=1e-10)


def test_feedback_pbc_closed_form_is_dark_projector_when_l_divisible_by_four():
    rho = analytic_steady_feedback_pbc(ModelSpec(L=8, bc="pbc", gamma=0.3))
    assert np.allclose(rho.entries @ rho.entries, rho.entries)
    assert np.allclose(rho.diagonal, 1.0 / 8)


def test_feedback_closed_form_needs_pbc_and_feedback():
    with pytest.raises(ModelError):
        analytic_steady_feedback_pbc(ModelSpec(L=8, bc="obc"))
    with pytest.raises(ModelError):
        analytic_steady_feedback_pbc(ModelSpec(L=8, bc="pbc", feedback=False))


def test_measurement_obc_steady_state_is_maximally_mixed():
    spec = ModelSpec(L=5, bc="obc", gamma=0.7, feedback=False)
    states = _numeric(spec)
    assert len(states) == 1
    assert trace_distance(states[0], maximally_mixed(5)) < 1e-8
    assert len(analytic_steady_nofeedback(spec)) == 1


def test_measurement_pbc_manifold_is_bistable():
    spec = ModelSpec(L=8, bc="pbc", gamma=1.0, feedback=False)
    analytic = analytic_steady_nofeedback(spec)
    assert len(analytic) == 2
    numeric = _numeric(spec)
    assert len(numeric) == 2
    for rho in analytic:
        assert np.allclose(apply_lindbladian(spec, rho), 0.0, atol=1e-10)
        assert project_onto_manifold(rho, numeric).residual < 1e-6
    for rho in numeric:
        assert project_onto_manifold(rho, analytic).residual < 1e-6
        assert np.linalg.eigvalsh(rho.entries)[0] > -1e-8


def test_feedback_obc_steady_state_accumulates_at_left_edge():
    spec = ModelSpec(L=12, bc="obc", gamma=0.6)
    (rho,) = _numeric(spec)
    diag = diagonal_profile(rho)
    assert diag.sum() == pytest.approx(1.0)
    assert diag[0] > diag[-1]
    assert np.argmax(diag) < 3


def test_localization_fit_recovers_exponential_profile():
    sites = np.arange(1, 21)
    diag = np.exp(-sites / 2.5)
    fit = fit_localization_length(diag / diag.sum())
    assert fit.loc_length == pytest.approx(2.5, rel=1e-9)
    assert fit.fit_range == (3, 20)
    assert fit.residual < 1e-9
    assert not fit.rejected


def test_localization_fit_attaches_theory_length():
    diag = np.exp(-np.arange(1, 13) / 1.5)
    fit = fit_localization_length(diag, spec=ModelSpec(L=12, gamma=0.6))
    assert fit.theory_length == pytest.approx(1.0 / np.log(2.0))
    assert not fit.singular_theory


def test_default_window_stops_at_floor():
    diag = np.array([1.0, 0.5, 0.2, 0.1, 1e-3, 1e-5, 1e-9, 1e-12, 1e-15, 1e-17])
    assert default_fit_window(diag) == (3, 8)


def test_localization_fit_errors():
    with pytest.raises(FitError):
        fit_localization_length(np.exp(np.arange(1, 11) / 2.0))
    with pytest.raises(FitError):
        fit_localization_length(np.exp(-np.arange(1, 7) / 2.0))
    with pytest.raises(FitError):
        fit_localization_length(np.ones(10), window=(1, 4))


def test_noisy_profile_is_flagged_not_raised(caplog):
    sites = np.arange(1, 31)
    wiggle = 1.5 * (-1.0) ** sites
    diag = np.exp(-sites / 5.0 + wiggle)
    fit = fit_localization_length(diag, window=(3, 30))
    assert fit.residual > 0.5
    assert fit.rejected
    assert "rejected" in caplog.text


def _edge_length(L, gamma):
    spec = ModelSpec(L=L, bc="obc", gamma=gamma)
    rho = attractor(np.eye(L, dtype=complex) / L, liouvillian_sparse(spec))
    return fit_localization_length(rho, spec=spec).loc_length


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [0.6, 2.0])
def test_edge_localization_length_is_size_independent(gamma):
    assert _edge_length(80, gamma) == pytest.approx(_edge_length(40, gamma), rel=0.15)


@pytest.mark.slow
def test_edge_localization_is_tightest_at_intermediate_monitoring():
    gammas = [0.2, 0.4, 0.6, 0.8, 1.5, 2.0, 3.0]
    lengths = [_edge_length(40, g) for g in gammas]
    assert 0.4 <= gammas[int(np.argmin(lengths))] <= 0.8
