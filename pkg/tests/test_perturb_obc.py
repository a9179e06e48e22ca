import numpy as np
import pytest

from skinlab.core.model import ModelSpec
from skinlab.core.perturb import (
    MomentumPair,
    QUASI_DEGENERATE_FACTOR,
    approximate_obc_eigenvectors,
    first_order_spectrum,
    matched_pair_distance,
    quasi_degenerate_tol,
    zeroth_order_obc,
)
from skinlab.core.superop import full_spectrum, vectorize_liouvillian
from skinlab.errors import ModelError, PerturbationError


def _exact(spec):
    return full_spectrum(vectorize_liouvillian(spec)).eigenvalues


def test_zeroth_order_obc_regimes():
    p = MomentumPair(1, 3, 8)
    weak = zeroth_order_obc(p, 0.6)
    assert weak.real == pytest.approx(-0.6)
    assert weak.imag == pytest.approx(-0.5 * 0.8 * (np.cos(p.k) - np.cos(p.kp)))
    strong = zeroth_order_obc(p, 2.0)
    assert strong.imag == 0.0
    assert strong.real < 0
    assert zeroth_order_obc(p, 1.0) == complex(-1.0, 0.0)


def test_approximate_eigenvectors_are_biorthonormal_and_left_localized():
    spec = ModelSpec(L=12, bc="obc", gamma=0.6)
    right, left = approximate_obc_eigenvectors(2, spec)
    assert np.vdot(left, right) == pytest.approx(1.0)
    ratio = np.sqrt(0.4 / 1.6)
    assert abs(right[-1]) / abs(right[0]) == pytest.approx(ratio**11)
    assert abs(left[-1]) > abs(left[0])


def test_approximate_eigenvectors_refuse_singular_point():
    with pytest.raises(PerturbationError):
        approximate_obc_eigenvectors(1, ModelSpec(L=8, gamma=1.0))


def test_obc_first_order_sum_rule_and_accuracy():
    spec = ModelSpec(L=6, bc="obc", gamma=0.05)
    exact = _exact(spec)
    first = first_order_spectrum(spec).eigenvalues
    zeroth = first_order_spectrum(spec, order=0).eigenvalues
    assert first.shape == (36,)
    assert np.sum(first) == pytest.approx(np.sum(exact), abs=1e-8)
    d1 = matched_pair_distance(first, exact).max_distance
    d0 = matched_pair_distance(zeroth, exact).max_distance
    assert d1 < d0


def test_obc_second_order_is_not_offered():
    with pytest.raises(ModelError):
        first_order_spectrum(ModelSpec(L=6, bc="obc", gamma=0.1), order=2)
    with pytest.raises(ModelError):
        first_order_spectrum(ModelSpec(L=6, bc="obc", gamma=0.1), order=3)


@pytest.mark.slow
@pytest.mark.parametrize("feedback", [True, False])
def test_obc_quasi_degenerate_pairs_track_exact_at_twenty_sites(feedback):
    spec = ModelSpec(L=20, bc="obc", gamma=0.04, feedback=feedback)
    d = matched_pair_distance(first_order_spectrum(spec).eigenvalues, _exact(spec))
    assert d.max_distance <= 5e-3


def test_quasi_degenerate_tol_scales_with_off_diagonal_coupling():
    k = np.array([[1.0, 0.02], [0.01j, -3.0]])
    assert quasi_degenerate_tol(k) == pytest.approx(QUASI_DEGENERATE_FACTOR * 0.02)
    assert quasi_degenerate_tol(np.diag([1.0, 2.0])) == 0.0
