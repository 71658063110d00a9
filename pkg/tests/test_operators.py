import numpy as np
import pytest

from sigmaflow.core.operators import (
    OperatorSpec,
    Region,
    check_structural,
    cone_coefficients,
    epsilon_budget,
    eval_tilde,
    evaluate,
    shifted_constant,
    spectrum_of,
    sublevel_floor,
    subsolution_margin,
)
from sigmaflow.core.validators import DomainError, RegionError


def test_evaluate_examples():
    assert evaluate(OperatorSpec.sigma(1.0, 0.0), (2, 2)) == pytest.approx(1.0)
    j = OperatorSpec.j_operator(2, epsilon=0.1, region=Region.floor(0.5))
    assert evaluate(j, (1, 1)) == pytest.approx(1.9)
    assert evaluate(OperatorSpec.sigma(0.0, 0.0, 1.0), (1, 2, 4)) == pytest.approx(1 / 8)


def test_evaluate_outside_region_carries_spectrum():
    j = OperatorSpec.j_operator(2, epsilon=0.1, region=Region.floor(0.5))
    with pytest.raises(RegionError) as err:
        evaluate(j, (0.2, 1.0))
    assert err.value.spectrum == [0.2, 1.0]


def test_deflation_needs_restricted_region():
    with pytest.raises(DomainError):
        OperatorSpec.j_operator(2, epsilon=0.1)
    with pytest.raises(DomainError):
        OperatorSpec.sigma(1.0, -0.5)


def test_twist_and_kappa_terms():
    spec = OperatorSpec.sigma(1.0, 0.0).with_twist(2.0)
    assert evaluate(spec, (1, 2)) == pytest.approx(1.5 + 1.0)
    ke = OperatorSpec.kappa_epsilon([1.0, 1.0], 0.5, 0.25, Region.floor(0.5))
    assert evaluate(ke, (1, 1)) == pytest.approx(2 + 1 + 1 - 0.25)
    assert shifted_constant(2.0, 0.5, 0.25, 4.0, 2.0) == pytest.approx(3.5)


def test_eval_tilde_examples():
    assert eval_tilde(OperatorSpec.sigma(1.0, 0.0, 0.0), (1, 2, 4)) == pytest.approx(1.5)
    assert eval_tilde(OperatorSpec.sigma(1.0, 0.0), (3.0, 5.0)) == pytest.approx(1 / 3)
    assert eval_tilde(OperatorSpec.sigma(0.0, 0.0, 1.0), (1, 2, 4)) == 0.0
    with pytest.raises(DomainError):
        eval_tilde(OperatorSpec.sigma(1.0, 0.0), (1, 2, 3))


def test_eval_tilde_is_limit_of_evaluate(rng):
    spec = OperatorSpec.sigma(1.0, 0.3, 0.2)
    mu = rng.uniform(0.5, 2.0, 2)
    far = evaluate(spec, np.append(mu, 1e6))
    sub = OperatorSpec.sigma(1.0, 0.3)
    assert far == pytest.approx(evaluate(sub, mu), rel=1e-4)
    assert eval_tilde(spec, np.append(mu, 1e6)) >= evaluate(sub, mu) - 1e-12


def test_subsolution_margin_examples():
    assert subsolution_margin(OperatorSpec.sigma(1.0, 0.0), 2.0, (1, 1)) == pytest.approx(1.0)
    assert subsolution_margin(OperatorSpec.sigma(1.0, 0.0, 0.0), 1.4, (1, 2, 4)) == pytest.approx(-0.1)


def test_cone_coefficients_sign_matches_margin(rng):
    spec = OperatorSpec.sigma(1.0, 0.5, 0.2)
    for _ in range(50):
        mu = rng.uniform(0.3, 3.0, 3)
        c = rng.uniform(0.5, 4.0)
        positive = bool(np.all(cone_coefficients(spec, c, mu) > 0))
        assert positive == (subsolution_margin(spec, c, mu) > 0)


def test_homogeneity():
    spec = OperatorSpec.sigma(0.0, 1.0, 0.0)
    lam = np.array([0.7, 1.3, 2.9])
    assert evaluate(spec, 3.0 * lam) == pytest.approx(evaluate(spec, lam) / 9.0, rel=1e-12)


def test_spectrum_of_and_sublevel_floor():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(spectrum_of(A).values, (1.0, 3.0))
    np.testing.assert_allclose(spectrum_of(A, 2.0 * np.eye(2)).values, (0.5, 1.5))
    assert sublevel_floor(4.0) == 0.25
    assert not Region.sublevel(4.0).contains((0.2, 5.0))
    assert Region.sublevel(4.0).contains((1.0, 1.0))
    assert Region.sublevel(4.0).implied_floor() == 0.25


def test_structural_pure_operator_passes():
    report = check_structural(OperatorSpec.sigma(1.0, 0.5, 0.25), 500, (0.1, 10.0), seed=3)
    assert report.all_passed
    assert 1.0 - 1e-12 <= report.ratio_min <= report.ratio_max <= 3.0 + 1e-12


def test_structural_deflated_operator_fails_near_zero():
    spec = OperatorSpec.j_operator(2, epsilon=0.5, region=Region.floor(1e-3))
    report = check_structural(spec, 400, (0.01, 0.2), seed=1)
    assert 1 in report.failed()
    witness = report.conditions[1].witness
    assert witness is not None and len(witness) == 2
    assert min(witness) < 0.2


def test_structural_raises_outside_region_unless_restricted():
    spec = OperatorSpec.j_operator(2, epsilon=0.1, region=Region.floor(1.0))
    with pytest.raises(RegionError):
        check_structural(spec, 50, (0.5, 4.0))
    report = check_structural(spec, 50, (0.5, 4.0), restrict=True)
    assert report.sample_count < 50 + 4


def test_structural_report_independent_of_workers():
    spec = OperatorSpec.sigma(1.0, 0.5, 0.25)
    a = check_structural(spec, 200, (0.1, 10.0), seed=9, workers=1).to_dict()
    b = check_structural(spec, 200, (0.1, 10.0), seed=9, workers=4).to_dict()
    assert a == b


def test_epsilon_budget():
    assert epsilon_budget(1.0, 2) == pytest.approx(0.5)
    assert epsilon_budget(1.0, 3) == pytest.approx(0.5)
    assert epsilon_budget(0.5, 2, verify=False) == pytest.approx(0.25)
    assert epsilon_budget(1e-8, 3, verify=False) < 1e-16
    with pytest.raises(DomainError):
        epsilon_budget(0.0, 2)
    delta = 0.5
    eps = epsilon_budget(delta, 3)
    assert eps == pytest.approx(0.125)
    spec = OperatorSpec.j_operator(3, epsilon=eps, region=Region.floor(delta))
    report = check_structural(spec, 300, (delta * (1 + 1e-9), 10.0), seed=5)
    assert report.conditions[1].passed and report.conditions[2].passed


def test_operator_dict_round_trip():
    spec = OperatorSpec.kappa_epsilon([1.0, 0.5], 0.2, 0.1, Region.sublevel(3.0))
    assert OperatorSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(DomainError):
        OperatorSpec.from_dict({"c": [1.0], "gamma": 2})


@pytest.mark.parametrize(
    "spec, floor",
    [
        (OperatorSpec.sigma(1.0, 0.5, 0.25), 0.0),
        (OperatorSpec.j_operator(3, epsilon=0.5, region=Region.floor(1.0)), 1.0),
        (OperatorSpec.kappa_epsilon([1.0, 1.0], 0.5, 0.25, Region.floor(0.5)), 0.5),
    ],
)
def test_evaluate_strictly_decreasing_in_each_eigenvalue(rng, spec, floor):
    n = spec.n
    for _ in range(200):
        lam = floor + np.exp(rng.uniform(np.log(0.05), np.log(20.0), n))
        for i in range(n):
            h = 1e-6 * lam[i]
            up = lam.copy()
            down = lam.copy()
            up[i] += h
            down[i] -= h
            slope = (evaluate(spec, up) - evaluate(spec, down)) / (2 * h)
            assert slope < 0, (lam, i, slope)
