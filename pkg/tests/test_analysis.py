import itertools

import numpy as np
import pytest
from scipy import integrate

from mixlab.analysis import (
    PairingModel,
    cohesion_report,
    grad_term_variance,
    intra_pair_fraction_analytic,
    intra_pair_fraction_montecarlo,
)
from mixlab.nn import Layer, softmax
from mixlab.rng import RngStream


def test_analytic_single_class():
    assert intra_pair_fraction_analytic(1, 8, "equal_counts") == 1.0
    assert intra_pair_fraction_analytic(1, 8, "iid_uniform") == 1.0


def test_analytic_equal_counts_is_one_over_k():
    assert intra_pair_fraction_analytic(128, 128) == pytest.approx(1 / 128)
    assert intra_pair_fraction_analytic(16, 32) == pytest.approx(1 / 16)
    assert intra_pair_fraction_analytic(128, 128) < 0.02


def test_analytic_iid_uniform_closed_form():
    # composition fluctuations push the rate above 1/K
    assert intra_pair_fraction_analytic(16, 32, "iid_uniform") == pytest.approx(47 / 512)
    assert intra_pair_fraction_analytic(128, 128, "iid_uniform") == pytest.approx(
        255 / 16384
    )
    assert intra_pair_fraction_analytic(128, 128, "iid_uniform") < 0.02


def test_analytic_argument_errors():
    with pytest.raises(ValueError):
        intra_pair_fraction_analytic(0, 8)
    with pytest.raises(ValueError):
        intra_pair_fraction_analytic(3, 8, "equal_counts")  # 3 does not divide 8
    with pytest.raises(ValueError):
        intra_pair_fraction_analytic(2, 8, "bogus")


def test_enumeration_oracle_two_classes_batch_four():
    # all 24 permutations of labels [0, 0, 1, 1]: expected fraction is 1/2
    labels = np.array([0, 0, 1, 1])
    total = 0.0
    for perm in itertools.permutations(range(4)):
        total += float(np.mean(labels[list(perm)] == labels))
    assert total / 24 == pytest.approx(0.5)
    assert intra_pair_fraction_analytic(2, 4) == pytest.approx(0.5)


def test_montecarlo_single_class_exact():
    model = PairingModel(1, 4, "equal_counts", trials=2000)
    estimate, err = intra_pair_fraction_montecarlo(model, RngStream(0))
    assert estimate == 1.0
    assert err == 0.0


@pytest.mark.parametrize("sampling", ["equal_counts", "iid_uniform"])
@pytest.mark.parametrize("k,n", [(2, 4), (16, 32)])
def test_montecarlo_agrees_with_analytic(sampling, k, n):
    model = PairingModel(k, n, sampling, trials=40_000)
    estimate, err = intra_pair_fraction_montecarlo(model, RngStream(5))
    expected = intra_pair_fraction_analytic(k, n, sampling)
    assert abs(estimate - expected) <= 3 * err


def test_montecarlo_requires_enough_trials():
    with pytest.raises(ValueError):
        intra_pair_fraction_montecarlo(PairingModel(2, 4, trials=10), RngStream(0))


def test_pairing_model_validation():
    with pytest.raises(ValueError):
        PairingModel(0, 4)
    with pytest.raises(ValueError):
        PairingModel(3, 4, "equal_counts")
    with pytest.raises(ValueError):
        PairingModel(2, 4, "nope")


def _classifier(weight, bias):
    return Layer(np.asarray(weight, float), np.asarray(bias, float), "identity")


def test_grad_term_variance_identical_features_is_zero():
    features = np.tile([1.5, -0.5], (4, 1))
    classifier = _classifier([[0.3, 0.1], [-0.2, 0.4]], [0.0, 0.0])
    variances = grad_term_variance(features, classifier, [1, 2, 3], 500, RngStream(1))
    for value in variances.values():
        assert value == pytest.approx(0.0, abs=1e-25)


def test_grad_term_variance_decays_like_one_over_p():
    rng = RngStream(2)
    features = rng.derive("f").normal(size=(6, 3))
    classifier = _classifier(rng.derive("w").normal(size=(3, 3), scale=0.5),
                             rng.derive("b").normal(size=3, scale=0.1))
    variances = grad_term_variance(features, classifier, [1, 2, 3, 5], 10_000,
                                   rng.derive("t"))
    values = [variances[p] for p in (1, 2, 3, 5)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert variances[5] < variances[1]
    for p in (2, 3, 5):
        assert variances[p] * p / variances[1] == pytest.approx(1.0, abs=0.2)


def test_grad_term_variance_matches_quadrature_oracle():
    # one feature coordinate, member rows at 0 and 1: the synthesized value is
    # t = 1 - omega with omega = r0/(r0+r1), whose density is
    # 1/(2(1-w)^2) on (0, 1/2] and 1/(2w^2) on [1/2, 1).
    weight = np.array([[2.0], [-1.0]])
    bias = np.array([0.1, -0.2])
    features = np.array([[0.0], [1.0]])
    classifier = _classifier(weight, bias)

    def density(w):
        return 1.0 / (2.0 * (1.0 - w) ** 2) if w <= 0.5 else 1.0 / (2.0 * w * w)

    def coord(i, w):
        t = 1.0 - w
        p = softmax(weight[:, 0] * t + bias)
        delta = 1.0 if i == 0 else 0.0
        return (p[i] - delta) * t

    expected = 0.0
    for i in range(2):
        mean = sum(
            integrate.quad(lambda w: coord(i, w) * density(w), a, b)[0]
            for a, b in ((0.0, 0.5), (0.5, 1.0))
        )
        second = sum(
            integrate.quad(lambda w: coord(i, w) ** 2 * density(w), a, b)[0]
            for a, b in ((0.0, 0.5), (0.5, 1.0))
        )
        expected += second - mean**2
    expected /= 2.0

    variances = grad_term_variance(features, classifier, [1], 200_000, RngStream(9))
    assert variances[1] == pytest.approx(expected, rel=0.03)


def test_grad_term_variance_argument_errors():
    classifier = _classifier(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        grad_term_variance(np.zeros((1, 2)), classifier, [1], 100, RngStream(0))
    with pytest.raises(ValueError):
        grad_term_variance(np.zeros((3, 2)), classifier, [2, 1], 100, RngStream(0))
    with pytest.raises(ValueError):
        grad_term_variance(np.zeros((3, 2)), classifier, [1], 100, RngStream(0),
                           class_index=5)


def test_cohesion_point_mass_classes_error():
    features = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
    labels = np.array([0, 0, 1, 1])
    with pytest.raises(ValueError, match="zero"):
        cohesion_report(features, labels)


def test_cohesion_far_blobs():
    rng = RngStream(3)
    a = rng.derive("a").normal(size=(200, 2)) + np.array([0.0, 0.0])
    b = rng.derive("b").normal(size=(200, 2)) + np.array([20.0, 0.0])
    features = np.vstack([a, b])
    labels = np.repeat([0, 1], 200)
    report = cohesion_report(features, labels)
    # unit blobs in 2-d: mean squared distance to the centroid is about 2
    assert report.within_class_variance == pytest.approx(2.0, rel=0.15)
    # centroids 20 apart vs unit within spread: the ratio is large
    assert report.between_within_ratio > 10
    assert set(report.centroids) == {0, 1}


def test_cohesion_shuffled_labels_score_lower():
    rng = RngStream(4)
    a = rng.derive("a").normal(size=(100, 2))
    b = rng.derive("b").normal(size=(100, 2)) + np.array([8.0, 0.0])
    features = np.vstack([a, b])
    labels = np.repeat([0, 1], 100)
    structured = cohesion_report(features, labels).between_within_ratio
    shuffled_labels = labels[rng.derive("p").permutation(200)]
    shuffled = cohesion_report(features, shuffled_labels).between_within_ratio
    assert shuffled < structured / 10


def test_cohesion_argument_errors():
    with pytest.raises(ValueError):
        cohesion_report(np.zeros((4, 2)), np.zeros(4, dtype=int))  # one class
    with pytest.raises(ValueError):
        cohesion_report(np.zeros((3, 2)), np.array([0, 0, 1]))  # singleton class
