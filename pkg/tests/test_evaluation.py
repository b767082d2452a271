"""Evaluation contracts: perturbation curves against brute-force re-evaluation,
trapezoidal AUC arithmetic, correlation references, sanity drivers."""

import numpy as np
import pytest

from conftest import noise_images, random_image
from infoattr import (
    AttributionMap,
    CorrelationUndefinedError,
    EngineConfig,
    Image,
    LinearSoftmaxModel,
    PerturbationCurve,
    Prediction,
    QuadrantClassifier,
    auc,
    build_empirical_sampler,
    pearson,
    perturbation_curve,
    randomize_parameters,
    sanity_param_randomization,
    spearman,
)
from infoattr.samplers import DescriptorConfig
from oracles import naive_pearson, naive_spearman


class ConstantClassifier:
    num_classes = 2
    input_shape = (6, 6, 1)
    ident = "constant"

    def __init__(self, p=0.3):
        self.p = p

    def predict_batch(self, images):
        return [Prediction([self.p, 1 - self.p]) for _ in images]


def quadrant_scene():
    arr = np.zeros((8, 8, 1), dtype=np.uint8)
    arr[0:4, 0:4] = 255
    img = Image(arr)
    clf = QuadrantClassifier(input_shape=(8, 8, 1), region=(0, 0, 4, 4), temperature=6.0)
    truth = np.zeros((8, 8))
    truth[0:4, 0:4] = 1.0
    amap = AttributionMap(kind="pmi", values=truth, class_index=1)
    return img, clf, amap


class TestPerturbationCurve:
    def test_constant_classifier_flat(self, rng):
        clf = ConstantClassifier(0.3)
        img = random_image(rng, 6, 6, 1)
        amap = AttributionMap(kind="pmi", values=rng.normal(0, 1, (6, 6)), class_index=0)
        curve = perturbation_curve(clf, img, amap, 0, steps=10, fill=128)
        assert np.all(curve.probabilities == 0.3)
        assert curve.fractions[0] == 0.0 and curve.fractions[-1] == 1.0

    def test_steps_one_two_points(self, rng):
        clf = ConstantClassifier()
        img = random_image(rng, 6, 6, 1)
        amap = AttributionMap(kind="pmi", values=rng.normal(0, 1, (6, 6)), class_index=0)
        curve = perturbation_curve(clf, img, amap, 0, steps=1, fill=0)
        assert len(curve.fractions) == 2
        assert list(curve.fractions) == [0.0, 1.0]
        assert curve.to_csv().count("\n") == 2  # two data rows, no header

    def test_matches_brute_force_reevaluation(self, rng):
        # independent re-simulation: rank by value (ties row-major), replace
        # cumulatively, re-predict from scratch at every step
        img, clf, amap = quadrant_scene()
        steps, fill = 7, 32
        curve = perturbation_curve(clf, img, amap, 1, steps=steps, fill=fill)
        values = [(-amap.values.reshape(-1)[i], i) for i in range(64)]
        order = [i for _, i in sorted(values, key=lambda t: (t[0], t[1]))]
        expected = [float(clf.predict_batch([img])[0].probs[1])]
        fractions = [0.0]
        seen = set()
        for t in range(1, steps + 1):
            count = -(-t * 64 // steps)
            if count in seen:
                continue
            seen.add(count)
            arr = img.data.copy().reshape(-1, 1)
            for i in order[:count]:
                arr[i] = fill
            state = Image(arr.reshape(8, 8, 1))
            expected.append(float(clf.predict_batch([state])[0].probs[1]))
            fractions.append(count / 64)
        assert list(curve.fractions) == fractions
        assert list(curve.probabilities) == expected

    def test_quadrant_floor_reached_at_region_share(self):
        img, clf, amap = quadrant_scene()
        curve = perturbation_curve(clf, img, amap, 1, steps=64, fill=0)
        floor_fraction = 16 / 64  # the bright region is 16 of 64 pixels
        at_floor = curve.probabilities[np.isclose(curve.fractions, floor_fraction)][0]
        assert at_floor == pytest.approx(0.5, abs=1e-12)  # logit 0 once region gone
        after = curve.probabilities[curve.fractions >= floor_fraction]
        assert np.allclose(after, 0.5, atol=1e-12)

    def test_only_negative_restricts_eligible_set(self):
        img, clf, _ = quadrant_scene()
        values = np.zeros((8, 8))
        values[0:2, 0:2] = -1.0  # 4 negative pixels inside the region
        amap = AttributionMap(kind="pmi", values=values, class_index=1)
        curve = perturbation_curve(clf, img, amap, 1, order="ascending",
                                   only_negative=True, steps=10, fill=0)
        assert curve.eligible_pixels == 4
        assert curve.fractions[-1] == 1.0  # fractions relative to eligible set

    def test_dimension_mismatch(self, rng):
        img, clf, _ = quadrant_scene()
        amap = AttributionMap(kind="pmi", values=np.zeros((4, 4)), class_index=1)
        with pytest.raises(ValueError):
            perturbation_curve(clf, img, amap, 1)

    def test_sampler_infill_runs_deterministically(self, rng):
        img, clf, amap = quadrant_scene()
        sampler = build_empirical_sampler(noise_images(rng, 4, 16, 16, 1), k=4,
                                          descriptor=DescriptorConfig(cells=2, levels=4))
        a = perturbation_curve(clf, img, amap, 1, steps=4, fill=sampler, seed=5)
        b = perturbation_curve(clf, img, amap, 1, steps=4, fill=sampler, seed=5)
        assert np.array_equal(a.probabilities, b.probabilities)
        assert a.fill.startswith("sampler:")


class TestAuc:
    def test_flat_half(self):
        curve = PerturbationCurve(fractions=np.array([0.0, 1.0]),
                                  probabilities=np.array([0.5, 0.5]),
                                  order="descending", fill="128", class_index=0,
                                  eligible_pixels=4, total_pixels=4)
        assert auc(curve) == pytest.approx(0.5)

    def test_linear_descent_triangle(self):
        curve = PerturbationCurve(fractions=np.linspace(0, 1, 11),
                                  probabilities=np.linspace(1, 0, 11),
                                  order="descending", fill="128", class_index=0,
                                  eligible_pixels=10, total_pixels=10)
        assert auc(curve) == pytest.approx(0.5)

    def test_two_segment_hand_value(self):
        curve = PerturbationCurve(fractions=np.array([0.0, 0.5, 1.0]),
                                  probabilities=np.array([1.0, 0.0, 0.0]),
                                  order="descending", fill="128", class_index=0,
                                  eligible_pixels=4, total_pixels=4)
        assert auc(curve) == pytest.approx(0.25)

    def test_bounds_property(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 30))
            fr = np.sort(rng.random(n - 2)) if n > 2 else np.array([])
            fractions = np.concatenate([[0.0], np.unique(fr), [1.0]])
            probs = rng.random(len(fractions))
            curve = PerturbationCurve(fractions=fractions, probabilities=probs,
                                      order="descending", fill="0", class_index=0,
                                      eligible_pixels=n, total_pixels=n)
            val = auc(curve)
            assert 0.0 <= val <= 1.0


class TestCorrelations:
    def test_self_is_exactly_one(self, rng):
        m = rng.normal(0, 1, (5, 5))
        assert pearson(m, m) == 1.0
        assert spearman(m, m) == 1.0

    def test_negation_is_exactly_minus_one(self, rng):
        m = rng.normal(0, 1, (5, 5))
        assert pearson(m, -m) == -1.0

    def test_monotone_transform_spearman_one(self, rng):
        m = np.abs(rng.normal(0, 1, (5, 5))) + 0.1
        assert spearman(m, m ** 2) == 1.0

    def test_constant_map_raises(self, rng):
        m = rng.normal(0, 1, (4, 4))
        with pytest.raises(CorrelationUndefinedError):
            pearson(np.zeros((4, 4)), m)
        with pytest.raises(CorrelationUndefinedError):
            spearman(m, np.full((4, 4), 3.0))

    def test_matches_naive_references(self, rng):
        for _ in range(50):
            a = rng.normal(0, 2, 40)
            b = rng.normal(0, 2, 40) + 0.3 * a
            assert pearson(a, b) == pytest.approx(naive_pearson(a, b), abs=1e-12)
            assert spearman(a, b) == pytest.approx(naive_spearman(a, b), abs=1e-12)

    def test_ties_use_average_ranks(self):
        a = np.array([1.0, 1.0, 2.0, 3.0])
        b = np.array([1.0, 2.0, 3.0, 4.0])
        assert spearman(a, b) == pytest.approx(naive_spearman(a, b), abs=1e-12)

    def test_shuffled_decorrelation(self, rng):
        # mean |coefficient| < 0.1 against independently shuffled copies
        vals_p, vals_s = [], []
        for _ in range(100):
            m = rng.normal(0, 1, (32, 32))
            shuffled = m.reshape(-1).copy()
            rng.shuffle(shuffled)
            shuffled = shuffled.reshape(32, 32)
            vals_p.append(pearson(m, shuffled))
            vals_s.append(spearman(m, shuffled))
        assert abs(np.mean(vals_p)) < 0.1
        assert abs(np.mean(vals_s)) < 0.1
        assert np.mean(np.abs(vals_p)) < 0.1
        assert np.mean(np.abs(vals_s)) < 0.1


class TestSanityDriver:
    def test_fraction_zero_exactly_one_and_row_order(self, rng):
        images = noise_images(rng, 3, 12, 12, 1)
        train = noise_images(rng, 30, 12, 12, 1)
        model = LinearSoftmaxModel(rng.normal(0, 1.0, (2, 144)), np.zeros(2), (12, 12, 1))
        sampler = build_empirical_sampler(train, k=4,
                                          descriptor=DescriptorConfig(cells=2, levels=4))

        report = sanity_param_randomization(
            lambda f: randomize_parameters(model, f, 3), sampler, images,
            fractions=[0.0, 0.5, 1.0], config=EngineConfig(k=4, n_samples=4, seed=1))
        assert [r.fraction for r in report.rows] == [0.0, 0.5, 1.0]
        first = report.rows[0]
        assert (first.pearson_pmi, first.spearman_pmi) == (1.0, 1.0)
        assert (first.pearson_ig, first.spearman_ig) == (1.0, 1.0)
        for row in report.rows:
            assert len(row.per_image) == 3

    def test_fractions_must_include_zero_and_one(self, rng):
        images = noise_images(rng, 1, 12, 12, 1)
        model = LinearSoftmaxModel(rng.normal(0, 1, (2, 144)), np.zeros(2), (12, 12, 1))
        sampler = build_empirical_sampler(noise_images(rng, 5, 12, 12, 1), k=4,
                                          descriptor=DescriptorConfig(cells=2, levels=4))
        with pytest.raises(ValueError):
            sanity_param_randomization(lambda f: model, sampler, images, [0.0, 0.5],
                                       EngineConfig(k=4, n_samples=2))

    def test_report_serialization(self, rng):
        images = noise_images(rng, 2, 8, 8, 1)
        model = LinearSoftmaxModel(rng.normal(0, 1, (2, 64)), np.zeros(2), (8, 8, 1))
        sampler = build_empirical_sampler(noise_images(rng, 5, 8, 8, 1), k=4,
                                          descriptor=DescriptorConfig(cells=2, levels=4))
        report = sanity_param_randomization(
            lambda f: randomize_parameters(model, f, 0), sampler, images,
            [0.0, 1.0], EngineConfig(k=4, n_samples=2))
        d = report.to_json_dict()
        assert d["format"] == "infoattr-sanity-v1"
        assert len(d["rows"]) == 2
        csv = report.to_csv()
        assert csv.splitlines()[0] == "fraction,pearson_pmi,spearman_pmi,pearson_ig,spearman_ig"
        assert len(csv.splitlines()) == 3
