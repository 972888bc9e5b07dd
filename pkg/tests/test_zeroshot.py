import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nova.model import NovaModel, PredictorConfig, ViTConfig
from nova.zeroshot import (
    DEFAULT_CLASSES,
    EvalReport,
    PromptPair,
    UndefinedMetricError,
    build_prompt_pairs,
    class_probability,
    evaluate,
    roc_auc,
)


def brute_force_auc(scores, labels):
    """O(P*N) pairwise oracle: positives outranking negatives, ties 0.5."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return NovaModel(
        ViTConfig(width=32, depth=1, heads=2, patch_size=32),
        predictor_cfg=PredictorConfig(in_dim=32, hidden=16, out_dim=8),
        text_dim=16,
    )


class TestPromptPairs:
    def test_default_class_list(self, model):
        pairs = build_prompt_pairs(DEFAULT_CLASSES, model)
        assert [p.class_name for p in pairs] == [
            "Atelectasis", "Cardiomegaly", "Edema", "Pleural Effusion", "Consolidation",
        ]
        assert pairs[0].positive_text == "atelectasis"
        assert pairs[0].negative_text == "no atelectasis"

    def test_unit_norms(self, model):
        for pair in build_prompt_pairs(DEFAULT_CLASSES, model):
            assert abs(np.linalg.norm(pair.t_plus) - 1.0) < 1e-6
            assert abs(np.linalg.norm(pair.t_minus) - 1.0) < 1e-6

    def test_deterministic(self, model):
        a = build_prompt_pairs(["blob"], model)[0]
        b = build_prompt_pairs(["blob"], model)[0]
        assert np.array_equal(a.t_plus, b.t_plus)

    def test_empty_classes_rejected(self, model):
        with pytest.raises(ValueError):
            build_prompt_pairs([], model)


def _pair_from_vectors(tp, tm):
    tp = np.asarray(tp, dtype=np.float64)
    tm = np.asarray(tm, dtype=np.float64)
    return PromptPair("c", "c", "no c", tp / np.linalg.norm(tp), tm / np.linalg.norm(tm))


class TestClassProbability:
    def test_symmetric_similarities_give_half(self):
        pair = _pair_from_vectors([1.0, 0.0], [1.0, 0.0])
        assert class_probability(np.array([0.0, 1.0]), pair) == pytest.approx(0.5)

    def test_example_value(self):
        pair = _pair_from_vectors([1.0, 0.0], [0.0, 1.0])
        p = class_probability(np.array([1.0, 0.0]), pair)
        assert p == pytest.approx(math.exp(1) / (math.exp(1) + 1), abs=1e-6)
        assert p == pytest.approx(0.73106, abs=1e-5)

    def test_swap_complements(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(6)
        v /= np.linalg.norm(v)
        tp, tm = rng.standard_normal(6), rng.standard_normal(6)
        pair = _pair_from_vectors(tp, tm)
        swapped = _pair_from_vectors(tm, tp)
        assert class_probability(v, pair) == pytest.approx(1 - class_probability(v, swapped), abs=1e-12)

    def test_monotonicity(self):
        base = _pair_from_vectors([1.0, 0.0], [0.0, 1.0])
        angles = np.linspace(0, math.pi / 2, 9)
        probs = [class_probability(np.array([math.cos(a), math.sin(a)]), base) for a in angles]
        assert all(a > b for a, b in zip(probs, probs[1:]))

    def test_unnormalized_rejected(self):
        pair = _pair_from_vectors([1.0, 0.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            class_probability(np.array([2.0, 0.0]), pair)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_interleaved_example(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == pytest.approx(0.75)

    def test_all_ties_give_half(self):
        assert roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [0, 0])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(50)
        labels = rng.integers(0, 2, 50)
        labels[0], labels[1] = 0, 1
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(3 * scores + 7, labels) == pytest.approx(base, abs=1e-12)

    def test_negation_complements_without_ties(self):
        rng = np.random.default_rng(2)
        scores = rng.permutation(40).astype(float)  # distinct scores
        labels = rng.integers(0, 2, 40)
        labels[0], labels[1] = 0, 1
        assert roc_auc(-scores, labels) == pytest.approx(1 - roc_auc(scores, labels), abs=1e-12)

    @given(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.9, 1.0]), min_size=2, max_size=60),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=80, deadline=None)
    def test_matches_brute_force_oracle(self, scores, seed):
        labels = np.random.default_rng(seed).integers(0, 2, len(scores)).tolist()
        if sum(labels) in (0, len(labels)):
            labels[0] = 1 - labels[0]
        if sum(labels) in (0, len(labels)):
            return  # length-1 lists cannot hold both classes
        assert roc_auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


class TestEvaluate:
    def _manifest(self, tmp_path, n=60, seed=0):
        from nova.synthdata import SyntheticSpec, generate_dataset

        spec = SyntheticSpec(samples_per_class=n // 4, seed=seed)
        return generate_dataset(spec, tmp_path)

    def test_macro_is_mean_and_chance_level(self, tmp_path, model):
        manifest = self._manifest(tmp_path / "d", n=160)
        report = evaluate(model, manifest)
        assert report.macro_auc == pytest.approx(np.mean(list(report.per_class.values())))
        # single random models have high per-class variance (images within a
        # class are correlated), so chance level is a Monte Carlo mean over seeds
        macros = [report.macro_auc]
        for seed in range(1, 6):
            torch.manual_seed(seed)
            m = NovaModel(
                ViTConfig(width=32, depth=1, heads=2, patch_size=32),
                predictor_cfg=PredictorConfig(in_dim=32, hidden=16, out_dim=8),
                text_dim=16,
            )
            macros.append(evaluate(m, manifest).macro_auc)
        assert abs(np.mean(macros) - 0.5) <= 0.05

    def test_label_permutation_chance_level(self, tmp_path, model):
        manifest = self._manifest(tmp_path / "e", n=160, seed=3)
        rng = np.random.default_rng(4)
        for rec in manifest.records:
            values = list(rec.labels.values())
            rng.shuffle(values)
            rec.labels.update(dict(zip(rec.labels, values)))
        report = evaluate(model, manifest)
        for auc in report.per_class.values():
            assert abs(auc - 0.5) <= 0.09

    def test_single_valued_class_excluded_with_warning(self, tmp_path, model):
        manifest = self._manifest(tmp_path / "f", n=40, seed=5)
        for rec in manifest.records:
            rec.labels["blob"] = 0
        report = evaluate(model, manifest)
        assert "blob" not in report.per_class
        assert any("blob" in w for w in report.warnings)
        assert report.macro_auc == pytest.approx(np.mean(list(report.per_class.values())))

    def test_probability_rank_equals_margin_rank(self, model):
        rng = np.random.default_rng(6)
        pair = _pair_from_vectors(rng.standard_normal(8), rng.standard_normal(8))
        vs = rng.standard_normal((30, 8))
        vs /= np.linalg.norm(vs, axis=1, keepdims=True)
        probs = np.array([class_probability(v, pair) for v in vs])
        margins = vs @ pair.t_plus - vs @ pair.t_minus
        assert np.array_equal(np.argsort(probs), np.argsort(margins))
