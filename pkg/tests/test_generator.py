import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from sce.generator import (
    FEATURES, PREDICTIVE_FEATURES, Alternating, FeatureVector, InfeasibleSpec, MonotonicStep, OutOfRange,
    SCETest, Shape, TestSpec, WrongFeature, apply_rule, condition_grid, easy_hard_conditions, feature_domain,
    full_grid, read_manifest, sample_test, write_manifest, write_test,
)


def test_domain_cardinalities():
    sizes = [len(feature_domain(f)) for f in ("number", "shade", "shape", "size")]
    assert sizes == [9, 6, 5, 6]


def test_feature_vector_validation():
    with pytest.raises(OutOfRange):
        FeatureVector(0, 0, Shape.CIRCLE, 0, tuple(range(9)))
    with pytest.raises(OutOfRange):
        FeatureVector(1, 6, Shape.CIRCLE, 0, tuple(range(9)))
    with pytest.raises(OutOfRange):
        FeatureVector(1, 0, Shape.CIRCLE, 0, (0, 0, 1, 2, 3, 4, 5, 6, 7))


def test_alternating_rule():
    rule = Alternating(Shape.TRIANGLE, Shape.SQUARE)
    assert apply_rule(rule, Shape.TRIANGLE) == Shape.SQUARE
    assert apply_rule(rule, Shape.SQUARE) == Shape.TRIANGLE
    with pytest.raises(WrongFeature):
        apply_rule(rule, 3)
    with pytest.raises(ValueError):
        Alternating(Shape.STAR, Shape.STAR)


def test_monotonic_rule():
    assert apply_rule(MonotonicStep("number", 1), 3) == 4
    with pytest.raises(OutOfRange):
        apply_rule(MonotonicStep("shade", -1), 0)
    with pytest.raises(OutOfRange):
        apply_rule(MonotonicStep("size", 1), 5)
    with pytest.raises(WrongFeature):
        apply_rule(MonotonicStep("number", 1), Shape.STAR)
    with pytest.raises(WrongFeature):
        MonotonicStep("shape", 1)


def test_size_easy_seed_7():
    test = sample_test(TestSpec("size", seed=7))
    seq = [f.size_idx for f in test.sequence_features]
    answer = test.choice_features[test.correct_idx].size_idx
    assert (seq, answer) in (([0, 1, 2, 3, 4], 5), ([5, 4, 3, 2, 1], 0))
    images = test.sequence_features + test.choice_features
    for feat in ("number", "shade", "shape", "positions"):
        assert len({f.get(feat) for f in images}) == 1


def test_hard_condition_varies_every_distractor():
    spec = TestSpec("shade", ("number", "shape", "size", "positions"))
    assert spec.difficulty == 4
    rng = np.random.default_rng(3)
    varied = {f: False for f in spec.distractors}
    for _ in range(20):
        test = sample_test(spec, rng)
        images = test.sequence_features + test.choice_features
        for f in spec.distractors:
            varied[f] |= len({im.get(f) for im in images}) > 1
    assert all(varied.values())


def _check_invariants(test: SCETest):
    spec = test.spec
    p = spec.predictive
    seq = [f.get(p) for f in test.sequence_features]
    for a, b in zip(seq, seq[1:]):
        assert apply_rule(test.rule, a) == b
    answer = apply_rule(test.rule, seq[-1])
    choices = [f.get(p) for f in test.choice_features]
    assert choices[test.correct_idx] == answer
    wrong = [c for i, c in enumerate(choices) if i != test.correct_idx]
    assert answer not in wrong and len(set(wrong)) == len(wrong)
    images = test.sequence_features + test.choice_features
    for f in spec.constants:
        assert len({im.get(f) for im in images}) == 1


@settings(max_examples=60, deadline=None)
@given(spec_idx=st.integers(0, 63), seed=st.integers(0, 2**32), both=st.booleans())
def test_generated_tests_satisfy_invariants(spec_idx, seed, both):
    spec = full_grid()[spec_idx]
    spec = TestSpec(spec.predictive, spec.distractors, seed=seed, directions="both" if both else "ascending")
    _check_invariants(sample_test(spec))


def test_incorrect_choices_distinct_over_many_tests():
    rng = np.random.default_rng(11)
    for f in PREDICTIVE_FEATURES:
        for _ in range(250):
            _check_invariants(sample_test(TestSpec(f, ("positions",)), rng))


def test_same_seed_same_test():
    spec = TestSpec("number", ("shade", "size"), seed=42)
    a, b = sample_test(spec), sample_test(spec)
    assert a.sequence_features == b.sequence_features and a.choice_features == b.choice_features
    assert a.correct_idx == b.correct_idx


def test_ascending_default_and_both_directions():
    rng = np.random.default_rng(5)
    dirs = {sample_test(TestSpec("number"), rng).rule.direction for _ in range(50)}
    assert dirs == {1}
    dirs = {sample_test(TestSpec("number", directions="both"), rng).rule.direction for _ in range(50)}
    assert dirs == {1, -1}
    with pytest.raises(ValueError):
        TestSpec("number", directions="down")


def test_number_starts():
    rng = np.random.default_rng(9)
    starts = {}
    for _ in range(400):
        t = sample_test(TestSpec("number", directions="both"), rng)
        starts.setdefault(t.rule.direction, set()).add(t.sequence_features[0].number)
    assert starts[1] == {1, 2, 3, 4} and starts[-1] == {6, 7, 8, 9}


def test_correct_index_uniform():
    rng = np.random.default_rng(21)
    counts = np.bincount([sample_test(TestSpec("size"), rng).correct_idx for _ in range(10_000)], minlength=4)
    assert chisquare(counts).pvalue > 0.01


@pytest.mark.parametrize("feature", ["number", "shade", "size", "shape"])
def test_distractor_values_uniform(feature):
    predictive = "size" if feature != "size" else "shade"
    rng = np.random.default_rng(31)
    values = []
    for _ in range(1000):
        t = sample_test(TestSpec(predictive, (feature,)), rng)
        values += [f.get(feature) for f in t.sequence_features + t.choice_features]
    _, counts = np.unique([str(v) for v in values], return_counts=True)
    assert len(counts) == len(feature_domain(feature))
    assert chisquare(counts).pvalue > 0.01


def test_infeasible_spec():
    with pytest.raises(InfeasibleSpec):
        sample_test(TestSpec("shape", n=6))
    with pytest.raises(WrongFeature):
        TestSpec("positions")
    with pytest.raises(ValueError):
        TestSpec("size", ("size",))


def test_condition_grid_counts():
    grid = condition_grid("size")
    assert len(grid) == 16
    assert [s.difficulty for s in grid].count(0) == 1 and [s.difficulty for s in grid].count(4) == 1
    assert sum("positions" in s.distractors for s in condition_grid("shape")) == 8
    assert len(full_grid()) == 64 and len({s.condition_id for s in full_grid()}) == 64
    for spec in full_grid():
        assert spec.predictive not in spec.distractors
        assert set(spec.constants) | set(spec.distractors) | {spec.predictive} == set(FEATURES)


def test_color_alias():
    assert TestSpec("color").predictive == "shade"
    assert condition_grid("color")[0].condition_id == "shade:-"


def test_easy_hard_conditions():
    names = [n for n, _ in easy_hard_conditions()]
    assert names == [f"{f}-{d}" for f in ("size", "shade", "number", "shape") for d in ("easy", "hard")]
    for name, spec in easy_hard_conditions():
        assert spec.difficulty == (0 if name.endswith("easy") else 4)


def test_manifest_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    tests = [sample_test(s.with_seed(i), rng) for i, s in enumerate(full_grid()[::9])]
    entries = [write_test(t, tmp_path, f"t{i}") for i, t in enumerate(tests)]
    write_manifest(tmp_path / "manifest.json", entries)
    back = read_manifest(tmp_path / "manifest.json")
    for a, b in zip(tests, back):
        assert a.spec == b.spec and a.rule == b.rule and a.correct_idx == b.correct_idx
        assert a.sequence_features == b.sequence_features and a.choice_features == b.choice_features
        for x, y in itertools.zip_longest(a.sequence_images + a.choice_images, b.sequence_images + b.choice_images):
            assert x.tobytes() == y.tobytes()
    assert len(list(tmp_path.glob("t0_*.pgm"))) == 9
