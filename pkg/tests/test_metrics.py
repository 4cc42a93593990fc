import math

import pytest
from hypothesis import given, settings, strategies as st

from lampsum.metrics import (MetricError, MetricValue, accuracy, aggregate_runs, evaluate, higher_is_better,
                             lcs_length, mae, macro_f1, parse_rating_prediction, rmse, rouge1, rougeL)
from lampsum.retrieval import tokenize
from oracles import (accuracy_oracle, lcs_oracle, macro_f1_oracle, mae_oracle, rmse_oracle, rouge1_oracle,
                     rougeL_oracle)


def test_accuracy_half():
    assert accuracy(["[1]", "[2]"], ["[1]", "[1]"]).value == 0.5


def test_accuracy_normalizes_case_and_space():
    assert accuracy([" Politics\n"], ["politics"]).value == 1.0


def test_macro_f1_hand_computed():
    # label a: p=1/2 r=1 f=2/3; label b: f=0
    assert macro_f1(["a", "a"], ["a", "b"], ["a", "b"]).value == pytest.approx(1 / 3, abs=1e-12)


def test_macro_f1_invalid_prediction_counts_as_wrong():
    assert macro_f1(["zzz", "b"], ["a", "b"], ["a", "b"]).value == pytest.approx(0.5)


def test_macro_f1_ignores_labels_absent_from_golds():
    assert macro_f1(["a"], ["a"], ["a", "b", "c"]).value == 1.0


def test_macro_f1_gold_outside_label_set():
    with pytest.raises(MetricError):
        macro_f1(["a"], ["q"], ["a"])


def test_mae_rmse_example():
    assert mae(["4", "3"], ["5", "3"]).value == 0.5
    assert rmse(["4", "3"], ["5", "3"]).value == pytest.approx(math.sqrt(0.5), abs=1e-12)


@pytest.mark.parametrize("pred, gold, error", [("great", 5, 4), ("", 1, 4), ("4.5", 2, 3), ("7", 3, 2), ("4.0", 4, 0)])
def test_unparseable_rating_scored_as_farthest(pred, gold, error):
    assert abs(parse_rating_prediction(pred, gold) - gold) == error


def test_rouge_example():
    assert rouge1("the cat sat", "the cat ran") == pytest.approx(2 / 3, abs=1e-12)
    assert rougeL("the cat sat", "the cat ran") == pytest.approx(2 / 3, abs=1e-12)


def test_rouge_empty_conventions():
    assert rouge1("", "") == rougeL("", "") == 1.0
    assert rouge1("", "x") == rougeL("x", "") == 0.0


def test_rougeL_respects_order():
    assert rouge1("a b c", "c b a") == 1.0
    assert rougeL("a b c", "c b a") == pytest.approx(1 / 3)


def test_evaluate_order_and_mismatched_lengths():
    out = evaluate(["rougeL", "rouge1"], ["a b"], ["a c"])
    assert list(out) == ["rougeL", "rouge1"]
    with pytest.raises(MetricError):
        evaluate(["accuracy"], ["a"], ["a", "b"])
    with pytest.raises(MetricError):
        evaluate(["bleu"], ["a"], ["a"])


def test_metric_value_range_checked():
    with pytest.raises(MetricError):
        MetricValue("accuracy", 1.5, 3)
    with pytest.raises(MetricError):
        MetricValue("mae", 0.1, 0)


def test_direction():
    assert higher_is_better("rouge1") and not higher_is_better("mae")
    with pytest.raises(MetricError):
        higher_is_better("perplexity")


def test_aggregate_three_runs():
    agg = aggregate_runs([MetricValue("accuracy", v, 10) for v in (0.70, 0.71, 0.72)])
    assert agg.mean == pytest.approx(0.71, abs=1e-12)
    assert agg.stddev == pytest.approx(0.01, abs=1e-12)
    assert agg.n_runs == 3


def test_aggregate_single_run_has_zero_spread():
    agg = aggregate_runs([MetricValue("rouge1", 0.4, 5)])
    assert (agg.mean, agg.stddev) == (0.4, 0.0)


def test_aggregate_refuses_mixed_metrics():
    with pytest.raises(MetricError):
        aggregate_runs([MetricValue("mae", 0.3, 5), MetricValue("rmse", 0.5, 5)])
    with pytest.raises(MetricError):
        aggregate_runs([])


LABELS = ["a", "b", "c", "d"]
label_pairs = st.lists(st.tuples(st.sampled_from(LABELS + ["A ", "zz"]), st.sampled_from(LABELS)), min_size=1,
                       max_size=40)
rating_text = st.one_of(st.integers(-2, 8).map(str), st.sampled_from(["", "five", "3.0", "2.5", " 4 ", "nan"]))
rating_pairs = st.lists(st.tuples(rating_text, st.integers(1, 5).map(str)), min_size=1, max_size=40)
words = st.lists(st.sampled_from(["the", "cat", "sat", "on", "mat", "a"]), max_size=9)


@given(label_pairs)
def test_accuracy_and_f1_match_oracles(pairs):
    preds, golds = map(list, zip(*pairs))
    assert accuracy(preds, golds).value == pytest.approx(accuracy_oracle(preds, golds), abs=1e-9)
    assert macro_f1(preds, golds, LABELS).value == pytest.approx(macro_f1_oracle(preds, golds, LABELS), abs=1e-9)


@given(rating_pairs)
def test_rating_errors_match_oracles_and_mae_le_rmse(pairs):
    preds, golds = map(list, zip(*pairs))
    m, r = mae(preds, golds).value, rmse(preds, golds).value
    assert m == pytest.approx(mae_oracle(preds, golds), abs=1e-9)
    assert r == pytest.approx(rmse_oracle(preds, golds), abs=1e-9)
    assert m <= r + 1e-12


@settings(max_examples=300)
@given(words, words)
def test_rouge_matches_oracles(a, b):
    pa, pb = " ".join(a), " ".join(b)
    assert rouge1(pa, pb) == pytest.approx(rouge1_oracle(tokenize(pa), tokenize(pb)), abs=1e-9)
    assert rougeL(pa, pb) == pytest.approx(rougeL_oracle(tokenize(pa), tokenize(pb)), abs=1e-9)
    assert rouge1(pa, pb) == pytest.approx(rouge1(pb, pa), abs=1e-12)
    assert rougeL(pa, pb) == pytest.approx(rougeL(pb, pa), abs=1e-12)
    assert 0.0 <= rougeL(pa, pb) <= rouge1(pa, pb) + 1e-12 <= 1.0 + 2e-12


@given(words, words)
def test_lcs_bounds(a, b):
    n = lcs_length(a, b)
    assert n == lcs_oracle(a, b)
    assert n <= min(len(a), len(b))
