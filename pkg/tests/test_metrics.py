"""Scoring tests: decision table, exact rational aggregation, kappa, judge.

Oracles here are deliberately independent re-implementations: a direct
decision-table counter for aggregate() and the textbook kappa formula in
floats for cohen_kappa().
"""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from opqrs.llm import BackendConfig, BackendKind, write_mock_fixture
from opqrs.metrics import (
    AgreementReport,
    JudgeUnparseableError,
    LengthMismatchError,
    MixedEntitiesError,
    aggregate,
    classify,
    cohen_kappa,
    judge_with_llm,
    score_group,
    sweep_threshold,
    JUDGE_CLARIFICATION,
)
from opqrs.prompts import build_judge_prompt, load_prompt_config
from opqrs.types import EntityKind, MatcherKind, MatchOutcome, Verdict

E = EntityKind.ONSET


def outcome(verdict, matcher=MatcherKind.EXACT, entity=E, similarity=None):
    return MatchOutcome(note_id="n", entity=entity, matcher=matcher,
                        verdict=verdict, similarity=similarity)


# ---------------------------------------------------------------------------
# classify: the decision table
# ---------------------------------------------------------------------------


def test_both_empty_is_tn():
    assert classify("", "", MatcherKind.EXACT, entity=E).verdict is Verdict.TN


def test_gold_empty_prediction_present_is_fp():
    assert classify("something", "", MatcherKind.EXACT, entity=E).verdict is Verdict.FP


def test_prediction_empty_gold_present_is_fn():
    assert classify("", "gold", MatcherKind.EXACT, entity=E).verdict is Verdict.FN


def test_identical_phrases_are_tp():
    got = classify("about 7 or 7:30 this evening", "about 7 or 7:30 this evening",
                   MatcherKind.EXACT, entity=E)
    assert got.verdict is Verdict.TP


def test_exact_mismatch_counts_fp_plus_fn():
    got = classify("7:30 this evening", "about 7 or 7:30 this evening",
                   MatcherKind.EXACT, entity=E)
    assert got.verdict is Verdict.MISMATCH
    metrics = aggregate([got], E)
    assert (metrics.tp, metrics.fp, metrics.fn, metrics.tn) == (0, 1, 1, 0)


def test_exact_matcher_is_symmetric():
    for a, b in [("x", "y"), ("same", "same"), ("p q", "p  q")]:
        fwd = classify(a, b, MatcherKind.EXACT, entity=E).verdict
        rev = classify(b, a, MatcherKind.EXACT, entity=E).verdict
        assert (fwd is Verdict.TP) == (rev is Verdict.TP)


def test_embedding_threshold_decides_tp():
    fn_high = lambda p, g: 0.9
    fn_low = lambda p, g: 0.7
    hit = classify("7:30 this evening", "about 7 or 7:30 this evening",
                   MatcherKind.EMBEDDING, entity=E, similarity_fn=fn_high, threshold=0.85)
    miss = classify("7:30 this evening", "about 7 or 7:30 this evening",
                    MatcherKind.EMBEDDING, entity=E, similarity_fn=fn_low, threshold=0.85)
    assert hit.verdict is Verdict.TP and hit.similarity == 0.9
    assert miss.verdict is Verdict.MISMATCH and miss.similarity == 0.7


def test_soft_matchers_short_circuit_on_equality():
    def exploding(p, g):
        raise AssertionError("matcher must not be consulted on equal strings")

    got = classify("same", "same", MatcherKind.LLM_JUDGE, entity=E, judge_fn=exploding)
    assert got.verdict is Verdict.TP
    got = classify("same", "same", MatcherKind.EMBEDDING, entity=E, similarity_fn=exploding)
    assert got.verdict is Verdict.TP


# ---------------------------------------------------------------------------
# score_group: multi-mention replicas
# ---------------------------------------------------------------------------


def test_group_prediction_matches_one_replica_only():
    got = score_group("b", ["a", "b"], MatcherKind.EXACT, entity=E)
    assert [o.verdict for o in got] == [Verdict.FN, Verdict.TP]


def test_group_mismatch_adds_fn_per_extra_replica():
    got = score_group("x", ["a", "b", "c"], MatcherKind.EXACT, entity=E)
    assert sorted(o.verdict.value for o in got) == ["fn", "fn", "mismatch"]
    metrics = aggregate(got, E)
    assert (metrics.tp, metrics.fp, metrics.fn) == (0, 1, 3)


def test_group_empty_prediction_misses_every_replica():
    got = score_group("", ["a", "b"], MatcherKind.EXACT, entity=E)
    assert [o.verdict for o in got] == [Verdict.FN, Verdict.FN]


def test_group_embedding_best_similarity_wins():
    scores = {("p", "a"): 0.4, ("p", "b"): 0.95, ("p", "c"): 0.9}
    got = score_group("p", ["a", "b", "c"], MatcherKind.EMBEDDING, entity=E,
                      similarity_fn=lambda p, g: scores[(p, g)], threshold=0.85)
    assert [o.verdict for o in got] == [Verdict.FN, Verdict.TP, Verdict.FN]
    assert got[1].similarity == 0.95


def test_group_judge_first_yes_wins():
    calls = []

    def judge(p, g):
        calls.append(g)
        return g == "b"

    got = score_group("p", ["a", "b", "c"], MatcherKind.LLM_JUDGE, entity=E, judge_fn=judge)
    assert [o.verdict for o in got] == [Verdict.FN, Verdict.TP, Verdict.FN]
    assert calls == ["a", "b"]  # stops at the first yes


# ---------------------------------------------------------------------------
# aggregate: exact rational arithmetic
# ---------------------------------------------------------------------------


def test_aggregate_worked_example():
    outcomes = [outcome(Verdict.TP), outcome(Verdict.TP),
                outcome(Verdict.MISMATCH), outcome(Verdict.FN)]
    metrics = aggregate(outcomes, E)
    assert (metrics.tp, metrics.fp, metrics.fn, metrics.tn) == (2, 1, 2, 0)
    assert metrics.precision == Fraction(2, 3)
    assert metrics.recall == Fraction(1, 2)
    assert metrics.f1 == Fraction(4, 7)


def test_aggregate_all_tn_uses_zero_conventions():
    metrics = aggregate([outcome(Verdict.TN)] * 4, E)
    assert metrics.precision == metrics.recall == metrics.f1 == Fraction(0)
    assert metrics.tn == 4


def test_aggregate_perfect_case():
    metrics = aggregate([outcome(Verdict.TP)] * 5, E)
    assert metrics.precision == metrics.recall == metrics.f1 == Fraction(1)


def test_aggregate_rejects_mixed_entities():
    with pytest.raises(MixedEntitiesError):
        aggregate([outcome(Verdict.TP), outcome(Verdict.TP, entity=EntityKind.REGION)], E)


def _oracle_metrics(pairs, matched):
    """Brute-force decision-table counter plus direct ratio formulas."""
    tp = fp = fn = tn = 0
    for pred, gold in pairs:
        if not pred and not gold:
            tn += 1
        elif not gold:
            fp += 1
        elif not pred:
            fn += 1
        elif matched(pred, gold):
            tp += 1
        else:
            fp += 1
            fn += 1
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return tp, fp, fn, tn, precision, recall, f1


def test_aggregate_equals_brute_force_on_random_sets():
    rng = random.Random(20240811)
    vocab = ["", "", "alpha", "beta", "gamma", "delta phrase", "x"]
    for _ in range(1000):
        n = rng.randint(1, 20)
        pairs = [(rng.choice(vocab), rng.choice(vocab)) for _ in range(n)]
        use_embedding = rng.random() < 0.5
        if use_embedding:
            sim = lambda p, g: ((hash((p, g)) % 100) / 100.0)
            threshold = rng.choice([0.25, 0.5, 0.75])
            outcomes = [
                classify(p, g, MatcherKind.EMBEDDING, entity=E,
                         similarity_fn=sim, threshold=threshold)
                for p, g in pairs
            ]
            matched = lambda p, g: p == g or sim(p, g) >= threshold
        else:
            outcomes = [classify(p, g, MatcherKind.EXACT, entity=E) for p, g in pairs]
            matched = lambda p, g: p == g
        metrics = aggregate(outcomes, E)
        expected = _oracle_metrics(pairs, matched)
        got = (metrics.tp, metrics.fp, metrics.fn, metrics.tn,
               metrics.precision, metrics.recall, metrics.f1)
        assert got == expected


# ---------------------------------------------------------------------------
# soft-match dominance and threshold monotonicity
# ---------------------------------------------------------------------------


def _stub_similarity(p, g):
    return ((hash((g, p)) % 1000) / 1000.0)


def _random_groups(rng):
    vocab = ["", "alpha", "beta", "gamma", "delta", "epsilon zeta"]
    groups = []
    for _ in range(rng.randint(1, 15)):
        if rng.random() < 0.2:
            golds = rng.sample(["alpha", "beta", "gamma", "delta"], rng.randint(2, 3))
        else:
            golds = [rng.choice(vocab)]
        pred = rng.choice(vocab)
        if golds == [""] and rng.random() < 0.5:
            pred = ""
        groups.append((pred, golds))
    return groups


def _f1_for(groups, matcher, threshold=0.85):
    outcomes = []
    for pred, golds in groups:
        outcomes.extend(score_group(
            pred, golds, matcher, entity=E,
            similarity_fn=_stub_similarity if matcher is MatcherKind.EMBEDDING else None,
            threshold=threshold,
        ))
    return aggregate(outcomes, E).f1


def test_soft_match_f1_dominates_exact_f1():
    rng = random.Random(7)
    for _ in range(100):
        groups = _random_groups(rng)
        exact = _f1_for(groups, MatcherKind.EXACT)
        for threshold in (0.0, 0.25, 0.5, 0.85, 1.0):
            assert _f1_for(groups, MatcherKind.EMBEDDING, threshold) >= exact


def test_lower_threshold_never_hurts():
    rng = random.Random(13)
    for _ in range(100):
        groups = _random_groups(rng)
        thresholds = sorted(rng.uniform(0, 1) for _ in range(4))
        results = []
        for threshold in thresholds:
            outcomes = []
            for pred, golds in groups:
                outcomes.extend(score_group(pred, golds, MatcherKind.EMBEDDING, entity=E,
                                            similarity_fn=_stub_similarity,
                                            threshold=threshold))
            metrics = aggregate(outcomes, E)
            results.append(metrics)
        # thresholds ascend: tp must not increase, fp+fn must not decrease
        for low, high in zip(results, results[1:]):
            assert low.tp >= high.tp
            assert low.fp + low.fn <= high.fp + high.fn


# ---------------------------------------------------------------------------
# Cohen's kappa
# ---------------------------------------------------------------------------


def test_kappa_self_agreement():
    report = cohen_kappa([1, 0, 1, 1], [1, 0, 1, 1])
    assert report.kappa == 1
    assert report.observed_agreement == 1


def test_kappa_worked_example_is_exactly_zero():
    report = cohen_kappa([1, 1, 0, 0], [1, 0, 0, 1])
    assert report.observed_agreement == Fraction(1, 2)
    assert report.expected_agreement == Fraction(1, 2)
    assert report.kappa == 0


def test_kappa_constant_equal_raters_convention():
    report = cohen_kappa([1, 1, 1], [1, 1, 1])
    assert report.expected_agreement == 1
    assert report.kappa == 1


def test_kappa_length_mismatch():
    with pytest.raises(LengthMismatchError):
        cohen_kappa([1, 0], [1])
    with pytest.raises(LengthMismatchError):
        cohen_kappa([], [])


def test_kappa_matches_direct_formula_on_random_pairs():
    rng = random.Random(99)
    for _ in range(10_000):
        n = rng.randint(1, 25)
        a = [rng.randint(0, 1) for _ in range(n)]
        b = [rng.randint(0, 1) for _ in range(n)]
        report = cohen_kappa(a, b)
        po = sum(1 for x, y in zip(a, b) if x == y) / n
        pa1, pb1 = sum(a) / n, sum(b) / n
        pe = pa1 * pb1 + (1 - pa1) * (1 - pb1)
        expected = 1.0 if pe == 1.0 else (po - pe) / (1 - pe)
        assert abs(float(report.kappa) - expected) <= 1e-12
        assert -1 <= report.kappa <= 1
        if a == b:
            assert report.kappa == 1


# ---------------------------------------------------------------------------
# judge_with_llm over the mock backend
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def onset_config():
    return load_prompt_config()[EntityKind.ONSET]


def _judge_backend(tmp_path):
    return BackendConfig(kind=BackendKind.MOCK, model_name="judge-mock",
                         fixtures_dir=tmp_path, strict_fixtures=True)


def test_judge_yes_fixture(tmp_path, onset_config):
    prompt = build_judge_prompt(E, "yesterday", "yesterday evening", onset_config)
    write_mock_fixture(tmp_path, prompt.rendered, "they refer to the same time. @yes@")
    assert judge_with_llm("yesterday evening", "yesterday", E, onset_config,
                          _judge_backend(tmp_path)) is True


def test_judge_no_fixture(tmp_path, onset_config):
    prompt = build_judge_prompt(E, "two days ago", "this morning", onset_config)
    write_mock_fixture(tmp_path, prompt.rendered, "different times entirely. @no@")
    assert judge_with_llm("this morning", "two days ago", E, onset_config,
                          _judge_backend(tmp_path)) is False


def test_judge_retries_with_clarification(tmp_path, onset_config):
    prompt = build_judge_prompt(E, "gold phrase", "predicted phrase", onset_config)
    write_mock_fixture(tmp_path, prompt.rendered, "rambling with no verdict token")
    write_mock_fixture(tmp_path, prompt.rendered + JUDGE_CLARIFICATION, "@no@")
    assert judge_with_llm("predicted phrase", "gold phrase", E, onset_config,
                          _judge_backend(tmp_path)) is False


def test_judge_unparseable_after_retry(tmp_path, onset_config):
    prompt = build_judge_prompt(E, "gold phrase", "predicted phrase", onset_config)
    write_mock_fixture(tmp_path, prompt.rendered, "nothing useful")
    write_mock_fixture(tmp_path, prompt.rendered + JUDGE_CLARIFICATION, "still nothing")
    with pytest.raises(JudgeUnparseableError):
        judge_with_llm("predicted phrase", "gold phrase", E, onset_config,
                       _judge_backend(tmp_path))


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------


def test_sweep_threshold_recovers_separator():
    scored = []
    human = {}
    for i in range(10):
        key = (f"n{i}", E)
        correct = i % 2 == 0
        scored.append((key[0], E, 0.9 if correct else 0.6, False))
        human[key] = correct
    threshold, kappa = sweep_threshold(scored, human)
    assert 0.6 < threshold <= 0.9
    assert kappa == 1
