import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dxtraj.ehr_data import build_vocabulary
from dxtraj.evaluation import (
    grid_to_csv,
    random_baseline,
    recall_at_k,
    run_comparison,
    evaluate_model,
)
from dxtraj.numerics import SeededRng
from dxtraj.synth import SynthSpec, generate_cohort
from dxtraj.training import TrainConfig, train, split_patients


def brute_force_recall(yhat, targets, k):
    """Independent oracle: sort (score desc, index asc) with plain Python."""
    order = sorted(range(len(yhat)), key=lambda i: (-yhat[i], i))
    top = set(order[:k])
    return len(top & set(targets)) / len(set(targets))


def test_recall_examples():
    y = np.linspace(1.0, 0.1, 20)
    assert recall_at_k(y, {1, 2, 3}, 10) == 1.0
    yhat = np.zeros(10)
    yhat[[1, 9]] = [0.9, 0.8]
    assert recall_at_k(yhat, {1, 2, 3, 4}, 2) == 0.25


def test_recall_errors():
    with pytest.raises(ValueError):
        recall_at_k(np.ones(5), set(), 2)
    with pytest.raises(ValueError):
        recall_at_k(np.ones(5), {1}, 6)


def test_recall_full_k_is_one():
    rng = SeededRng(0)
    y = rng.uniform(17)
    assert recall_at_k(y, {0, 5, 16}, 17) == 1.0


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_recall_monotone_in_k(seed):
    rng = SeededRng(seed)
    y = rng.uniform(12)
    targets = set(int(i) for i in rng.choice(12, size=4, replace=False))
    values = [recall_at_k(y, targets, k) for k in range(1, 13)]
    assert values == sorted(values)
    assert values[-1] == 1.0


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_recall_rank_invariance(seed):
    rng = SeededRng(seed)
    y = rng.uniform(9) + 0.1
    targets = {1, 4}
    for k in (1, 3, 9):
        assert recall_at_k(y, targets, k) == recall_at_k(y ** 2, targets, k)


def test_recall_matches_brute_force_oracle():
    rng = SeededRng(42)
    for _ in range(2000):
        n = int(rng.integers(2, 30))
        yhat = np.round(rng.uniform(n), 2)  # rounding forces tie cases
        n_t = int(rng.integers(1, n + 1))
        targets = set(int(i) for i in rng.choice(n, size=n_t, replace=False))
        k = int(rng.integers(1, n + 1))
        assert recall_at_k(yhat, targets, k) == \
            brute_force_recall(list(yhat), targets, k)


def test_random_baseline_uniform_expectation():
    # mean Recall@k of uniform scores approaches k / |D|
    cohort = generate_cohort(SynthSpec(n_patients=400, vocab_size=271,
                                       n_states=8, seed=3))
    vocab = build_vocabulary(cohort)
    res = random_baseline(cohort, vocab, SeededRng(9), ks=(10,))
    n = len(res[10].values)
    expected = 10.0 / len(vocab)
    se = np.std(res[10].values) / np.sqrt(n)
    assert abs(res[10].mean - expected) <= 3 * se + 1e-3


def test_evaluate_model_counts_one_sample_per_transition():
    cohort = generate_cohort(SynthSpec(n_patients=6, vocab_size=30,
                                       n_states=3, seed=1))
    vocab = build_vocabulary(cohort)
    cfg = TrainConfig(seed=0, max_epochs=2)
    model, _ = train(cohort, cfg)
    res = evaluate_model(model, cohort, vocab, ks=(10,))
    n_transitions = sum(len(p.admissions) - 1 for p in cohort)
    assert len(res[10].values) == n_transitions
    assert res[10].mean == pytest.approx(np.mean(res[10].values))


def test_evaluate_model_single_transition():
    cohort = generate_cohort(SynthSpec(n_patients=6, vocab_size=30,
                                       n_states=3, seed=1))
    single = [p for p in cohort if len(p.admissions) == 2][:1]
    assert single
    vocab = build_vocabulary(cohort)
    model, _ = train(cohort, TrainConfig(seed=0, max_epochs=1))
    res = evaluate_model(model, single, vocab, ks=(10,))
    assert res[10].mean == res[10].values[0]


def test_perfect_memorizer_reaches_one():
    cohort = generate_cohort(SynthSpec(n_patients=10, vocab_size=40,
                                       n_states=4, noise_rate=0.0, seed=7))
    vocab = build_vocabulary(cohort)
    cfg = TrainConfig(seed=1, max_epochs=200, patience_epochs=200)
    model, _ = train(cohort, cfg)
    res = evaluate_model(model, cohort, vocab, ks=(30,))
    assert res[30].mean == 1.0


def test_run_comparison_single_config_and_failure_isolation():
    cohort = generate_cohort(SynthSpec(n_patients=12, vocab_size=25,
                                       n_states=3, seed=5))
    grid = [
        {"label": "mgru", "cell_kind": "mgru", "max_epochs": 2},
        {"label": "broken", "cell_kind": "no-such-cell", "max_epochs": 1},
        {"label": "random", "random_baseline": True},
    ]
    rows = run_comparison(cohort, grid, seeds=[0])
    assert not rows[0].failed and rows[0].recall
    assert rows[1].failed and "no-such-cell" in rows[1].error
    assert not rows[2].failed
    assert rows[2].iterations == 1.0

    direct_model, direct_report = train(
        cohort, TrainConfig(seed=0, cell_kind="mgru", max_epochs=2))
    for k, v in rows[0].recall.items():
        assert v == pytest.approx(direct_report.recall[k])

    csv = grid_to_csv(rows)
    assert csv.splitlines()[0].startswith("label,recall@")
    assert "broken" in csv


def test_run_comparison_deterministic():
    cohort = generate_cohort(SynthSpec(n_patients=10, vocab_size=20,
                                       n_states=3, seed=2))
    grid = [{"label": "m", "cell_kind": "mgru", "max_epochs": 2}]
    r1 = run_comparison(cohort, grid, seeds=[0, 1])
    r2 = run_comparison(cohort, grid, seeds=[0, 1])
    assert r1[0].recall == r2[0].recall
    assert r1[0].iterations == r2[0].iterations


def test_random_baseline_row_near_chance():
    # noise makes every one of the 271 codes appear in the cohort
    cohort = generate_cohort(SynthSpec(n_patients=300, vocab_size=271,
                                       n_states=20, noise_rate=0.3, seed=4))
    _, test = split_patients(cohort, 0.9, SeededRng(0))
    vocab = build_vocabulary(cohort)
    assert len(vocab) == 271
    res = random_baseline(test, vocab, SeededRng(1), ks=(10,))
    values = res[10].values
    se = np.std(values) / np.sqrt(len(values))
    assert abs(res[10].mean - 10 / 271) <= 3 * se + 2e-3
