import numpy as np
import pytest

from oracle import matching_rows, random_encoded, slice_metric
from sliceprobe.evaluator import (DiffMode, EvaluationRequest, SliceEvaluator, evaluate,
                                  extract_slice_keys, overall_evaluation, poisson_weight,
                                  poisson_weights)
from sliceprobe.lattice import OVERALL, enumerate_layer
from sliceprobe.metrics import Metric, MetricName
from sliceprobe.schema import (MISSING, CategoricalDomain, EncodedDataset, EncodedExample,
                               FeatureSchema)


def lattice(schema, L):
    return [p for lv in range(1, L + 1) for p in enumerate_layer(schema, lv)]


def test_poisson_replicate_zero_is_one():
    assert np.all(poisson_weights(5, [0], np.arange(1000)) == 1.0)
    assert poisson_weight(5, 0, 123) == 1


def test_poisson_is_pure_function():
    a = poisson_weights(11, [3], [7, 8, 9])
    b = poisson_weights(11, [3], [9, 8, 7])[:, ::-1]
    assert np.array_equal(a, b)
    assert poisson_weight(11, 3, 8) == a[0, 1]
    assert not np.array_equal(poisson_weights(11, [3], np.arange(50)),
                              poisson_weights(12, [3], np.arange(50)))


def test_poisson_moments():
    w = poisson_weights(2024, np.arange(1, 11), np.arange(100_000)).ravel()
    assert w.size == 1_000_000
    assert w.mean() == pytest.approx(1.0, abs=0.01)
    assert w.var() == pytest.approx(1.0, abs=0.02)
    # P(0) = P(1) = e^-1
    assert np.mean(w == 0) == pytest.approx(np.exp(-1), abs=0.003)


def test_extract_slice_keys():
    ex = EncodedExample(0, (0, 1), 1, (0.9,))
    cands = [((0, 0),), ((1, 2),), ((0, 0), (1, 1))]
    assert extract_slice_keys(ex, cands) == [((0, 0),), ((0, 0), (1, 1))]
    assert extract_slice_keys(ex, [OVERALL]) == [OVERALL]
    missing = EncodedExample(1, (MISSING, 1), 0, (0.2,))
    assert extract_slice_keys(missing, [((0, 0),)]) == []


def toy():
    schema = FeatureSchema(("f1", "f2"), (CategoricalDomain(("a", "b")), CategoricalDomain(("x", "y"))))
    codes = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 2, dtype=np.int32)
    labels = np.array([1, 0, 1, 0, 0, 1, 1, 0], dtype=np.int8)
    scores = np.array([[0.9, 0.2, 0.3, 0.1, 0.6, 0.7, 0.8, 0.4]])
    return EncodedDataset(schema, codes, labels, scores, ("m",))


@pytest.mark.parametrize("name", [m.value for m in MetricName])
def test_toy_lattice_against_oracle(name):
    data = toy()
    res = evaluate(data, EvaluationRequest(lattice(data.schema, 2), Metric(name), replicates=5, seed=1))
    for pred, ev in res.items():
        want, size = slice_metric(data, pred, name)
        assert ev.size == size
        if want is None:
            assert ev.metric is None
        else:
            assert ev.metric == pytest.approx(want, abs=1e-9)


def test_replicate_metrics_against_weighted_oracle():
    rng = np.random.default_rng(0)
    data = random_encoded(rng, 150, 3)
    cands = lattice(data.schema, 2)
    ev = SliceEvaluator(data, Metric("accuracy"), replicates=4, seed=9)
    res = ev.evaluate(cands)
    for b in range(1, 5):
        w = poisson_weights(9, [b], np.arange(150))[0]
        overall, _ = slice_metric(data, OVERALL, "accuracy", weights=w)
        assert ev.overall_values[0][b] == pytest.approx(overall, abs=1e-12)
        for pred, s in list(res.items())[:15]:
            got = s.deltas[b - 1]
            want, _ = slice_metric(data, pred, "accuracy", weights=w)
            if want is None:
                assert np.isnan(got)
            else:
                assert got == pytest.approx(want - overall, abs=1e-12)


def test_overall_only_gives_zero_deltas():
    data = toy()
    res = evaluate(data, EvaluationRequest([OVERALL], Metric("accuracy"), replicates=10))
    assert np.all(res[OVERALL].deltas == 0.0)
    assert res[OVERALL].point_delta == 0.0


def test_baseline_with_identical_predictions():
    data = toy()
    twin = EncodedDataset(data.schema, data.codes, data.labels, np.vstack([data.scores, data.scores]),
                          ("m", "m2"))
    res = evaluate(twin, EvaluationRequest(lattice(data.schema, 2), Metric("auc"), "vs_baseline", 8))
    for ev in res.values():
        assert np.all(np.nan_to_num(ev.deltas) == 0.0)


def test_baseline_needs_two_models():
    with pytest.raises(ValueError):
        SliceEvaluator(toy(), Metric("accuracy"), DiffMode.VS_BASELINE)


def test_empty_slices_absent():
    data = toy()
    res = evaluate(data, EvaluationRequest([((0, 0),), ((0, 5),)], Metric("accuracy")))
    assert list(res) == [((0, 0),)]


def test_overall_evaluation():
    data = toy()
    req = EvaluationRequest([], Metric("accuracy"), replicates=3)
    ov = overall_evaluation(data, req)
    assert ov.size == data.num_rows
    want, _ = slice_metric(data, OVERALL, "accuracy")
    assert ov.metric == pytest.approx(want)
    perfect = EncodedDataset(data.schema, data.codes, data.labels,
                             data.labels[None, :].astype(float), ("m",))
    assert overall_evaluation(perfect, req).metric == 1.0


def test_fan_out_conservation():
    rng = np.random.default_rng(4)
    data = random_encoded(rng, 200, 4)
    cands = lattice(data.schema, 3)
    res = SliceEvaluator(data, Metric("accuracy"), replicates=2).evaluate(cands)
    emitted = sum(len(extract_slice_keys(data.example(i), cands)) for i in range(data.num_rows))
    assert sum(ev.size for ev in res.values()) == emitted


def test_undefined_replicates_are_dropped():
    # single-row slices draw weight 0 in about e^-1 of replicates
    schema = FeatureSchema(("id",), (CategoricalDomain(tuple(str(i) for i in range(40))),))
    codes = np.arange(40, dtype=np.int32)[:, None]
    labels = np.zeros(40, dtype=np.int8)
    data = EncodedDataset(schema, codes, labels, np.full((1, 40), 0.2), ("m",))
    res = SliceEvaluator(data, Metric("accuracy"), replicates=20, seed=3).evaluate(
        list(enumerate_layer(schema, 1)))
    dropped = [ev.dropped for ev in res.values()]
    assert all(len(ev.deltas) == 20 for ev in res.values())
    assert 0.25 < np.mean(dropped) / 20 < 0.5


def test_worker_count_and_partitions_do_not_change_results(monkeypatch):
    rng = np.random.default_rng(8)
    data = random_encoded(rng, 900, 4)
    cands = lattice(data.schema, 3)
    base = SliceEvaluator(data, Metric("f1"), replicates=6, seed=2, workers=1).evaluate(cands)
    import sliceprobe.evaluator as ev_mod

    monkeypatch.setattr(ev_mod, "_STATS_BUDGET_BYTES", 20_000)
    split = SliceEvaluator(data, Metric("f1"), replicates=6, seed=2, workers=3)
    assert len(split._parts) > 1
    res = split.evaluate(cands)
    assert res.keys() == base.keys()
    for p in base:
        np.testing.assert_allclose(res[p].deltas, base[p].deltas, atol=1e-9, equal_nan=True)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    data = random_encoded(rng, 300, 3)
    cands = lattice(data.schema, 2)
    a = SliceEvaluator(data, Metric("auc"), replicates=5, seed=7).evaluate(cands)
    b = SliceEvaluator(data, Metric("auc"), replicates=5, seed=7).evaluate(cands)
    for p in a:
        assert a[p].deltas.tobytes() == b[p].deltas.tobytes()


def test_oracle_equivalence_random_datasets():
    rng = np.random.default_rng(12)
    for _ in range(3):
        data = random_encoded(rng, int(rng.integers(20, 400)), 3)
        name = str(rng.choice([m.value for m in MetricName]))
        cands = lattice(data.schema, 3)[:200]
        res = evaluate(data, EvaluationRequest(cands, Metric(name), replicates=2))
        for p in cands:
            want, size = slice_metric(data, p, name)
            if size == 0:
                assert p not in res
                continue
            got = res[p].metric
            assert (got is None and want is None) or got == pytest.approx(want, abs=1e-9)
        assert res.keys() == {p for p in cands if matching_rows(data.codes, p)}
