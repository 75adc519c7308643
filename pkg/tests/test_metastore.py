import json
import multiprocessing as mp

import numpy as np
import pytest

from netcash import metastore as M
from netcash.context import ContextSpec
from netcash.engine import Candidate
from netcash.transforms import DropColumns, GroupSize

from conftest import grouped_linear_table


def meta(**kw):
    base = dict(n_rows=100, n_features=3, fraction_categorical=0.0, n_groups=1, target_cv=0.5,
                max_abs_spearman=0.3)
    base.update(kw)
    return M.MetaFeatures(**base)


def record(rid="", category="latency_estimation", metric="r2", score=0.5, n_features=3, fit=1.0, flags=None,
           mf=None, cand=None):
    cand = cand or Candidate("Ridge", {"lambda": 1.0}, ())
    return M.new_record(record_id=rid, category=category, metric=metric, context_fingerprint="ctx",
                        dataset_fingerprint="data", meta_features=mf or meta(), best_candidate=cand.to_dict(),
                        best_score=score, partition_mode="pooled", n_features=n_features,
                        total_fit_seconds=fit, flags=flags or {})


def test_meta_features_of_grouped_table():
    t = grouped_linear_table()
    mf = M.compute_meta_features(t, ContextSpec(category="generic_regression", target="y", group_key="grp",
                                                entity_key="ent"))
    assert mf.n_rows == 90 and mf.n_features == 1 and mf.n_groups == 3
    y = t.target
    assert mf.target_cv == pytest.approx(np.std(y) / abs(np.mean(y)))
    assert 0 < mf.max_abs_spearman <= 1


def test_coefficient_of_variation_zero_mean():
    assert M.coefficient_of_variation([-1.0, 1.0]) == 0.0


def test_store_round_trip_and_ids(tmp_path):
    store = M.RunStore(tmp_path / "runs.jsonl")
    assert store.load() == []
    a, b = record(), record()
    ida, idb = store.append(a), store.append(b)
    assert len(ida) == 16 and ida != idb
    loaded = store.load()
    assert [r.record_id for r in loaded] == [ida, idb]
    assert loaded[0].meta_features == a.meta_features and loaded[0].candidate == a.candidate
    assert all(json.loads(line)["format_version"] == 1 for line in (tmp_path / "runs.jsonl").read_text().splitlines())


def test_store_skips_corrupt_lines_and_repairs_truncation(tmp_path, caplog):
    path = tmp_path / "runs.jsonl"
    store = M.RunStore(path)
    store.append(record())
    with open(path, "a") as fh:
        fh.write('{"format_version": 99}\n{"truncated')
    store.append(record(score=0.9))
    loaded = store.load()
    assert [r.best_score for r in loaded] == [0.5, 0.9]
    assert "skipped" in caplog.text


def test_duplicate_record_id_is_rehashed(tmp_path):
    store = M.RunStore(tmp_path / "s.jsonl")
    first = store.append(record(rid="abc"))
    second = store.append(record(rid="abc"))
    assert first == "abc" and second != "abc"


def _append_many(path, k):
    store = M.RunStore(path)
    for i in range(k):
        store.append(record(score=i / 100))


def test_concurrent_appends_do_not_interleave(tmp_path):
    path = tmp_path / "c.jsonl"
    procs = [mp.get_context("fork").Process(target=_append_many, args=(path, 10)) for _ in range(3)]
    for p in procs:
        p.start()
    for p in procs:
        p.join()
    loaded = M.RunStore(path).load()
    assert len(loaded) == 30 and len({r.record_id for r in loaded}) == 30


def test_default_store_path(monkeypatch, tmp_path):
    monkeypatch.setenv(M.STORE_ENV, str(tmp_path / "env.jsonl"))
    assert M.default_store_path("flag.jsonl").name == "flag.jsonl"
    assert M.default_store_path(None).name == "env.jsonl"
    monkeypatch.delenv(M.STORE_ENV)
    assert M.default_store_path(None) is None


def brute_distance(q, records):
    """Standardized distance written out field by field."""
    names = ["n_rows", "n_features", "fraction_categorical", "n_groups", "target_cv", "max_abs_spearman"]
    out = []
    for r in records:
        total = 0.0
        for n in names:
            col = [getattr(x.meta_features, n) for x in records]
            mu = sum(col) / len(col)
            sd = (sum((v - mu) ** 2 for v in col) / len(col)) ** 0.5
            if sd > 0:
                total += ((getattr(r.meta_features, n) - mu) / sd - (getattr(q, n) - mu) / sd) ** 2
        out.append(total ** 0.5)
    return out


def test_standardized_distance_matches_brute_force():
    rng = np.random.default_rng(0)
    recs = [record(rid=f"r{i}", mf=meta(n_rows=int(rng.integers(10, 1000)), target_cv=float(rng.random())))
            for i in range(8)]
    q = meta(n_rows=400, target_cv=0.2)
    assert np.allclose(M.standardized_distances(q, recs), brute_distance(q, recs), atol=1e-12)


def test_warm_start_filters_category_and_breaks_ties_by_id():
    recs = [record(rid="b", mf=meta()), record(rid="a", mf=meta()),
            record(rid="c", category="device_failure", mf=meta()),
            record(rid="d", mf=meta(n_rows=5000), cand=Candidate("KNNRegressor", {"k": 3, "weighting": "uniform"}, ()))]
    near = M.nearest_records(meta(), "latency_estimation", recs)
    assert [r.record_id for r, _ in near] == ["a", "b", "d"]
    assert M.warm_start(meta(), "latency_estimation", 1, recs) == [recs[1].candidate]
    with pytest.raises(ValueError):
        M.warm_start(meta(), "latency_estimation", 0, recs)


def test_customization_flags():
    t = grouped_linear_table()
    c = Candidate("Ridge", {"lambda": 1.0}, (GroupSize("grp"), DropColumns(("ent",))))
    flags = M.customization_flags(c, t.schema, "per_group")
    assert flags == {"per_group": True, "has_identifiers": True, "dropped_identifiers": True,
                     "aggregate_features": True}


def test_confidence_tiers():
    assert [M.confidence(n) for n in (1, 2, 4, 5)] == ["low", "medium", "medium", "high"]


def test_feedback_rule_per_group():
    hist = [record(rid=f"p{i}", score=0.8, flags={"per_group": True}) for i in range(3)]
    hist += [record(rid=f"q{i}", score=0.5, flags={"per_group": False}) for i in range(2)]
    hist.append(record(rid="other", metric="accuracy", score=0.0, flags={"per_group": False}))
    cur = record(rid="cur", score=0.5, flags={"per_group": False})
    items = M.generate_feedback(cur, hist + [cur], group_key_available=True)
    (item,) = [i for i in items if "partition_by_group" in i.suggestion]
    assert item.deltas["mean_per_group_minus_pooled"] == pytest.approx(0.3)
    assert item.confidence == "high" and "other" not in item.record_ids and "cur" not in item.record_ids
    assert not [i for i in M.generate_feedback(cur, hist, group_key_available=False) if "partition" in i.suggestion]


def test_feedback_rule_identifiers():
    drop = {"has_identifiers": True, "dropped_identifiers": True}
    keep = {"has_identifiers": True, "dropped_identifiers": False}
    hist = [record(rid="d", score=0.51, fit=0.5, flags=drop), record(rid="k", score=0.5, fit=2.0, flags=keep)]
    items = M.generate_feedback(record(rid="c", flags=keep), hist, group_key_available=False)
    assert any("dropping identifiers" in i.suggestion and i.confidence == "medium" for i in items)
    slower = [record(rid="d", score=0.51, fit=3.0, flags=drop), hist[1]]
    assert not M.generate_feedback(record(rid="c", flags=keep), slower, group_key_available=False)


def test_feedback_rule_feature_growth():
    hist = [record(rid="near", score=0.7, n_features=3)]
    items = M.generate_feedback(record(rid="c", score=0.6, n_features=10), hist, group_key_available=False)
    assert len(items) == 1 and items[0].confidence == "low" and items[0].deltas["n_features"] == 7
    assert not M.generate_feedback(record(rid="c", score=0.66, n_features=10), hist, group_key_available=False)
