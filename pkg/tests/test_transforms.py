import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netcash import data as D
from netcash.context import ContextSpec, derive_constraints
from netcash.errors import ValidationError
from netcash.transforms import (DropColumns, GroupAggregate, GroupSize, Impute, OneHot, Standardize,
                                apply_chain, baseline_chain, chain_from_dict, chain_to_dict,
                                enumerate_transform_choices, fit_chain)

from conftest import grouped_linear_table

SCHEMA = D.Schema((
    D.ColumnSpec("grp", D.CATEGORICAL, D.GROUP_KEY),
    D.ColumnSpec("ent", D.IDENTIFIER, D.ENTITY_KEY),
    D.ColumnSpec("kind", D.CATEGORICAL),
    D.ColumnSpec("lat", D.NUMERIC),
    D.ColumnSpec("y", D.NUMERIC, D.TARGET),
))


def table(grp, lat, kind=None, ent=None, y=None):
    n = len(lat)
    return D.Table(SCHEMA, {
        "grp": grp, "ent": ent or [f"e{i}" for i in range(n)], "kind": kind or ["x"] * n,
        "lat": lat, "y": y or [0.0] * n,
    })


def test_global_standardize_population_std():
    t = table(["A"] * 3, [1.0, 2.0, 3.0])
    fitted = fit_chain((Standardize(("lat",)),), t)
    mean, std = fitted.steps[0].params["global"]["lat"]
    assert mean == 2.0
    assert std == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    out = apply_chain(fitted, table(["A"], [2.0]))
    assert out.column("lat")[0] == 0.0


def test_per_group_standardize_means_and_fallback():
    t = table(["A", "A", "B", "B"], [10.0, 10.0, 40.0, 40.0])
    fitted = fit_chain((Standardize(("lat",), "per_group"),), t)
    groups = fitted.steps[0].params["groups"]
    assert {g: s["lat"][0] for g, s in groups.items()} == {"A": 10.0, "B": 40.0}
    assert any("zero variance" in f for f in fitted.flags)
    out, flags = apply_chain(fitted, table(["C"], [25.0]), return_flags=True)
    assert out.column("lat")[0] == pytest.approx(0.0)  # global mean 25, global std 15
    assert any("unseen groups" in f for f in flags)


def test_onehot_vocab_and_unseen_category():
    t = table(["A", "A"], [1.0, 2.0], kind=["y", "x"])
    fitted = fit_chain((OneHot("kind"),), t)
    assert fitted.steps[0].params["vocab"] == ["x", "y"]
    out, flags = apply_chain(fitted, table(["A"], [1.0], kind=["z"]), return_flags=True)
    assert "kind" not in out.schema
    assert (out.column("kind=x")[0], out.column("kind=y")[0]) == (0.0, 0.0)
    assert flags


def test_onehot_rejects_too_many_categories():
    t = table(["A"] * 5, [1.0] * 5, kind=list("abcde"))
    with pytest.raises(ValidationError, match="5 categories"):
        fit_chain((OneHot("kind", max_categories=4),), t)


def test_onehot_keeps_key_columns():
    t = table(["A", "B"], [1.0, 2.0])
    out = apply_chain(fit_chain((OneHot("grp"),), t), t)
    assert "grp" in out.schema and "grp=A" in out.schema


def test_impute_mean_and_mode():
    t = table(["A"] * 3, [1.0, np.nan, 3.0], kind=["p", None, "p"])
    fitted = fit_chain((Impute(("lat",), "mean"), Impute(("kind",), "mode")), t)
    out = apply_chain(fitted, t)
    assert list(out.column("lat")) == [1.0, 2.0, 3.0]
    assert list(out.column("kind")) == ["p", "p", "p"]


def test_group_size_and_aggregate():
    t = table(["A", "A", "B"], [1.0, 3.0, 5.0], ent=["u", "u", "v"])
    fitted = fit_chain((GroupSize("grp"), GroupAggregate("ent", "lat", ("mean", "count"))), t)
    out = apply_chain(fitted, table(["A", "C"], [0.0, 0.0], ent=["u", "w"]))
    assert list(out.column("grp_size")) == [2.0, 0.0]
    assert out.column("lat_by_ent_mean")[0] == 2.0
    assert out.column("lat_by_ent_mean")[1] == 3.0  # unseen entity -> global train mean
    assert list(out.column("lat_by_ent_count")) == [2.0, 0.0]


def test_transforms_never_touch_target():
    t = table(["A", "B"], [1.0, 2.0], y=[5.0, 7.0])
    with pytest.raises(ValidationError):
        fit_chain((Standardize(("y",)),), t)
    out = apply_chain(fit_chain((Standardize(),), t), t)
    assert list(out.column("y")) == [5.0, 7.0]


def test_missing_column_is_an_error():
    fitted = fit_chain((DropColumns(("kind",)),), table(["A"], [1.0]))
    with pytest.raises(ValidationError):
        apply_chain(fitted, table(["A"], [1.0]).drop(["kind"]))


def test_chain_serialization_round_trip():
    chain = (DropColumns(("a", "b")), Impute(("lat",)), OneHot("kind", 8), Standardize((), "per_group"),
             GroupSize("grp"), GroupAggregate("ent", "lat", ("std",)))
    assert chain_from_dict(chain_to_dict(chain)) == chain


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10))
@settings(max_examples=80, deadline=None)
def test_fit_depends_on_train_only(train_vals, test_vals):
    train = table(["A"] * len(train_vals), train_vals)
    fitted = fit_chain((Standardize(("lat",)),), train)
    before = fitted.steps[0].params["global"]["lat"]
    apply_chain(fitted, table(["A"] * len(test_vals), test_vals))
    assert fitted.steps[0].params["global"]["lat"] == before


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30), st.randoms(use_true_random=False))
@settings(max_examples=80, deadline=None)
def test_apply_is_row_local(vals, rnd):
    grp = [rnd.choice("AB") for _ in vals]
    t = table(grp, vals)
    fitted = fit_chain((Standardize(("lat",), "per_group"),), t)
    out = apply_chain(fitted, t).column("lat")
    perm = list(range(len(vals)))
    rnd.shuffle(perm)
    out_perm = apply_chain(fitted, t.take(perm)).column("lat")
    assert np.array_equal(out[perm], out_perm)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
@settings(max_examples=80, deadline=None)
def test_standardize_inverse_recovers_input(vals):
    t = table(["A"] * len(vals), vals)
    fitted = fit_chain((Standardize(("lat",)),), t)
    mean, std = fitted.steps[0].params["global"]["lat"]
    z = apply_chain(fitted, t).column("lat")
    assert np.allclose(z * std + mean, vals, rtol=0, atol=1e-9 * max(1.0, max(abs(v) for v in vals)))


def test_enumeration_conditioning():
    t = grouped_linear_table()
    with_keys = derive_constraints(ContextSpec(category="generic_regression", target="y", group_key="grp",
                                               entity_key="ent", identifier_features_allowed=True), t)
    chains = enumerate_transform_choices(with_keys, t.schema)
    assert len(chains) <= 12
    assert chains[0] == baseline_chain(with_keys, t.schema)
    assert any(any(isinstance(s, GroupSize) for s in c) and any(isinstance(s, GroupAggregate) for s in c)
               for c in chains)

    plain = derive_constraints(ContextSpec(category="generic_regression", target="y"), t.drop(["grp", "ent"]))
    for c in enumerate_transform_choices(plain, t.drop(["grp", "ent"]).schema):
        assert not any(isinstance(s, (GroupSize, GroupAggregate)) for s in c)


def test_mandatory_drop_starts_every_chain():
    t = grouped_linear_table()
    c = derive_constraints(ContextSpec(category="generic_regression", target="y", group_key="grp",
                                       entity_key="ent", drop_features=("ent",)), t)
    for chain in enumerate_transform_choices(c, t.schema):
        assert chain[0] == DropColumns(("ent",))


def test_every_enumerated_chain_fits():
    t = grouped_linear_table()
    c = derive_constraints(ContextSpec(category="generic_regression", target="y", group_key="grp",
                                       entity_key="ent", identifier_features_allowed=True), t)
    for chain in enumerate_transform_choices(c, t.schema):
        out = apply_chain(fit_chain(chain, t), t)
        assert all(out.schema[n].dtype == D.NUMERIC for n in out.schema.feature_names())
