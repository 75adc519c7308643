"""Algorithm catalog and the uniform fit/predict entry points.

Every learner consumes the numeric feature-role columns of a table (in
schema order) and its target column. Nothing here depends on an external
ML library.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .. import data as D
from ..errors import ValidationError
from . import linear, neighbors, tree
from .domains import (Discrete, IntRange, LogUniform, check_assignment, default_assignment,
                      domain_from_dict, grid_size, sample_assignment)

REGRESSION = tree.REGRESSION
CLASSIFICATION = tree.CLASSIFICATION


@dataclass(frozen=True)
class AlgorithmInfo:
    name: str
    task: str


ALGORITHMS = {
    info.name: info
    for info in (
        AlgorithmInfo("ConstantMean", REGRESSION),
        AlgorithmInfo("LinearLeastSquares", REGRESSION),
        AlgorithmInfo("Ridge", REGRESSION),
        AlgorithmInfo("KNNRegressor", REGRESSION),
        AlgorithmInfo("DecisionTreeRegressor", REGRESSION),
        AlgorithmInfo("RandomForestRegressor", REGRESSION),
        AlgorithmInfo("MajorityClass", CLASSIFICATION),
        AlgorithmInfo("KNNClassifier", CLASSIFICATION),
        AlgorithmInfo("DecisionTreeClassifier", CLASSIFICATION),
        AlgorithmInfo("RandomForestClassifier", CLASSIFICATION),
    )
}
CATALOG_ORDER = tuple(ALGORITHMS)


def task_of(alg: str) -> str:
    try:
        return ALGORITHMS[alg].task
    except KeyError:
        raise ValidationError(f"unknown algorithm {alg!r}") from None


def default_domain(alg: str) -> dict:
    task_of(alg)
    tree_params = {"max_depth": IntRange(2, 16), "min_samples_leaf": IntRange(1, 20)}
    if alg == "Ridge":
        return {"lambda": LogUniform(1e-6, 1e3)}
    if alg.startswith("KNN"):
        return {"k": IntRange(1, 25), "weighting": Discrete(("uniform", "inverse_distance"))}
    if alg.startswith("DecisionTree"):
        return dict(tree_params)
    if alg.startswith("RandomForest"):
        return {**tree_params, "n_trees": Discrete((10, 50, 100)), "feature_fraction": Discrete((0.5, 0.8, 1.0))}
    return {}


@dataclass
class FittedModel:
    algorithm: str
    params: dict
    features: tuple
    state: dict = field(repr=False)
    classes: tuple = ()

    @property
    def task(self) -> str:
        return task_of(self.algorithm)

    @property
    def fingerprint(self) -> str:
        return feature_fingerprint(self.features)

    def predict(self, table: D.Table) -> np.ndarray:
        return predict(self, table)

    def to_dict(self) -> dict:
        state = {}
        for k, v in self.state.items():
            if isinstance(v, np.ndarray):
                state[k] = {"array": v.tolist()}
            elif isinstance(v, list) and v and isinstance(v[0], tree.Tree):
                state[k] = {"trees": [t.to_dict() for t in v]}
            elif isinstance(v, tree.Tree):
                state[k] = {"tree": v.to_dict()}
            else:
                state[k] = v
        return {"algorithm": self.algorithm, "params": dict(self.params), "features": list(self.features),
                "fingerprint": self.fingerprint, "classes": list(self.classes), "state": state}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        state = {}
        for k, v in d["state"].items():
            if isinstance(v, dict) and "array" in v:
                state[k] = np.asarray(v["array"])
            elif isinstance(v, dict) and "trees" in v:
                state[k] = [tree.Tree.from_dict(t) for t in v["trees"]]
            elif isinstance(v, dict) and "tree" in v:
                state[k] = tree.Tree.from_dict(v["tree"])
            else:
                state[k] = v
        return cls(d["algorithm"], dict(d["params"]), tuple(d["features"]), state, tuple(d["classes"]))


def feature_fingerprint(names) -> str:
    return hashlib.sha256("\x1f".join(names).encode()).hexdigest()[:16]


def _design(table: D.Table) -> tuple[tuple, np.ndarray]:
    names = table.schema.feature_names()
    bad = [n for n in names if table.schema[n].dtype != D.NUMERIC]
    if bad:
        raise ValidationError(f"non-numeric feature column(s) remain: {bad}; run transforms first")
    X = table.feature_matrix()
    if np.isnan(X).any():
        raise ValidationError("feature matrix has missing values; impute first")
    return tuple(names), X


def fit(alg: str, params: dict, train: D.Table, seed: int = 0, check_domain: bool = True) -> FittedModel:
    task = task_of(alg)
    if check_domain:
        try:
            check_assignment(default_domain(alg), params)
        except ValueError as exc:
            raise ValidationError(f"{alg}: {exc}") from None
    if train.row_count == 0:
        raise ValidationError("cannot fit on an empty training table")
    names, X = _design(train)
    y_raw = train.target
    classes: tuple = ()
    if task == CLASSIFICATION:
        if train.schema.target.dtype != D.CATEGORICAL:
            raise ValidationError(f"{alg} needs a categorical target")
        classes = tuple(sorted({str(v) for v in y_raw}))
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.array([lookup[str(v)] for v in y_raw], dtype=np.intp)
    else:
        if train.schema.target.dtype != D.NUMERIC:
            raise ValidationError(f"{alg} needs a numeric target")
        y = np.asarray(y_raw, dtype=float)
    k = len(classes)

    if alg == "ConstantMean":
        state = {"value": float(y.mean())}
    elif alg == "MajorityClass":
        state = {"code": int(np.bincount(y, minlength=k).argmax())}
    elif alg in ("LinearLeastSquares", "Ridge"):
        coef, intercept = linear.fit_linear(X, y, params.get("lambda", 0.0))
        state = {"coef": coef, "intercept": intercept}
    elif alg.startswith("KNN"):
        state = {"X": X.copy(), "y": y.copy()}
    elif alg.startswith("DecisionTree"):
        state = {"tree": tree.grow_tree(X, y, task=task, n_classes=k, max_depth=params["max_depth"],
                                        min_samples_leaf=params["min_samples_leaf"])}
    else:
        state = {"trees": tree.grow_forest(X, y, task=task, n_classes=k, n_trees=params["n_trees"],
                                           max_depth=params["max_depth"],
                                           min_samples_leaf=params["min_samples_leaf"],
                                           feature_fraction=params["feature_fraction"], seed=seed)}
    return FittedModel(alg, dict(params), names, state, classes)


def predict(model: FittedModel, table: D.Table) -> np.ndarray:
    names, X = _design(table)
    if feature_fingerprint(names) != model.fingerprint:
        raise ValidationError(
            f"feature fingerprint mismatch: model trained on {list(model.features)}, got {list(names)}"
        )
    alg, s, p = model.algorithm, model.state, model.params
    m = X.shape[0]
    k = len(model.classes)
    if alg == "ConstantMean":
        return np.full(m, s["value"])
    if alg == "MajorityClass":
        codes = np.full(m, s["code"], dtype=np.intp)
    elif alg in ("LinearLeastSquares", "Ridge"):
        return linear.predict_linear(np.asarray(s["coef"], dtype=float), s["intercept"], X)
    elif alg == "KNNRegressor":
        return neighbors.knn_regress(s["X"], s["y"], X, p["k"], p["weighting"])
    elif alg == "KNNClassifier":
        codes = neighbors.knn_classify(s["X"], np.asarray(s["y"], dtype=np.intp), k, X, p["k"], p["weighting"])
    elif alg == "DecisionTreeRegressor":
        return s["tree"].predict(X).astype(float)
    elif alg == "DecisionTreeClassifier":
        codes = s["tree"].predict(X).astype(np.intp)
    elif alg == "RandomForestRegressor":
        return tree.forest_predict(s["trees"], X, REGRESSION)
    else:
        codes = tree.forest_predict(s["trees"], X, CLASSIFICATION, k)
    labels = np.empty(m, dtype=object)
    for i, c in enumerate(codes):
        labels[i] = model.classes[c]
    return labels


__all__ = [
    "ALGORITHMS", "CATALOG_ORDER", "REGRESSION", "CLASSIFICATION", "AlgorithmInfo", "FittedModel",
    "Discrete", "IntRange", "LogUniform", "default_domain", "default_assignment", "sample_assignment",
    "grid_size", "check_assignment", "domain_from_dict", "fit", "predict", "task_of", "feature_fingerprint",
]
