"""Statistical similarity and ML-utility metrics for synthetic tables.

Similarity: mean JSD (base 2) over categorical columns, mean 1-D
Wasserstein-1 over min-max scaled continuous columns, and the Frobenius norm
between association matrices (Pearson, Theil's U, correlation ratio).

Utility: four classifiers trained once on real and once on synthetic rows,
both scored on the same real test split.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import jensenshannon
from scipy.stats import wasserstein_distance
from sklearn.exceptions import ConvergenceWarning
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import accuracy_score, average_precision_score, f1_score, roc_auc_score
from sklearn.neural_network import MLPClassifier
from sklearn.tree import DecisionTreeClassifier

from .tabular import Schema, encode

METRICS = ("accuracy", "f1", "auc", "apr")
MODELS = ("logistic_regression", "decision_tree", "random_forest", "mlp")


def n_jobs() -> int:
    """Worker count for parallel sections, from DTGAN_NUM_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("DTGAN_NUM_THREADS", "1")))
    except ValueError:
        return 1


# -- similarity ------------------------------------------------------------

def _jsd(p, q) -> float:
    return float(jensenshannon(p, q, base=2) ** 2)


def column_jsd(real: pd.Series, synth: pd.Series) -> float:
    cats = sorted(set(real) | set(synth))
    p = real.value_counts(normalize=True).reindex(cats, fill_value=0.0).to_numpy()
    q = synth.value_counts(normalize=True).reindex(cats, fill_value=0.0).to_numpy()
    return _jsd(p, q)


def avg_jsd(real: pd.DataFrame, synth: pd.DataFrame, schema: Schema) -> float | None:
    """Mean JSD over categorical columns; None when there are none."""
    _nonempty(real, synth)
    real, synth = schema.coerce(real), schema.coerce(synth)
    names = schema.categorical_names
    if not names:
        return None
    return float(np.mean([column_jsd(real[c], synth[c]) for c in names]))


def column_wd(real, synth) -> float:
    r = np.asarray(real, dtype=float)
    s = np.asarray(synth, dtype=float)
    lo = min(r.min(), s.min())
    span = max(r.max(), s.max()) - lo
    if span == 0:
        return 0.0
    return float(wasserstein_distance((r - lo) / span, (s - lo) / span))


def avg_wd(real: pd.DataFrame, synth: pd.DataFrame, schema: Schema) -> float | None:
    """Mean Wasserstein-1 over continuous columns, each min-max scaled on real and synthetic together."""
    _nonempty(real, synth)
    real, synth = schema.coerce(real), schema.coerce(synth)
    names = schema.continuous_names
    if not names:
        return None
    return float(np.mean([column_wd(real[c], synth[c]) for c in names]))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def theils_u(x, y) -> float:
    """U(x|y): fraction of the entropy of x explained by y. 0 when x is constant."""
    x = pd.Series(np.asarray(x)).astype(str)
    y = pd.Series(np.asarray(y)).astype(str)
    hx = _entropy(x.value_counts().to_numpy(float))
    if hx == 0:
        return 0.0
    joint = pd.crosstab(y, x).to_numpy(float)
    n = joint.sum()
    h_cond = sum(row.sum() / n * _entropy(row) for row in joint)
    return float(np.clip((hx - h_cond) / hx, 0.0, 1.0))


def correlation_ratio(categories, values) -> float:
    """Eta: sqrt of between-group over total sum of squares. 0 for constant values."""
    v = np.asarray(values, dtype=float)
    total = ((v - v.mean()) ** 2).sum()
    if total == 0:
        return 0.0
    groups = pd.Series(v).groupby(np.asarray(categories).astype(str))
    between = (groups.count() * (groups.mean() - v.mean()) ** 2).sum()
    return float(np.sqrt(np.clip(between / total, 0.0, 1.0)))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def association_matrix(df: pd.DataFrame, schema: Schema) -> np.ndarray:
    """Cell (i, j) is the association of column i with column j; the diagonal is 1."""
    df = schema.coerce(df)
    cols = schema.columns
    k = len(cols)
    m = np.eye(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            a, b = cols[i], cols[j]
            xi, xj = df[a.name].to_numpy(), df[b.name].to_numpy()
            if a.is_categorical and b.is_categorical:
                m[i, j] = theils_u(xi, xj)
            elif a.is_categorical:
                m[i, j] = correlation_ratio(xi, xj)
            elif b.is_categorical:
                m[i, j] = correlation_ratio(xj, xi)
            else:
                m[i, j] = pearson(xi, xj)
    return m


def diff_corr(real: pd.DataFrame, synth: pd.DataFrame, schema: Schema) -> float:
    if len(schema.columns) < 2:
        raise ValueError("diff_corr needs at least two columns")
    _nonempty(real, synth)
    return float(np.linalg.norm(association_matrix(real, schema) - association_matrix(synth, schema)))


def _nonempty(*frames):
    if any(len(f) == 0 for f in frames):
        raise ValueError("empty table")


@dataclass(frozen=True)
class SimilarityReport:
    avg_jsd: float | None
    avg_wd: float | None
    diff_corr: float | None
    categorical_columns: tuple[str, ...] = ()
    continuous_columns: tuple[str, ...] = ()

    def to_dict(self):
        d = asdict(self)
        d["categorical_columns"] = list(self.categorical_columns)
        d["continuous_columns"] = list(self.continuous_columns)
        return d


def similarity(real, synth, schema: Schema) -> SimilarityReport:
    dc = diff_corr(real, synth, schema) if len(schema.columns) >= 2 else None
    return SimilarityReport(avg_jsd(real, synth, schema), avg_wd(real, synth, schema), dc,
                            tuple(schema.categorical_names), tuple(schema.continuous_names))


# -- classifiers -----------------------------------------------------------

class LogisticRegression:
    """Multinomial logistic regression by full-batch gradient descent."""

    def __init__(self, iterations=500, lr=0.1, l2=1e-4):
        self.iterations = iterations
        self.lr = lr
        self.l2 = l2

    def fit(self, x, y, n_classes):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        onehot = np.eye(n_classes)[y]
        self.w = np.zeros((d, n_classes))
        self.b = np.zeros(n_classes)
        for _ in range(self.iterations):
            p = self.predict_proba(x)
            err = (p - onehot) / n
            self.w -= self.lr * (x.T @ err + self.l2 * self.w)
            self.b -= self.lr * err.sum(axis=0)
        return self

    def predict_proba(self, x):
        s = np.asarray(x, dtype=float) @ self.w + self.b
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)


class _Sklearn:
    """Adapter giving sklearn classifiers a full class-indexed predict_proba."""

    def __init__(self, est):
        self.est = est

    def fit(self, x, y, n_classes):
        self.n_classes = n_classes
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.est.fit(x, y)
        return self

    def predict_proba(self, x):
        out = np.zeros((len(x), self.n_classes))
        out[:, self.est.classes_] = self.est.predict_proba(x)
        return out


def make_model(name: str, seed: int = 0):
    if name == "logistic_regression":
        return LogisticRegression()
    if name == "decision_tree":
        return _Sklearn(DecisionTreeClassifier(criterion="gini", max_depth=12, min_samples_leaf=2,
                                               random_state=seed))
    if name == "random_forest":
        return _Sklearn(RandomForestClassifier(n_estimators=20, max_features="sqrt", bootstrap=True,
                                               random_state=seed, n_jobs=n_jobs()))
    if name == "mlp":
        return _Sklearn(MLPClassifier(hidden_layer_sizes=(100,), activation="relu", solver="adam",
                                      max_iter=200, random_state=seed))
    raise ValueError(f"unknown model {name!r}")


def design_matrix(schema: Schema, df: pd.DataFrame):
    """(features, label indices): min-max/one-hot encoding without the target block."""
    m = encode(schema, df)
    a, b = schema.span(schema.target)
    x = np.concatenate([m[:, :a], m[:, b:]], axis=1)
    return x, m[:, a:b].argmax(axis=1)


def scores(y_true, proba, n_classes) -> dict:
    pred = proba.argmax(axis=1)
    out = {"accuracy": float(accuracy_score(y_true, pred)),
           "f1": float(f1_score(y_true, pred, average="macro", labels=np.arange(n_classes), zero_division=0))}
    present = np.unique(y_true)
    if len(present) < 2:
        out["auc"] = out["apr"] = None
        return out
    if n_classes == 2:
        out["auc"] = float(roc_auc_score(y_true, proba[:, 1]))
        out["apr"] = float(average_precision_score(y_true, proba[:, 1]))
    else:
        onehot = np.eye(n_classes)[y_true][:, present]
        p = proba[:, present]
        out["auc"] = float(np.mean([roc_auc_score(onehot[:, k], p[:, k]) for k in range(len(present))]))
        out["apr"] = float(np.mean([average_precision_score(onehot[:, k], p[:, k]) for k in range(len(present))]))
    return out


@dataclass(frozen=True)
class UtilityReport:
    real: dict            # model -> metric -> score
    synthetic: dict
    differences: dict     # model -> metric -> real minus synthetic
    average: dict         # metric -> mean difference over models
    seed: int = 0
    f1_average: str = "macro"
    models: tuple[str, ...] = MODELS

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        return d


def _diff(a, b):
    return None if a is None or b is None else a - b


def ml_utility(real_train, real_test, synth_train, schema: Schema, seed: int = 0,
               models=MODELS) -> UtilityReport:
    n_classes = schema.column(schema.target).width
    x_tr, y_tr = design_matrix(schema, real_train)
    x_te, y_te = design_matrix(schema, real_test)
    x_sy, y_sy = design_matrix(schema, synth_train)
    real, synth, diff = {}, {}, {}
    for name in models:
        r = scores(y_te, make_model(name, seed).fit(x_tr, y_tr, n_classes).predict_proba(x_te), n_classes)
        s = scores(y_te, make_model(name, seed).fit(x_sy, y_sy, n_classes).predict_proba(x_te), n_classes)
        real[name], synth[name] = r, s
        diff[name] = {k: _diff(r[k], s[k]) for k in METRICS}
    avg = {}
    for k in METRICS:
        vals = [diff[m][k] for m in models if diff[m][k] is not None]
        avg[k] = float(np.mean(vals)) if vals else None
    return UtilityReport(real, synth, diff, avg, seed, "macro", tuple(models))
