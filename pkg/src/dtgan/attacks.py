"""Black-box membership and attribute inference against tabular generators.

A generator is attacked through a *trainer*: ``trainer(rows, seed)`` fits
on a DataFrame and returns a *sampler*, ``sampler(n, seed) -> DataFrame``.
Nothing else about the generator is visible to the attacker.

Privacy gain is (P_real - P_fake) / 2, where P_real is the attacker's success
holding the real data (1 for membership) and P_fake its success from
synthetic data.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier

from .seeding import subseed
from .tabular import Schema

FEATURE_MODES = ("naive", "correlation")


# -- feature extraction ------------------------------------------------------

def naive_features(rows: pd.DataFrame, schema: Schema) -> np.ndarray:
    """Mean, median, variance per continuous column; distinct count and the
    indices of the most and least frequent category per categorical column."""
    if len(rows) == 0:
        raise ValueError("empty batch")
    df = schema.coerce(rows)
    out = []
    for c in schema.columns:
        if c.is_categorical:
            counts = df[c.name].value_counts().reindex(c.categories, fill_value=0).to_numpy()
            present = np.flatnonzero(counts)
            least = present[np.argmin(counts[present])]
            out += [len(present), int(np.argmax(counts)), int(least)]
        else:
            v = df[c.name].to_numpy(float)
            out += [v.mean(), np.median(v), v.var()]
    return np.asarray(out, dtype=float)


def dummy_matrix(rows: pd.DataFrame, schema: Schema) -> np.ndarray:
    """Continuous columns raw, one indicator column per category."""
    df = schema.coerce(rows)
    cols = []
    for c in schema.columns:
        if c.is_categorical:
            v = df[c.name].to_numpy()
            cols += [(v == k).astype(float) for k in c.categories]
        else:
            cols.append(df[c.name].to_numpy(float))
    return np.stack(cols, axis=1)


def correlation_features(rows: pd.DataFrame, schema: Schema) -> np.ndarray:
    """Upper triangle of the Pearson matrix of the dummy-encoded batch;
    zero-variance columns contribute zeros."""
    m = dummy_matrix(rows, schema)
    w = m.shape[1]
    if w < 2:
        raise ValueError("need at least two encoded columns")
    centered = m - m.mean(axis=0)
    sd = np.sqrt((centered ** 2).sum(axis=0))
    ok = sd > 1e-12
    z = np.where(ok, centered / np.where(ok, sd, 1.0), 0.0)
    corr = np.clip(z.T @ z, -1.0, 1.0)
    return corr[np.triu_indices(w, k=1)]


def extract(mode: str, rows, schema) -> np.ndarray:
    if mode == "naive":
        return naive_features(rows, schema)
    if mode == "correlation":
        return correlation_features(rows, schema)
    raise ValueError(f"unknown feature mode {mode!r}")


# -- trainers ------------------------------------------------------------------

def verbatim(rows: pd.DataFrame, seed: int = 0):
    """A generator that memorizes perfectly: every sample is the training table itself."""
    table = rows.reset_index(drop=True).copy()
    return lambda n, seed=0: table.copy()


def gan_trainer(config, schema: Schema):
    """Trainer adapter for the DTGAN module with a fixed, public schema."""
    from . import gan

    def trainer(rows, seed):
        model = gan.train(replace(config, seed=int(seed)), rows, schema)
        return lambda n, s: gan.sample(model, n, int(s))
    return trainer


# -- membership inference ------------------------------------------------------

@dataclass(frozen=True)
class MembershipParams:
    reference_size: int = 4000
    batch_rows: int = 400          # r
    batches: int = 1200            # s, split evenly between the two shadow models
    train_size: int = 1000
    test_size: int = 200
    modes: tuple[str, ...] = FEATURE_MODES
    repetitions: int = 5
    targets: int = 5

    def __post_init__(self):
        if self.batches % 2 or self.train_size % 2 or self.test_size % 2:
            raise ValueError("batches and split sizes must be even so labels balance")
        if self.train_size + self.test_size > self.batches:
            raise ValueError("train_size + test_size exceeds the number of batches")
        if min(self.reference_size, self.batch_rows, self.repetitions, self.targets, self.test_size) < 1:
            raise ValueError("sizes must be positive")
        for m in self.modes:
            if m not in FEATURE_MODES:
                raise ValueError(f"unknown feature mode {m!r}")


@dataclass(frozen=True)
class AttackReport:
    kind: str
    privacy_gain: dict             # mode -> mean gain
    p_fake: dict                   # mode -> mean success probability from synthetic data
    accuracy: dict                 # mode -> mean 0/1 accuracy of the attack model
    p_real: float = 1.0
    seed: int = 0
    runs: list = field(default_factory=list)   # per (target, repetition) records
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def default_attack_model(seed: int):
    return RandomForestClassifier(n_estimators=50, max_depth=10, bootstrap=True, random_state=seed)


def _balanced_split(labels, train_size, test_size, rng):
    tr, te = [], []
    for lab in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        tr.append(idx[:train_size // 2])
        te.append(idx[train_size // 2:train_size // 2 + test_size // 2])
    return np.concatenate(tr), np.concatenate(te)


def _correct_probability(model, x, y):
    proba = model.predict_proba(x)
    classes = list(model.classes_)
    p = np.zeros(len(y))
    for k, lab in enumerate(classes):
        p[y == lab] = proba[y == lab, k]
    pred = np.asarray(classes)[proba.argmax(axis=1)]
    return float(p.mean()), float(np.mean(pred == y))


def membership_attack(trainer, reference: pd.DataFrame, targets: pd.DataFrame, schema: Schema,
                      params: MembershipParams = MembershipParams(), seed: int = 0,
                      attack_model=default_attack_model) -> AttackReport:
    """Shadow-model membership inference for each target row.

    Both shadow generators of a (target, repetition) pair share one training
    seed, so their outputs differ only through the target's presence.
    """
    if len(reference) < params.reference_size:
        raise ValueError(f"need {params.reference_size} reference rows, got {len(reference)}")
    if len(targets) < params.targets:
        raise ValueError(f"need {params.targets} target rows, got {len(targets)}")
    ref = reference.iloc[:params.reference_size].reset_index(drop=True)
    half = params.batches // 2
    runs = []
    for ti in range(params.targets):
        t = targets.iloc[[ti]]
        with_t = pd.concat([ref, t], ignore_index=True)
        for rep in range(params.repetitions):
            train_seed = subseed(seed, "membership", ti, rep, "train")
            samplers = (trainer(ref, train_seed), trainer(with_t, train_seed))
            batches, labels = [], []
            for lab, sampler in enumerate(samplers):
                for k in range(half):
                    batches.append(sampler(params.batch_rows, subseed(seed, "membership", ti, rep, lab, k)))
                    labels.append(lab)
            labels = np.asarray(labels)
            rng = np.random.default_rng(subseed(seed, "membership", ti, rep, "split"))
            tr, te = _balanced_split(labels, params.train_size, params.test_size, rng)
            rec = {"target": ti, "repetition": rep, "train_seed": train_seed}
            for mode in params.modes:
                x = np.stack([extract(mode, b, schema) for b in batches])
                model = attack_model(subseed(seed, "membership", ti, rep, mode))
                model.fit(x[tr], labels[tr])
                p, acc = _correct_probability(model, x[te], labels[te])
                rec[mode] = {"p_fake": p, "accuracy": acc, "gain": (1.0 - p) / 2}
            runs.append(rec)
    gain = {m: float(np.mean([r[m]["gain"] for r in runs])) for m in params.modes}
    p_fake = {m: float(np.mean([r[m]["p_fake"] for r in runs])) for m in params.modes}
    acc = {m: float(np.mean([r[m]["accuracy"] for r in runs])) for m in params.modes}
    pd_ = asdict(params)
    pd_["modes"] = list(params.modes)
    return AttackReport("membership", gain, p_fake, acc, 1.0, seed, runs, pd_)


# -- attribute inference ---------------------------------------------------------

def _design(rows: pd.DataFrame, schema: Schema, sensitive: str):
    """Intercept, known continuous columns, drop-first dummies of known categoricals."""
    df = schema.coerce(rows)
    cols = [np.ones(len(df))]
    for c in schema.columns:
        if c.name == sensitive:
            continue
        if c.is_categorical:
            v = df[c.name].to_numpy()
            cols += [(v == k).astype(float) for k in c.categories[1:]]
        else:
            cols.append(df[c.name].to_numpy(float))
    return np.stack(cols, axis=1), df[sensitive].to_numpy(float)


def fit_linear(x, y, ridge=1e-6):
    """Ordinary least squares; ridge fallback with a warning when x is rank deficient."""
    if np.linalg.matrix_rank(x) < x.shape[1]:
        warnings.warn("singular design matrix; using ridge regression", RuntimeWarning)
        return np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ y)
    return np.linalg.lstsq(x, y, rcond=None)[0]


def attribution_probability(beta, resid_var, x_test, y_test) -> float:
    """Mean Gaussian likelihood ratio exp(-(y - yhat)^2 / (2 var)) on the test rows."""
    var = max(float(resid_var), 1e-12)
    r = y_test - x_test @ beta
    return float(np.mean(np.exp(-r ** 2 / (2 * var))))


def _fit_and_score(train_rows, test_x, test_y, schema, sensitive):
    x, y = _design(train_rows, schema, sensitive)
    beta = fit_linear(x, y)
    return attribution_probability(beta, np.mean((y - x @ beta) ** 2), test_x, test_y)


def attribute_attack(trainer, reference: pd.DataFrame, sensitive: str, schema: Schema,
                     train_size: int = 4900, test_size: int = 100, repetitions: int = 5,
                     seed: int = 0) -> AttackReport:
    """Linear-regression attribute inference of a continuous column."""
    if schema.column(sensitive).is_categorical:
        raise ValueError(f"sensitive column {sensitive!r} must be continuous")
    if len(reference) < train_size + test_size:
        raise ValueError(f"need {train_size + test_size} reference rows, got {len(reference)}")
    runs = []
    for rep in range(repetitions):
        rng = np.random.default_rng(subseed(seed, "attribute", rep, "split"))
        idx = rng.permutation(len(reference))
        r_train = reference.iloc[np.sort(idx[:train_size])].reset_index(drop=True)
        r_test = reference.iloc[np.sort(idx[train_size:train_size + test_size])]
        xt, yt = _design(r_test, schema, sensitive)
        sampler = trainer(r_train, subseed(seed, "attribute", rep, "train"))
        g_train = sampler(train_size, subseed(seed, "attribute", rep, "sample"))
        p_real = _fit_and_score(r_train, xt, yt, schema, sensitive)
        p_fake = _fit_and_score(g_train, xt, yt, schema, sensitive)
        runs.append({"repetition": rep, "p_real": p_real, "p_fake": p_fake, "gain": (p_real - p_fake) / 2})
    gain = float(np.mean([r["gain"] for r in runs]))
    return AttackReport("attribute", {"regression": gain},
                        {"regression": float(np.mean([r["p_fake"] for r in runs]))}, {},
                        float(np.mean([r["p_real"] for r in runs])), seed, runs,
                        {"sensitive": sensitive, "train_size": train_size, "test_size": test_size,
                         "repetitions": repetitions})
