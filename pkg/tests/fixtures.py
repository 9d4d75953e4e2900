"""Synthetic tables used across tests. Cells are strings, as read from CSV."""
import numpy as np
import pandas as pd


def toy_frame(n=500, seed=0):
    """One continuous column, one 3-class categorical, one binary target."""
    rng = np.random.default_rng(seed)
    c = rng.choice(["a", "b", "c"], n, p=[0.5, 0.3, 0.2])
    x = rng.normal(np.select([c == "a", c == "b"], [-1.0, 0.5], 1.5), 0.4)
    y = (x + rng.normal(0, 0.5, n) > 0).astype(int)
    return pd.DataFrame({"x": [f"{v:.4f}" for v in x], "c": c, "y": [str(v) for v in y]})


def census_frame(n=4000, seed=0):
    """Census-like mix: two continuous columns, two categoricals, binary income."""
    rng = np.random.default_rng(seed)
    edu = rng.choice(["hs", "college", "bachelor", "master", "phd"], n, p=[0.35, 0.25, 0.25, 0.1, 0.05])
    level = pd.Series(edu).map({"hs": 0, "college": 1, "bachelor": 2, "master": 3, "phd": 4}).to_numpy()
    sex = rng.choice(["f", "m"], n)
    age = np.clip(np.round(rng.normal(38 + 2 * level, 11)), 17, 90).astype(int)
    hours = np.clip(rng.normal(38 + 3 * (sex == "m") + level, 9), 1, 99)
    score = 0.04 * (age - 38) + 0.6 * level + 0.05 * (hours - 40) + 0.3 * (sex == "m") - 1.2
    income = (score + rng.logistic(size=n) > 0).astype(int)
    return pd.DataFrame({"age": [str(v) for v in age], "hours": [f"{v:.2f}" for v in hours],
                         "education": edu, "sex": sex, "income": [str(v) for v in income]})
