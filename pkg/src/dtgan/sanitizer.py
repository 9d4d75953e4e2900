"""DP-SGD gradient sanitization: per-sample clipping and Gaussian noise.

Each sample gets its own N(0, sigma^2 C^2 I) draw before averaging, so one
sanitized batch is a composition of ``B`` Gaussian mechanisms, which is how
the accountant charges an update. The sum of ``B`` iid standard normals is
drawn directly as ``sqrt(B) * N(0, I)`` (same law, one draw per coordinate).
Normals come from numpy's ``Generator.standard_normal`` (ziggurat), fully
determined by the generator state.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SanitizeConfig:
    clip: float = 1.0
    sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


def clip(g, bound=1.0):
    """Scale ``g`` down so its l2 norm is at most ``bound``."""
    g = np.asarray(g)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / bound)


def clip_rows(rows, bound=1.0):
    rows = np.asarray(rows)
    if not np.all(np.isfinite(rows)):
        raise ValueError("per-sample gradients have non-finite entries")
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.maximum(1.0, norms / bound)


def sanitize(rows, cfg: SanitizeConfig, rng: np.random.Generator | None = None):
    """Mean over samples of clip(g_i) + N(0, sigma^2 clip^2 I)."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("expected a non-empty (batch, dim) array of per-sample gradients")
    clipped = clip_rows(rows, cfg.clip)
    assert np.all(np.linalg.norm(clipped, axis=1) <= cfg.clip * (1 + 1e-5))
    out = clipped.mean(axis=0)
    if cfg.sigma > 0:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        b, d = rows.shape
        noise_sum = np.sqrt(b) * rng.standard_normal(d)
        out = out + ((cfg.sigma * cfg.clip / b) * noise_sum).astype(out.dtype, copy=False)
    return out
