"""Conditional Wasserstein GAN for tables, trained with DP-SGD.

Two private variants:

* ``dp_discriminator``: the critic's real-data gradients are sanitized and
  each critic update is charged to the ledger at rate B/N. The generator is
  a post-processing of the private critic.
* ``dp_generator``: the data is split into ``shards`` disjoint parts, each
  with its own clean critic. Every generator update picks one shard at
  random (rate 1/shards) and sanitizes the generator gradients coming from
  the adversarial, information and classification losses. The condition
  loss never touches real data and stays clean.

``none`` trains the same model without privacy.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd

from . import neural
from .accountant import (DpBudget, MechanismSpec, OrderGrid, PrivacyLedger,
                         calibrate_sigma)
from .neural import AdamState, DenseNet, adam_step, backward, forward, grad_norm_penalty
from .sanitizer import SanitizeConfig, sanitize
from .seeding import stream, subseed
from .tabular import Schema, condition_slots, decode, encode, sample_conditions

VARIANTS = ("dp_discriminator", "dp_generator", "none")


class BudgetExhausted(RuntimeError):
    """The budget did not allow a single generator update."""

    def __init__(self, message, transcript):
        super().__init__(message)
        self.transcript = transcript


@dataclass(frozen=True)
class DtganConfig:
    variant: str = "dp_discriminator"
    sigma: float | None = None
    clip: float = 1.0
    penalty: float = 10.0
    batch_size: int = 64
    n_critic: int = 5
    epsilon: float | None = None
    delta: float = 1e-5
    max_epochs: int | None = None
    shards: int = 2
    info_loss: bool = True
    classification_loss: bool = True
    condition_loss: bool = True
    strict_dp: bool = True
    seed: int = 0
    noise_dim: int = 100
    generator_dims: tuple[int, ...] = (256, 256)
    discriminator_dims: tuple[int, ...] = (256, 256)
    classifier_dims: tuple[int, ...] = (64,)
    architecture: str = "dtgan"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    gumbel_tau: float = 0.2
    condition_mode: str = "log"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("batch_size and n_critic must be >= 1")
        if self.clip != 1.0:
            raise ValueError("the accounting assumes clip = 1")
        if self.variant == "dp_generator" and self.shards < 2:
            raise ValueError("dp_generator needs shards >= 2")
        if self.variant != "none":
            if self.sigma is not None and not self.sigma > 0:
                raise ValueError("sigma must be positive")
            if self.sigma is None and (self.epsilon is None or self.max_epochs is None):
                raise ValueError("a private variant needs sigma, or epsilon and max_epochs to calibrate it")
        if self.epsilon is None and self.max_epochs is None:
            raise ValueError("set a privacy budget (epsilon) or max_epochs")
        if self.epsilon is not None:
            DpBudget(self.epsilon, self.delta)
        if self.architecture not in ("dtgan", "baseline"):
            raise ValueError("architecture must be 'dtgan' or 'baseline'")

    @property
    def sanitized_losses(self) -> int:
        """Gaussian mechanisms per sample in one dp_generator update."""
        return 1 + int(self.info_loss) + int(self.classification_loss)

    def effective_losses(self) -> tuple[bool, bool]:
        """(info, classification) after applying strict_dp."""
        if self.variant == "dp_discriminator" and self.strict_dp:
            return False, False
        return self.info_loss, self.classification_loss

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d) -> "DtganConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass
class LossBreakdown:
    wasserstein: float = 0.0
    penalty: float = 0.0
    grad_norm: float = 0.0
    g_adv: float = 0.0
    info_mean: float = 0.0
    info_sd: float = 0.0
    classification: float = 0.0
    condition: float = 0.0

    @property
    def info(self) -> float:
        return self.info_mean + self.info_sd


@dataclass
class TrainedModel:
    """The releasable artifact: generator, schema and accounting. No rows."""

    generator: DenseNet
    schema: Schema
    config: DtganConfig
    transcript: dict
    history: list = field(default_factory=list)


# -- building blocks -------------------------------------------------------

def slerp(x0, x1, t):
    """Row-wise spherical interpolation; linear where the angle degenerates."""
    x0 = np.asarray(x0)
    x1 = np.asarray(x1)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],))[:, None] if x0.ndim == 2 \
        else float(t)
    n0 = np.linalg.norm(x0, axis=-1, keepdims=True)
    n1 = np.linalg.norm(x1, axis=-1, keepdims=True)
    denom = np.where((n0 > 1e-12) & (n1 > 1e-12), n0 * n1, 1.0)
    cos = np.clip(np.sum(x0 * x1, axis=-1, keepdims=True) / denom, -1.0, 1.0)
    omega = np.arccos(cos)
    so = np.sin(omega)
    ok = (so >= 1e-7) & (n0 > 1e-12) & (n1 > 1e-12)
    safe = np.where(ok, so, 1.0)
    spherical = (np.sin((1 - t) * omega) / safe) * x0 + (np.sin(t * omega) / safe) * x1
    linear = (1 - t) * x0 + t * x1
    return np.where(ok, spherical, linear).astype(x0.dtype, copy=False)


class Heads:
    """Output activations of the generator: tanh per continuous column and
    Gumbel-softmax per categorical block."""

    def __init__(self, schema: Schema, tau: float):
        self.schema = schema
        self.tau = tau
        self.cont = [a for (a, b), c in zip(schema.spans(), schema.columns) if not c.is_categorical]
        self.cat = [(a, b) for (a, b), c in zip(schema.spans(), schema.columns) if c.is_categorical]

    def apply(self, o, rng):
        y = np.empty_like(o)
        if self.cont:
            y[:, self.cont] = np.tanh(o[:, self.cont])
        for a, b in self.cat:
            g = -np.log(-np.log(rng.random((o.shape[0], b - a)) + 1e-20) + 1e-20)
            s = (o[:, a:b] + g.astype(o.dtype)) / self.tau
            s = s - s.max(axis=1, keepdims=True)
            e = np.exp(s)
            y[:, a:b] = e / e.sum(axis=1, keepdims=True)
        return y

    def backward(self, y, ybar):
        obar = np.empty_like(ybar)
        if self.cont:
            obar[:, self.cont] = ybar[:, self.cont] * (1 - y[:, self.cont] ** 2)
        for a, b in self.cat:
            yb, yy = ybar[:, a:b], y[:, a:b]
            obar[:, a:b] = yy * (yb - (yb * yy).sum(axis=1, keepdims=True)) / self.tau
        return obar


def _softmax(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def d_loss(D: DenseNet, real, fake, rng: np.random.Generator, tau: float = 10.0):
    """Wasserstein critic loss with a spherical-interpolate gradient penalty."""
    t = rng.random(len(real))
    x_hat = slerp(real, fake, t)
    w = float(forward(D, fake)[0].mean() - forward(D, real)[0].mean())
    pen, norms, _ = grad_norm_penalty(D, x_hat, tau)
    return w + pen, LossBreakdown(wasserstein=w, penalty=pen, grad_norm=float(norms.mean()))


@dataclass
class CriticGradients:
    real: np.ndarray
    fake: np.ndarray
    penalty: np.ndarray
    breakdown: LossBreakdown

    @property
    def total(self):
        return self.real + self.fake + self.penalty


def critic_gradients(D: DenseNet, real, fake, t, tau, sanitize_cfg: SanitizeConfig | None = None,
                     noise_rng=None) -> CriticGradients:
    """Gradients of the critic loss, split by term.

    With ``sanitize_cfg`` the real-data Wasserstein term is computed per
    sample and sanitized; fake and penalty terms are always clean.
    """
    out_r, tr_r = forward(D, real)
    out_f, tr_f = forward(D, fake)
    if sanitize_cfg is not None:
        rows = backward(D, tr_r, -np.ones_like(out_r), per_sample=True)[0]
        g_real = sanitize(rows, sanitize_cfg, noise_rng)
    else:
        g_real = backward(D, tr_r, -np.ones_like(out_r) / len(real))[0]
    g_fake = backward(D, tr_f, np.ones_like(out_f) / len(fake))[0]
    x_hat = slerp(real, fake, t)
    pen, norms, g_pen = grad_norm_penalty(D, x_hat, tau)
    w = float(out_f.mean() - out_r.mean())
    return CriticGradients(g_real, g_fake, g_pen,
                           LossBreakdown(wasserstein=w, penalty=pen, grad_norm=float(norms.mean())))


def info_loss_grad(f_real, f_fake):
    """L_I = ||mean f_r - mean f_f|| + ||sd f_r - sd f_f|| and dL_I/df_fake."""
    n = f_fake.shape[0]
    m_r, m_f = f_real.mean(axis=0), f_fake.mean(axis=0)
    s_r, s_f = f_real.std(axis=0), f_fake.std(axis=0)
    dm, ds = m_f - m_r, s_f - s_r
    lm, ls = float(np.linalg.norm(dm)), float(np.linalg.norm(ds))
    grad = np.zeros_like(f_fake)
    if lm > 0:
        grad += (dm / lm) / n
    if ls > 0:
        safe = np.where(s_f > 1e-8, s_f, 1.0)
        coef = np.where(s_f > 1e-8, (ds / ls) / (n * safe), 0.0)
        grad += (f_fake - m_f) * coef
    return lm, ls, grad.astype(f_fake.dtype, copy=False)


class Networks:
    """Generator, critic(s), classifier and their optimizers for one run."""

    def __init__(self, cfg: DtganConfig, schema: Schema, dtype=np.float32):
        self.cfg = cfg
        self.schema = schema
        self.dtype = dtype
        width = schema.width
        l = width
        if cfg.architecture == "baseline":
            g_hidden, g_act = (4 * l, 4 * l), "tanh"
            d_hidden, d_act = (l,), "relu"
        else:
            g_hidden, g_act = cfg.generator_dims, "relu"
            d_hidden, d_act = cfg.discriminator_dims, "leaky_relu"
        self.g_dims = (cfg.noise_dim + schema.condition_width,) + tuple(g_hidden) + (width,)
        self.g_acts = (g_act,) * len(g_hidden) + ("identity",)
        self.d_dims = (width,) + tuple(d_hidden) + (1,)
        self.d_acts = (d_act,) * len(d_hidden) + ("identity",)
        ta, tb = schema.span(schema.target)
        self.target_span = (ta, tb)
        self.feature_cols = np.r_[0:ta, tb:width]
        self.c_dims = (width - (tb - ta),) + tuple(cfg.classifier_dims) + (tb - ta,)
        self.c_acts = ("relu",) * len(cfg.classifier_dims) + ("identity",)
        self.generator = neural.init(self.g_dims, self.g_acts, subseed(cfg.seed, "init", "G"), dtype)
        self.g_opt = self._adam()
        self.critics: dict[int, DenseNet] = {}
        self.d_opts: dict[int, AdamState] = {}
        self.classifier = neural.init(self.c_dims, self.c_acts, subseed(cfg.seed, "init", "C"), dtype)
        self.c_opt = self._adam()
        self.heads = Heads(schema, cfg.gumbel_tau)
        self.slots = condition_slots(schema)

    def _adam(self):
        c = self.cfg
        return AdamState(lr=c.lr, beta1=c.beta1, beta2=c.beta2, eps=c.adam_eps)

    def critic(self, k: int = 0) -> DenseNet:
        if k not in self.critics:
            self.critics[k] = neural.init(self.d_dims, self.d_acts, subseed(self.cfg.seed, "init", "D", k),
                                          self.dtype)
            self.d_opts[k] = self._adam()
        return self.critics[k]

    def generate(self, n, rng, condition_mode=None):
        """Forward the generator; returns (rows, pre-head output, G trace, conditions)."""
        cols, cats, cond = sample_conditions(self.schema, rng, n, condition_mode or self.cfg.condition_mode)
        z = rng.standard_normal((n, self.cfg.noise_dim))
        inp = np.concatenate([z, cond], axis=1).astype(self.dtype)
        o, trace = forward(self.generator, inp)
        y = self.heads.apply(o, rng)
        return y, o, trace, (cols, cats)

    def condition_grad(self, o, conds):
        """Mean cross-entropy of each row's conditioned block; gradient wrt o."""
        cols, cats = conds
        grad = np.zeros_like(o)
        if not self.schema.categorical_indices:
            return 0.0, grad
        n = o.shape[0]
        spans = self.schema.spans()
        loss = 0.0
        for ci in set(cols.tolist()):
            rows = np.flatnonzero(cols == ci)
            a, b = spans[ci]
            p = _softmax(o[rows, a:b].astype(np.float64))
            loss -= float(np.log(p[np.arange(len(rows)), cats[rows]] + 1e-12).sum())
            p[np.arange(len(rows)), cats[rows]] -= 1.0
            grad[rows, a:b] = p / n
        return loss / n, grad

    def classifier_logits(self, x):
        return forward(self.classifier, x[:, self.feature_cols])

    def classification_grad(self, y):
        """Per-row cross-entropy between the classifier's prediction on the
        row minus its label and the row's generated label distribution.
        Returns (mean loss, dloss_i/dy_i per row)."""
        ta, tb = self.target_span
        logits, trace = self.classifier_logits(y)
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        lab = y[:, ta:tb]
        loss_rows = -(lab * logp).sum(axis=1)
        dlogits = np.exp(logp) * lab.sum(axis=1, keepdims=True) - lab
        _, dx = backward(self.classifier, trace, dlogits)
        grad = np.zeros_like(y)
        grad[:, self.feature_cols] = dx
        grad[:, ta:tb] = -logp
        return float(loss_rows.mean()), grad

    def classifier_step(self, real):
        ta, tb = self.target_span
        logits, trace = self.classifier_logits(real)
        p = _softmax(logits)
        labels = real[:, ta:tb]
        grad, _ = backward(self.classifier, trace, (p - labels) / len(real))
        self.classifier = adam_step(self.c_opt, self.classifier, grad)


def g_losses(nets: Networks, D: DenseNet, y, o, g_trace, conds, real, info: bool, classification: bool,
             condition: bool = True, per_sample: bool = False):
    """Generator-side losses, with gradients kept separate per loss.

    Returns (breakdown, grads) where ``grads`` maps "adversarial", "info",
    "classification" and "condition" to generator parameter gradients:
    per-sample rows (whose mean is the batch gradient) when ``per_sample``,
    else batch gradients. The condition gradient is always a batch gradient.
    """
    n = y.shape[0]
    bd = LossBreakdown()
    out_f, tr_f = forward(D, y)
    bd.g_adv = -float(out_f.mean())
    # per-row output gradients: d loss_i / d y_i for loss = mean_i loss_i
    _, dy_adv = backward(D, tr_f, -np.ones_like(out_f))
    dys = {"adversarial": dy_adv}
    if info:
        f_real = forward(D, real)[1].features
        bd.info_mean, bd.info_sd, df = info_loss_grad(f_real, tr_f.features)
        _, dy_info = backward(D, tr_f, None, hidden_grads={D.n_layers - 1: df * n})
        dys["info"] = dy_info
    if classification:
        bd.classification, dy_cls = nets.classification_grad(y)
        dys["classification"] = dy_cls
    grads = {}
    for name, dy in dys.items():
        do = nets.heads.backward(y, dy)
        if per_sample:
            grads[name] = backward(nets.generator, g_trace, do, per_sample=True)[0]
        else:
            grads[name] = backward(nets.generator, g_trace, do / n)[0]
    if condition:
        bd.condition, do_cond = nets.condition_grad(o, conds)
        grads["condition"] = backward(nets.generator, g_trace, do_cond)[0]
    return bd, grads


# -- training --------------------------------------------------------------

def _steps_per_epoch(n_rows, batch_size):
    return max(1, math.ceil(n_rows / batch_size))


def resolve_sigma(cfg: DtganConfig, n_rows: int) -> float | None:
    """Explicit sigma, or the smallest one whose spend over max_epochs fits epsilon."""
    if cfg.variant == "none":
        return None
    if cfg.sigma is not None:
        return cfg.sigma
    iters = cfg.max_epochs * _steps_per_epoch(n_rows, cfg.batch_size)
    k, gamma, steps = _mechanism_shape(cfg, n_rows, iters)
    return calibrate_sigma(DpBudget(cfg.epsilon, cfg.delta), steps, k, gamma)


def _mechanism_shape(cfg, n_rows, iters):
    """(compositions per update, subsample rate, charged updates for iters G steps)."""
    if cfg.variant == "dp_discriminator":
        b = min(cfg.batch_size, n_rows)
        return b, b / n_rows, iters * cfg.n_critic
    return cfg.batch_size * cfg.sanitized_losses, 1.0 / cfg.shards, iters


def train(cfg: DtganConfig, data: pd.DataFrame, schema: Schema, on_step=None) -> TrainedModel:
    """Train on ``data`` (rows conforming to ``schema``)."""
    x = encode(schema, data).astype(np.float32)
    if len(x) < 2:
        raise ValueError("need at least two training rows")
    if cfg.variant == "dp_generator":
        return _train_dp_generator(cfg, x, schema, on_step)
    return _train_dp_discriminator(cfg, x, schema, on_step)


def train_dtgan_d(cfg: DtganConfig, data, schema, on_step=None) -> TrainedModel:
    if cfg.variant != "dp_discriminator":
        raise ValueError("train_dtgan_d needs variant='dp_discriminator'")
    return train(cfg, data, schema, on_step)


def train_dtgan_g(cfg: DtganConfig, data, schema, on_step=None) -> TrainedModel:
    if cfg.variant != "dp_generator":
        raise ValueError("train_dtgan_g needs variant='dp_generator'")
    return train(cfg, data, schema, on_step)


def _record(step, ledger, bd: LossBreakdown):
    rec = {"step": step}
    rec["epsilon"] = ledger.epsilon if ledger is not None else None
    rec.update({k: float(v) for k, v in asdict(bd).items()})
    return rec


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite gradient during training")


def _train_dp_discriminator(cfg, x, schema, on_step):
    """Also runs the non-private variant (no sanitization, no ledger)."""
    n = len(x)
    private = cfg.variant == "dp_discriminator"
    b = min(cfg.batch_size, n)
    sigma = resolve_sigma(cfg, n)
    ledger = None
    if private:
        ledger = PrivacyLedger(MechanismSpec(sigma, b, b / n), cfg.delta, OrderGrid())
        san = SanitizeConfig(cfg.clip, sigma)
    info, classification = cfg.effective_losses()
    nets = Networks(cfg, schema)
    rng_batch = stream(cfg.seed, "train", "batches")
    rng_latent = stream(cfg.seed, "train", "latent")
    rng_interp = stream(cfg.seed, "train", "interp")
    rng_noise = stream(cfg.seed, "train", "noise")
    max_iters = cfg.max_epochs * _steps_per_epoch(n, b) if cfg.max_epochs is not None else None
    history = []
    it = 0
    while max_iters is None or it < max_iters:
        if ledger is not None and cfg.epsilon is not None and \
                ledger.epsilon_after(ledger.steps + cfg.n_critic)[0] > cfg.epsilon:
            break
        D = nets.critic(0)
        for _ in range(cfg.n_critic):
            real = x[rng_batch.choice(n, b, replace=False)]
            fake = nets.generate(b, rng_latent)[0]
            t = rng_interp.random(b)
            cg = critic_gradients(D, real, fake, t, cfg.penalty, san if private else None, rng_noise)
            _check_finite(cg.total)
            D = adam_step(nets.d_opts[0], D, cg.total)
            if ledger is not None:
                ledger.spend()
        nets.critics[0] = D
        # statistics for L_I and the classifier reuse the last critic batch
        if classification:
            nets.classifier_step(real)
        y, o, g_trace, conds = nets.generate(b, rng_latent)
        bd, grads = g_losses(nets, D, y, o, g_trace, conds, real, info, classification, cfg.condition_loss)
        g = sum(grads.values())
        _check_finite(g)
        nets.generator = adam_step(nets.g_opt, nets.generator, g)
        bd.wasserstein, bd.penalty, bd.grad_norm = cg.breakdown.wasserstein, cg.breakdown.penalty, \
            cg.breakdown.grad_norm
        it += 1
        rec = _record(it, ledger, bd)
        history.append(rec)
        if on_step:
            on_step(rec)
    return _finish(cfg, nets, schema, ledger, history, it, sigma, n)


def _train_dp_generator(cfg, x, schema, on_step):
    n = len(x)
    if cfg.shards > n:
        raise ValueError(f"shards={cfg.shards} exceeds the {n} training rows")
    shard_size = n // cfg.shards
    if shard_size < cfg.batch_size:
        warnings.warn(f"shards of {shard_size} rows are smaller than the batch size {cfg.batch_size}")
    b = cfg.batch_size
    sigma = resolve_sigma(cfg, n)
    ledger = PrivacyLedger(MechanismSpec(sigma, b * cfg.sanitized_losses, 1.0 / cfg.shards),
                           cfg.delta, OrderGrid())
    san = SanitizeConfig(cfg.clip, sigma)
    rng_batch = stream(cfg.seed, "train", "batches")
    rng_shard = stream(cfg.seed, "train", "shards")
    rng_latent = stream(cfg.seed, "train", "latent")
    rng_interp = stream(cfg.seed, "train", "interp")
    rng_noise = stream(cfg.seed, "train", "noise")
    perm = rng_batch.permutation(n)
    shards = [perm[k * shard_size:(k + 1) * shard_size] for k in range(cfg.shards)]
    nets = Networks(cfg, schema)
    max_iters = cfg.max_epochs * _steps_per_epoch(n, b) if cfg.max_epochs is not None else None
    history = []
    it = 0
    while max_iters is None or it < max_iters:
        if cfg.epsilon is not None and ledger.epsilon_after(ledger.steps + 1)[0] > cfg.epsilon:
            break
        k = int(rng_shard.integers(cfg.shards))
        shard = x[shards[k]]
        rb = min(b, len(shard))
        D = nets.critic(k)
        for _ in range(cfg.n_critic):
            real = shard[rng_batch.choice(len(shard), rb, replace=False)]
            fake = nets.generate(rb, rng_latent)[0]
            cg = critic_gradients(D, real, fake, rng_interp.random(rb), cfg.penalty)
            _check_finite(cg.total)
            D = adam_step(nets.d_opts[k], D, cg.total)
        nets.critics[k] = D
        real = shard[rng_batch.choice(len(shard), rb, replace=False)]
        if cfg.classification_loss:
            nets.classifier_step(real)
        y, o, g_trace, conds = nets.generate(b, rng_latent)
        bd, grads = g_losses(nets, D, y, o, g_trace, conds, real, cfg.info_loss,
                             cfg.classification_loss, cfg.condition_loss, per_sample=True)
        g = grads.pop("condition", 0.0)
        for name in ("adversarial", "info", "classification"):
            if name in grads:
                g = g + sanitize(grads[name], san, rng_noise)
        _check_finite(g)
        nets.generator = adam_step(nets.g_opt, nets.generator, g)
        ledger.spend()
        bd.wasserstein, bd.penalty, bd.grad_norm = cg.breakdown.wasserstein, cg.breakdown.penalty, \
            cg.breakdown.grad_norm
        it += 1
        rec = _record(it, ledger, bd)
        history.append(rec)
        if on_step:
            on_step(rec)
    return _finish(cfg, nets, schema, ledger, history, it, sigma, n)


def _finish(cfg, nets, schema, ledger, history, iters, sigma, n_rows):
    transcript = {"variant": cfg.variant, "generator_steps": iters, "rows": n_rows,
                  "batch_size": cfg.batch_size}
    if ledger is not None:
        transcript.update(ledger.transcript(variant=cfg.variant))
    else:
        transcript.update({"epsilon": "inf", "delta": cfg.delta, "sigma": None})
    if iters == 0:
        raise BudgetExhausted("privacy budget exhausted before the first generator step", transcript)
    resolved = replace(cfg, sigma=sigma) if sigma is not None else cfg
    return TrainedModel(nets.generator, schema, resolved, transcript, history)


# -- sampling and checkpoints ---------------------------------------------

def sample(model: TrainedModel, n: int, seed: int = 0) -> pd.DataFrame:
    """Decoded synthetic rows; reads only the generator and the schema."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = model.config
    rng = stream(seed, "sample")
    schema = model.schema
    _, _, cond = sample_conditions(schema, rng, n, "empirical")
    z = rng.standard_normal((n, cfg.noise_dim))
    inp = np.concatenate([z, cond], axis=1).astype(model.generator.dtype)
    o, _ = forward(model.generator, inp)
    y = Heads(schema, cfg.gumbel_tau).apply(o, rng)
    return decode(schema, y)


CKPT_MAGIC = b"DTGANCKP"
CKPT_VERSION = 1


def dumps_model(model: TrainedModel) -> bytes:
    """Magic, version, JSON header (config, schema, transcript, block table),
    then one network container per block."""
    gen = neural.dumps(model.generator)
    header = {
        "config": model.config.to_dict(),
        "schema": json.loads(model.schema.to_json()),
        "transcript": model.transcript,
        "blocks": [{"name": "generator", "length": len(gen)}],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb + gen


def loads_model(data: bytes) -> TrainedModel:
    if data[:8] != CKPT_MAGIC:
        raise ValueError("not a DTGAN checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    pos = 16 + hlen
    blocks = {}
    for blk in header["blocks"]:
        blocks[blk["name"]] = data[pos:pos + blk["length"]]
        pos += blk["length"]
    return TrainedModel(neural.loads(blocks["generator"]), Schema.from_dict(header["schema"]),
                        DtganConfig.from_dict(header["config"]), header["transcript"])
