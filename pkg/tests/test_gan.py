import numpy as np
import pandas as pd
import pytest

from dtgan import accountant, gan
from dtgan.accountant import MechanismSpec, OrderGrid, amplified_curve
from dtgan.gan import (BudgetExhausted, DtganConfig, Heads, Networks, critic_gradients, d_loss,
                       g_losses, info_loss_grad, sample, slerp, train)
from dtgan.neural import DenseNet, forward, init
from dtgan.sanitizer import SanitizeConfig
from dtgan.tabular import Schema, encode, infer_schema
from oracles import central_diff, rel_err


def toy(n=500, seed=0):
    rng = np.random.default_rng(seed)
    c = rng.choice(["a", "b", "c"], n, p=[0.5, 0.3, 0.2])
    shift = np.select([c == "a", c == "b"], [-1.0, 0.5], 1.5)
    x = rng.normal(shift, 0.4)
    y = (x + rng.normal(0, 0.5, n) > 0).astype(int)
    df = pd.DataFrame({"x": [f"{v:.4f}" for v in x], "c": c, "y": [str(v) for v in y]})
    return df, infer_schema(df, "y")


SMALL = dict(generator_dims=(32, 32), discriminator_dims=(32, 32), classifier_dims=(16,), noise_dim=8)


# -- slerp -----------------------------------------------------------------

def test_slerp_endpoints():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    np.testing.assert_allclose(slerp(a, b, 0.0), a, atol=1e-12)
    np.testing.assert_allclose(slerp(a, b, 1.0), b, atol=1e-12)


def test_slerp_orthogonal_midpoint():
    out = slerp(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.5)
    np.testing.assert_allclose(out, [[np.sqrt(2) / 2, np.sqrt(2) / 2]], atol=1e-12)
    assert np.linalg.norm(out) == pytest.approx(1.0)


def test_slerp_parallel_and_zero_fall_back_to_linear():
    a = np.array([[1.0, 2.0], [0.0, 0.0]])
    b = np.array([[2.0, 4.0], [3.0, 1.0]])
    np.testing.assert_allclose(slerp(a, b, 0.25), 0.75 * a + 0.25 * b)


def test_slerp_per_row_t():
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = slerp(a, b, np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, [[1, 0], [0, 1]], atol=1e-12)


# -- critic loss -------------------------------------------------------------

def test_d_loss_zero_critic():
    D = DenseNet((3, 4, 1), ("leaky_relu", "identity"), np.zeros(21))
    rng = np.random.default_rng(0)
    loss, bd = d_loss(D, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), rng)
    assert loss == pytest.approx(10.0)
    assert bd.wasserstein == 0


def test_d_loss_unit_linear_critic():
    w = np.array([0.6, 0.0, -0.8])
    D = DenseNet((3, 1), ("identity",), np.concatenate([w, [0.3]]))
    rng = np.random.default_rng(1)
    real, fake = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    loss, bd = d_loss(D, real, fake, rng)
    assert bd.penalty == pytest.approx(0.0, abs=1e-20)
    assert loss == pytest.approx(w @ (fake.mean(0) - real.mean(0)), rel=1e-12)


def test_d_loss_random_linear_critic():
    rng = np.random.default_rng(2)
    w = rng.normal(size=4)
    D = DenseNet((4, 1), ("identity",), np.concatenate([w, [0.0]]))
    real, fake = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    loss, _ = d_loss(D, real, fake, rng, tau=3.0)
    expected = w @ (fake.mean(0) - real.mean(0)) + 3.0 * (np.linalg.norm(w) - 1) ** 2
    assert loss == pytest.approx(expected, rel=1e-12)


def test_critic_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    D = init((3, 5, 1), ("tanh", "identity"), seed=4, dtype=np.float64)
    real, fake = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    t = rng.random(4)
    cg = critic_gradients(D, real, fake, t, 10.0)

    def f(p):
        n = DenseNet(D.dims, D.activations, p)
        w = forward(n, fake)[0].mean() - forward(n, real)[0].mean()
        from dtgan.neural import grad_norm_penalty
        return float(w) + grad_norm_penalty(n, slerp(real, fake, t), 10.0)[0]
    assert rel_err(cg.total, central_diff(f, D.params, h=1e-5)) < 1e-4


def test_sanitization_only_touches_real_term():
    rng = np.random.default_rng(5)
    D = init((3, 6, 1), ("leaky_relu", "identity"), seed=6)
    real = rng.normal(size=(8, 3)).astype(np.float32)
    fake = rng.normal(size=(8, 3)).astype(np.float32)
    t = rng.random(8)
    a = critic_gradients(D, real, fake, t, 10.0, SanitizeConfig(1.0, 0.0), np.random.default_rng(9))
    b = critic_gradients(D, real, fake, t, 10.0, SanitizeConfig(1.0, 3.0), np.random.default_rng(9))
    assert a.fake.tobytes() == b.fake.tobytes()
    assert a.penalty.tobytes() == b.penalty.tobytes()
    assert not np.array_equal(a.real, b.real)


# -- generator losses -------------------------------------------------------

def test_info_loss_zero_on_identical_features():
    f = np.random.default_rng(0).normal(size=(10, 4))
    lm, ls, g = info_loss_grad(f, f.copy())
    assert lm == 0 and ls == 0 and np.all(g == 0)


def test_info_loss_value_and_gradient():
    rng = np.random.default_rng(1)
    fr, ff = rng.normal(size=(9, 3)), rng.normal(1.0, 2.0, size=(9, 3))
    lm, ls, g = info_loss_grad(fr, ff)
    mean_gap = [sum(ff[:, j]) / 9 - sum(fr[:, j]) / 9 for j in range(3)]
    sd = lambda col: (sum((v - sum(col) / len(col)) ** 2 for v in col) / len(col)) ** 0.5
    sd_gap = [sd(ff[:, j]) - sd(fr[:, j]) for j in range(3)]
    assert lm == pytest.approx(np.sqrt(np.sum(np.square(mean_gap))), rel=1e-12)
    assert ls == pytest.approx(np.sqrt(np.sum(np.square(sd_gap))), rel=1e-12)
    fd = central_diff(lambda z: sum(info_loss_grad(fr, z)[:2]), ff)
    assert rel_err(g, fd) < 1e-5


def test_heads_backward_matches_finite_differences():
    _, schema = toy(50)
    heads = Heads(schema, 0.2)
    o = np.random.default_rng(2).normal(size=(3, schema.width))
    c = np.random.default_rng(3).normal(size=o.shape)
    y = heads.apply(o, np.random.default_rng(7))
    fd = central_diff(lambda z: float((heads.apply(z, np.random.default_rng(7)) * c).sum()), o, h=1e-6)
    assert rel_err(heads.backward(y, c), fd) < 1e-4


def _setup(seed=0):
    df, schema = toy(60)
    cfg = DtganConfig(variant="none", max_epochs=1, seed=seed, **SMALL)
    nets = Networks(cfg, schema, dtype=np.float64)
    real = encode(schema, df.head(6))
    return cfg, schema, nets, real


def _g_objective(nets, D, real, which, seed):
    def f(p):
        saved = nets.generator
        nets.generator = DenseNet(saved.dims, saved.activations, p)
        y, o, tr, conds = nets.generate(6, np.random.default_rng(seed))
        bd, _ = g_losses(nets, D, y, o, tr, conds, real, True, True, True)
        nets.generator = saved
        return {"adversarial": bd.g_adv, "info": bd.info, "classification": bd.classification,
                "condition": bd.condition}[which]
    return f


@pytest.mark.parametrize("which", ["adversarial", "info", "classification", "condition"])
def test_g_loss_gradients_match_finite_differences(which):
    cfg, schema, nets, real = _setup()
    D = nets.critic(0)
    y, o, tr, conds = nets.generate(6, np.random.default_rng(11))
    _, grads = g_losses(nets, D, y, o, tr, conds, real, True, True, True)
    fd = central_diff(_g_objective(nets, D, real, which, 11), nets.generator.params, h=1e-6)
    assert rel_err(grads[which], fd) < 1e-4


def test_g_loss_per_sample_rows_average_to_batch():
    cfg, schema, nets, real = _setup()
    D = nets.critic(0)
    y, o, tr, conds = nets.generate(6, np.random.default_rng(12))
    _, batch = g_losses(nets, D, y, o, tr, conds, real, True, True, True)
    _, rows = g_losses(nets, D, y, o, tr, conds, real, True, True, True, per_sample=True)
    for k in ("adversarial", "info", "classification"):
        assert rows[k].shape == (6, nets.generator.n_params)
        np.testing.assert_allclose(rows[k].mean(axis=0), batch[k], atol=1e-10)
    np.testing.assert_array_equal(rows["condition"], batch["condition"])


def test_condition_loss_vanishes_when_condition_is_met():
    cfg, schema, nets, _ = _setup()
    y, o, tr, conds = nets.generate(6, np.random.default_rng(13))
    spans = schema.spans()
    o = np.full_like(o, -50.0)
    for i, (col, cat) in enumerate(zip(*conds)):
        o[i, spans[col][0] + cat] = 50.0
    loss, _ = nets.condition_grad(o, conds)
    assert loss < 1e-12


def test_toggles_select_losses():
    cfg, schema, nets, real = _setup()
    y, o, tr, conds = nets.generate(6, np.random.default_rng(14))
    _, grads = g_losses(nets, nets.critic(0), y, o, tr, conds, real, False, False, False)
    assert set(grads) == {"adversarial"}


# -- training ----------------------------------------------------------------

def test_strict_dp_disables_real_data_losses():
    assert DtganConfig(variant="dp_discriminator", sigma=1.0, max_epochs=1).effective_losses() == (False, False)
    assert DtganConfig(variant="dp_discriminator", sigma=1.0, max_epochs=1,
                       strict_dp=False).effective_losses() == (True, True)
    assert DtganConfig(variant="dp_generator", sigma=1.0, max_epochs=1).effective_losses() == (True, True)


@pytest.mark.parametrize("kw", [dict(penalty=-1), dict(batch_size=0), dict(n_critic=0),
                                dict(variant="dp_generator", shards=1), dict(sigma=0.0),
                                dict(variant="bogus"), dict(max_epochs=None)])
def test_config_invariants(kw):
    base = dict(variant="dp_discriminator", sigma=1.0, max_epochs=1)
    base.update(kw)
    with pytest.raises(ValueError):
        DtganConfig(**base)


def test_config_dict_round_trip():
    cfg = DtganConfig(variant="dp_generator", sigma=2.0, epsilon=3.0, shards=4, **SMALL)
    assert DtganConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        DtganConfig.from_dict({"nope": 1})


def test_dp_discriminator_ledger_matches_run_ledger():
    df, schema = toy(200)
    cfg = DtganConfig(variant="dp_discriminator", sigma=5.0, max_epochs=1, batch_size=32, **SMALL)
    m = train(cfg, df, schema)
    steps = m.transcript["steps"]
    assert steps == m.transcript["generator_steps"] * cfg.n_critic == 7 * 5
    spec = MechanismSpec(5.0, 32, 32 / 200)
    _, (eps, order) = accountant.run_ledger(spec, steps, 1e-5, OrderGrid())
    assert m.transcript["epsilon"] == eps and m.transcript["order"] == order


def test_dp_generator_charge_depends_on_toggles():
    df, schema = toy(200)
    grid = OrderGrid()
    common = dict(variant="dp_generator", sigma=5.0, max_epochs=1, batch_size=16, shards=4, **SMALL)
    for info, cls, k in [(True, True, 6), (False, False, 2)]:
        m = train(DtganConfig(info_loss=info, classification_loss=cls, **common), df, schema)
        assert m.transcript["compositions"] * 2 == k * 16
        curve = amplified_curve(MechanismSpec(5.0, k * 16 // 2, 0.25), grid).scale(m.transcript["steps"])
        assert m.transcript["epsilon"] == accountant.to_dp(curve, 1e-5)[0]


def test_budget_stops_training_under_epsilon():
    df, schema = toy(300)
    cfg = DtganConfig(variant="dp_discriminator", sigma=20.0, epsilon=5.0, batch_size=32, **SMALL)
    m = train(cfg, df, schema)
    assert m.transcript["epsilon"] <= 5.0
    spec = MechanismSpec(20.0, 32, 32 / 300)
    after = accountant.run_ledger(spec, m.transcript["steps"] + cfg.n_critic, 1e-5, OrderGrid())[1][0]
    assert after > 5.0


def test_budget_exhausted_before_first_step():
    df, schema = toy(100)
    cfg = DtganConfig(variant="dp_discriminator", sigma=0.5, epsilon=0.01, **SMALL)
    with pytest.raises(BudgetExhausted) as info:
        train(cfg, df, schema)
    assert info.value.transcript["generator_steps"] == 0


def test_large_sigma_gives_small_epsilon():
    df, schema = toy(400)
    eps = {}
    for sigma in (5.0, 1e3):
        m = train(DtganConfig(variant="dp_discriminator", sigma=sigma, max_epochs=1, **SMALL), df, schema)
        eps[sigma] = m.transcript["epsilon"]
    # the generic amplification bound keeps a sigma-free floor (about 3.49 here)
    assert eps[1e3] < eps[5.0] / 50
    assert eps[1e3] == pytest.approx(3.4928, rel=1e-4)


def test_calibrated_run_respects_budget():
    df, schema = toy(400)
    # rate 1/shards must be small: the bound has a sigma-free floor that grows with the rate
    cfg = DtganConfig(variant="dp_generator", epsilon=1.0, max_epochs=1, batch_size=8, shards=50, **SMALL)
    m = train(cfg, df, schema)
    assert m.transcript["epsilon"] <= 1.0
    assert m.transcript["generator_steps"] == 50


@pytest.mark.parametrize("variant", ["dp_discriminator", "dp_generator", "none"])
def test_same_seed_is_bit_reproducible(variant):
    df, schema = toy(150)
    cfg = DtganConfig(variant=variant, sigma=None if variant == "none" else 2.0, max_epochs=1,
                      batch_size=32, seed=3, strict_dp=False, **SMALL)
    a, b = train(cfg, df, schema), train(cfg, df, schema)
    assert a.generator.params.tobytes() == b.generator.params.tobytes()
    assert a.transcript == b.transcript and a.history == b.history
    c = train(DtganConfig(**{**cfg.to_dict(), "seed": 4}), df, schema)
    assert c.generator.params.tobytes() != a.generator.params.tobytes()


def test_singleton_shards_complete():
    df, schema = toy(12)
    cfg = DtganConfig(variant="dp_generator", sigma=2.0, max_epochs=1, shards=12, batch_size=4, **SMALL)
    with pytest.warns(UserWarning):
        m = train(cfg, df, schema)
    assert m.transcript["generator_steps"] == 3


def test_too_many_shards_rejected():
    df, schema = toy(10)
    with pytest.raises(ValueError, match="shards"):
        train(DtganConfig(variant="dp_generator", sigma=2.0, max_epochs=1, shards=11, **SMALL), df, schema)


def test_gradient_penalty_efficacy():
    df, schema = toy(500)
    norms = []
    train(DtganConfig(variant="none", max_epochs=25, seed=1), df.iloc[:, [0, 2]].copy(),
          infer_schema(df.iloc[:, [0, 2]], "y"), on_step=lambda r: norms.append(r["grad_norm"]))
    assert len(norms) == 200
    assert 0.8 <= np.mean(norms[-50:]) <= 1.2


# -- sampling and checkpoints --------------------------------------------------

def _quick_model(**kw):
    df, schema = toy(100)
    return train(DtganConfig(variant="none", max_epochs=1, **{**SMALL, **kw}), df, schema)


def test_sample_contract():
    m = _quick_model()
    with pytest.raises(ValueError):
        sample(m, 0)
    one = sample(m, 1, seed=0)
    assert list(one.columns) == m.schema.names and len(one) == 1
    many = sample(m, 300, seed=1)
    assert set(many["c"]) <= {"a", "b", "c"} and set(many["y"]) <= {"0", "1"}
    pd.testing.assert_frame_equal(sample(m, 300, seed=1), many)


def test_trained_model_holds_no_rows():
    m = _quick_model()
    assert not any(isinstance(v, (pd.DataFrame, np.ndarray)) for v in vars(m).values())


def test_checkpoint_round_trip():
    m = _quick_model(seed=5)
    blob = gan.dumps_model(m)
    back = gan.loads_model(blob)
    assert back.config == m.config and back.schema == m.schema and back.transcript == m.transcript
    pd.testing.assert_frame_equal(sample(back, 50, seed=2), sample(m, 50, seed=2))
    assert gan.dumps_model(back) == blob
    with pytest.raises(ValueError):
        gan.loads_model(b"NOTACKPT" + blob[8:])


@pytest.mark.slow
def test_imbalanced_frequency_and_condition_consistency():
    rng = np.random.default_rng(0)
    n = 500
    k = rng.choice(["p", "q"], n, p=[0.95, 0.05])
    df = pd.DataFrame({"x": [f"{v:.4f}" for v in rng.normal(size=n)], "k": k,
                       "y": [str(v) for v in rng.integers(0, 2, n)]})
    schema = infer_schema(df, "y")
    m = train(DtganConfig(variant="none", max_epochs=500, seed=0), df, schema)
    out = sample(m, 5000, seed=0)
    assert abs((out["k"] == "q").mean() - 0.05) <= 0.05
    # condition consistency: argmax of the conditioned block equals the condition
    nets = Networks(m.config, schema)
    nets.generator = m.generator
    y, o, _, (cols, cats) = nets.generate(2000, np.random.default_rng(1), "empirical")
    spans = schema.spans()
    hit = [np.argmax(y[i, spans[c][0]:spans[c][1]]) == cat for i, (c, cat) in enumerate(zip(cols, cats))]
    assert np.mean(hit) >= 0.9
