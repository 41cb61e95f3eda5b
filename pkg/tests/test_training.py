import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapnet.data import synth_panel
from gapnet.gradcheck import check
from gapnet.graphs import PairGraph
from gapnet.model import ModelConfig, day_forward, init_params
from gapnet.spl import SplConfig
from gapnet.tensor import Tape, Tensor, backward
from gapnet.training import (Adam, NumericError, Plugin, TrainConfig, evaluate, one_cycle_lr,
                             ranking_loss, train)

SPL = SplConfig(kernel_sizes=(3,), channels_z=1, lookback=6, ffn_dim=8, dropout=0.1)


def loss_oracle(p, y, alpha):
    """Double loop with correctly rounded sums (naive accumulation drifts ~1e-12 at N=50)."""
    n = len(p)
    mse = math.fsum((p[i] - y[i]) ** 2 for i in range(n)) / n
    hinge = math.fsum(max(0.0, -(p[i] - p[j]) * (y[i] - y[j])) for i in range(n) for j in range(n))
    return mse + alpha * hinge


# -- loss ---------------------------------------------------------------------

def test_loss_matches_double_loop():
    rng = np.random.default_rng(0)
    for alpha in (0.1, 1.0, 8.0):
        p, y = rng.normal(size=50), rng.normal(size=50)
        got = float(ranking_loss(Tensor(p), y, alpha).data)
        assert abs(got - loss_oracle(p.tolist(), y.tolist(), alpha)) < 1e-12 * max(1.0, abs(got))


def test_loss_examples():
    y = np.random.default_rng(1).normal(size=7)
    assert float(ranking_loss(Tensor(y.copy()), y, 2.0).data) == 0.0
    assert float(ranking_loss(Tensor([1.0, 0.0]), [0.0, 1.0], 1.0).data) == 3.0
    mono = np.exp(3 * y)
    mse = np.mean((mono - y) ** 2)
    assert float(ranking_loss(Tensor(mono), y, 5.0).data) == pytest.approx(mse, rel=1e-14)


def test_loss_length_mismatch():
    with pytest.raises(ValueError):
        ranking_loss(Tensor(np.zeros(3)), np.zeros(4), 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-5, 5))
def test_loss_invariances(seed, shift):
    rng = np.random.default_rng(seed)
    p, y = rng.normal(size=8), rng.normal(size=8)
    perm = rng.permutation(8)
    base = float(ranking_loss(Tensor(p), y, 1.0).data)
    assert float(ranking_loss(Tensor(p[perm]), y[perm], 1.0).data) == pytest.approx(base, rel=1e-12)
    hinge = lambda q: float(ranking_loss(Tensor(q), y, 1.0).data) - np.mean((q - y) ** 2)  # noqa: E731
    assert hinge(p + shift) == pytest.approx(hinge(p), rel=1e-9, abs=1e-12)
    if abs(shift) > 1e-3:
        assert np.mean((p + shift - y) ** 2) != pytest.approx(np.mean((p - y) ** 2))


def test_loss_gradient():
    rng = np.random.default_rng(2)
    y = rng.normal(size=9)
    res = check("loss", lambda P: ranking_loss(P["p"], y, 1.5), {"p": rng.normal(size=9)}, 1e-6)
    assert res.ok, res


# -- schedule and optimizer --------------------------------------------------

def test_one_cycle_shape():
    total, top = 100, 1e-3
    assert one_cycle_lr(0, total, top) == pytest.approx(top / 25)
    assert one_cycle_lr(30, total, top) == pytest.approx(top)
    assert one_cycle_lr(99, total, top) == pytest.approx(top / 1e4)
    lrs = [one_cycle_lr(s, total, top) for s in range(total)]
    assert all(a < b for a, b in zip(lrs[:30], lrs[1:31]))
    assert all(a >= b for a, b in zip(lrs[30:], lrs[31:]))


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    Adam(params).step(params, {"w": np.array([0.3, -4.0, 1e-3])}, 0.1)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 0.4], rtol=0, atol=1e-4)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(3)
    w = rng.normal(size=4)
    params = {"w": w.copy()}
    opt = Adam(params)
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        opt.step(params, {"w": g}, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], w, rtol=1e-13)


# -- training loop -------------------------------------------------------------

def _panel(noise=0.5, seed=0, days=110):
    return synth_panel(8, days, 2, noise, seed)


def test_noise_free_training_improves():
    plugin = Plugin(ModelConfig(spl=SPL, hidden=8, paradigm="twostep"))
    res = train(_panel(0.0), plugin, TrainConfig(alpha=1.0, epochs=20, max_lr=1e-2, patience=100, seed=0))
    assert res.log[-1].train_loss < res.log[0].train_loss
    assert len(res.log) == 20


def test_twostep_empty_prior_equals_mlp():
    panel = _panel()
    cfg = TrainConfig(alpha=1.0, epochs=3, max_lr=1e-2, seed=4)
    a = train(panel, Plugin(ModelConfig(spl=SPL, hidden=8, paradigm="twostep")), cfg)
    b = train(panel, Plugin(ModelConfig(spl=SPL, hidden=8, backbone="mlp")), cfg)
    assert [r.train_loss for r in a.log] == [r.train_loss for r in b.log]
    assert [r.valid_loss for r in a.log] == [r.valid_loss for r in b.log]
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_training_is_deterministic():
    panel = _panel()
    plugin = Plugin(ModelConfig(spl=SPL, hidden=8), init_seed=1)
    cfg = TrainConfig(alpha=0.5, epochs=2, max_lr=1e-3, seed=5)
    a, b = train(panel, plugin, cfg), train(panel, plugin, cfg)
    assert a.log == b.log
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_early_stopping_and_best_checkpoint():
    panel = _panel()
    plugin = Plugin(ModelConfig(spl=SPL, hidden=8, backbone="mlp"))
    res = train(panel, plugin, TrainConfig(alpha=1.0, epochs=30, max_lr=5e-1, patience=2, seed=0))
    valids = [r.valid_loss for r in res.log]
    assert res.best_epoch == int(np.argmin(valids)) + 1
    if res.stopped_early:
        assert len(res.log) == res.best_epoch + 2
    ev = evaluate(panel, plugin, res.params, "valid", 1.0)
    assert np.mean(ev.losses) == min(valids)


def test_spl_receives_gradient():
    panel = _panel()
    cfg = ModelConfig(spl=SPL, hidden=8, tau=0.05)
    params = init_params(cfg, panel.n_stocks, 0)
    plugin = Plugin(cfg, init_seed=0)
    tape = Tape()
    P = tape.bind(params)
    t = panel.target_days("train", SPL.lookback)[0]
    w = panel.window(t, SPL.lookback)
    out = day_forward(Tensor(w.x), P, cfg, plugin.initial_state(panel.n_stocks))
    grads = backward(tape, ranking_loss(out.scores, w.target, 1.0))
    spl_grads = [np.abs(g).max() for k, g in grads.items() if k.startswith("spl.")]
    assert max(spl_grads) > 0
    assert out.graph.structure.any()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_last_good():
    panel = _panel()
    panel.closes[:, 60] = np.inf  # poisons the target of one training day
    plugin = Plugin(ModelConfig(spl=SPL, hidden=8, backbone="mlp"))
    with pytest.raises(NumericError) as err:
        train(panel, plugin, TrainConfig(epochs=2, seed=0))
    assert err.value.result is not None


# -- evaluation --------------------------------------------------------------

def test_evaluate_shape_and_repeatability():
    panel = _panel()
    cfg = ModelConfig(spl=SPL, hidden=8)
    plugin = Plugin(cfg, init_seed=2)
    params = init_params(cfg, panel.n_stocks, 1)
    a = evaluate(panel, plugin, params, "test")
    b = evaluate(panel, plugin, params, "test")
    assert a.preds.shape == (len(panel.target_days("test", SPL.lookback)), panel.n_stocks)
    assert a.preds.tobytes() == b.preds.tobytes()


def test_zero_parameter_model_predicts_a_constant():
    panel = _panel()
    cfg = ModelConfig(spl=SPL, hidden=8)
    plugin = Plugin(cfg, init_seed=2)
    params = {k: np.zeros_like(v) for k, v in init_params(cfg, panel.n_stocks, 1).items()}
    ev = evaluate(panel, plugin, params, "test")
    assert np.all(ev.preds == ev.preds[0, 0])


def test_evaluate_rejects_mismatched_checkpoint():
    panel = _panel()
    cfg = ModelConfig(spl=SPL, hidden=8)
    params = init_params(cfg, panel.n_stocks + 1, 0)
    with pytest.raises(ValueError):
        evaluate(panel, Plugin(cfg, init_seed=0), params, "test")


def test_prior_graph_initializes_memory():
    cfg = ModelConfig(spl=SPL, hidden=8)
    g = PairGraph(1 - np.eye(4))
    st_ = Plugin(cfg, init_graph=g).initial_state(4)
    np.testing.assert_array_equal(st_.adj_memory.data[0], 1 - np.eye(4))
    assert Plugin(ModelConfig(spl=SPL, backbone="mlp")).initial_state(4) is None
    assert math.isclose(float(st_.cell.data.sum()), 0.0)
