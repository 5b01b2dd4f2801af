import math
from dataclasses import replace

import numpy as np
import pytest

from advden import gradcheck
from advden import tensor as T
from advden.errors import ConfigError, DataError
from advden.model import ModelConfig, build_model, discriminate, encode, forward
from advden.signals import SignalPair, corrupt, default_noise, gen_clean, noise_for_snr
from advden.tensor import Var
from advden.training import (Optimizers, TrainConfig, disc_accuracy, discriminator_step,
                             encoder_decoder_step, fit, loss_adv, loss_ed, train_step)

SMALL = ModelConfig(feature_channels=4, window_len=8,
                    discriminator=ModelConfig().discriminator.__class__(hidden_units=6))
TC = TrainConfig(dtype="float64", batch_size=4)


def probs(v, n=4):
    return Var(np.full((n, 1, 1), v))


def snapshot(tensors):
    return {k: v.values.copy() for k, v in tensors.items()}


def same(a, b):
    return all(a[k].tobytes() == b[k].tobytes() for k in a)


def batch(rng, n=4, length=8):
    y = rng.normal(size=(n, 1, length))
    return y + 0.3 * rng.normal(size=y.shape), y


def test_loss_ed_examples():
    y = Var(np.arange(6.0).reshape(1, 1, 6))
    assert loss_ed(y, y.values).item() == 0
    assert loss_ed(Var(y.values + 1), y.values).item() == 1


def test_loss_adv_examples():
    assert loss_adv(probs(0.5), probs(0.5), 1).item() == pytest.approx(-2 * math.log(2), abs=1e-12)
    ds_n = Var(np.array([0.1, 0.4, 0.7]).reshape(3, 1, 1))
    expected = np.mean(np.log(1 - ds_n.values))
    for clean in (0.01, 0.5, 0.99):
        assert loss_adv(probs(clean, 3), ds_n, 0).item() == expected
    assert -1e-6 < loss_adv(probs(1.0), probs(0.0), 1).item() < 0
    with pytest.raises(ConfigError):
        loss_adv(probs(0.5), probs(0.5), 2)


def test_lambda_zero_blocks_clean_path_exactly(rng):
    params = build_model(SMALL, seed=1)
    x, y = batch(rng)
    lat_x = encode(params, Var(x)).detach()
    lat_y = encode(params, Var(y))
    loss = loss_adv(discriminate(params, lat_y), discriminate(params, lat_x), 0)
    for v in params.encoder().values():
        v.zero_grad()
    T.backward(loss)
    for name, v in params.encoder().items():
        assert not v.grad.any(), name


def test_lambda_one_reaches_clean_path(rng):
    params = build_model(SMALL, seed=1)
    x, y = batch(rng)
    lat_y = encode(params, Var(y))
    loss = loss_adv(discriminate(params, lat_y), discriminate(params, encode(params, Var(x)).detach()), 1)
    T.backward(loss)
    assert any(v.grad is not None and v.grad.any() for v in params.encoder().values())


def test_total_is_sum_of_terms(rng):
    params = build_model(SMALL, seed=2)
    opts = Optimizers.for_params(params, TC)
    x, y = batch(rng)
    l_ed, l_enc, total = encoder_decoder_step(params, opts, x, y)
    assert total.item() == l_ed.item() + l_enc.item()


def test_disc_accuracy():
    assert disc_accuracy(np.array([0.9, 0.4]), np.array([0.1, 0.6])) == 0.5
    assert disc_accuracy(np.ones(3), np.zeros(3)) == 1.0


def test_discriminator_step_leaves_encoder_decoder_untouched(rng):
    params = build_model(SMALL, seed=3)
    opts = Optimizers.for_params(params, TC)
    before_ed, before_d = snapshot(params.encoder_decoder()), snapshot(params.discriminator())
    discriminator_step(params, opts, *batch(rng))
    assert same(before_ed, snapshot(params.encoder_decoder()))
    assert not same(before_d, snapshot(params.discriminator()))


def test_encoder_decoder_step_leaves_discriminator_untouched(rng):
    params = build_model(SMALL, seed=3)
    opts = Optimizers.for_params(params, TC)
    before = snapshot(params.discriminator())
    encoder_decoder_step(params, opts, *batch(rng))
    assert same(before, snapshot(params.discriminator()))
    for v in params.discriminator().values():
        assert v.requires_grad


def test_non_adversarial_step_has_no_discriminator(rng):
    params = build_model(replace(SMALL, use_adversarial=False), seed=3)
    assert not params.discriminator()
    bundle = train_step(*batch(rng), params, Optimizers.for_params(params, TC))
    assert math.isnan(bundle.l_adv_disc) and bundle.l_ed > 0


def test_adversarial_flag_off_keeps_discriminator_bits(rng):
    # A model carrying discriminator weights but trained without the adversarial term.
    params = build_model(SMALL, seed=4)
    plain = build_model(replace(SMALL, use_adversarial=False), seed=4)
    plain.layers.update({k: v for k, v in params.layers.items() if k.startswith("disc.")})
    before = snapshot(params.discriminator())
    train_step(*batch(rng), plain, Optimizers.for_params(plain, TC))
    assert same(before, snapshot(params.discriminator()))


def test_single_step_descends():
    cfg = replace(SMALL, use_adversarial=False)
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = build_model(cfg, seed=seed)
        x, y = batch(rng, n=1)
        with T.no_grad():
            before = loss_ed(forward(params, Var(x))[0], y).item()
        train_step(x, y, params, Optimizers.for_params(params, replace(TC, weight_decay=0.0)))
        with T.no_grad():
            after = loss_ed(forward(params, Var(x))[0], y).item()
        wins += after < before
    assert wins >= 95


def small_task(n_train=400, n_val=200, seed=0):
    def make(n, s, name):
        c = gen_clean("multisine", n, seed=s)
        noisy = corrupt(c, noise_for_snr(c, default_noise("gaussian", s + 50), 10.0))
        return SignalPair(c, noisy, 200.0, name)
    return [make(n_train, seed + 1, "train")], [make(n_val, seed + 2, "val")]


def test_fit_zero_epochs_returns_initialisation():
    tr, va = small_task()
    result = fit(tr, va, SMALL, replace(TC, epochs=0))
    assert result.report.epochs == []
    init = build_model(SMALL, np.random.default_rng(np.random.SeedSequence(0).spawn(2)[0]))
    for k, v in init.tensors().items():
        np.testing.assert_array_equal(result.params.tensors()[k].values, v.values)


def test_fit_deterministic_report():
    tr, va = small_task()
    cfg = replace(TC, epochs=2, seed=7)
    a = fit(tr, va, SMALL, cfg).report.to_csv()
    b = fit(tr, va, SMALL, cfg).report.to_csv()
    assert a == b
    assert a.splitlines()[0] == "epoch,l_ed,l_adv_disc,l_adv_enc,disc_accuracy,val_snr_db"
    assert len(a.splitlines()) == 3


def test_fit_report_and_snapshots():
    tr, va = small_task()
    result = fit(tr, va, SMALL, replace(TC, epochs=2))
    epochs = result.report.column("epoch")
    assert list(epochs) == [1, 2]
    acc = result.report.column("disc_accuracy")
    assert ((acc >= 0) & (acc <= 1)).all()
    assert set(result.snapshots) == {"epoch1", "final"}
    best = result.report.column("val_snr_db").max()
    from advden.training import validation_snr
    assert validation_snr(result.best_params, va) == pytest.approx(best, abs=1e-9)


def test_fit_empty_dataset():
    with pytest.raises(DataError):
        fit([], [], SMALL, TC)
    short = [SignalPair(np.ones(5), np.ones(5))]
    with pytest.raises(DataError, match="no windows"):
        fit(short, [], SMALL, TC)


def test_train_config_validation():
    with pytest.raises(ConfigError) as exc:
        TrainConfig(batch_size=0).validate()
    assert exc.value.key == "batch_size"


def test_gradcheck_primitives_pass():
    results = gradcheck.run_gradcheck(seeds=range(3), include_model=False)
    ops = {r.op for r in results}
    assert {"conv1d_dilated", "deconv1d_dilated", "dense", "relu", "sigmoid", "log", "mse"} <= ops
    assert all(r.passed for r in results), gradcheck.format_table(results)


def test_gradcheck_detects_broken_adjoint(monkeypatch):
    original = T._correlate_grad_input
    monkeypatch.setattr(T, "_correlate_grad_input", lambda *a: 1.01 * original(*a))
    results = {r.op: r for r in gradcheck.run_gradcheck(seeds=range(1), include_model=False)}
    assert not results["conv1d_dilated"].passed
    assert results["relu"].passed


def test_gradcheck_log_of_discriminator():
    rng = np.random.default_rng(0)
    params = build_model(SMALL, seed=0)
    lat = Var(rng.normal(size=(2, 4, 8)))
    worst, checked, _ = gradcheck.finite_difference_check(
        lambda: T.mean(T.log(discriminate(params, lat))), {"lat": lat}, rng)
    assert checked > 0 and worst <= 1e-4


def test_gradcheck_decoder_only_model():
    rng = np.random.default_rng(5)
    loss_fn, tensors = gradcheck.model_case(rng, replace(SMALL, use_adversarial=False), 12)
    worst, checked, _ = gradcheck.finite_difference_check(loss_fn, tensors, rng, samples_per_input=4)
    assert checked > 0 and worst <= 1e-3
