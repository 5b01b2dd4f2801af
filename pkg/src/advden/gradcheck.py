"""Central finite-difference checks for every primitive and the full model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .model import ModelConfig, build_model, discriminate, encode, forward
from .tensor import Var

STEP = 1e-5
PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3
# gradient entries smaller than this are compared on an absolute scale
MAGNITUDE_FLOOR = 1e-6


@dataclass
class CheckResult:
    op: str
    max_rel_error: float
    tol: float
    checked: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def rel_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), MAGNITUDE_FLOOR)


def _evaluate(loss_fn, with_masks: bool):
    with T.no_grad():
        if with_masks:
            with T.record_relu_masks() as masks:
                value = loss_fn().item()
            return value, masks
        return loss_fn().item(), None


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(loss_fn: Callable[[], Var], inputs: dict, rng: np.random.Generator,
                            samples_per_input: int | None = None, step: float = STEP,
                            max_tries: int = 20):
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` rebuilds a scalar from the Vars in ``inputs``. Every entry is
    checked unless ``samples_per_input`` is set. Perturbations that flip any
    ReLU sign are resampled, since differences across a kink are meaningless.
    Returns ``(max relative error, checked, skipped)``.
    """
    for v in inputs.values():
        v.requires_grad = True
        v.grad = None
    loss = loss_fn()
    T.backward(loss)
    grads = {k: (v.grad.copy() if v.grad is not None else np.zeros_like(v.values)) for k, v in inputs.items()}
    _, base_masks = _evaluate(loss_fn, with_masks=True)

    worst, checked, skipped = 0.0, 0, 0
    for name, v in inputs.items():
        flat = v.values.reshape(-1)
        if samples_per_input is None:
            candidates = list(range(flat.size))
            budget = flat.size
        else:
            candidates = list(rng.permutation(flat.size)[: samples_per_input * max_tries])
            budget = min(samples_per_input, flat.size)
        done = 0
        for idx in candidates:
            if done >= budget:
                break
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus, m_plus = _evaluate(loss_fn, True)
            flat[idx] = orig - step
            f_minus, m_minus = _evaluate(loss_fn, True)
            flat[idx] = orig
            if not (_same_pattern(base_masks, m_plus) and _same_pattern(base_masks, m_minus)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * step)
            err = float(rel_error(grads[name].reshape(-1)[idx], numeric))
            worst = max(worst, err)
            done += 1
            checked += 1
    return worst, checked, skipped


def _projection(rng, shape):
    """Random linear functional so every output entry contributes to the loss."""
    return rng.normal(size=shape)


def _scalarize(out: Var, proj: np.ndarray) -> Var:
    return T.sum_all(T.mul_const(out, proj))


def _randn(rng, *shape):
    return Var(rng.normal(size=shape))


def _away_from_zero(rng, *shape, margin=0.05):
    v = rng.normal(size=shape)
    v = np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin, v)
    return Var(v)


def primitive_cases(rng: np.random.Generator) -> dict:
    """op name -> (loss_fn, inputs)."""
    cases = {}

    b, cin, cout, length = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(6, 14))
    d = int(rng.choice([1, 2, 3]))
    x, w, bias = _randn(rng, b, cin, length), _randn(rng, cout, cin, 3), _randn(rng, cout)
    proj = _projection(rng, (b, cout, length))
    cases["conv1d_dilated"] = (lambda x=x, w=w, bias=bias, d=d, proj=proj:
                               _scalarize(T.conv1d_dilated(x, w, bias, d=d), proj), {"x": x, "w": w, "b": bias})

    x, w, bias = _randn(rng, b, cin, length), _randn(rng, cin, cout, 3), _randn(rng, cout)
    proj = _projection(rng, (b, cout, length))
    cases["deconv1d_dilated"] = (lambda x=x, w=w, bias=bias, d=d, proj=proj:
                                 _scalarize(T.deconv1d_dilated(x, w, bias, d=d), proj), {"x": x, "w": w, "b": bias})

    n_in, n_out = int(rng.integers(2, 8)), int(rng.integers(1, 6))
    x, W, bias = _randn(rng, b, 1, n_in), _randn(rng, n_out, n_in), _randn(rng, n_out)
    proj = _projection(rng, (b, 1, n_out))
    cases["dense"] = (lambda x=x, W=W, bias=bias, proj=proj: _scalarize(T.dense(x, W, bias), proj),
                      {"x": x, "W": W, "b": bias})

    x = _away_from_zero(rng, b, 2, 7)
    proj = _projection(rng, x.shape)
    cases["relu"] = (lambda x=x, proj=proj: _scalarize(T.relu(x), proj), {"x": x})

    x = _randn(rng, b, 2, 7)
    proj = _projection(rng, x.shape)
    cases["sigmoid"] = (lambda x=x, proj=proj: _scalarize(T.sigmoid(x), proj), {"x": x})

    x = Var(rng.uniform(0.2, 3.0, size=(b, 2, 5)))
    proj = _projection(rng, x.shape)
    cases["log"] = (lambda x=x, proj=proj: _scalarize(T.log(x), proj), {"x": x})

    p, t = _randn(rng, b, 1, 9), _randn(rng, b, 1, 9)
    cases["mse"] = (lambda p=p, t=t: T.mse(p, t), {"pred": p, "target": t})

    x = _randn(rng, b, 3, 4)
    cases["flatten"] = (lambda x=x, proj=_projection(rng, (b, 1, 12)): _scalarize(T.flatten(x), proj), {"x": x})
    return cases


def model_case(rng: np.random.Generator, config: ModelConfig | None = None, length: int | None = None):
    """Full encoder-decoder plus discriminator objective on a random batch."""
    from .training import loss_adv, loss_ed

    config = config or ModelConfig()
    length = length or config.window_len
    params = build_model(config, int(rng.integers(2**31)))
    x = rng.normal(size=(2, config.input_channels, length))
    y = rng.normal(size=(2, config.input_channels, length))
    tensors = params.tensors()

    def loss_fn():
        out, lat_x = forward(params, Var(x))
        total = loss_ed(out, y)
        if config.use_adversarial:
            lat_y = encode(params, Var(y))
            total = T.add(total, loss_adv(discriminate(params, lat_y), discriminate(params, lat_x), 1))
        return total

    return loss_fn, tensors


def run_gradcheck(seeds=range(20), model_samples: int = 3, include_model: bool = True) -> list[CheckResult]:
    """Worst relative error per op across ``seeds``."""
    results: dict[str, CheckResult] = {}

    def merge(op, err, tol, checked, skipped):
        prev = results.get(op)
        if prev is None:
            results[op] = CheckResult(op, err, tol, checked, skipped)
        else:
            prev.max_rel_error = max(prev.max_rel_error, err)
            prev.checked += checked
            prev.skipped += skipped

    for seed in seeds:
        rng = np.random.default_rng(seed)
        for op, (loss_fn, inputs) in primitive_cases(rng).items():
            err, n, skipped = finite_difference_check(loss_fn, inputs, rng)
            merge(op, err, PRIMITIVE_TOL, n, skipped)
        if include_model:
            loss_fn, tensors = model_case(rng)
            err, n, skipped = finite_difference_check(loss_fn, tensors, rng, samples_per_input=model_samples)
            merge("full_model", err, MODEL_TOL, n, skipped)
    return list(results.values())


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'op':<18} {'max_rel_error':>14} {'tol':>8} {'checked':>8} {'skipped':>8}  status"]
    for r in results:
        lines.append(f"{r.op:<18} {r.max_rel_error:>14.3e} {r.tol:>8.0e} {r.checked:>8d} {r.skipped:>8d}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
