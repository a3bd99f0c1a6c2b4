"""Finite-difference verification of every backward rule.

Each registered op kind has a case that builds random float64 inputs and
a scalar forward function; the analytic gradient from ``backward`` is
compared against central differences. A full end-to-end model check
perturbs sampled parameter coordinates through the entire pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import SyntheticSpec, render_tracklet
from .errors import VerificationError
from .fusion import FusionConfig
from .model import ModelConfig, VideoAttributeModel
from .schema import AttributeGroup, AttributeSchema
from .tensor import (OP_KINDS, Tape, Tensor, backward, concat, expand_leading,
                     gelu, layer_norm, matmul, add, mul, no_grad, scale,
                     sigmoid, slice_axis, softmax, softplus, stack, take_rows,
                     tensor_mean, tensor_sum, transpose, reshape)
from .text import TextConfig
from .train import bce_loss
from .vision import VitConfig

DELTA = 1e-5
RTOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    checked: int
    passed: bool


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weights(rng, shape):
    # fixed random weighting makes the scalarization sensitive everywhere
    return Tensor(rng.standard_normal(shape))


def _case(rng, name):
    """Random inputs plus a scalar-valued forward for one op kind."""
    if name == "matmul":
        a, b = _rand(rng, 2, 3, 4), _rand(rng, 4, 2)
        w = _weights(rng, (2, 3, 2))
        return [a, b], lambda a, b: tensor_sum(mul(matmul(a, b), w))
    if name == "add":
        a, b = _rand(rng, 3, 4), _rand(rng, 4)
        w = _weights(rng, (3, 4))
        return [a, b], lambda a, b: tensor_sum(mul(add(a, b), w))
    if name == "mul":
        a, b = _rand(rng, 2, 3, 4), _rand(rng, 3, 4)
        w = _weights(rng, (2, 3, 4))
        return [a, b], lambda a, b: tensor_sum(mul(mul(a, b), w))
    if name == "scale":
        a = _rand(rng, 3, 3)
        c = float(rng.standard_normal())
        w = _weights(rng, (3, 3))
        return [a], lambda a: tensor_sum(mul(scale(a, c), w))
    if name == "transpose":
        a = _rand(rng, 2, 3, 4)
        w = _weights(rng, (3, 4, 2))
        return [a], lambda a: tensor_sum(mul(transpose(a, (1, 2, 0)), w))
    if name == "reshape":
        a = _rand(rng, 3, 4)
        w = _weights(rng, (2, 6))
        return [a], lambda a: tensor_sum(mul(reshape(a, (2, 6)), w))
    if name == "softmax":
        a = _rand(rng, 3, 5)
        w = _weights(rng, (3, 5))
        return [a], lambda a: tensor_sum(mul(softmax(a, axis=-1), w))
    if name == "layer_norm":
        x = _rand(rng, 3, 6)
        gain, bias = _rand(rng, 6), _rand(rng, 6)
        w = _weights(rng, (3, 6))
        return [x, gain, bias], lambda x, g, b: tensor_sum(mul(layer_norm(x, g, b), w))
    if name == "gelu":
        a = _rand(rng, 4, 4)
        w = _weights(rng, (4, 4))
        return [a], lambda a: tensor_sum(mul(gelu(a), w))
    if name == "sigmoid":
        a = _rand(rng, 4, 4)
        w = _weights(rng, (4, 4))
        return [a], lambda a: tensor_sum(mul(sigmoid(a), w))
    if name == "softplus":
        a = _rand(rng, 4, 4)
        w = _weights(rng, (4, 4))
        return [a], lambda a: tensor_sum(mul(softplus(a), w))
    if name == "mean":
        a = _rand(rng, 3, 4)
        w = _weights(rng, (4,))
        return [a], lambda a: tensor_sum(mul(tensor_mean(a, axis=0), w))
    if name == "sum":
        a = _rand(rng, 3, 4)
        w = _weights(rng, (3,))
        return [a], lambda a: tensor_sum(mul(tensor_sum(a, axis=1), w))
    if name == "concat":
        a, b = _rand(rng, 2, 3), _rand(rng, 4, 3)
        w = _weights(rng, (6, 3))
        return [a, b], lambda a, b: tensor_sum(mul(concat([a, b], axis=0), w))
    if name == "stack":
        a, b = _rand(rng, 3, 2), _rand(rng, 3, 2)
        w = _weights(rng, (2, 3, 2))
        return [a, b], lambda a, b: tensor_sum(mul(stack([a, b]), w))
    if name == "take_rows":
        a = _rand(rng, 5, 3)
        idx = rng.integers(0, 5, size=(4,))
        w = _weights(rng, (4, 3))
        return [a], lambda a: tensor_sum(mul(take_rows(a, idx), w))
    if name == "slice_axis":
        a = _rand(rng, 4, 5)
        w = _weights(rng, (4, 2))
        return [a], lambda a: tensor_sum(mul(slice_axis(a, 1, 1, 3), w))
    if name == "expand_leading":
        a = _rand(rng, 2, 3)
        w = _weights(rng, (4, 2, 3))
        return [a], lambda a: tensor_sum(mul(expand_leading(a, 4), w))
    raise VerificationError(f"no gradcheck case for op kind {name!r}")


def op_case_names() -> tuple[str, ...]:
    return OP_KINDS


def check_op(name: str, trials: int = 100, seed: int = 0,
             delta: float = DELTA, rtol: float = RTOL) -> CheckResult:
    """Compare analytic and central-difference gradients over random trials."""
    rng = np.random.default_rng([seed, hash(name) % (2 ** 32)])
    worst = 0.0
    checked = 0
    for _ in range(trials):
        inputs, forward = _case(rng, name)
        with Tape():
            loss = forward(*inputs)
            backward(loss)
        for pos, inp in enumerate(inputs):
            analytic = inp.grad
            flat = inp.data.reshape(-1)
            for i in range(flat.size):
                bump = np.zeros_like(flat)
                bump[i] = delta
                bumped = bump.reshape(inp.data.shape)

                def eval_at(values):
                    args = list(inputs)
                    args[pos] = Tensor(values)
                    with no_grad():
                        return forward(*args).item()

                numeric = (eval_at(inp.data + bumped)
                           - eval_at(inp.data - bumped)) / (2 * delta)
                worst = max(worst, _rel_err(float(analytic.reshape(-1)[i]), numeric))
                checked += 1
    return CheckResult(name, worst, checked, worst < rtol)


def _tiny_schema() -> AttributeSchema:
    return AttributeSchema((
        AttributeGroup("shape", "exclusive", ("round", "square", "thin"),
                       ("shape_round", "shape_square", "shape_thin")),
        AttributeGroup("shade", "exclusive", ("dark", "light"),
                       ("shade_dark", "shade_light")),
        AttributeGroup("marked", "binary", ("marked",), ("marked",)),
    ))


def _tiny_model() -> VideoAttributeModel:
    config = ModelConfig(
        vit=VitConfig(image_size=16, patch_size=8, dim=16, depth=1, heads=2, mlp_ratio=2),
        text=TextConfig(dim=16, blocks=1, heads=2, max_len=8, mlp_ratio=2),
        fusion=FusionConfig(dim=16, heads=2, blocks=1, mlp_ratio=2),
    )
    return VideoAttributeModel(config, _tiny_schema(), seed=3, dtype=np.float64)


def check_model(n_coords: int = 520, seed: int = 0, delta: float = DELTA,
                rtol: float = RTOL) -> CheckResult:
    """End-to-end check: sampled parameter coordinates vs central differences.

    Runs the full pipeline (encoders unfrozen) in float64 on a small
    synthetic batch.
    """
    model = _tiny_model()
    model.set_freeze(False)
    schema = model.schema
    spec = SyntheticSpec(n_tracklets=2, frames_per_tracklet=2, height=12,
                         width=9, noise_sigma=0.05, occlusion_p=0.0, seed=seed)
    rendered = [render_tracklet(spec, schema, i) for i in range(2)]
    clips = np.stack([frames for frames, _, _ in rendered]).astype(np.float64)
    targets = np.stack([labels for _, labels, _ in rendered]).astype(np.float64)

    def loss_value() -> Tensor:
        logits = model.logits_batch(clips)
        return bce_loss(logits, targets)

    with Tape():
        loss = loss_value()
        backward(loss)
    grads = {p.name: p.tensor.grad.copy() for p in model.params.trainable()}

    coords = []
    for p in model.params.trainable():
        for i in range(p.tensor.size):
            coords.append((p.name, i))
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for name, i in coords:
        p = model.params[name]
        original = p.data.copy()

        def loss_with(value: float) -> float:
            bumped = original.copy()
            bumped.reshape(-1)[i] = value
            p.set_value(bumped)
            with no_grad():
                out = loss_value().item()
            return out

        x0 = float(original.reshape(-1)[i])
        numeric = (loss_with(x0 + delta) - loss_with(x0 - delta)) / (2 * delta)
        p.set_value(original)
        worst = max(worst, _rel_err(float(grads[name].reshape(-1)[i]), numeric))
    return CheckResult("full_model", worst, len(coords), worst < rtol)


@dataclass(frozen=True)
class GradCheckReport:
    results: tuple[CheckResult, ...]
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def run_all(op_trials: int = 100, model_coords: int = 520,
            seed: int = 0) -> GradCheckReport:
    start = time.monotonic()
    results = [check_op(name, trials=op_trials, seed=seed) for name in OP_KINDS]
    results.append(check_model(n_coords=model_coords, seed=seed))
    return GradCheckReport(tuple(results), time.monotonic() - start)
