"""Self-test of every differentiable component against central differences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BranchConfig, build_model
from .nn import BatchNorm, Conv1d, Dense, Dropout, ReLU, grad_check

LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel. error {self.error:.2e} (<= {self.tolerance:.0e})"


def layer_error(layer, x, train=True, seed=0, skip=None, rng_seed=None) -> float:
    """Gradient-check one layer through the scalar ``sum(G * layer(x))``.

    ``rng_seed`` re-seeds the train-mode RNG on every forward pass so that a
    dropout mask stays frozen across the finite-difference evaluations.
    """
    G = np.random.default_rng(seed).standard_normal(layer.forward(x, train=train, rng=_rng(rng_seed)).shape)

    def loss():
        return float(np.sum(G * layer.forward(x, train=train, rng=_rng(rng_seed))))

    layer.forward(x, train=train, rng=_rng(rng_seed))
    dx = layer.backward(G)
    arrays = {"x": x, **layer.params}
    analytic = {"x": dx.copy(), **{k: v.copy() for k, v in layer.grads.items()}}
    return grad_check(loss, arrays, analytic, skip=skip)


def _rng(seed):
    return None if seed is None else np.random.default_rng(seed)


def model_error(model, batch=4, seed=0) -> float:
    """Gradient-check the full two-branch model through the cosine head and loss."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, model.row_cfg.input_len))
    y = rng.standard_normal((batch, model.col_cfg.input_len))
    t = rng.uniform(-1, 1, batch)

    def loss():
        return model.loss_and_grads(x, y, t, np.random.default_rng(seed + 1))[0]

    _, analytic = model.loss_and_grads(x, y, t, np.random.default_rng(seed + 1))
    analytic = {k: g.copy() for k, g in analytic.items()}
    return grad_check(loss, model.params(), analytic)


def run_gradchecks(seed=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    dense = Dense(5, 3, rng)
    dense.params["b"][...] = rng.standard_normal(3)
    out.append(CheckResult("dense", layer_error(dense, rng.standard_normal((4, 5))), LAYER_TOL))

    for train in (True, False):
        bn = BatchNorm(3)
        bn.params["gamma"][...] = rng.uniform(0.5, 2, 3)
        bn.params["beta"][...] = rng.standard_normal(3)
        bn.state["running_mean"] = rng.standard_normal(3)
        bn.state["running_var"] = rng.uniform(0.5, 2, 3)
        name = "batchnorm (train)" if train else "batchnorm (infer)"
        out.append(CheckResult(name, layer_error(bn, rng.standard_normal((6, 3)), train=train), LAYER_TOL))

    bn = BatchNorm(2, length=4)
    bn.params["gamma"][...] = [1.5, 0.7]
    out.append(CheckResult("batchnorm (per channel)", layer_error(bn, rng.standard_normal((3, 8))), LAYER_TOL))

    x = rng.standard_normal((4, 5))
    x[0, 0] = 0.0
    out.append(CheckResult("relu", layer_error(ReLU(), x, skip={"x": np.abs(x) < 1e-4}), LAYER_TOL))

    out.append(CheckResult("dropout (frozen mask)",
                           layer_error(Dropout(0.5), rng.standard_normal((4, 6)), rng_seed=7), LAYER_TOL))

    conv = Conv1d(1, 2, 4, 3, rng)
    conv.params["b"][...] = rng.standard_normal(2)
    out.append(CheckResult("conv1d", layer_error(conv, rng.standard_normal((3, 20))), LAYER_TOL))
    conv = Conv1d(3, 2, 3, 2, rng)
    out.append(CheckResult("conv1d (3 channels)", layer_error(conv, rng.standard_normal((2, 27))), LAYER_TOL))

    row = BranchConfig(20, (12, 10, 8), ((3, 4, 2),), 0.4)
    col = BranchConfig(16, (12, 10, 8), ((2, 5, 3),), 0.4)
    model = build_model(row, col, seed=seed)
    out.append(CheckResult("two-branch model + cosine + loss", model_error(model, seed=seed), MODEL_TOL))
    return out
