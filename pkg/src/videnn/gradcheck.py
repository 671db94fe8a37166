"""Finite-difference checks of every backward pass on small random tensors."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from . import core, networks

TOLERANCE = 1e-5


def _check(grad_fn, loss_fn, x) -> float:
    return core.relative_error(grad_fn(), core.finite_diff_gradient(loss_fn, x))


def _conv_checks(rng) -> Dict[str, float]:
    x = rng.standard_normal((2, 5, 6, 3))
    k = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    g = rng.standard_normal((2, 5, 6, 4))

    def loss(x_, k_, b_):
        return float(np.sum(core.conv2d_forward(x_, core.ConvParams(k_, b_)) * g))

    gx, gp = core.conv2d_backward(x, core.ConvParams(k, b), g)
    return {
        "conv2d/input": _check(lambda: gx, lambda v: loss(v, k, b), x),
        "conv2d/kernel": _check(lambda: gp.kernel, lambda v: loss(x, v, b), k),
        "conv2d/bias": _check(lambda: gp.bias, lambda v: loss(x, k, v), b),
    }


def _activation_checks(rng) -> Dict[str, float]:
    # keep samples away from the kink so central differences stay valid
    x = rng.standard_normal((3, 4, 5))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    g = rng.standard_normal(x.shape)
    return {
        "relu": _check(lambda: core.relu_backward(x, g),
                       lambda v: float(np.sum(core.relu_forward(v) * g)), x),
        "leaky_relu": _check(lambda: core.leaky_relu_backward(x, g),
                             lambda v: float(np.sum(core.leaky_relu_forward(v) * g)), x),
    }


def _bn_checks(rng) -> Dict[str, float]:
    x = rng.standard_normal((3, 4, 4, 5)) * 2 + 1
    bn = core.BatchNormParams.fresh(5, np.float64)
    bn.gamma[:] = rng.uniform(0.5, 1.5, 5)
    bn.beta[:] = rng.standard_normal(5)
    g = rng.standard_normal(x.shape)
    out = {}
    for mode, train in (("train", True), ("infer", False)):
        if not train:
            bn.running_mean[:] = rng.standard_normal(5)
            bn.running_var[:] = rng.uniform(0.5, 2.0, 5)
        _, cache = core.batch_norm_forward(x, bn, train)
        dx, dgamma, dbeta = core.batch_norm_backward(g, bn, cache)

        def loss(x_, gamma, beta, train=train):
            p = core.BatchNormParams(gamma, beta, bn.running_mean, bn.running_var, bn.eps, bn.momentum)
            return float(np.sum(core.batch_norm_forward(x_, p, train)[0] * g))

        out[f"batch_norm[{mode}]/input"] = _check(lambda: dx, lambda v: loss(v, bn.gamma, bn.beta), x)
        out[f"batch_norm[{mode}]/gamma"] = _check(lambda: dgamma, lambda v: loss(x, v, bn.beta), bn.gamma)
        out[f"batch_norm[{mode}]/beta"] = _check(lambda: dbeta, lambda v: loss(x, bn.gamma, v), bn.beta)
    return out


def _loss_checks(rng) -> Dict[str, float]:
    p = rng.standard_normal((2, 3, 3, 3))
    t = rng.standard_normal(p.shape)
    return {
        f"l2_loss[{'mean' if mean else 'sum'}]": _check(
            lambda mean=mean: core.l2_loss_backward(p, t, mean),
            lambda v, mean=mean: core.l2_loss(v, t, mean), p)
        for mean in (False, True)
    }


def _network_checks(rng) -> Dict[str, float]:
    out = {}
    specs = {"spatial_net": networks.NetworkSpec(3, depth=3, first_width=4, mid_width=4),
             "temporal_net": networks.temporal_spec(3, depth=3, first_width=4, mid_width=4)}
    for name, spec in specs.items():
        w = networks.build_network(spec, int(rng.integers(2 ** 31))).astype(np.float64)
        x = rng.random((2, 4, 4, spec.in_channels))
        g = rng.standard_normal((2, 4, 4, 3))
        _, caches, _ = networks.forward_train(w, x)
        grads = networks.backward(w, caches, g)
        params = w.params()
        # a conv bias feeding batch norm has an exactly-zero gradient, so the
        # normwise ratio is meaningless there; use the absolute gap instead
        absolute = set()
        idx = 0
        for layer in w.layers:
            if layer.bn is not None:
                absolute.add(idx + 1)
            idx += 4 if layer.bn is not None else 2
        worst = 0.0
        for i, p in enumerate(params):
            def loss(v, i=i):
                ps = list(params)
                ps[i] = v
                return float(np.sum(networks.forward_train(w.with_params(ps), x)[0] * g))
            if i in absolute:
                err = float(np.abs(grads[i] - core.finite_diff_gradient(loss, p)).max())
            else:
                err = _check(lambda i=i: grads[i], loss, p)
            worst = max(worst, err)
        out[name] = worst
    return out


SUITES: Dict[str, Callable] = {
    "conv": _conv_checks,
    "activation": _activation_checks,
    "batch_norm": _bn_checks,
    "loss": _loss_checks,
    "network": _network_checks,
}


def run_gradcheck(seed: int = 0) -> Dict[str, float]:
    """Max relative error per op, computed in float64 with central differences."""
    results = {}
    for i, suite in enumerate(SUITES.values()):
        results.update(suite(np.random.default_rng([seed, i])))
    return results
