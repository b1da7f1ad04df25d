"""Self-contained verification suite: finite differences against every
hand-derived gradient, dot-product tests for every linear operator pair,
and the projection invariants.

All checks run in float64.  Finite differences are central,
(f(x+h) - f(x-h)) / 2h with h = 1e-4 * max(1, |x|) per coordinate, and
instances are constructed away from the non-differentiable sets (clip
kinks, the ball surface, the displayable-range limits) so the comparison
is meaningful.  Errors are vector-relative:

    rel(a, b) = ||a - b|| / max(||a||, ||b||)
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rbf as rbf_mod
from .conv import FilterBank, conv_adjoint, conv_forward, conv_param_backward, materialize, weight_backward
from .errors import BadArgument
from .grouping import (
    GroupWeights,
    block_match,
    group_filter,
    group_filter_adjoint,
    group_weight_backward,
    nonlocal_adjoint,
    nonlocal_forward,
)
from .network import (
    Architecture,
    ForwardTape,
    cast_params,
    composite_backward,
    composite_forward,
    init_network,
    match_table,
    network_backward,
    network_forward,
    parameters,
)
from .projection import ball_radius, project, project_input_backward, project_param_backward
from .training import psnr_loss

__all__ = ["run_checks", "CheckResult", "fd_inplace", "rel_error", "MODULES"]

FD_STEP = 1e-4


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / denom


def fd_inplace(f, arr, rel_h=FD_STEP):
    """Central-difference gradient of scalar f() w.r.t. arr, mutated in place."""
    shape = arr.shape
    view = np.atleast_1d(arr) if arr.ndim == 0 else arr
    flat = view.reshape(-1)
    if not np.shares_memory(flat, arr):
        raise ValueError("finite differences need a contiguous array to perturb")
    g = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = float(flat[i])
        h = rel_h * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(shape)


@dataclass
class CheckResult:
    name: str
    ok: bool
    worst: float
    tol: float
    seconds: float

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return f"{status}  {self.name}: worst {self.worst:.3e} (tol {self.tol:.0e}, {self.seconds:.1f}s)"


def _probe(rng, shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------- filter bank


def check_weight_gradients(trials=20, seed=0):
    """FD through the kernel normalization w.r.t. raw weights and scales."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 10, k])
        bank = FilterBank.random(rng, 3, 3, 3, 1, dtype=np.float64)
        bank.scale[:] = rng.uniform(0.5, 2.0, 3) * rng.choice([-1.0, 1.0], 3)
        t = _probe(rng, (3, 3, 3, 1))
        grad_raw, grad_scale = weight_backward(bank, t)

        def f():
            return float(np.vdot(materialize(bank), t))

        worst = max(worst, rel_error(fd_inplace(f, bank.raw), grad_raw))
        worst = max(worst, rel_error(fd_inplace(f, bank.scale), grad_scale))
    return worst


def check_conv_gradients(trials=20, seed=0):
    """FD of the convolution w.r.t. input, raw weights, and scales, both modes."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 11, k])
        mode = "same" if k % 2 == 0 else "valid"
        channels = 1 if k % 3 else 2
        bank = FilterBank.random(rng, 2, 3, 3, channels, dtype=np.float64)
        x = rng.uniform(-1.0, 1.0, (7, 6, channels))
        out = conv_forward(x, bank, mode)
        t = _probe(rng, out.shape)

        def f():
            return float(np.vdot(conv_forward(x, bank, mode), t))

        grad_x = conv_adjoint(t, bank, mode)
        grad_raw, grad_scale = weight_backward(bank, conv_param_backward(x, t, bank, mode))
        worst = max(worst, rel_error(fd_inplace(f, x), grad_x))
        worst = max(worst, rel_error(fd_inplace(f, bank.raw), grad_raw))
        worst = max(worst, rel_error(fd_inplace(f, bank.scale), grad_scale))
    return worst


def check_conv_adjoint(trials=100, seed=0):
    """<conv(x), z> == <x, adjoint(z)> for random banks, both modes."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 12, k])
        mode = "same" if k % 2 == 0 else "valid"
        channels = int(rng.integers(1, 4))
        # a 1x1 single-channel kernel has no zero-mean part, so keep L >= 2
        kh, kw = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        h = int(rng.integers(kh, kh + 7))
        w = int(rng.integers(kw, kw + 7))
        filters = int(rng.integers(1, 5))
        bank = FilterBank.random(rng, filters, kh, kw, channels, dtype=np.float64)
        x = rng.standard_normal((h, w, channels))
        z_shape = (h, w, filters) if mode == "same" else (h - kh + 1, w - kw + 1, filters)
        z = rng.standard_normal(z_shape)
        lhs = float(np.vdot(conv_forward(x, bank, mode), z))
        rhs = float(np.vdot(x, conv_adjoint(z, bank, mode)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    return worst


# ------------------------------------------------------------------- rbf/clip


def check_rbf_gradients(trials=20, seed=0):
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 20, k])
        mix = rbf_mod.RBFMixture(
            rbf_mod.make_centers(7), rbf_mod.DEFAULT_PRECISION,
            rng.standard_normal((3, 7)),
        )
        z = rng.uniform(-95.0, 95.0, (5, 4, 3))
        t = _probe(rng, z.shape)
        grad_z, grad_coeffs = rbf_mod.rbf_backward(z, mix, t)

        def f():
            return float(np.vdot(rbf_mod.rbf_forward(z, mix), t))

        worst = max(worst, rel_error(fd_inplace(f, z), grad_z))
        worst = max(worst, rel_error(fd_inplace(f, mix.coeffs), grad_coeffs))
    return worst


def check_clip_gradients(trials=20, seed=0):
    """FD of the clip away from its kinks (margin far above 10h)."""
    worst = 0.0
    lo, hi = -100.0, 100.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 21, k])
        z = rng.uniform(-180.0, 180.0, (6, 5, 2))
        z[(np.abs(z - lo) < 1.0) | (np.abs(z - hi) < 1.0)] = 0.0
        t = _probe(rng, z.shape)
        grad = rbf_mod.clip_backward(z, t, lo, hi)

        def f():
            return float(np.vdot(rbf_mod.clip_forward(z, lo, hi), t))

        worst = max(worst, rel_error(fd_inplace(f, z), grad))
    return worst


# ------------------------------------------------------------------- grouping


def check_group_gradients(trials=20, seed=0):
    """FD w.r.t. the raw group weights through the normalization."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 30, k])
        y = rng.uniform(0.0, 255.0, (9, 8, 1))
        table = block_match(y, (3, 3), (5, 5), 3)
        gw = GroupWeights(rng.uniform(0.2, 1.5, 3))
        feats = rng.standard_normal((table.grid_h, table.grid_w, 2))
        t = _probe(rng, feats.shape)
        grad_u = group_weight_backward(feats, table, gw, t)

        def f():
            return float(np.vdot(group_filter(feats, table, gw), t))

        worst = max(worst, rel_error(fd_inplace(f, gw.raw), grad_u))
    return worst


def check_group_adjoint(trials=100, seed=0):
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 31, k])
        y = rng.uniform(0.0, 255.0, (10, 9, 1))
        table = block_match(y, (3, 3), (7, 7), 4)
        gw = GroupWeights(rng.uniform(0.1, 1.0, 4))
        a = rng.standard_normal((table.grid_h, table.grid_w, 3))
        b = rng.standard_normal(a.shape)
        lhs = float(np.vdot(group_filter(a, table, gw), b))
        rhs = float(np.vdot(a, group_filter_adjoint(b, table, gw)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    return worst


def check_nonlocal_adjoint(trials=100, seed=0):
    """Dot test for the full conv-then-group composition."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 32, k])
        channels = 1 if k % 2 else 3
        y = rng.uniform(0.0, 255.0, (10, 9, channels))
        bank = FilterBank.random(rng, 3, 3, 3, channels, dtype=np.float64)
        table = block_match(y, (3, 3), (5, 5), 3)
        gw = GroupWeights(rng.uniform(0.1, 1.0, 3))
        x = rng.standard_normal(y.shape)
        z = rng.standard_normal((table.grid_h, table.grid_w, 3))
        lhs = float(np.vdot(nonlocal_forward(x, bank, table, gw), z))
        rhs = float(np.vdot(x, nonlocal_adjoint(z, bank, table, gw)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    return worst


# ----------------------------------------------------------------- projection


def check_projection_gradients(trials=20, seed=0):
    """FD w.r.t. the point and alpha, interior and exterior of the ball."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 40, k])
        n = 50
        y = rng.standard_normal(n)
        v = y + rng.standard_normal(n)
        sigma = float(rng.uniform(0.5, 2.0))
        ratio = 0.5 if k % 2 == 0 else 2.0  # ||v - y|| / radius
        dist = float(np.linalg.norm(v - y))
        alpha = np.array(math.log(dist / (ratio * sigma * math.sqrt(n - 1))))
        t = _probe(rng, (n,))

        def f():
            r = ball_radius(alpha, sigma, n)
            return float(np.vdot(project(v, y, r), t))

        radius = ball_radius(alpha, sigma, n)
        grad_v = project_input_backward(v, y, radius, t)
        grad_a = project_param_backward(v, y, radius, t)
        worst = max(worst, rel_error(fd_inplace(f, v), grad_v))
        fd_a = float(fd_inplace(f, alpha))
        worst = max(worst, abs(fd_a - grad_a) / max(abs(fd_a), abs(grad_a), 1e-12))
    return worst


def check_projection_invariants(trials=1000, seed=0):
    """Feasibility, idempotence, non-expansiveness; returns worst violation."""
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 41, k])
        n = int(rng.integers(2, 40))
        y = rng.standard_normal(n) * rng.uniform(0.1, 10.0)
        radius = float(rng.uniform(0.01, 5.0))
        v = y + rng.standard_normal(n) * rng.uniform(0.0, 4.0)
        q = project(v, y, radius)
        feas = float(np.linalg.norm(q - y)) / radius - 1.0
        worst = max(worst, feas)
        q2 = project(q, y, radius)
        idem = rel_error(q2, q)
        worst = max(worst, idem)
        u = y + rng.standard_normal(n) * rng.uniform(0.0, 4.0)
        du = float(np.linalg.norm(project(u, y, radius) - q))
        dv = float(np.linalg.norm(u - v))
        if dv > 0:
            worst = max(worst, (du - dv) / dv)
    return worst


# --------------------------------------------------------------------- layers


def _margins_ok(tape, limit):
    # stay away from the feature clip kinks, the ball surface, and the
    # output clip; 0.05 is hundreds of FD steps at these magnitudes
    for lt in tape.layers:
        if float(np.min(np.abs(np.abs(lt.pre_clip) - limit))) < 0.05:
            return False
        dist = float(np.linalg.norm(lt.v - tape.y))
        if abs(dist - lt.radius) / lt.radius < 1e-3:
            return False
    lo, hi = 0.0, 255.0
    pre = tape.pre_output
    if float(np.min(np.abs(pre - lo))) < 0.05 or float(np.min(np.abs(pre - hi))) < 0.05:
        return False
    return True


def _tiny_architecture(variant, channels=1):
    return Architecture(
        variant, channels=channels, stages=2, filters=2, kernel=(3, 3),
        rbf_size=7, group_size=3, window=(5, 5),
    )


def _random_instance(arch, rng, sigma_ratio):
    """Seeded network + input with all margins satisfied, scaled so the first
    stage lands at sigma_ratio times its ball radius."""
    params = cast_params(init_network(arch, seed=int(rng.integers(2**31))), np.float64)
    for layer in params.layers:
        layer.rbf.coeffs[:] = rng.standard_normal(layer.rbf.coeffs.shape) * 0.3
        layer.alpha[...] = rng.uniform(-0.2, 0.2)
        if layer.group is not None:
            layer.group.raw[:] = rng.uniform(0.2, 1.2, layer.group.raw.shape)
    y = rng.uniform(60.0, 200.0, (8, 7, arch.channels))
    table = match_table(y, arch) if arch.variant == "nonlocal" else None
    _, tape1 = composite_forward(y, y, 1.0, params.layers[0], arch, table=table, want_tape=True)
    dist = float(np.linalg.norm(tape1.v - y))
    alpha0 = math.exp(float(params.layers[0].alpha))
    sigma = dist / (sigma_ratio * alpha0 * math.sqrt(y.size - 1))
    return params, y, sigma, table


def check_composite_gradients(variant, trials=20, seed=0):
    """FD over every parameter of a single composite stage."""
    arch = _tiny_architecture(variant)
    worst = 0.0
    produced = 0
    attempt = 0
    while produced < trials:
        rng = np.random.default_rng([seed, 50 if variant == "local" else 51, attempt])
        attempt += 1
        if attempt > trials * 20:
            raise RuntimeError("could not build enough well-separated instances")
        ratio = 2.0 if produced % 2 == 0 else 0.5
        params, y, sigma, table = _random_instance(arch, rng, ratio)
        layer = params.layers[0]
        out, tape = composite_forward(y, y, sigma, layer, arch, table=table, want_tape=True)
        probe_tape = ForwardTape(y, sigma, table, layers=[tape], pre_output=out)
        if not _margins_ok(probe_tape, arch.rbf_limit):
            continue
        produced += 1
        t = _probe(rng, out.shape)
        grads, _ = composite_backward(layer, arch, tape, y, table, t)

        def f():
            xt, _ = composite_forward(y, y, sigma, layer, arch, table=table)
            return float(np.vdot(xt, t))

        for name, arr in (("raw", layer.bank.raw), ("scale", layer.bank.scale),
                          ("coeffs", layer.rbf.coeffs), ("alpha", layer.alpha)):
            worst = max(worst, rel_error(fd_inplace(f, arr), grads[name]))
        if layer.group is not None:
            worst = max(worst, rel_error(fd_inplace(f, layer.group.raw), grads["group"]))
    return worst


def check_chain_gradients(variant, trials=20, seed=0):
    """FD through a full two-stage cascade, loss included, every parameter."""
    arch = _tiny_architecture(variant)
    worst = 0.0
    produced = 0
    attempt = 0
    while produced < trials:
        rng = np.random.default_rng([seed, 60 if variant == "local" else 61, attempt])
        attempt += 1
        if attempt > trials * 20:
            raise RuntimeError("could not build enough well-separated instances")
        ratio = 2.0 if produced % 2 == 0 else 0.5
        params, y, sigma, table = _random_instance(arch, rng, ratio)
        out, tape = network_forward(y, sigma, params, want_tape=True, table=table)
        if not _margins_ok(tape, arch.rbf_limit):
            continue
        produced += 1
        target = np.clip(y + rng.standard_normal(y.shape), 1.0, 254.0)
        _, grad_out = psnr_loss(out, target)
        grads = network_backward(params, tape, grad_out)

        def f():
            o = network_forward(y, sigma, params, table=table)
            return psnr_loss(o, target)[0]

        for name, arr in parameters(params).items():
            worst = max(worst, rel_error(fd_inplace(f, arr), grads[name]))
    return worst


def check_loss_gradient(trials=20, seed=0):
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, 70, k])
        x = rng.uniform(0.0, 255.0, (6, 5, 1))
        xhat = x + rng.standard_normal(x.shape) * 10.0
        _, grad = psnr_loss(xhat, x)

        def f():
            return psnr_loss(xhat, x)[0]

        worst = max(worst, rel_error(fd_inplace(f, xhat), grad))
    return worst


# ---------------------------------------------------------------------- suite

MODULES = ("conv", "rbf", "grouping", "projection", "network", "training")


def run_checks(module=None, seed=0):
    """Run the verification suite; returns a list of CheckResult."""
    suite = {
        "conv": [
            ("conv.weight_gradients", check_weight_gradients, {}, 1e-5),
            ("conv.gradients", check_conv_gradients, {}, 1e-5),
            ("conv.adjoint", check_conv_adjoint, {}, 1e-10),
        ],
        "rbf": [
            ("rbf.gradients", check_rbf_gradients, {}, 1e-5),
            ("rbf.clip_gradients", check_clip_gradients, {}, 1e-5),
        ],
        "grouping": [
            ("grouping.weight_gradients", check_group_gradients, {}, 1e-5),
            ("grouping.adjoint", check_group_adjoint, {}, 1e-10),
            ("grouping.nonlocal_adjoint", check_nonlocal_adjoint, {}, 1e-10),
        ],
        "projection": [
            ("projection.gradients", check_projection_gradients, {}, 1e-5),
            ("projection.invariants", check_projection_invariants, {}, 1e-12),
        ],
        "network": [
            ("network.composite_local", lambda **kw: check_composite_gradients("local", **kw), {}, 1e-5),
            ("network.composite_nonlocal", lambda **kw: check_composite_gradients("nonlocal", **kw), {}, 1e-5),
            ("network.chain_local", lambda **kw: check_chain_gradients("local", **kw), {}, 1e-4),
            ("network.chain_nonlocal", lambda **kw: check_chain_gradients("nonlocal", **kw), {}, 1e-4),
        ],
        "training": [
            ("training.loss_gradient", check_loss_gradient, {}, 1e-5),
        ],
    }
    if module is not None:
        if module not in suite:
            raise BadArgument(f"unknown module {module!r}; choose from {MODULES}")
        items = suite[module]
    else:
        items = [entry for mod in MODULES for entry in suite[mod]]
    results = []
    for name, fn, kwargs, tol in items:
        start = time.monotonic()
        worst = fn(seed=seed, **kwargs)
        results.append(CheckResult(name, worst <= tol, worst, tol, time.monotonic() - start))
    return results
