"""Finite-difference verification of every autodiff op and layer.

The oracle is central differences over forward evaluations only, so it is
independent of the backward rules it checks.  Each registered check builds
a small random instance, runs one analytic backward, then compares against
the numeric gradient of the same scalar.  float64 isolates autodiff bugs
from roundoff; float32 runs at a looser tolerance.
"""

import zlib

import numpy as np

from . import layers as nn
from . import loss as losses
from .tensor import (
    Tensor,
    backward,
    concat_channels,
    conv1d,
    conv1d_transpose,
    div,
    dot,
    exp,
    log,
    matvec,
    max_pool1d,
    mean_all,
    mean_time,
    mul,
    neg,
    no_grad,
    pad_time,
    pick,
    prelu,
    relu,
    repeat_time,
    slice_time,
    softmax,
    sqrt,
    sub,
    sum_all,
    sum_time,
)

TOLERANCES = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-5}
_FD_STEP = 3e-5  # differences are always taken on a float64 twin


def numeric_grad(fn, param, h):
    """Central-difference gradient of scalar fn() wrt param's elements."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            fp = float(fn())
            flat[i] = orig - step
            fm = float(fn())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    denom = max(float(np.abs(numeric).max(initial=0.0)), 1.0)
    return float(np.abs(analytic.astype(np.float64) - numeric).max(initial=0.0)) / denom


def check_case(fn, params, oracle_fn, oracle_params):
    """Max relative error between autodiff on (fn, params) and central
    finite differences on a float64 twin holding the same values.

    Differencing the float64 twin keeps the oracle's own noise far below
    both tolerances, so the float32 tolerance measures the float32
    forward/backward roundoff and nothing else.
    """
    out = fn()
    backward(out)
    worst = 0.0
    for p, op in zip(params, oracle_params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.grad = None
        worst = max(worst, relative_error(analytic, numeric_grad(oracle_fn, op, _FD_STEP)))
    return worst


def _param(rng, shape, dtype, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape).astype(dtype), requires_grad=True)


def _away_from_zero(rng, shape, dtype, margin=0.25):
    data = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(data.astype(dtype), requires_grad=True)


# --- op checks --------------------------------------------------------------
# Each builder returns (fn, params); fn recomputes the scalar from the
# params' current .data, which is what lets the FD oracle poke elements.


def _check_add(rng, dtype):
    a, b = _param(rng, (3, 5), dtype), _param(rng, (3, 5), dtype)
    return lambda: sum_all(mul(sub(a, b), sub(a, b))), [a, b]


def _check_broadcast_col(rng, dtype):
    a, b = _param(rng, (4, 6), dtype), _param(rng, (4, 1), dtype)
    return lambda: sum_all(mul(mul(a, b), sub(a, b))), [a, b]


def _check_broadcast_scalar(rng, dtype):
    a, s = _param(rng, (3, 4), dtype), _param(rng, (), dtype)
    return lambda: sum_all(mul(sub(a, s), mul(a, s))), [a, s]


def _check_div(rng, dtype):
    a = _param(rng, (3, 4), dtype)
    # Denominators well away from zero keep the FD truncation term small.
    b = _param(rng, (3, 1), dtype, lo=0.6, hi=1.5)
    return lambda: sum_all(div(a, b)), [a, b]


def _check_neg_exp_log_sqrt(rng, dtype):
    a = _param(rng, (2, 5), dtype, lo=0.3, hi=1.5)
    return lambda: sum_all(mul(exp(neg(a)), log(sqrt(a)))), [a]


def _check_relu(rng, dtype):
    a = _away_from_zero(rng, (4, 7), dtype)
    return lambda: sum_all(mul(relu(a), a)), [a]


def _check_prelu(rng, dtype):
    a = _away_from_zero(rng, (4, 7), dtype)
    s = _param(rng, (1,), dtype, lo=0.1, hi=0.5)
    return lambda: sum_all(mul(prelu(a, s), a)), [a, s]


def _check_reductions(rng, dtype):
    a = _param(rng, (3, 8), dtype)
    return (
        lambda: mul(mean_all(a), sum_all(mul(sum_time(a), mean_time(a).sum()))),
        [a],
    )


def _check_softmax_pick(rng, dtype):
    a = _param(rng, (6,), dtype)
    idx = int(rng.integers(6))
    return lambda: mul(pick(softmax(a), idx), pick(a, (idx + 1) % 6)), [a]


def _check_matvec(rng, dtype):
    w, v = _param(rng, (4, 5), dtype), _param(rng, (5,), dtype)
    return lambda: sum_all(mul(matvec(w, v), matvec(w, v))), [w, v]


def _check_shape_ops(rng, dtype):
    a = _param(rng, (3, 9), dtype)
    c = _param(rng, (2, 9), dtype)
    v = _param(rng, (3, 1), dtype)

    def fn():
        stack = concat_channels([a, c, repeat_time(v, 9)])
        return sum_all(mul(slice_time(pad_time(stack, 2, 1), 1, 10), stack))

    return fn, [a, c, v]


def _check_conv_basic(rng, dtype):
    x = _param(rng, (3, 14), dtype)
    w = _param(rng, (4, 3, 5), dtype)
    return lambda: sum_all(mul(conv1d(x, w), conv1d(x, w))), [x, w]


def _check_conv_strided_dilated(rng, dtype):
    x = _param(rng, (2, 20), dtype)
    w = _param(rng, (3, 2, 4), dtype)
    return lambda: sum_all(conv1d(x, w, stride=3, dilation=2, pad=(2, 3))), [x, w]


def _check_conv_depthwise(rng, dtype):
    x = _param(rng, (5, 12), dtype)
    w = _param(rng, (5, 1, 3), dtype)
    fn = lambda: sum_all(mul(conv1d(x, w, dilation=2, groups=5, pad=(2, 2)), x))
    return fn, [x, w]


def _check_conv_grouped(rng, dtype):
    x = _param(rng, (4, 10), dtype)
    w = _param(rng, (6, 2, 3), dtype)
    return lambda: sum_all(conv1d(x, w, groups=2)), [x, w]


def _check_conv_transpose(rng, dtype):
    x = _param(rng, (3, 6), dtype)
    w = _param(rng, (3, 1, 5), dtype)
    out = lambda: sum_all(mul(conv1d_transpose(x, w, stride=3),
                              conv1d_transpose(x, w, stride=3)))
    return out, [x, w]


def _check_max_pool(rng, dtype):
    # Distinct well-separated values so the FD step cannot flip an argmax.
    base = rng.permutation(18).reshape(2, 9) * 0.5
    a = Tensor(base.astype(dtype), requires_grad=True)
    return lambda: sum_all(mul(max_pool1d(a, 3, 3), a.sum())), [a]


# --- layer checks -----------------------------------------------------------


def _check_gln(rng, dtype):
    layer = nn.GlobalLayerNorm(4, rng=rng, dtype=dtype)
    x = _param(rng, (4, 6), dtype)
    return lambda: sum_all(mul(layer.forward(x), x)), [x, layer.gain, layer.bias]


def _check_batchnorm(rng, dtype):
    layer = nn.BatchNorm1d(3, rng=rng, dtype=dtype)
    x = _param(rng, (3, 7), dtype)
    return lambda: sum_all(mul(layer.forward(x), x)), [x, layer.gain, layer.bias]


def _check_conv_layer(rng, dtype):
    layer = nn.ConvLayer(3, 4, 5, padding=(2, 2), rng=rng, dtype=dtype)
    x = _param(rng, (3, 9), dtype)
    return lambda: sum_all(mul(layer.forward(x), layer.forward(x))), \
        [x, layer.weight, layer.bias]


def _check_conv_transpose_layer(rng, dtype):
    layer = nn.ConvTransposeLayer(3, 4, stride=2, rng=rng, dtype=dtype)
    x = _param(rng, (3, 5), dtype)
    return lambda: sum_all(mul(layer.forward(x), layer.forward(x))), [x, layer.weight]


def _check_linear_layer(rng, dtype):
    layer = nn.Linear(5, 3, rng=rng, dtype=dtype)
    v = _param(rng, (5,), dtype)
    return lambda: sum_all(mul(layer.forward(v), layer.forward(v))), \
        [v, layer.weight, layer.bias]


def _check_prelu_layer(rng, dtype):
    layer = nn.PReLULayer(rng=rng, dtype=dtype)
    x = _away_from_zero(rng, (3, 6), dtype)
    return lambda: sum_all(mul(layer.forward(x), x)), [x, layer.slope]


def _check_resnet_block(rng, dtype):
    from .model import ResNetBlock

    block = ResNetBlock(3, 4, rng=rng, dtype=dtype)
    x = _param(rng, (3, 9), dtype)
    params = [x] + [p for _, p in block.named_parameters()]
    return lambda: sum_all(block.forward(x)), params


def _check_tcn_block(rng, dtype):
    from .model import TCNBlock

    block = TCNBlock(5, 3, 4, kernel=3, dilation=2, rng=rng, dtype=dtype)
    x = _param(rng, (3, 8), dtype)
    cond = _param(rng, (2, 8), dtype)
    fn = lambda: sum_all(block.forward(concat_channels([x, cond]), x))
    return fn, [x, cond] + [p for _, p in block.named_parameters()]


# --- loss checks ------------------------------------------------------------


def _check_si_sdr(rng, dtype):
    est = _param(rng, (24,), dtype)
    ref = Tensor(rng.uniform(-1, 1, 24).astype(dtype))
    return lambda: losses.si_sdr(est, ref), [est]


def _check_ce(rng, dtype):
    logits = _param(rng, (5,), dtype)
    label = int(rng.integers(5))
    return lambda: losses.ce_loss(logits, label), [logits]


def _check_total_loss(rng, dtype):
    T = 20
    outs = [_param(rng, (T,), dtype) for _ in range(3)]
    target = Tensor(rng.uniform(-1, 1, T).astype(dtype))
    logits = _param(rng, (4,), dtype)
    w = losses.LossWeights(alpha=0.1, beta=0.1, gamma=0.5)
    fn = lambda: losses.total_loss(outs[0], outs[1], outs[2], target, logits, 2, w)
    return fn, outs + [logits]


def _check_micro_model(rng, dtype):
    from .model import SpexPlusConfig, SpexPlusModel

    cfg = SpexPlusConfig(L1=4, L2=6, L3=8, N=3, B=2, R=1, O=3, P=4, D=3,
                         N_R=1, N_s=3, sample_rate=8000)
    model = SpexPlusModel(cfg, seed=int(rng.integers(1 << 30)), dtype=dtype)
    mix = rng.uniform(-0.5, 0.5, 90).astype(dtype)
    ref = rng.uniform(-0.5, 0.5, 90).astype(dtype)
    target = Tensor(rng.uniform(-0.5, 0.5, 90).astype(dtype))
    w = losses.LossWeights(alpha=0.2, beta=0.2, gamma=0.5)

    def fn():
        out = model.forward(mix, ref)
        return losses.total_loss(out.s1, out.s2, out.s3, target, out.logits, 1, w)

    # Spot-check one parameter from each corner of the network.
    names = dict(model.named_parameters())
    picks = [
        "encoder.convs.0.weight",
        "speaker_encoder.blocks.0.bn2.gain",
        "extractor.stacks.0.0.dconv.weight",
        "decoder.deconvs.1.weight",
        "classifier.weight",
        "extractor.stacks.0.1.prelu1.slope",
    ]
    return fn, [names[n] for n in picks]


OP_CHECKS = [
    ("op.add_sub_mul", _check_add, 20),
    ("op.broadcast_col", _check_broadcast_col, 20),
    ("op.broadcast_scalar", _check_broadcast_scalar, 20),
    ("op.div", _check_div, 20),
    ("op.neg_exp_log_sqrt", _check_neg_exp_log_sqrt, 20),
    ("op.relu", _check_relu, 20),
    ("op.prelu", _check_prelu, 20),
    ("op.reductions", _check_reductions, 20),
    ("op.softmax_pick", _check_softmax_pick, 20),
    ("op.matvec", _check_matvec, 20),
    ("op.shape_ops", _check_shape_ops, 20),
    ("op.conv1d", _check_conv_basic, 20),
    ("op.conv1d_strided_dilated", _check_conv_strided_dilated, 20),
    ("op.conv1d_depthwise", _check_conv_depthwise, 20),
    ("op.conv1d_grouped", _check_conv_grouped, 20),
    ("op.conv1d_transpose", _check_conv_transpose, 20),
    ("op.max_pool1d", _check_max_pool, 20),
]

LAYER_CHECKS = [
    ("layer.global_layer_norm", _check_gln, 20),
    ("layer.batch_norm", _check_batchnorm, 20),
    ("layer.conv", _check_conv_layer, 20),
    ("layer.conv_transpose", _check_conv_transpose_layer, 20),
    ("layer.linear", _check_linear_layer, 20),
    ("layer.prelu", _check_prelu_layer, 20),
    ("layer.resnet_block", _check_resnet_block, 8),
    ("layer.tcn_block", _check_tcn_block, 8),
    ("loss.si_sdr", _check_si_sdr, 20),
    ("loss.cross_entropy", _check_ce, 20),
    ("loss.total", _check_total_loss, 10),
    ("model.micro_end_to_end", _check_micro_model, 3),
]

ALL_CHECKS = OP_CHECKS + LAYER_CHECKS


def run_checks(names=None, dtypes=(np.float32, np.float64), seed=0,
               instances=None):
    """Run the registered checks; yields (name, dtype, max_err, tol, ok)."""
    selected = [c for c in ALL_CHECKS if names is None or any(c[0].startswith(n) for n in names)]
    results = []
    for name, builder, default_n in selected:
        for dtype in dtypes:
            dt = np.dtype(dtype)
            tol = TOLERANCES[dt]
            n = instances or default_n
            worst = 0.0
            for i in range(n):
                # Builders draw all randomness before casting, so seeding the
                # rng identically yields a float64 twin with the same values.
                key = [seed, zlib.crc32(name.encode()), i]
                fn, params = builder(np.random.default_rng(key), dt)
                if dt == np.float64:
                    oracle_fn, oracle_params = fn, params
                else:
                    oracle_fn, oracle_params = builder(
                        np.random.default_rng(key), np.dtype(np.float64))
                worst = max(worst, check_case(fn, params, oracle_fn, oracle_params))
            results.append((name, dt.name, worst, tol, worst < tol))
    return results
