"""Training objective: multi-scale SI-SDR plus speaker cross-entropy.

si_sdr follows the (estimate, reference) argument convention everywhere.
The dB value is computed as 10*log10 of the power ratio, which is the same
quantity as 20*log10 of the norm ratio but needs no square roots; eps=1e-8
bounds the perfect-reconstruction singularity and dead denominators.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, div, dot, exp, log, mul, no_grad, pick, sub, sum_all

EPS = 1e-8
_LOG10 = math.log(10.0)


class DegenerateTargetError(ValueError):
    """The reference signal has no variation, so projection is undefined."""


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha + self.beta >= 1:
            raise ValueError("alpha + beta must be below 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def _flat_data(x):
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return data.reshape(-1)


def si_sdr(est, ref):
    """Scale-invariant SDR of `est` against `ref`, in dB, as a scalar tensor.

    Both signals are mean-normalized first; `ref` is treated as a constant,
    so gradients flow through `est` only.
    """
    ref_flat = _flat_data(ref).astype(np.float64)
    if ref_flat.size < 2:
        raise ValueError("si_sdr needs at least 2 samples")
    if np.ptp(ref_flat) == 0:
        raise DegenerateTargetError("reference signal is constant (zero power)")
    if not isinstance(est, Tensor):
        est = Tensor(est)
    if est.data.size != ref_flat.size:
        raise ValueError(
            f"length mismatch: estimate {est.data.size} vs reference {ref_flat.size}")

    ref0 = ref_flat - ref_flat.mean()
    ref_t = Tensor(ref0.reshape(est.data.shape).astype(est.data.dtype))
    est0 = sub(est, est.mean())
    scale = div(dot(est0, ref_t), float(np.dot(ref0, ref0)) + EPS)
    proj = mul(ref_t, scale)
    err = sub(proj, est0)
    ratio = div(add(dot(proj, proj), EPS), add(dot(err, err), EPS))
    return mul(log(ratio), 10.0 / _LOG10)


def si_sdr_value(est, ref):
    """si_sdr on plain arrays, as a float (no gradient tracking)."""
    with no_grad():
        return float(si_sdr(Tensor(np.asarray(est, dtype=np.float64)), ref).data)


def multiscale_sisdr_loss(s1, s2, s3, target, weights):
    """Negative weighted SI-SDR over the three decoder scales.

    Scales with a zero weight are skipped entirely, so nothing back-propagates
    through them.
    """
    w1 = 1.0 - weights.alpha - weights.beta
    total = mul(si_sdr(s1, target), -w1)
    if weights.alpha:
        total = sub(total, mul(si_sdr(s2, target), weights.alpha))
    if weights.beta:
        total = sub(total, mul(si_sdr(s3, target), weights.beta))
    return total


def ce_loss(logits, label):
    """Cross entropy -log softmax(logits)[label], natural log."""
    n = logits.data.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    shifted = sub(logits, float(logits.data.max()))
    lse = log(sum_all(exp(shifted)))
    return sub(lse, pick(shifted, label))


def total_loss(s1, s2, s3, target, logits, label, weights):
    """Multi-scale SI-SDR loss plus gamma-weighted speaker cross entropy."""
    loss = multiscale_sisdr_loss(s1, s2, s3, target, weights)
    if weights.gamma:
        loss = add(loss, mul(ce_loss(logits, label), weights.gamma))
    return loss
