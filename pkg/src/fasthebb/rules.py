"""SWTA and HPCA update kernels, each in naive and fused (fast) form.

Shapes follow the (batch b, neuron n, size s) convention:

* inputs  X: B x 1 x S
* weights W: 1 x N x S
* outputs Y: B x N x 1

The naive kernels materialize the full B x N x S per-sample update and then
aggregate over b; the fast kernels contract b early so their largest
temporary is O(N(B+S) + N^2).  Both forms of a rule are algebraically
identical; tests hold them to 1e-10 relative Frobenius error in double
precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tc
from .errors import ShapeMismatch
from .tensor import AllocationTracker, Tensor

__all__ = [
    "RULE_SWTA",
    "RULE_HPCA",
    "LearningParams",
    "RuleIntermediates",
    "UpdateResult",
    "forward_linear",
    "aggregate",
    "swta_update_naive",
    "swta_update_fast",
    "hpca_update_naive",
    "hpca_update_fast",
    "update_fn",
]

RULE_SWTA = "swta"
RULE_HPCA = "hpca"


@dataclass(frozen=True)
class LearningParams:
    """Learning rate, softmax temperature (SWTA only) and rule kind."""

    eta: float = 1e-3
    temperature: float = 1.0
    rule: str = RULE_SWTA
    center_inputs: bool = False  # optional per-batch mean subtraction

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.rule not in (RULE_SWTA, RULE_HPCA):
            raise ValueError(f"unknown rule {self.rule!r}")


@dataclass
class RuleIntermediates:
    """Auxiliary tensors of the update computation (diagnostics only)."""

    R: Optional[Tensor] = None  # softmax scores, B x N x 1
    C: Optional[Tensor] = None  # aggregation coefficients, B x N x 1
    Q: Optional[Tensor] = None  # sum_b (C*R), 1 x N x 1
    E: Optional[Tensor] = None  # reconstruction residual, B x N x S
    L: Optional[Tensor] = None  # N x N lower-triangular mask
    P: Optional[Tensor] = None  # masked Gram tensor, 1 x N x N


@dataclass
class UpdateResult:
    delta_w: Tensor  # 1 x N x S, learning rate already applied
    intermediates: Optional[RuleIntermediates] = None
    flops_estimate: int = 0
    peak_temp_elements: int = 0


def _check_update_shapes(w: Tensor, x: Tensor) -> tuple[int, int, int]:
    if w.ndim != 3 or x.ndim != 3:
        raise ShapeMismatch(f"expected 3-d W and X, got {w.shape} and {x.shape}")
    if w.shape[0] != 1 or x.shape[1] != 1:
        raise ShapeMismatch(
            f"W must be 1xNxS and X Bx1xS, got {w.shape} and {x.shape}"
        )
    if w.shape[2] != x.shape[2]:
        raise ShapeMismatch(
            f"size dims differ: W has S={w.shape[2]}, X has S={x.shape[2]}"
        )
    return x.shape[0], w.shape[1], w.shape[2]


def _maybe_center(x: Tensor, params: LearningParams) -> Tensor:
    if not params.center_inputs:
        return x
    mean = tc.elementwise("scale", tc.reduce_sum(x, 0), 1.0 / x.shape[0])
    return tc.elementwise("sub", x, mean)


def forward_linear(w: Tensor, x: Tensor) -> Tensor:
    """Y[b,n] = sum_s W[n,s] * X[b,s] (dot product, no bias)."""
    b, n, s = _check_update_shapes(w, x)
    wt = tc.transpose(w)  # 1 x S x N
    y = tc.matmul(tc.reshape(x, (1, b, s)), wt)  # 1 x B x N
    return tc.reshape(y, (b, n, 1))


def aggregate(coeffs: Tensor, per_sample: Tensor) -> Tensor:
    """Weighted sum over the batch: out[1,n,s] = sum_b C[b,n,1] * D[b,n,s]."""
    if coeffs.ndim != 3 or per_sample.ndim != 3:
        raise ShapeMismatch("aggregate expects 3-d tensors")
    if coeffs.shape[2] != 1 or coeffs.shape[:2] != per_sample.shape[:2]:
        raise ShapeMismatch(
            f"coefficients {coeffs.shape} do not match updates {per_sample.shape}"
        )
    return tc.reduce_sum(tc.elementwise("mul", coeffs, per_sample), 0)


def _swta_scores(w: Tensor, x: Tensor, params: LearningParams):
    y = forward_linear(w, x)
    r = tc.softmax(y, params.temperature, dim=1)  # B x N x 1
    col_sums = tc.reduce_sum(r, 0)  # 1 x N x 1
    # sum_b R[b,n] > 0 holds in exact arithmetic; at low temperature the
    # scores of a losing neuron can underflow to 0.0, in which case the
    # whole column is zero and C can be anything (its contribution vanishes)
    safe = Tensor(np.where(col_sums.data > 0, col_sums.data, 1.0))
    c = tc.elementwise("div", r, safe)
    return y, r, c


def swta_update_naive(
    w: Tensor, x: Tensor, params: LearningParams, keep_intermediates: bool = False
) -> UpdateResult:
    """Reference SWTA path: builds the B x N x S per-sample update, then
    aggregates with score-weighted coefficients C = R / sum_b R."""
    b, n, s = _check_update_shapes(w, x)
    x = _maybe_center(x, params)
    with AllocationTracker() as tr:
        y, r, c = _swta_scores(w, x, params)
        diff = tc.elementwise("sub", x, w)  # B x N x S
        per_sample = tc.elementwise(
            "scale", tc.elementwise("mul", r, diff), params.eta
        )
        delta_w = aggregate(c, per_sample)
    inter = None
    if keep_intermediates:
        cr = tc.elementwise("mul", c, r)
        inter = RuleIntermediates(R=r, C=c, Q=tc.reduce_sum(cr, 0))
    flops = b * n * (4 * s + 6)
    return UpdateResult(delta_w, inter, flops, tr.largest)


def swta_update_fast(
    w: Tensor, x: Tensor, params: LearningParams, keep_intermediates: bool = False
) -> UpdateResult:
    """Fused SWTA path: contracts b before any B x N x S object exists.

    delta_w = eta * matmul((C*R)_{1,n,b}, X_{1,b,s}) - eta * Q * W
    with Q = sum_b (C*R).
    """
    b, n, s = _check_update_shapes(w, x)
    x = _maybe_center(x, params)
    with AllocationTracker() as tr:
        y, r, c = _swta_scores(w, x, params)
        cr = tc.elementwise("mul", c, r)  # B x N x 1
        q = tc.reduce_sum(cr, 0)  # 1 x N x 1
        cr_t = tc.transpose(tc.reshape(cr, (1, b, n)))  # 1 x N x B
        pull = tc.matmul(cr_t, tc.reshape(x, (1, b, s)))  # 1 x N x S
        decay = tc.elementwise("mul", q, w)  # 1 x N x S
        delta_w = tc.elementwise(
            "scale", tc.elementwise("sub", pull, decay), params.eta
        )
    inter = RuleIntermediates(R=r, C=c, Q=q) if keep_intermediates else None
    flops = 2 * b * n * s + b * n * 8
    return UpdateResult(delta_w, inter, flops, tr.largest)


def hpca_update_naive(
    w: Tensor, x: Tensor, params: LearningParams, keep_intermediates: bool = False
) -> UpdateResult:
    """Reference HPCA path via the full residual tensor.

    E[b,n,s] = X[b,s] - sum_{n'<=n} Y[b,n'] * W[n',s]
    delta_w  = (eta/B) * sum_b Y[b,n] * E[b,n,s]
    """
    b, n, s = _check_update_shapes(w, x)
    x = _maybe_center(x, params)
    with AllocationTracker() as tr:
        y = forward_linear(w, x)  # B x N x 1
        mask = tc.reshape(tc.tril_mask(n, dtype=w.dtype), (1, n, n))
        yw = tc.elementwise("mul", y, w)  # B x N x S
        partial = tc.matmul(mask, yw)  # B x N x S, cumulative reconstructions
        del yw
        resid = tc.elementwise("sub", x, partial)  # B x N x S
        del partial
        per_sample = tc.elementwise("mul", y, resid)
        if not keep_intermediates:
            del resid
        summed = tc.reduce_sum(per_sample, 0)
        del per_sample
        delta_w = tc.elementwise("scale", summed, params.eta / b)
    inter = None
    if keep_intermediates:
        inter = RuleIntermediates(E=resid, L=tc.tril_mask(n, dtype=w.dtype))
    flops = b * n * s * (2 * n + 4)
    return UpdateResult(delta_w, inter, flops, tr.largest)


def hpca_update_fast(
    w: Tensor, x: Tensor, params: LearningParams, keep_intermediates: bool = False
) -> UpdateResult:
    """Fused HPCA path via the masked Gram tensor.

    P = (Y^T Y) * L;  delta_w = (eta/B) * (matmul(Y^T, X) - matmul(P, W))
    """
    b, n, s = _check_update_shapes(w, x)
    x = _maybe_center(x, params)
    with AllocationTracker() as tr:
        y = forward_linear(w, x)  # B x N x 1
        y_t = tc.transpose(tc.reshape(y, (1, b, n)))  # 1 x N x B
        gram = tc.matmul(y_t, tc.reshape(y, (1, b, n)))  # 1 x N x N
        mask = tc.reshape(tc.tril_mask(n, dtype=w.dtype), (1, n, n))
        p = tc.elementwise("mul", gram, mask)
        pull = tc.matmul(y_t, tc.reshape(x, (1, b, s)))  # 1 x N x S
        decay = tc.matmul(p, w)  # 1 x N x S
        delta_w = tc.elementwise(
            "scale", tc.elementwise("sub", pull, decay), params.eta / b
        )
    inter = None
    if keep_intermediates:
        inter = RuleIntermediates(L=tc.tril_mask(n, dtype=w.dtype), P=p)
    flops = 2 * b * n * s + 2 * b * n * n + 2 * n * n * s
    return UpdateResult(delta_w, inter, flops, tr.largest)


_KERNELS = {
    (RULE_SWTA, "naive"): swta_update_naive,
    (RULE_SWTA, "fast"): swta_update_fast,
    (RULE_HPCA, "naive"): hpca_update_naive,
    (RULE_HPCA, "fast"): hpca_update_fast,
}


def update_fn(rule: str, impl: str):
    """Look up an update kernel by rule name and implementation flavor."""
    try:
        return _KERNELS[(rule, impl)]
    except KeyError:
        raise ValueError(f"no kernel for rule={rule!r} impl={impl!r}") from None
