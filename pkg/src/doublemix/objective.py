"""Cross-entropy on the original prediction plus a weighted JSD consistency term.

All distributions are passed as log-probabilities of shape (batch, classes).
Divergences use natural logarithms, so JSD lies in [0, ln 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

LOG_FLOOR = math.log(1e-12)


@dataclass
class LossBreakdown:
    loss: Tensor  # the scalar to differentiate
    ce: float
    jsd: float
    gamma: float

    @property
    def total(self) -> float:
        return self.loss.item()


def cross_entropy(log_p: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log p[label]``."""
    return T.scale(T.mean(T.pick(log_p, labels)), -1.0)


def kl_divergence(log_p: Tensor, log_q: Tensor) -> Tensor:
    """Batch mean of KL(p || q); ``log q`` is clamped at log(1e-12)."""
    if log_p.shape != log_q.shape:
        raise DimensionError(f"kl_divergence: shapes {log_p.shape} and {log_q.shape}")
    return T.mean(T.kl_rows(log_p, log_q, LOG_FLOOR))


def jsd_rows(log_p: Tensor, log_q: Tensor) -> Tensor:
    """Per-row Jensen-Shannon divergence.

    The midpoint is formed in probability space and both sides are re-logged
    from probabilities, so identical rows give exactly 0 and swapping the
    arguments gives bitwise-identical results. Rows are clipped at 0 against
    rounding; the true value and its gradient are both 0 there.
    """
    if log_p.shape != log_q.shape:
        raise DimensionError(f"jsd: shapes {log_p.shape} and {log_q.shape}")
    p = T.exp(log_p)
    q = T.exp(log_q)
    # zeros stay exact zeros (log -> -inf); kl_rows drops p == 0 terms and clamps log m
    log_m = T.log(T.scale(T.add(p, q), 0.5))
    kl_p = T.kl_rows(T.log(p), log_m, LOG_FLOOR)
    kl_q = T.kl_rows(T.log(q), log_m, LOG_FLOOR)
    return T.relu(T.scale(T.add(kl_p, kl_q), 0.5))


def jsd(p_mix: Tensor, p_orig: Tensor) -> Tensor:
    return T.mean(jsd_rows(p_mix, p_orig))


def combined_loss(p_orig: Tensor, p_mix: Tensor | None, labels, gamma: float) -> LossBreakdown:
    """``CE(p_orig, labels) + gamma * JSD(p_mix, p_orig)``.

    Only ``p_orig`` meets the gold labels. With ``p_mix=None`` the JSD term
    is absent and the loss is plain cross-entropy.
    """
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    ce = cross_entropy(p_orig, labels)
    if p_mix is None:
        return LossBreakdown(ce, ce.item(), 0.0, gamma)
    div = jsd(p_mix, p_orig)
    total = T.add(ce, T.scale(div, gamma))
    return LossBreakdown(total, ce.item(), div.item(), gamma)
