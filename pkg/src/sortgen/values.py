"""List-value calculus and training losses.

Expected action counts come from the ordinal-threshold identity
E[Y] = sum_i P(Y >= i); per-step incremental value is the difference of
expected counts at consecutive prefix lengths, GMV value is the
price-weighted sum of pay increments, and the combined list value is the
weighted sum over objectives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sortgen import nn
from sortgen.core import ObjectiveWeights, SubList
from sortgen.model import ModelOutput, SurvivalMatrix
from sortgen.nn import Var

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LabelVector:
    """Binary per-position click/pay indicators plus cumulative counts."""

    clicks: np.ndarray
    pays: np.ndarray

    def __post_init__(self):
        clicks = np.asarray(self.clicks, dtype=np.int64)
        pays = np.asarray(self.pays, dtype=np.int64)
        object.__setattr__(self, "clicks", clicks)
        object.__setattr__(self, "pays", pays)
        if clicks.shape != pays.shape:
            raise ValueError("clicks and pays lengths differ")

    @property
    def cum_clicks(self) -> np.ndarray:
        return np.cumsum(self.clicks)

    @property
    def cum_pays(self) -> np.ndarray:
        return np.cumsum(self.pays)


@dataclass(frozen=True)
class ListValue:
    v_click: float
    v_pay: float
    v_gmv: float
    combined: float


def _monotone_columns(values: np.ndarray) -> np.ndarray:
    """Clamp each row to a non-increasing sequence over the threshold axis."""
    return np.minimum.accumulate(values, axis=-1)


def expected_count(survival: SurvivalMatrix, j: int) -> float:
    """E[count in length-j prefix] = sum_i P(count >= i)."""
    l = survival.values.shape[0]
    if not 1 <= j <= l:
        raise ValueError(f"prefix length {j} out of range 1..{l}")
    return float(_monotone_columns(survival.values[j - 1]).sum())


def incremental_value(survival: SurvivalMatrix, t: int) -> float:
    """Value added by the item at position t; position 0 contributes 0."""
    l = survival.values.shape[0]
    if not 1 <= t <= l:
        raise ValueError(f"position {t} out of range 1..{l}")
    prev = expected_count(survival, t - 1) if t > 1 else 0.0
    return expected_count(survival, t) - prev


def exact_count_mass(survival: SurvivalMatrix, j: int) -> np.ndarray:
    """Diagnostic: P(count == i) = p[i,j] - p[i+1,j] for i = 1..max_count."""
    col = _monotone_columns(survival.values[j - 1])
    return np.diff(np.concatenate([col, [0.0]])) * -1.0


def list_value(click: SurvivalMatrix, pay: SurvivalMatrix, items: SubList,
               weights: ObjectiveWeights) -> ListValue:
    l = len(items)
    if click.values.shape[0] < l or pay.values.shape[0] < l:
        raise ValueError("survival matrices shorter than the item list")
    v_click = expected_count(click, l)
    v_pay = expected_count(pay, l)
    v_gmv = sum(items.items[t - 1].price * incremental_value(pay, t) for t in range(1, l + 1))
    combined = weights.alpha * v_click + weights.beta * v_pay + weights.gamma * v_gmv
    return ListValue(v_click, v_pay, v_gmv, combined)


# Batched numpy versions used by the generator (no graph, no per-call clamps).


def expected_counts_batch(values: np.ndarray) -> np.ndarray:
    """[B, l, max_count] survival probs -> [B, l] expected counts per prefix."""
    return _monotone_columns(values).sum(axis=-1)


def combined_values_batch(click: np.ndarray, pay: np.ndarray, prices: np.ndarray,
                          weights: ObjectiveWeights) -> np.ndarray:
    """Combined list value at full length for each sequence in the batch.

    click/pay: [B, l, max_count]; prices: [B, l].
    """
    e_click = expected_counts_batch(click)
    e_pay = expected_counts_batch(pay)
    pay_incr = np.diff(e_pay, axis=1, prepend=0.0)
    v_gmv = (prices * pay_incr).sum(axis=1)
    return weights.alpha * e_click[:, -1] + weights.beta * e_pay[:, -1] + weights.gamma * v_gmv


# ------------------------------- losses ------------------------------------


def _threshold_targets(cum_counts: np.ndarray, max_count: int) -> np.ndarray:
    """targets[n, j, i] = 1 if cumulative count at prefix j is >= i+1."""
    return (cum_counts[:, :, None] >= np.arange(1, max_count + 1)[None, None, :]).astype(np.float64)


def _masked_bce(probs, targets: np.ndarray, mask: np.ndarray) -> Var:
    p = nn.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = nn.mul(targets * mask, nn.log(p))
    negt = nn.mul((1.0 - targets) * mask, nn.log(nn.sub(1.0, p)))
    return nn.neg(nn.add(pos, negt))


def ordered_regression_loss(output: ModelOutput, cum_clicks: np.ndarray,
                            cum_pays: np.ndarray) -> Var:
    """Sum of effective (i <= j) threshold cross-entropies, averaged over the batch.

    cum_clicks/cum_pays: [n, l] cumulative action counts per prefix length.
    """
    n, l, max_count = output.click.shape
    mask = output.valid.astype(np.float64)
    total = None
    for probs, cum in ((output.click, cum_clicks), (output.pay, cum_pays)):
        targets = _threshold_targets(np.asarray(cum), max_count)
        term = nn.sum_(_masked_bce(probs, targets, mask))
        total = term if total is None else nn.add(total, term)
    return nn.mul(total, 1.0 / n)


def pointwise_loss(click_logits, pay_logits, clicks: np.ndarray, pays: np.ndarray) -> Var:
    """Mean per-position binary cross-entropy on marginal action indicators.

    click_logits/pay_logits: [n, l] position scores (threshold channel 0).
    """
    click_logits, pay_logits = nn.as_var(click_logits), nn.as_var(pay_logits)
    n, l = click_logits.shape
    clicks = np.asarray(clicks, dtype=np.float64)
    pays = np.asarray(pays, dtype=np.float64)
    if clicks.shape != (n, l) or pays.shape != (n, l):
        raise ValueError("label shape mismatch")
    total = None
    ones = np.ones((n, l))
    for logits, labels in ((click_logits, clicks), (pay_logits, pays)):
        p = nn.clip(nn.sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
        bce = nn.neg(nn.add(nn.mul(labels, nn.log(p)),
                            nn.mul(ones - labels, nn.log(nn.sub(1.0, p)))))
        total = bce if total is None else nn.add(total, bce)
    return nn.mul(nn.sum_(total), 1.0 / (2 * n * l))
