"""Training objectives: binary actioness, multi-class, and boundary regression.

Every loss returns its analytic gradient with respect to the network outputs
it consumes; the gradients are exact (checked against central finite
differences in the test suite).  The uncertainty-aware regression losses act
on one Gaussian boundary offset at a time: the network predicts the mean mu
and the log-variance alpha = log(sigma^2), which keeps sigma^2 positive and
the alpha-gradients bounded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from utal.errors import ConfigError
from utal.numerics import Rng, erf

ALPHA_CLAMP = 10.0

_SCORE_EPS = 1e-7
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

CONDITION_MODES = ("he", "paper")


def clamp_alpha(alpha: float) -> float:
    """Confine a log-variance to [-ALPHA_CLAMP, ALPHA_CLAMP]."""
    return min(max(alpha, -ALPHA_CLAMP), ALPHA_CLAMP)


@dataclass
class GaussianOffset:
    """One predicted boundary offset: mean and log-variance."""

    mu: float
    alpha: float

    @property
    def sigma(self) -> float:
        return math.exp(0.5 * self.alpha)

    @property
    def sigma_sq(self) -> float:
        return math.exp(self.alpha)


@dataclass
class MiningResult:
    """Index sets produced by hard-negative mining."""

    positive_indices: np.ndarray
    negative_indices: np.ndarray


def select_hard_negatives(
    scores: np.ndarray, labels: np.ndarray, mining_ratio: float
) -> MiningResult:
    """Keep all positives and the floor(|positives|/ratio) hardest negatives.

    Hardest means highest actioness score; ties break toward the smaller
    sample index.  A batch without positives yields an empty negative set.
    """
    if mining_ratio <= 0:
        raise ConfigError("mining ratio must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    if positives.size == 0:
        return MiningResult(positives, negatives[:0])
    quota = min(int(math.floor(positives.size / mining_ratio)), negatives.size)
    order = np.argsort(-scores[negatives], kind="stable")
    return MiningResult(positives, np.sort(negatives[order[:quota]]))


def binary_loss(
    scores: np.ndarray, labels: np.ndarray, mining: MiningResult
) -> tuple[float, np.ndarray]:
    """Balanced binary cross entropy over mined indices.

    loss = -(sum_pos log p + sum_neg log(1-p)) / (|pos| + |neg|); the
    gradient is nonzero only on mined indices.  Scores are clamped away from
    exactly 0/1 before the log.
    """
    scores = np.asarray(scores, dtype=np.float64)
    d_scores = np.zeros_like(scores)
    pos = mining.positive_indices
    neg = mining.negative_indices
    n = pos.size + neg.size
    if n == 0:
        return 0.0, d_scores
    p_pos = np.clip(scores[pos], _SCORE_EPS, 1.0 - _SCORE_EPS)
    p_neg = np.clip(scores[neg], _SCORE_EPS, 1.0 - _SCORE_EPS)
    loss = -(np.log(p_pos).sum() + np.log1p(-p_neg).sum()) / n
    d_scores[pos] = -1.0 / (p_pos * n)
    d_scores[neg] = 1.0 / ((1.0 - p_neg) * n)
    return float(loss), d_scores


def multiclass_loss(
    logits: np.ndarray, labels: np.ndarray, positive_indices: np.ndarray
) -> tuple[float, np.ndarray]:
    """Softmax cross entropy averaged over the positive rows.

    Gradient is (softmax - onehot)/|positives| on positive rows and zero
    elsewhere.  Empty positive set contributes nothing.
    """
    logits = np.asarray(logits, dtype=np.float64)
    d_logits = np.zeros_like(logits)
    pos = np.asarray(positive_indices, dtype=int)
    if pos.size == 0:
        return 0.0, d_logits
    rows = logits[pos]
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    labels_pos = np.asarray(labels)[pos].astype(int)
    picked = shifted[np.arange(pos.size), labels_pos]
    loss = float(np.mean(log_z - picked))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    probs[np.arange(pos.size), labels_pos] -= 1.0
    d_logits[pos] = probs / pos.size
    return loss, d_logits


def l1_loss(
    y_s: np.ndarray,
    y_e: np.ndarray,
    t_s: np.ndarray,
    t_e: np.ndarray,
    positive_indices: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Plain l1 boundary regression: mean over positives of |t_s-y_s|+|t_e-y_e|."""
    y_s = np.asarray(y_s, dtype=np.float64)
    y_e = np.asarray(y_e, dtype=np.float64)
    d_ys = np.zeros_like(y_s)
    d_ye = np.zeros_like(y_e)
    pos = np.asarray(positive_indices, dtype=int)
    if pos.size == 0:
        return 0.0, d_ys, d_ye
    rs = np.asarray(y_s)[pos] - np.asarray(t_s)[pos]
    re = np.asarray(y_e)[pos] - np.asarray(t_e)[pos]
    loss = float((np.abs(rs) + np.abs(re)).mean())
    d_ys[pos] = np.sign(rs) / pos.size
    d_ye[pos] = np.sign(re) / pos.size
    return loss, d_ys, d_ye


def kl_l1_loss(
    pred: GaussianOffset, t: float, condition_mode: str = "he"
) -> tuple[float, float, float]:
    """Piecewise Gaussian-vs-Dirac regression loss for one boundary offset.

    With d = t - mu and sigma^2 = exp(alpha):

      quadratic branch: d^2/(2 sigma^2) + alpha/2 + log(2 pi)/2
      linear branch:    (|d| - 1/2)/sigma^2 + alpha/2

    `condition_mode` selects which branch covers |d| <= 1: "he" (default)
    applies the quadratic branch there, mirroring smooth-l1 semantics;
    "paper" swaps the two regions.  Returns (loss, d_loss/d_mu,
    d_loss/d_alpha).
    """
    if condition_mode not in CONDITION_MODES:
        raise ConfigError(f"unknown condition mode {condition_mode!r}")
    d = t - pred.mu
    inv_var = math.exp(-pred.alpha)
    quadratic_inside = condition_mode == "he"
    use_quadratic = (abs(d) <= 1.0) == quadratic_inside
    if use_quadratic:
        loss = 0.5 * d * d * inv_var + 0.5 * pred.alpha + _HALF_LOG_2PI
        d_mu = -d * inv_var
        d_alpha = -0.5 * d * d * inv_var + 0.5
    else:
        loss = (abs(d) - 0.5) * inv_var + 0.5 * pred.alpha
        d_mu = -math.copysign(1.0, d) * inv_var if d != 0.0 else 0.0
        d_alpha = -(abs(d) - 0.5) * inv_var + 0.5
    return loss, d_mu, d_alpha


def kl_l1_quadratic(d: float, sigma: float) -> float:
    """Quadratic branch of the KL regression loss as a function of sigma."""
    return 0.5 * (d / sigma) ** 2 + math.log(sigma) + _HALF_LOG_2PI


def sampled_l1_loss(
    pred: GaussianOffset, t: float, rng: Rng
) -> tuple[float, float, float, float]:
    """|d - sigma*eps| with one fresh eps ~ N(0,1) (reparameterization trick).

    Sampling happens outside the gradient path: loss = |t - mu - sigma*eps|,
    so d_mu = -sign(d - sigma*eps) and d_alpha = -sigma*eps*sign(...)/2.
    Returns (loss, d_mu, d_alpha, eps) so the draw can be replayed.
    """
    eps = rng.normal()
    sigma = pred.sigma
    r = (t - pred.mu) - sigma * eps
    s = math.copysign(1.0, r) if r != 0.0 else 0.0
    return abs(r), -s, -0.5 * sigma * eps * s, eps


def expected_l1(d: float, sigma: float) -> tuple[float, float, float]:
    """Closed-form E|d - sigma*eps| for eps ~ N(0,1), with exact partials.

    d - sigma*eps is Gaussian with mean d and std sigma, so the expectation
    is the folded-normal mean

        d * erf(d / (sigma*sqrt(2))) + sigma * sqrt(2/pi) * exp(-d^2/(2 sigma^2))

    (the Monte Carlo suite in `cli verify` pins this form down; see also the
    foil below).  Partials: dE/dd = erf(d/(sigma*sqrt(2))) and
    dE/dsigma = sqrt(2/pi) * exp(-d^2/(2 sigma^2)), both strictly positive in
    sigma, so the value is >= |d| and increasing in sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = d / (sigma * math.sqrt(2.0))
    gauss = math.exp(-(d * d) / (2.0 * sigma * sigma))
    d_d = erf(z)
    value = d * d_d + sigma * _SQRT_2_OVER_PI * gauss
    return value, d_d, _SQRT_2_OVER_PI * gauss


def _expected_l1_foil(d: float, sigma: float) -> float:
    """Deliberately wrong closed form kept as a sensitivity foil.

    Halves the Gaussian coefficient and doubles the exponent decay relative
    to the correct folded-normal mean; the Monte Carlo verification must
    reject it, which proves the check can actually detect a bad formula.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = d / (sigma * math.sqrt(2.0))
    return d * erf(z) + sigma * math.exp(-(d * d) / (sigma * sigma)) / math.sqrt(2.0 * math.pi)


def expected_l1_training(
    pred: GaussianOffset, t: float
) -> tuple[float, float, float]:
    """Expected-l1 as a training loss on (mu, alpha), via the chain rule."""
    sigma = pred.sigma
    value, d_d, d_sigma = expected_l1(t - pred.mu, sigma)
    return value, -d_d, 0.5 * sigma * d_sigma


def export_loss_surfaces(path, d_grid, sigma_grid) -> int:
    """Write (loss_name, d, sigma, value) rows over the full grid.

    Surfaces: both branch conventions of the KL regression loss plus the
    expected-l1 loss.  Returns the number of data rows written.
    """
    names_and_fns = [
        ("kl_l1_he", lambda d, s: kl_l1_loss(GaussianOffset(0.0, 2.0 * math.log(s)), d, "he")[0]),
        ("kl_l1_paper", lambda d, s: kl_l1_loss(GaussianOffset(0.0, 2.0 * math.log(s)), d, "paper")[0]),
        ("expected_l1", lambda d, s: expected_l1(d, s)[0]),
    ]
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss_name", "d", "sigma", "value"])
        for name, fn in names_and_fns:
            for d in d_grid:
                for s in sigma_grid:
                    writer.writerow([name, repr(float(d)), repr(float(s)), repr(fn(float(d), float(s)))])
                    rows += 1
    return rows
