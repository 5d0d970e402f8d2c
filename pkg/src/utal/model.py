"""The single-stage network and its training loop.

Pooled proposal feature -> l2-normalize -> FC(hidden)+ReLU -> two branches:
a scalar actioness logit (sigmoid), and a per-class block holding the class
logit plus the boundary-offset parameters.  In uncertainty mode each class
row carries (mu_s, alpha_s, mu_e, alpha_e); in baseline mode just
(mu_s, mu_e).  All backward passes are hand-derived; regression gradients
flow only through the ground-truth class row.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from utal.data import Dataset, LabeledProposal, ProposalConfig, build_training_set
from utal.errors import ConfigError, NumericError
from utal.losses import (
    ALPHA_CLAMP,
    CONDITION_MODES,
    GaussianOffset,
    binary_loss,
    expected_l1_training,
    kl_l1_loss,
    l1_loss,
    multiclass_loss,
    sampled_l1_loss,
    select_hard_negatives,
)
from utal.net import (
    DenseLayer,
    L2NormalizeLayer,
    ReluLayer,
    init_dense,
    load_arrays,
    save_arrays,
    sgd_step,
    sigmoid,
    softmax,
)
from utal.numerics import Rng

LOSS_MODES = ("l1", "kl_l1", "sampled_l1", "expected_l1")

# The first FC layer sees an l2-normalized input (norm 1 spread over k*d_feat
# dims), which would leave hidden activations ~25x too small under the plain
# fan-based init; the gain is folded into the init, like the scale that
# customarily follows an l2-normalization layer.
FC1_INIT_GAIN = 8.0

# Initial log-variance of the offset heads.  sigma_0 = e^{-1} ~ 0.37 matches
# the scale of the normalized offset targets; starting at sigma_0 = 1 makes
# the sampled loss feed sign-noise into mu for many epochs.
ALPHA_BIAS_INIT = -2.0


@dataclass
class TrainConfig:
    loss_mode: str = "sampled_l1"
    mining_ratio: float = 1.0 / 3.0  # positives : mined negatives
    batch_size: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    seed: int = 7
    k: int = 4
    hidden: int = 1000
    condition_mode: str = "he"
    w_bin: float = 1.0
    w_cls: float = 1.0
    w_reg: float = 1.0
    pad_head_to_six: bool = False  # widen class rows to 6 columns; extra is never read

    def validate(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.condition_mode not in CONDITION_MODES:
            raise ConfigError(f"condition_mode must be one of {CONDITION_MODES}")
        if self.mining_ratio <= 0:
            raise ConfigError("mining_ratio must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.k < 1 or self.hidden < 1:
            raise ConfigError("k and hidden must be at least 1")


@dataclass
class HeadOutput:
    """Network outputs for one proposal."""

    y_a: float
    class_logits: np.ndarray  # [C]
    offsets: np.ndarray  # [C x 4] uncertainty mode, [C x 2] baseline

    def mu_pair(self, class_id: int) -> tuple[float, float]:
        row = self.offsets[class_id]
        if row.shape[0] == 4:
            return float(row[0]), float(row[2])
        return float(row[0]), float(row[1])

    def gaussian_pair(self, class_id: int) -> tuple[GaussianOffset, GaussianOffset]:
        row = self.offsets[class_id]
        if row.shape[0] != 4:
            raise ConfigError("baseline head carries no variance parameters")
        return GaussianOffset(float(row[0]), float(row[1])), GaussianOffset(
            float(row[2]), float(row[3])
        )


@dataclass
class BatchForward:
    """Cached batched forward pass (training/eval internals)."""

    z_a: np.ndarray  # [B] raw actioness logits
    y_a: np.ndarray  # [B] sigmoid scores
    logits: np.ndarray  # [B x C]
    mu: np.ndarray  # [B x C x 2] (start, end)
    alpha: np.ndarray | None  # [B x C x 2], clamped; None in baseline mode
    alpha_pass: np.ndarray | None  # gradient gate: True where not clamped


@dataclass
class EpochStats:
    epoch: int
    loss_bin: float
    loss_cls: float
    loss_reg: float
    mean_sigma_pos: float | None
    mean_sigma_hardneg: float | None


@dataclass
class OffsetStat:
    """Per-positive regression residuals (and sigmas in uncertainty mode)."""

    d_start: float
    d_end: float
    sigma_start: float | None = None
    sigma_end: float | None = None


class Model:
    def __init__(
        self,
        d_feat: int,
        num_classes: int,
        k: int,
        hidden: int,
        uncertainty: bool,
        pad_head_to_six: bool,
        seed: int,
    ):
        self.d_feat = d_feat
        self.num_classes = num_classes
        self.k = k
        self.hidden = hidden
        self.uncertainty = uncertainty
        self.pad_head_to_six = pad_head_to_six and uncertainty
        self.seed = seed
        self.offset_cols = 4 if uncertainty else 2
        self.head_cols = 1 + self.offset_cols + (1 if self.pad_head_to_six else 0)

        rng = Rng(seed).split("model-init")
        in_dim = k * d_feat
        self.norm = L2NormalizeLayer()
        self.fc1 = init_dense(rng.split("fc1"), hidden, in_dim, name="fc1")
        self.fc1.weights *= FC1_INIT_GAIN
        self.relu = ReluLayer()
        self.fc_act = init_dense(rng.split("actioness"), 1, hidden, name="actioness")
        self.fc_head = init_dense(
            rng.split("head"), num_classes * self.head_cols, hidden, name="head"
        )
        if uncertainty:
            head_bias = self.fc_head.biases.reshape(num_classes, self.head_cols)
            head_bias[:, (2, 4)] = ALPHA_BIAS_INIT

    @property
    def dense_layers(self) -> list[DenseLayer]:
        return [self.fc1, self.fc_act, self.fc_head]

    def zero_grad(self) -> None:
        for layer in self.dense_layers:
            layer.zero_grad()

    def forward_batch(self, x: np.ndarray) -> BatchForward:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.k * self.d_feat:
            raise ConfigError(
                f"pooled feature batch must be [B x {self.k * self.d_feat}], got {x.shape}"
            )
        h = self.relu.forward(self.fc1.forward(self.norm.forward(x)))
        z_a = self.fc_act.forward(h)[:, 0]
        block = self.fc_head.forward(h).reshape(-1, self.num_classes, self.head_cols)
        logits = block[:, :, 0]
        if self.uncertainty:
            mu = block[:, :, (1, 3)]
            alpha_raw = block[:, :, (2, 4)]
            alpha = np.clip(alpha_raw, -ALPHA_CLAMP, ALPHA_CLAMP)
            alpha_pass = np.abs(alpha_raw) <= ALPHA_CLAMP
        else:
            mu = block[:, :, (1, 2)]
            alpha, alpha_pass = None, None
        return BatchForward(z_a, sigmoid(z_a), logits, mu, alpha, alpha_pass)

    def forward(self, x: np.ndarray) -> HeadOutput:
        out = self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])
        if self.uncertainty:
            offsets = np.stack(
                [out.mu[0, :, 0], out.alpha[0, :, 0], out.mu[0, :, 1], out.alpha[0, :, 1]],
                axis=1,
            )
        else:
            offsets = out.mu[0]
        return HeadOutput(float(out.y_a[0]), out.logits[0].copy(), offsets)

    def backward_batch(
        self,
        fwd: BatchForward,
        d_za: np.ndarray,
        d_logits: np.ndarray,
        d_mu: np.ndarray,
        d_alpha: np.ndarray | None,
    ) -> np.ndarray:
        """Accumulate parameter gradients; returns gradient w.r.t. the input."""
        batch = d_za.shape[0]
        d_block = np.zeros((batch, self.num_classes, self.head_cols))
        d_block[:, :, 0] = d_logits
        if self.uncertainty:
            d_block[:, :, (1, 3)] = d_mu
            if d_alpha is not None:
                d_block[:, :, (2, 4)] = d_alpha * fwd.alpha_pass
        else:
            d_block[:, :, (1, 2)] = d_mu
        dh_head, _ = self.fc_head.backward(d_block.reshape(batch, -1))
        dh_act, _ = self.fc_act.backward(d_za[:, None])
        dh = self.relu.backward(dh_head + dh_act)
        dx, _ = self.fc1.backward(dh)
        return self.norm.backward(dx)


def init_model(cfg: TrainConfig, d_feat: int, num_classes: int, seed: int) -> Model:
    cfg.validate()
    if d_feat < 1 or num_classes < 2:
        raise ConfigError("need d_feat >= 1 and num_classes >= 2")
    return Model(
        d_feat=d_feat,
        num_classes=num_classes,
        k=cfg.k,
        hidden=cfg.hidden,
        uncertainty=cfg.loss_mode != "l1",
        pad_head_to_six=cfg.pad_head_to_six,
        seed=seed,
    )


def parameter_count(model: Model) -> int:
    return sum(layer.weights.size + layer.biases.size for layer in model.dense_layers)


def _regression_terms(
    model: Model,
    cfg: TrainConfig,
    fwd: BatchForward,
    pos: np.ndarray,
    t_c: np.ndarray,
    t_s: np.ndarray,
    t_e: np.ndarray,
    eps_rng: Rng | None,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Regression loss over positives plus gradients on (mu, alpha).

    Per-sample losses attach to start and end independently and are averaged
    over both boundaries and all positives; only the ground-truth class row
    receives gradient.
    """
    d_mu = np.zeros_like(fwd.mu)
    d_alpha = np.zeros_like(fwd.alpha) if model.uncertainty else None
    if pos.size == 0:
        return 0.0, d_mu, d_alpha

    if cfg.loss_mode == "l1":
        classes = t_c[pos].astype(int)
        y_s = np.zeros(fwd.mu.shape[0])
        y_e = np.zeros(fwd.mu.shape[0])
        y_s[pos] = fwd.mu[pos, classes, 0]
        y_e[pos] = fwd.mu[pos, classes, 1]
        loss, d_ys, d_ye = l1_loss(y_s, y_e, t_s, t_e, pos)
        d_mu[pos, classes, 0] = d_ys[pos] * cfg.w_reg
        d_mu[pos, classes, 1] = d_ye[pos] * cfg.w_reg
        return loss, d_mu, d_alpha

    scale = 1.0 / (2.0 * pos.size)
    total = 0.0
    for i in pos:
        c = int(t_c[i])
        for b, target in ((0, t_s[i]), (1, t_e[i])):
            pred = GaussianOffset(float(fwd.mu[i, c, b]), float(fwd.alpha[i, c, b]))
            if cfg.loss_mode == "kl_l1":
                loss_b, g_mu, g_alpha = kl_l1_loss(pred, target, cfg.condition_mode)
            elif cfg.loss_mode == "sampled_l1":
                loss_b, g_mu, g_alpha, _ = sampled_l1_loss(pred, target, eps_rng)
            else:  # expected_l1
                loss_b, g_mu, g_alpha = expected_l1_training(pred, target)
            total += loss_b * scale
            d_mu[i, c, b] += g_mu * scale * cfg.w_reg
            d_alpha[i, c, b] += g_alpha * scale * cfg.w_reg
    return total, d_mu, d_alpha


def train(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    prop_cfg: ProposalConfig | None = None,
    training_set: list[LabeledProposal] | None = None,
) -> tuple[Model, list[EpochStats]]:
    """Mini-batch SGD over the labeled proposals of `dataset`.

    Deterministic given (seed, config, dataset): shuffling, mining, and the
    sampled-loss epsilon draws all come from sub-streams of cfg.seed.
    """
    cfg.validate()
    if training_set is None:
        training_set = build_training_set(dataset, prop_cfg or ProposalConfig(), cfg.k)
    n_pos = sum(lp.t_a for lp in training_set)
    if n_pos == 0:
        pc = prop_cfg or ProposalConfig()
        raise ConfigError(
            "training set has no positive proposals "
            f"(pos_thr={pc.pos_thr}, neg_thr={pc.neg_thr})"
        )

    x_all = np.stack([lp.x for lp in training_set])
    t_a = np.array([lp.t_a for lp in training_set], dtype=int)
    t_c = np.array([-1 if lp.t_c is None else lp.t_c for lp in training_set], dtype=int)
    t_s = np.array([0.0 if lp.t_s is None else lp.t_s for lp in training_set])
    t_e = np.array([0.0 if lp.t_e is None else lp.t_e for lp in training_set])
    n = len(training_set)

    root = Rng(cfg.seed)
    curve: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = root.split("shuffle", epoch).permutation(n)
        sums = np.zeros(3)
        batches = 0
        sigma_pos: list[float] = []
        sigma_neg: list[float] = []
        for batch_index, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            fwd = model.forward_batch(x_all[idx])
            mining = select_hard_negatives(fwd.y_a, t_a[idx], cfg.mining_ratio)
            pos = mining.positive_indices

            loss_bin, d_scores = binary_loss(fwd.y_a, t_a[idx], mining)
            d_za = d_scores * fwd.y_a * (1.0 - fwd.y_a) * cfg.w_bin

            loss_cls, d_logits = multiclass_loss(fwd.logits, t_c[idx], pos)
            d_logits = d_logits * cfg.w_cls

            eps_rng = (
                root.split("epsilon", epoch, batch_index)
                if cfg.loss_mode == "sampled_l1"
                else None
            )
            loss_reg, d_mu, d_alpha = _regression_terms(
                model, cfg, fwd, pos, t_c[idx], t_s[idx], t_e[idx], eps_rng
            )

            total = cfg.w_bin * loss_bin + cfg.w_cls * loss_cls + cfg.w_reg * loss_reg
            if not math.isfinite(total):
                raise NumericError(
                    f"non-finite total loss at epoch {epoch} batch {batch_index}"
                )

            model.zero_grad()
            model.backward_batch(fwd, d_za, d_logits, d_mu, d_alpha)
            if cfg.lr > 0:
                sgd_step(model.dense_layers, cfg.lr, cfg.momentum)

            sums += (loss_bin, loss_cls, loss_reg)
            batches += 1
            if model.uncertainty:
                if pos.size:
                    classes = t_c[idx][pos].astype(int)
                    sigma_pos.extend(
                        np.exp(0.5 * fwd.alpha[pos, classes, :]).ravel().tolist()
                    )
                neg = mining.negative_indices
                if neg.size:
                    hard_cls = fwd.logits[neg].argmax(axis=1)
                    sigma_neg.extend(
                        np.exp(0.5 * fwd.alpha[neg, hard_cls, :]).ravel().tolist()
                    )

        curve.append(
            EpochStats(
                epoch=epoch,
                loss_bin=float(sums[0] / batches),
                loss_cls=float(sums[1] / batches),
                loss_reg=float(sums[2] / batches),
                mean_sigma_pos=float(np.mean(sigma_pos)) if sigma_pos else None,
                mean_sigma_hardneg=float(np.mean(sigma_neg)) if sigma_neg else None,
            )
        )
    return model, curve


def collect_offset_stats(
    model: Model, training_set: list[LabeledProposal], batch_size: int = 512
) -> list[OffsetStat]:
    """Forward all positives once; report d = t - mu (and sigma) per boundary."""
    positives = [lp for lp in training_set if lp.t_a == 1]
    stats: list[OffsetStat] = []
    for lo in range(0, len(positives), batch_size):
        chunk = positives[lo : lo + batch_size]
        fwd = model.forward_batch(np.stack([lp.x for lp in chunk]))
        for row, lp in enumerate(chunk):
            c = int(lp.t_c)
            d_start = lp.t_s - float(fwd.mu[row, c, 0])
            d_end = lp.t_e - float(fwd.mu[row, c, 1])
            if model.uncertainty:
                stats.append(
                    OffsetStat(
                        d_start,
                        d_end,
                        math.exp(0.5 * float(fwd.alpha[row, c, 0])),
                        math.exp(0.5 * float(fwd.alpha[row, c, 1])),
                    )
                )
            else:
                stats.append(OffsetStat(d_start, d_end))
    return stats


def save_checkpoint(model: Model, path: str | Path, cfg: TrainConfig) -> Path:
    """Binary weights plus a JSON sidecar describing shapes and config."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for layer in model.dense_layers:
        arrays[f"{layer.name}.weights"] = layer.weights
        arrays[f"{layer.name}.biases"] = layer.biases
    save_arrays(path, arrays)
    sidecar = {
        "train_config": asdict(cfg),
        "d_feat": model.d_feat,
        "num_classes": model.num_classes,
        "k": model.k,
        "hidden": model.hidden,
        "uncertainty": model.uncertainty,
        "pad_head_to_six": model.pad_head_to_six,
        "seed": model.seed,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[Model, TrainConfig]:
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise ConfigError(f"checkpoint sidecar missing: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    cfg = TrainConfig(**sidecar["train_config"])
    model = Model(
        d_feat=sidecar["d_feat"],
        num_classes=sidecar["num_classes"],
        k=sidecar["k"],
        hidden=sidecar["hidden"],
        uncertainty=sidecar["uncertainty"],
        pad_head_to_six=sidecar["pad_head_to_six"],
        seed=sidecar["seed"],
    )
    arrays = load_arrays(path)
    for layer in model.dense_layers:
        w = arrays[f"{layer.name}.weights"]
        b = arrays[f"{layer.name}.biases"]
        if w.shape != layer.weights.shape or b.shape != layer.biases.shape:
            raise ConfigError(
                f"checkpoint shape mismatch for {layer.name}: "
                f"{w.shape}/{b.shape} vs {layer.weights.shape}/{layer.biases.shape}"
            )
        layer.weights = w
        layer.biases = b
        layer.vel_w = np.zeros_like(w)
        layer.vel_b = np.zeros_like(b)
        layer.grad_w = np.zeros_like(w)
        layer.grad_b = np.zeros_like(b)
    return model, cfg
