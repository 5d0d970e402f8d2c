"""Synthetic benchmark generation, dataset I/O, proposals, labeling, pooling.

A synthetic "video" is a [T x d_feat] matrix of unit-level features: ambient
Gaussian noise everywhere, plus a class-specific prototype pattern on the
units covered by each planted action instance.  The pattern is a fixed base
vector plus a linear temporal ramp along a second, orthogonal class
direction, so a unit encodes both its class and where it sits inside the
instance; windows contained in a long instance are thereby distinguishable
from windows matching a short one, and boundary offsets are decodable from
pooled features.  Annotations may be "subjectively" mis-drawn (one boundary
pulled inward by a sizable fraction of the instance length) to emulate
inconsistent human boundary labels; the feature matrix always reflects the
true extent.

File formats:
  manifest.json  JSON with per-video records {video_id, T, d_feat,
                 feature_file, annotations:[{class_id, start, end}]}
  *.f32          raw little-endian float32, row-major [T x d_feat], no header
  classes.txt    one class name per line, line number = class_id
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from utal.errors import ConfigError
from utal.numerics import Rng

# instance lengths are drawn from this range (in units), further capped by
# the per-instance slot so placements never collide
_LEN_RANGE = (8, 40)
_SLOT_MARGIN = 2

# temporal-ramp amplitude relative to the unit-norm base prototype; class 0
# is deliberately structureless (no ramp), so proposals contained in a long
# class-0 instance stay genuinely boundary-ambiguous
RAMP_AMPLITUDE = 0.75
FLAT_CLASS_ID = 0

# mis-drawn annotations pull one boundary inward by this fraction of the
# instance length; the annotation keeps tIoU >= 0.55 with the true extent
_JITTER_SHIFT = (0.35, 0.45)


def ramp_amplitude_for(class_id: int) -> float:
    return 0.0 if class_id == FLAT_CLASS_ID else RAMP_AMPLITUDE


@dataclass
class DataConfig:
    """Synthetic dataset shape and noise knobs."""

    num_videos: int = 200
    t_range: tuple[int, int] = (64, 128)
    num_classes: int = 5
    d_feat: int = 64
    instances_per_video: int = 2
    noise_level: float = 0.15
    boundary_jitter: float = 0.05  # fraction of instances with a mis-drawn boundary

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ConfigError("num_videos must be at least 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.d_feat < 8:
            raise ConfigError("d_feat must be at least 8")
        lo, hi = self.t_range
        if lo < 16 or hi < lo:
            raise ConfigError("t_range must satisfy 16 <= lo <= hi")
        if self.instances_per_video < 1:
            raise ConfigError("instances_per_video must be at least 1")
        if lo // self.instances_per_video < _LEN_RANGE[0] + 2 * _SLOT_MARGIN:
            raise ConfigError(
                "instances_per_video too large for t_range: slots shorter than "
                f"{_LEN_RANGE[0] + 2 * _SLOT_MARGIN} units"
            )
        if self.noise_level < 0:
            raise ConfigError("noise_level must be nonnegative")
        if not 0.0 <= self.boundary_jitter <= 1.0:
            raise ConfigError("boundary_jitter must lie in [0, 1]")


@dataclass
class ProposalConfig:
    """Sliding-window and label-assignment settings.

    pos_thr 0.35 admits contained windows of up-to-2.8x-longer instances as
    positives (normalized offsets then reach ~1.8 in magnitude), which keeps
    a population of large-residual proposals alive for the variance analysis.
    """

    scales: tuple[int, ...] = (8, 16, 32, 64)
    overlap: float = 0.75
    pos_thr: float = 0.35
    neg_thr: float = 0.3

    def validate(self) -> None:
        if not self.scales or any(s < 1 for s in self.scales):
            raise ConfigError("scales must be a nonempty list of lengths >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must lie in [0, 1)")
        if not 0.0 <= self.neg_thr <= self.pos_thr <= 1.0:
            raise ConfigError("need 0 <= neg_thr <= pos_thr <= 1")


@dataclass
class UnitFeatureSequence:
    """Per-video matrix of unit-level feature vectors."""

    video_id: str
    features: np.ndarray  # [T x d_feat]

    @property
    def num_units(self) -> int:
        return self.features.shape[0]


@dataclass
class ActionAnnotation:
    class_id: int
    start: float
    end: float


@dataclass
class Proposal:
    start: float
    end: float
    scale_id: int = 0

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass
class LabeledProposal:
    """A proposal with supervision; x is attached when features are pooled."""

    video_id: str
    proposal: Proposal
    t_a: int
    t_c: int | None = None
    t_s: float | None = None
    t_e: float | None = None
    x: np.ndarray | None = None


@dataclass
class VideoItem:
    sequence: UnitFeatureSequence
    annotations: list[ActionAnnotation]


@dataclass
class Dataset:
    videos: list[VideoItem]
    class_names: list[str]
    d_feat: int
    num_classes: int
    seed: int | None = None
    generator_config: dict | None = None

    @property
    def num_videos(self) -> int:
        return len(self.videos)


def class_prototypes(seed: int, num_classes: int, d_feat: int) -> np.ndarray:
    """Fixed unit-norm base prototype per class, a pure function of the seed."""
    rng = Rng(seed).split("prototypes")
    protos = rng.normals(num_classes * d_feat).reshape(num_classes, d_feat)
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def class_ramp_directions(seed: int, num_classes: int, d_feat: int) -> np.ndarray:
    """Unit ramp direction per class, orthogonal to that class's prototype."""
    protos = class_prototypes(seed, num_classes, d_feat)
    rng = Rng(seed).split("ramp-directions")
    dirs = rng.normals(num_classes * d_feat).reshape(num_classes, d_feat)
    for c in range(num_classes):
        dirs[c] -= (dirs[c] @ protos[c]) * protos[c]
        dirs[c] /= np.linalg.norm(dirs[c])
    return dirs


def prototype_at(
    protos: np.ndarray, ramp_dirs: np.ndarray, class_id: int, rel_pos: float
) -> np.ndarray:
    """The noise-free feature of a unit at relative position rel_pos in [0, 1)."""
    ramp = 2.0 * rel_pos - 1.0
    return protos[class_id] + ramp_amplitude_for(class_id) * ramp * ramp_dirs[class_id]


def _flat_class_length(vid_rng: Rng, max_len: int) -> int:
    """Length for the structureless class: mostly window-sized, some ~2.5x.

    Most instances sit near the smallest proposal scale (clean matches); a
    fifth are ~2.5x it, so windows contained in them are positives whose
    offsets cannot be inferred from the (flat) features.
    """
    bucket = vid_rng.randint(10)
    lo, hi = (8, 12) if bucket < 8 else (19, 21)
    hi = min(hi, max_len)
    lo = min(lo, hi)
    return lo + vid_rng.randint(hi - lo + 1)


def _plant_instances(vid_rng: Rng, t_units: int, cfg: DataConfig) -> list[tuple[int, int, int]]:
    """Non-overlapping (class_id, start, end) triples, one per equal slot."""
    out = []
    slot = t_units / cfg.instances_per_video
    for i in range(cfg.instances_per_video):
        slot_lo = int(math.ceil(i * slot)) + _SLOT_MARGIN
        slot_hi = int(math.floor((i + 1) * slot)) - _SLOT_MARGIN
        max_len = min(_LEN_RANGE[1], slot_hi - slot_lo)
        class_id = vid_rng.randint(cfg.num_classes)
        if class_id == FLAT_CLASS_ID:
            length = _flat_class_length(vid_rng, max_len)
        else:
            length = _LEN_RANGE[0] + vid_rng.randint(max_len - _LEN_RANGE[0] + 1)
        start = slot_lo + vid_rng.randint(slot_hi - slot_lo - length + 1)
        out.append((class_id, start, start + length))
    return out


def _jitter_annotation(
    vid_rng: Rng, start: float, end: float, t_units: int, jitter_fraction: float
) -> tuple[float, float]:
    """Maybe pull one annotation boundary inward by 35-45% of the length.

    The draw order (accept, side, magnitude) is fixed so streams stay
    reproducible whether or not the jitter applies.  The contracted
    annotation keeps tIoU >= 0.55 with the true extent, so truth-aligned
    detections still match it at the 0.5 evaluation threshold.
    """
    accept = vid_rng.uniform() < jitter_fraction
    side = vid_rng.randint(2)
    mag = (_JITTER_SHIFT[0] + (_JITTER_SHIFT[1] - _JITTER_SHIFT[0]) * vid_rng.uniform()) * (
        end - start
    )
    if not accept:
        return float(start), float(end)
    if side == 0:
        start = start + mag
    else:
        end = end - mag
    return float(start), float(end)


def generate_synthetic_dataset(
    cfg: DataConfig, seed: int, out_dir: str | Path
) -> tuple[Dataset, Path]:
    """Generate videos, write manifest + feature files, return them.

    Byte-deterministic for a given (cfg, seed): every random draw comes from
    sub-streams keyed by purpose and video index.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    root = Rng(seed)
    protos = class_prototypes(seed, cfg.num_classes, cfg.d_feat)
    ramp_dirs = class_ramp_directions(seed, cfg.num_classes, cfg.d_feat)

    videos: list[VideoItem] = []
    for vi in range(cfg.num_videos):
        vid_rng = root.split("video", vi)
        t_units = cfg.t_range[0] + vid_rng.randint(cfg.t_range[1] - cfg.t_range[0] + 1)
        feats = cfg.noise_level * vid_rng.normals(t_units * cfg.d_feat).reshape(
            t_units, cfg.d_feat
        )
        annotations = []
        for class_id, s, e in _plant_instances(vid_rng, t_units, cfg):
            rel = (np.arange(s, e) + 0.5 - s) / (e - s)
            ramp = 2.0 * rel - 1.0
            feats[s:e] += (
                protos[class_id]
                + ramp_amplitude_for(class_id) * ramp[:, None] * ramp_dirs[class_id]
            )
            js, je = _jitter_annotation(vid_rng, s, e, t_units, cfg.boundary_jitter)
            annotations.append(ActionAnnotation(class_id=class_id, start=js, end=je))
        video_id = f"vid{vi:04d}"
        feature_file = out / "features" / f"{video_id}.f32"
        feature_file.write_bytes(np.ascontiguousarray(feats, dtype="<f4").tobytes())
        videos.append(VideoItem(UnitFeatureSequence(video_id, feats), annotations))

    class_names = [f"class_{c:02d}" for c in range(cfg.num_classes)]
    (out / "classes.txt").write_text("".join(n + "\n" for n in class_names))
    manifest = {
        "format_version": 1,
        "seed": seed,
        "d_feat": cfg.d_feat,
        "num_classes": cfg.num_classes,
        "class_table": "classes.txt",
        "generator_config": asdict(cfg),
        "videos": [
            {
                "video_id": item.sequence.video_id,
                "T": item.sequence.num_units,
                "d_feat": cfg.d_feat,
                "feature_file": f"features/{item.sequence.video_id}.f32",
                "annotations": [asdict(a) for a in item.annotations],
            }
            for item in videos
        ],
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    dataset = Dataset(
        videos=videos,
        class_names=class_names,
        d_feat=cfg.d_feat,
        num_classes=cfg.num_classes,
        seed=seed,
        generator_config=asdict(cfg),
    )
    return dataset, manifest_path


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Read a manifest and its feature files; validate every invariant."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    d_feat = int(manifest["d_feat"])
    num_classes = int(manifest["num_classes"])
    class_names = [f"class_{c:02d}" for c in range(num_classes)]
    table = manifest.get("class_table")
    if table and (base / table).exists():
        class_names = (base / table).read_text().splitlines()
        if len(class_names) != num_classes:
            raise ConfigError(
                f"class table lists {len(class_names)} names, manifest says {num_classes}"
            )
    videos: list[VideoItem] = []
    for rec in manifest["videos"]:
        t_units = int(rec["T"])
        if t_units < 1:
            raise ConfigError(f"video {rec['video_id']}: T must be >= 1")
        if int(rec["d_feat"]) != d_feat:
            raise ConfigError(f"video {rec['video_id']}: d_feat mismatch")
        raw = (base / rec["feature_file"]).read_bytes()
        feats = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if feats.size != t_units * d_feat:
            raise ConfigError(
                f"video {rec['video_id']}: feature file holds {feats.size} floats, "
                f"expected {t_units * d_feat}"
            )
        feats = feats.reshape(t_units, d_feat)
        if not np.all(np.isfinite(feats)):
            raise ConfigError(f"video {rec['video_id']}: non-finite feature values")
        annotations = []
        for a in rec["annotations"]:
            ann = ActionAnnotation(int(a["class_id"]), float(a["start"]), float(a["end"]))
            if not 0 <= ann.start < ann.end <= t_units:
                raise ConfigError(
                    f"video {rec['video_id']}: annotation [{ann.start}, {ann.end}] "
                    f"outside [0, {t_units}]"
                )
            if not 0 <= ann.class_id < num_classes:
                raise ConfigError(f"video {rec['video_id']}: class_id {ann.class_id} out of range")
            annotations.append(ann)
        videos.append(VideoItem(UnitFeatureSequence(rec["video_id"], feats), annotations))
    return Dataset(
        videos=videos,
        class_names=class_names,
        d_feat=d_feat,
        num_classes=num_classes,
        seed=manifest.get("seed"),
        generator_config=manifest.get("generator_config"),
    )


def sliding_windows(t_units: float, scales, overlap: float) -> list[Proposal]:
    """Multi-scale sliding windows covering [0, T].

    For each scale L: windows [s, s+L] at stride L*(1-overlap) while they
    fit; if the last window stops short of T, one extra window [T-L, T] is
    appended.  A scale longer than T contributes the single window [0, T].
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigError("overlap must lie in [0, 1)")
    windows: list[Proposal] = []
    for scale_id, length in enumerate(scales):
        if length < 1:
            raise ConfigError("window scales must be >= 1")
        if length > t_units:
            windows.append(Proposal(0.0, float(t_units), scale_id))
            continue
        stride = length * (1.0 - overlap)
        count = int(math.floor((t_units - length) / stride + 1e-9)) + 1
        last_end = 0.0
        for i in range(count):
            s = i * stride
            windows.append(Proposal(s, s + length, scale_id))
            last_end = s + length
        if last_end < t_units - 1e-9:
            windows.append(Proposal(float(t_units) - length, float(t_units), scale_id))
    return windows


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection-over-union of two intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0.0 else 0.0


def compute_offsets(prop: Proposal, gt: ActionAnnotation) -> tuple[float, float]:
    """Length-normalized displacements from proposal to annotation boundaries."""
    length = prop.length
    if length <= 0:
        raise ConfigError("proposal length must be positive")
    return (gt.start - prop.start) / length, (gt.end - prop.end) / length


def label_proposals(
    video_id: str,
    proposals: list[Proposal],
    annotations: list[ActionAnnotation],
    pos_thr: float = 0.5,
    neg_thr: float = 0.3,
) -> list[LabeledProposal]:
    """Assign actioness labels and regression targets by max tIoU.

    Positive iff max tIoU >= pos_thr (matched to the argmax annotation, ties
    to the earlier one); negative iff max tIoU < neg_thr; proposals in
    between are discarded.
    """
    if not 0.0 <= neg_thr <= pos_thr <= 1.0:
        raise ConfigError("need 0 <= neg_thr <= pos_thr <= 1")
    out: list[LabeledProposal] = []
    for prop in proposals:
        best_t, best_ann = 0.0, None
        for ann in annotations:
            t = tiou((prop.start, prop.end), (ann.start, ann.end))
            if t > best_t:
                best_t, best_ann = t, ann
        if best_ann is not None and best_t >= pos_thr:
            t_s, t_e = compute_offsets(prop, best_ann)
            out.append(
                LabeledProposal(video_id, prop, 1, best_ann.class_id, t_s, t_e)
            )
        elif best_t < neg_thr:
            out.append(LabeledProposal(video_id, prop, 0))
    return out


def pool_k_parts(video: UnitFeatureSequence, prop: Proposal, k: int) -> np.ndarray:
    """Coverage-weighted average pooling over k equal sub-spans, concatenated.

    Each unit contributes to a sub-span with weight equal to their overlap
    length, so fractional (refined) boundaries pool smoothly.  A zero-length
    sub-span falls back to the unit containing it.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    feats = video.features
    t_units = feats.shape[0]
    parts = np.empty((k, feats.shape[1]))
    span = prop.length / k
    for j in range(k):
        lo = prop.start + j * span
        hi = lo + span
        u0 = max(int(math.floor(lo)), 0)
        u1 = min(int(math.ceil(hi)), t_units)
        if hi <= lo or u1 <= u0:
            u = min(max(int(math.floor((lo + hi) / 2.0)), 0), t_units - 1)
            parts[j] = feats[u]
            continue
        units = np.arange(u0, u1, dtype=np.float64)
        weights = np.minimum(hi, units + 1.0) - np.maximum(lo, units)
        weights = np.clip(weights, 0.0, None)
        total = weights.sum()
        if total <= 0.0:
            u = min(max(int(math.floor((lo + hi) / 2.0)), 0), t_units - 1)
            parts[j] = feats[u]
        else:
            parts[j] = weights @ feats[u0:u1] / total
    return parts.reshape(-1)


def build_training_set(
    dataset: Dataset, prop_cfg: ProposalConfig, k: int
) -> list[LabeledProposal]:
    """Windows -> labels -> pooled features for every video, in fixed order."""
    prop_cfg.validate()
    labeled: list[LabeledProposal] = []
    for item in sorted(dataset.videos, key=lambda v: v.sequence.video_id):
        windows = sliding_windows(item.sequence.num_units, prop_cfg.scales, prop_cfg.overlap)
        windows.sort(key=lambda p: (p.start, p.scale_id))
        for lp in label_proposals(
            item.sequence.video_id,
            windows,
            item.annotations,
            prop_cfg.pos_thr,
            prop_cfg.neg_thr,
        ):
            lp.x = pool_k_parts(item.sequence, lp.proposal, k)
            labeled.append(lp)
    return labeled
