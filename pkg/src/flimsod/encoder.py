"""Convolutional encoder trained from marker pixels, without backpropagation.

Each block applies marker-based normalization, convolution with a bank of
unit-norm kernels clustered from marker patches, ReLU, and pooling. Kernels
inherit the foreground/background label of the marker they came from.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imgcore import MultiChannelImage, PatchSpec, extract_patch
from .markers import MarkerSet, MarkerStats, map_markers_to_block, marker_stats

MODEL_SCHEMA = "flim-model/1"


@dataclass(frozen=True)
class PoolSpec:
    type: str = "max"          # max | avg
    size: int = 3
    stride: int = 2

    def __post_init__(self):
        if self.type not in ("max", "avg"):
            raise ValueError(f"pooling type must be 'max' or 'avg', got {self.type!r}")
        if self.size < 1:
            raise ValueError(f"pooling size must be >= 1, got {self.size}")
        if self.stride < 1:
            raise ValueError(f"pooling stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class BlockSpec:
    kernel_size: int = 3
    dilation: int = 1
    kernels_per_marker: int = 1
    pooling: PoolSpec = field(default_factory=PoolSpec)

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.kernels_per_marker < 1:
            raise ValueError(f"kernels_per_marker must be >= 1, got {self.kernels_per_marker}")


@dataclass(frozen=True)
class ArchitectureConfig:
    blocks: tuple[BlockSpec, ...]
    epsilon: float = 1e-4

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("architecture needs at least one block")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class KernelBank:
    """Unit-norm kernels (m', k*k*m_in) with per-kernel source marker and label."""

    kernels: np.ndarray
    labels: np.ndarray                       # per-kernel label in {1, 2}
    sources: tuple[tuple[str, int], ...]     # (image id, marker id) per kernel
    kernel_size: int
    dilation: int
    in_channels: int

    def __post_init__(self):
        if self.kernels.ndim != 2:
            raise ValueError("kernel bank must be a 2D array")
        if self.kernels.shape[0] != len(self.labels) or self.kernels.shape[0] != len(self.sources):
            raise ValueError("kernels, labels and sources disagree in length")
        expected = self.kernel_size * self.kernel_size * self.in_channels
        if self.kernels.shape[1] != expected:
            raise ValueError(f"kernel length {self.kernels.shape[1]} != k*k*m = {expected}")

    @property
    def size(self) -> int:
        return self.kernels.shape[0]


@dataclass(frozen=True)
class EncoderBlock:
    spec: BlockSpec
    stats: MarkerStats
    bank: KernelBank
    cumulative_stride: int   # stride from the input image into this block's input


@dataclass(frozen=True)
class EncoderModel:
    blocks: tuple[EncoderBlock, ...]
    input_channels: int

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def parameter_count(self) -> int:
        """Kernel weights only; marker-based normalization needs no bias."""
        return sum(b.bank.kernels.size for b in self.blocks)


# ---------------------------------------------------------------------------
# Normalization and convolution
# ---------------------------------------------------------------------------

def normalize(img: MultiChannelImage, stats: MarkerStats) -> MultiChannelImage:
    """Per-channel (v - mu) / (sigma + epsilon) standardization."""
    if img.channels != stats.mean.shape[0]:
        raise ValueError(f"image has {img.channels} channels, stats expect {stats.mean.shape[0]}")
    return MultiChannelImage((img.data - stats.mean) / (stats.std + stats.epsilon))


def conv_block_forward(img: MultiChannelImage, stats: MarkerStats, bank: KernelBank,
                       spec: BlockSpec) -> MultiChannelImage:
    """One encoder block: normalize, convolve (zero padding, stride 1),
    ReLU, then pooling. Output dims are ceil(w/stride) x ceil(h/stride)."""
    if img.channels != bank.in_channels:
        raise ValueError(f"image has {img.channels} channels, bank expects {bank.in_channels}")
    if (spec.kernel_size, spec.dilation) != (bank.kernel_size, bank.dilation):
        raise ValueError("block spec and kernel bank disagree on patch geometry")
    x = normalize(img, stats).data
    h, w, m = x.shape
    k, d = spec.kernel_size, spec.dilation
    mprime = bank.size
    pad = d * (k // 2)
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    weights = bank.kernels.reshape(mprime, k, k, m)
    out = np.zeros((h, w, mprime))
    for ty in range(k):
        for tx in range(k):
            oy, ox = d * (ty - k // 2), d * (tx - k // 2)
            window = xp[pad + oy: pad + oy + h, pad + ox: pad + ox + w, :]
            out += window @ weights[:, ty, tx, :].T
    np.maximum(out, 0.0, out=out)
    return MultiChannelImage(_pool(out, spec.pooling))


def _pool(x: np.ndarray, pool: PoolSpec) -> np.ndarray:
    """Pooling window centered per output cell, zero-padded at borders;
    avg divides by the full window area."""
    h, w, c = x.shape
    s = pool.stride
    oh, ow = -(-h // s), -(-w // s)
    lo = -(pool.size - 1) // 2
    pl, ph = (pool.size - 1) // 2, pool.size // 2
    xp = np.pad(x, ((pl, ph), (pl, ph), (0, 0)))
    ys = np.arange(oh) * s + pl
    xs = np.arange(ow) * s + pl
    acc = None
    for oy in range(lo, lo + pool.size):
        for ox in range(lo, lo + pool.size):
            window = xp[np.ix_(ys + oy, xs + ox)]
            if acc is None:
                acc = window.copy()
            elif pool.type == "max":
                np.maximum(acc, window, out=acc)
            else:
                acc += window
    if pool.type == "avg":
        acc /= pool.size * pool.size
    return acc


# ---------------------------------------------------------------------------
# k-means kernel estimation
# ---------------------------------------------------------------------------

def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int = 100, tol: float = 1e-6) -> tuple[np.ndarray, list[float]]:
    """Lloyd's k-means with k-means++ seeding.

    Stops after ``max_iter`` iterations or when the largest center movement
    falls below ``tol``. Empty clusters are re-seeded with the point
    farthest from its assigned center. Returns (centers, wcss_trace) where
    the trace holds the within-cluster sum of squares after each
    assignment step.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= {n}, got {k}")

    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, n - 1)
        centers[j] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[j]) ** 2).sum(axis=1))

    wcss_trace: list[float] = []
    for _ in range(max_iter):
        dist2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dist2.argmin(axis=1)
        own = dist2[np.arange(n), assign]
        wcss_trace.append(float(own.sum()))

        new_centers = centers.copy()
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                new_centers[j] = pts[assign == j].mean(axis=0)
        taken = own.copy()
        for j in np.flatnonzero(counts == 0):
            far = int(taken.argmax())
            new_centers[j] = pts[far]
            taken[far] = -1.0   # do not hand the same point to two empty clusters
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if movement < tol:
            break
    return centers, wcss_trace


def _unit_normalize(kernels: np.ndarray, kernel_size: int, channels: int) -> np.ndarray:
    """L2-normalize kernel rows; all-zero rows become a one-hot center tap."""
    out = kernels.copy()
    norms = np.sqrt((out ** 2).sum(axis=1))
    for i in np.flatnonzero(norms == 0):
        warnings.warn("zero-norm cluster center replaced by one-hot center tap", RuntimeWarning)
        onehot = np.zeros(out.shape[1])
        onehot[(kernel_size * kernel_size // 2) * channels] = 1.0
        out[i] = onehot
        norms[i] = 1.0
    return out / norms[:, None]


def estimate_kernels_for_marker(patches: np.ndarray, kernels_per_marker: int,
                                seed: int | np.random.Generator,
                                kernel_size: int = 0, channels: int = 0) -> np.ndarray:
    """Cluster one marker's patch vectors into min(m2, #patches) unit-norm
    kernels. With k == #patches every patch becomes its own kernel."""
    pts = np.asarray(patches, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need a (n, dim) patch array with n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = min(kernels_per_marker, pts.shape[0])
    if k == pts.shape[0]:
        centers = pts.copy()
    else:
        centers, _ = kmeans(pts, k, rng)
    if kernel_size <= 0:
        kernel_size, channels = 1, pts.shape[1]
    return _unit_normalize(centers, kernel_size, channels)


def build_kernel_bank(images: dict[str, MultiChannelImage], ms: MarkerSet,
                      spec: BlockSpec, seed: int,
                      stats: MarkerStats | None = None) -> KernelBank:
    """Estimate the block's kernel bank from normalized marker patches.

    Bank size is the sum over markers of min(kernels_per_marker, pixel
    count); each kernel carries its marker's label. Iteration order is
    image id, then marker id, so the bank layout is deterministic.
    """
    if not ms.images:
        raise ValueError("empty marker set")
    any_img = next(iter(images.values()))
    if stats is None:
        stats = marker_stats(images, ms)
    pspec = PatchSpec(spec.kernel_size, spec.dilation, any_img.channels)
    ss = np.random.SeedSequence(seed)

    kernels = []
    labels = []
    sources = []
    marker_index = 0
    for image_id in ms.image_ids():
        im = ms.images[image_id]
        normalized = normalize(images[image_id], stats)
        for marker in sorted(im.markers, key=lambda m: m.id):
            patches = np.stack([extract_patch(normalized, p, pspec) for p in marker.pixels])
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=ss.entropy, spawn_key=(marker_index,)))
            ker = estimate_kernels_for_marker(patches, spec.kernels_per_marker, rng,
                                              spec.kernel_size, any_img.channels)
            kernels.append(ker)
            labels.extend([marker.label] * ker.shape[0])
            sources.extend([(image_id, marker.id)] * ker.shape[0])
            marker_index += 1
    return KernelBank(
        kernels=np.concatenate(kernels, axis=0),
        labels=np.asarray(labels, dtype=np.int64),
        sources=tuple(sources),
        kernel_size=spec.kernel_size,
        dilation=spec.dilation,
        in_channels=any_img.channels,
    )


# ---------------------------------------------------------------------------
# Training and forward execution
# ---------------------------------------------------------------------------

def train_encoder(images: dict[str, MultiChannelImage], ms: MarkerSet,
                  arch: ArchitectureConfig, seed: int) -> EncoderModel:
    """Train all blocks in sequence: map markers by the cumulative pooling
    stride, recompute marker statistics on the current feature maps, build
    the kernel bank, then forward all training images into the next block."""
    if not images:
        raise ValueError("empty training set")
    for image_id in ms.image_ids():
        if not ms.images[image_id].markers:
            raise ValueError(f"image {image_id!r} has no markers")
    missing = set(ms.images) - set(images)
    if missing:
        raise ValueError(f"marker set references unknown images: {sorted(missing)}")
    input_channels = next(iter(images.values())).channels

    current = dict(images)
    cumulative = 1
    blocks = []
    root = np.random.SeedSequence(seed)
    for b, spec in enumerate(arch.blocks):
        ms_b = map_markers_to_block(ms, cumulative)
        stats = marker_stats(current, ms_b, epsilon=arch.epsilon)
        block_seed = int(np.random.default_rng(
            np.random.SeedSequence(entropy=root.entropy, spawn_key=(b,))
        ).integers(2 ** 63))
        bank = build_kernel_bank(current, ms_b, spec, block_seed, stats=stats)
        blocks.append(EncoderBlock(spec, stats, bank, cumulative))
        current = {iid: conv_block_forward(img, stats, bank, spec)
                   for iid, img in current.items()}
        cumulative *= spec.pooling.stride
    return EncoderModel(tuple(blocks), input_channels)


def encoder_forward(img: MultiChannelImage, model: EncoderModel,
                    upto_block: int) -> MultiChannelImage:
    """Feature map after block ``upto_block`` (1-based)."""
    if not (1 <= upto_block <= model.depth):
        raise ValueError(f"block index {upto_block} outside [1, {model.depth}]")
    if img.channels != model.input_channels:
        raise ValueError(f"image has {img.channels} channels, model expects {model.input_channels}")
    out = img
    for block in model.blocks[:upto_block]:
        out = conv_block_forward(out, block.stats, block.bank, block.spec)
    return out


# ---------------------------------------------------------------------------
# Serialization (flim-model/1)
# ---------------------------------------------------------------------------

def architecture_to_dict(arch: ArchitectureConfig) -> dict:
    return {
        "epsilon": arch.epsilon,
        "blocks": [
            {
                "kernel_size": b.kernel_size,
                "dilation": b.dilation,
                "kernels_per_marker": b.kernels_per_marker,
                "pooling": {"type": b.pooling.type, "size": b.pooling.size,
                            "stride": b.pooling.stride},
            }
            for b in arch.blocks
        ],
    }


def architecture_from_dict(d: dict) -> ArchitectureConfig:
    blocks = tuple(
        BlockSpec(
            kernel_size=b.get("kernel_size", 3),
            dilation=b.get("dilation", 1),
            kernels_per_marker=b.get("kernels_per_marker", 1),
            pooling=PoolSpec(**b.get("pooling", {})),
        )
        for b in d["blocks"]
    )
    return ArchitectureConfig(blocks=blocks, epsilon=d.get("epsilon", 1e-4))


def load_architecture(path: str | Path) -> ArchitectureConfig:
    return architecture_from_dict(json.loads(Path(path).read_text()))


def model_to_dict(model: EncoderModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "input_channels": model.input_channels,
        "blocks": [
            {
                "spec": {
                    "kernel_size": b.spec.kernel_size,
                    "dilation": b.spec.dilation,
                    "kernels_per_marker": b.spec.kernels_per_marker,
                    "pooling": {"type": b.spec.pooling.type, "size": b.spec.pooling.size,
                                "stride": b.spec.pooling.stride},
                },
                "stats": {
                    "mean": b.stats.mean.tolist(),
                    "std": b.stats.std.tolist(),
                    "epsilon": b.stats.epsilon,
                },
                "kernels": [row.tolist() for row in b.bank.kernels],
                "labels": b.bank.labels.tolist(),
                "sources": [[iid, mid] for iid, mid in b.bank.sources],
                "cumulative_stride": b.cumulative_stride,
            }
            for b in model.blocks
        ],
    }


def model_from_dict(d: dict) -> EncoderModel:
    if d.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {d.get('schema')!r}")
    blocks = []
    in_channels = d["input_channels"]
    current = in_channels
    for bd in d["blocks"]:
        spec = BlockSpec(
            kernel_size=bd["spec"]["kernel_size"],
            dilation=bd["spec"]["dilation"],
            kernels_per_marker=bd["spec"]["kernels_per_marker"],
            pooling=PoolSpec(**bd["spec"]["pooling"]),
        )
        stats = MarkerStats(
            mean=np.asarray(bd["stats"]["mean"], dtype=np.float64),
            std=np.asarray(bd["stats"]["std"], dtype=np.float64),
            epsilon=bd["stats"]["epsilon"],
        )
        bank = KernelBank(
            kernels=np.asarray(bd["kernels"], dtype=np.float64),
            labels=np.asarray(bd["labels"], dtype=np.int64),
            sources=tuple((iid, mid) for iid, mid in bd["sources"]),
            kernel_size=spec.kernel_size,
            dilation=spec.dilation,
            in_channels=current,
        )
        blocks.append(EncoderBlock(spec, stats, bank, bd["cumulative_stride"]))
        current = bank.size
    return EncoderModel(tuple(blocks), in_channels)


def save_model(model: EncoderModel, path: str | Path, extra: dict | None = None) -> None:
    d = model_to_dict(model)
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d))


def load_model(path: str | Path) -> tuple[EncoderModel, dict]:
    """Load a model file; returns (model, raw dict) so callers can read
    extra entries such as trained decoder weights."""
    d = json.loads(Path(path).read_text())
    return model_from_dict(d), d
