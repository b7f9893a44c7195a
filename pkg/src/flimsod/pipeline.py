"""End-to-end composition shared by the CLI and the HTTP service: config
loading, decoder dispatch, and the image -> saliency -> mask path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import decoders
from .encoder import EncoderModel, encoder_forward, load_architecture, ArchitectureConfig
from .imgcore import MultiChannelImage, bilinear_upsample
from .postproc import PostprocConfig, postprocess


@dataclass(frozen=True)
class DatasetPaths:
    images_dir: Path
    markers_dir: Path | None = None
    gt_dir: Path | None = None


@dataclass(frozen=True)
class PipelineConfig:
    architecture: Path | None
    decoder: str = "lm"
    block: int = 1
    beta_sq: float = 0.3
    seed: int = 0
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    dataset: DatasetPaths | None = None
    model_path: Path | None = None
    state_dir: Path | None = None
    frontend_dir: Path | None = None
    decoder_radius: int = 1
    ts_high_frac: float = 0.2
    ts_low_frac: float = 0.1

    def __post_init__(self):
        if self.decoder not in decoders.DECODER_KINDS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.block < 1:
            raise ValueError("block index must be >= 1")

    def load_architecture(self) -> ArchitectureConfig:
        if self.architecture is None:
            raise ValueError("config has no architecture path")
        return load_architecture(self.architecture)


def load_config(path: str | Path) -> PipelineConfig:
    base = Path(path).parent
    d = json.loads(Path(path).read_text())

    def resolve(key: str) -> Path | None:
        return (base / d[key]).resolve() if key in d and d[key] is not None else None

    dataset = None
    if "dataset" in d:
        ds = d["dataset"]
        dataset = DatasetPaths(
            images_dir=(base / ds["images_dir"]).resolve(),
            markers_dir=(base / ds["markers_dir"]).resolve() if ds.get("markers_dir") else None,
            gt_dir=(base / ds["gt_dir"]).resolve() if ds.get("gt_dir") else None,
        )
    return PipelineConfig(
        architecture=resolve("architecture"),
        decoder=d.get("decoder", "lm"),
        block=d.get("block", 1),
        beta_sq=d.get("beta_sq", 0.3),
        seed=d.get("seed", 0),
        postproc=PostprocConfig.from_dict(d.get("postproc", {})),
        dataset=dataset,
        model_path=resolve("model"),
        state_dir=resolve("state_dir"),
        frontend_dir=resolve("frontend_dir"),
        decoder_radius=d.get("decoder_radius", 1),
        ts_high_frac=d.get("ts_high_frac", 0.2),
        ts_low_frac=d.get("ts_low_frac", 0.1),
    )


def decode_featmap(featmap: MultiChannelImage, kind: str, labels: np.ndarray,
                   bp_weights: decoders.WeightVector | None = None,
                   radius: int = 1, ts_high: float = 0.2,
                   ts_low: float = 0.1) -> np.ndarray:
    """Dispatch one of the seven decoders on a feature map."""
    if kind == "ts":
        return decoders.decode_pointwise(
            featmap, decoders.weights_ts(decoders.channel_stats(featmap), ts_high, ts_low))
    if kind == "at":
        return decoders.decode_pointwise(featmap, decoders.weights_at(featmap))
    if kind == "lt":
        return decoders.decode_pointwise(
            featmap, decoders.weights_lt(featmap, labels, ts_high, ts_low))
    if kind == "pb":
        return decoders.decode_pixelwise(featmap, decoders.weights_pb(featmap, labels, radius))
    if kind == "mb":
        return decoders.decode_pixelwise(featmap, decoders.weights_mb(featmap, labels, radius))
    if kind == "lm":
        return decoders.decode_pointwise(featmap, decoders.weights_lm(labels))
    if kind == "bp":
        if bp_weights is None:
            raise ValueError("decoder 'bp' needs a trained weight vector")
        return decoders.decode_bp(featmap, bp_weights)
    raise ValueError(f"unknown decoder {kind!r}")


def infer_saliency(img: MultiChannelImage, model: EncoderModel, decoder: str,
                   block: int, bp_weights: decoders.WeightVector | None = None,
                   radius: int = 1, ts_high: float = 0.2,
                   ts_low: float = 0.1) -> np.ndarray:
    """Saliency on the input image domain (decoded, then upsampled)."""
    if not (1 <= block <= model.depth):
        raise ValueError(f"block {block} outside [1, {model.depth}]")
    featmap = encoder_forward(img, model, block)
    labels = model.blocks[block - 1].bank.labels
    sal = decode_featmap(featmap, decoder, labels, bp_weights, radius, ts_high, ts_low)
    return bilinear_upsample(sal, img.width, img.height)


def infer_mask(img: MultiChannelImage, model: EncoderModel, decoder: str, block: int,
               cfg: PostprocConfig, bp_weights: decoders.WeightVector | None = None,
               radius: int = 1, ts_high: float = 0.2,
               ts_low: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Full pipeline; returns (saliency on image domain, predicted mask)."""
    sal = infer_saliency(img, model, decoder, block, bp_weights, radius, ts_high, ts_low)
    return sal, postprocess(sal, img, cfg)
