"""Synthetic SOD scenes: one bright elliptical object over a smoothly varying
darker background, plus small bright speckle distractors. The generator emits
ground-truth masks, so it is the oracle for end-to-end checks.

Background and marker placement are shaped so that both the label-based and
the tri-state decoding regimes are exercised: the background field is
histogram-equalized and background markers ladder across its brightness
quantiles, giving every image the spread of channel statistics the
tri-state rule feeds on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, gaussian_filter

from flimsod.imgcore import MultiChannelImage
from flimsod.markers import ImageMarkers, Marker, MarkerSet, merge_marker_sets
from flimsod.postproc import PostprocConfig

OBJECT_COLOR = np.array([0.85, 0.72, 0.30])
SPECKLE_COLOR = np.array([0.80, 0.68, 0.33])
BG_QUANTILES = (0.25, 0.4, 0.55, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class Scene:
    image_id: str
    image: MultiChannelImage
    gt: np.ndarray
    center: tuple[int, int]                    # (x, y) of the object
    bg_spots: tuple[tuple[int, int], ...]      # safe background marker spots


def suite_postproc_config() -> PostprocConfig:
    """Post-processing settings matched to the 128x128 suite geometry."""
    return PostprocConfig(area_range=(150, 6000), frame_removal=True,
                          delineation=True, r_in=15, r_out=24, scale_radii=True)


def make_scene(image_id: str, rng: np.random.Generator, size: int = 128) -> Scene:
    raw = gaussian_filter(rng.normal(size=(size, size)), 12)
    # rank-equalize so every image spans the same brightness distribution
    order = raw.ravel().argsort().argsort()
    field = (order / (size * size - 1)).reshape(size, size)
    base = 0.18 + 0.34 * field
    data = np.stack([base, base * 1.1, base * 1.25], axis=2)
    data += rng.normal(0, 0.015, size=data.shape)

    ys, xs = np.mgrid[0:size, 0:size]
    scale = size / 128.0
    margin = int(round(40 * scale))
    cx, cy = (int(v) for v in rng.integers(margin, size - margin, size=2))
    a = float(rng.uniform(12, 16)) * scale
    b = float(rng.uniform(11, 14)) * scale
    theta = float(rng.uniform(0, np.pi))
    ct, st = np.cos(theta), np.sin(theta)
    u = (xs - cx) * ct + (ys - cy) * st
    v = -(xs - cx) * st + (ys - cy) * ct
    gt = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    data[gt] = OBJECT_COLOR + rng.normal(0, 0.01, size=(int(gt.sum()), 3))

    # speckles stay clear of the object so delineation seeds never touch them
    keepout = (xs - cx) ** 2 + (ys - cy) ** 2 <= (max(a, b) + 12 * scale) ** 2
    speckles = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(8, 15))):
        for _attempt in range(20):
            sx, sy = (int(v) for v in rng.integers(4, size - 4, size=2))
            if not keepout[sy, sx]:
                r = int(rng.integers(1, 3))
                spot = (xs - sx) ** 2 + (ys - sy) ** 2 <= r * r
                speckles |= spot
                data[spot] = SPECKLE_COLOR + rng.normal(0, 0.01, size=3)
                break

    # background marker spots: a ladder across brightness quantiles, away
    # from the object, the speckles, and the frame
    bad = ((xs - cx) ** 2 + (ys - cy) ** 2 <= (34 * scale) ** 2) | \
        binary_dilation(speckles, structure=np.ones((11, 11), dtype=bool))
    f = np.where(~bad, field, np.nan)
    edge = max(4, int(round(6 * scale)))
    f[:edge, :] = f[-edge:, :] = f[:, :edge] = f[:, -edge:] = np.nan
    spots = []
    for q in BG_QUANTILES:
        target = np.nanquantile(f, q)
        idx = int(np.nanargmin(np.abs(f - target)))
        y, x = divmod(idx, size)
        spots.append((int(x), int(y)))

    return Scene(image_id=image_id,
                 image=MultiChannelImage(np.clip(data, 0.0, 1.0)),
                 gt=gt, center=(cx, cy), bg_spots=tuple(spots))


def make_dataset(n: int, seed: int, size: int = 128) -> list[Scene]:
    rng = np.random.default_rng(seed)
    return [make_scene(f"synth{i:03d}", rng, size) for i in range(n)]


def scripted_markers(scene: Scene, radius: int = 2) -> MarkerSet:
    """One foreground disc at the object center plus one background disc per
    brightness-quantile spot."""
    size = scene.image.width

    def disc_pixels(cx, cy, r):
        return tuple((cx + dx, cy + dy)
                     for dy in range(-r, r + 1) for dx in range(-r, r + 1)
                     if dx * dx + dy * dy <= r * r
                     and 0 <= cx + dx < size and 0 <= cy + dy < size)

    markers = [Marker(1, 1, disc_pixels(*scene.center, radius))]
    for k, (bx, by) in enumerate(scene.bg_spots, start=2):
        markers.append(Marker(k, 2, disc_pixels(bx, by, radius)))
    return MarkerSet({scene.image_id: ImageMarkers(
        scene.image_id, size, size, tuple(markers))})


def training_setup(scenes: list[Scene]):
    """Images dict and merged marker set for the first three scenes."""
    train = scenes[:3]
    images = {s.image_id: s.image for s in train}
    ms = merge_marker_sets([scripted_markers(s) for s in train])
    return images, ms
