"""Saliency map to predicted mask: Otsu binarization, frame/area filtering,
morphological seed generation, and seeded forest delineation.

The delineation grows one tree per seed pixel on the pixel graph. A pixel
is conquered in nondecreasing path-cost order, where the cost of extending
a path to q is the maximum of the path cost so far and the Euclidean Lab
distance between q and the running mean color of the conquering tree. The
object is the union of trees rooted at internal seeds.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .imgcore import (
    AdjacencySpec,
    ConstantInputError,
    MultiChannelImage,
    area_filter,
    connected_components,
    morph,
    otsu_threshold,
    remove_frame_components,
    rgb_to_lab,
)

# Seed radii defaults are tuned for 400x400 inputs and scaled with the
# image diagonal when PostprocConfig.scale_radii is set.
REFERENCE_DIAGONAL = math.hypot(400.0, 400.0)


@dataclass(frozen=True)
class PostprocConfig:
    area_range: tuple[int, int] = (1000, 9000)
    frame_removal: bool = True
    delineation: bool = True
    r_in: int = 5
    r_out: int = 10
    scale_radii: bool = True
    adjacency: AdjacencySpec = field(default_factory=AdjacencySpec)

    def __post_init__(self):
        if self.area_range[0] > self.area_range[1]:
            raise ValueError(f"bad area range {self.area_range}")
        if self.r_in < 1 or self.r_out < 1:
            raise ValueError("seed radii must be >= 1")

    def effective_radii(self, width: int, height: int) -> tuple[int, int]:
        if not self.scale_radii:
            return self.r_in, self.r_out
        factor = math.hypot(width, height) / REFERENCE_DIAGONAL
        return (max(1, round(self.r_in * factor)), max(1, round(self.r_out * factor)))

    def to_dict(self) -> dict:
        return {
            "area_range": list(self.area_range),
            "frame_removal": self.frame_removal,
            "delineation": self.delineation,
            "r_in": self.r_in,
            "r_out": self.r_out,
            "scale_radii": self.scale_radii,
            "adjacency": self.adjacency.connectivity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PostprocConfig":
        return cls(
            area_range=tuple(d.get("area_range", (1000, 9000))),
            frame_removal=d.get("frame_removal", True),
            delineation=d.get("delineation", True),
            r_in=d.get("r_in", 5),
            r_out=d.get("r_out", 10),
            scale_radii=d.get("scale_radii", True),
            adjacency=AdjacencySpec(d.get("adjacency", 8)),
        )


@dataclass(frozen=True)
class SeedSet:
    """Internal (object) and external (background) seed masks."""

    internal: np.ndarray
    external: np.ndarray

    def __post_init__(self):
        if self.internal.shape != self.external.shape:
            raise ValueError("seed masks disagree in shape")
        if (self.internal & self.external).any():
            raise ValueError("internal and external seeds overlap")


def binarize_otsu(saliency: np.ndarray) -> np.ndarray:
    """1 where the value is strictly above the map's Otsu threshold;
    constant maps yield the all-zero mask."""
    sal = np.asarray(saliency, dtype=np.float64)
    if sal.ndim != 2:
        raise ValueError("saliency map must be 2D")
    try:
        t = otsu_threshold(sal.ravel())
    except ConstantInputError:
        return np.zeros(sal.shape, dtype=bool)
    return sal > t


def make_seeds(mask: np.ndarray, r_in: int, r_out: int,
               adj: AdjacencySpec = AdjacencySpec()) -> SeedSet:
    """Internal seeds by erosion, external by complementing the dilation.

    If erosion empties the mask, the pixel of the largest component nearest
    its centroid is used. If dilation swallows the whole image, the frame
    pixels become the external seeds.
    """
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise ValueError("cannot seed an empty mask")
    internal = morph(mask, "erode", r_in)
    if not internal.any():
        labels, areas = connected_components(mask, adj)
        biggest = int(areas.argmax()) + 1
        ys, xs = np.nonzero(labels == biggest)
        cy, cx = ys.mean(), xs.mean()
        nearest = int(((ys - cy) ** 2 + (xs - cx) ** 2).argmin())
        internal = np.zeros_like(mask)
        internal[ys[nearest], xs[nearest]] = True
    external = ~morph(mask, "dilate", r_out)
    if not external.any():
        external = np.zeros_like(mask)
        external[0, :] = external[-1, :] = True
        external[:, 0] = external[:, -1] = True
        external &= ~internal
    return SeedSet(internal=internal, external=external)


def dynamic_trees_delineate(lab_img: MultiChannelImage, seeds: SeedSet,
                            adj: AdjacencySpec = AdjacencySpec(),
                            return_forest: bool = False):
    """Seeded forest growth with max-arc path costs against each tree's
    running mean color. Deterministic: ties break by insertion order.

    With ``return_forest`` the (cost, root, predecessor) arrays of the
    final forest are returned alongside the mask for auditing.
    """
    if seeds.internal.shape != (lab_img.height, lab_img.width):
        raise ValueError("seeds do not match the image domain")
    if not seeds.internal.any():
        raise ValueError("no internal seeds")
    if not seeds.external.any():
        raise ValueError("no external seeds")
    h, w, c = lab_img.data.shape
    n = h * w
    # scalar-math hot loop: python lists beat per-pixel numpy calls here
    colors = lab_img.data.reshape(-1, c).tolist()
    channels = range(c)

    cost = [math.inf] * n
    root = [-1] * n
    pred = [-1] * n
    done = [False] * n
    tree_sum: dict[int, list[float]] = {}
    tree_cnt: dict[int, int] = {}
    is_internal = seeds.internal.reshape(-1)

    heap: list[tuple[float, int, int]] = []
    counter = 0
    for idx in np.flatnonzero(seeds.internal.reshape(-1) | seeds.external.reshape(-1)):
        idx = int(idx)
        cost[idx] = 0.0
        root[idx] = idx
        tree_sum[idx] = [0.0] * c
        tree_cnt[idx] = 0
        heapq.heappush(heap, (0.0, counter, idx))
        counter += 1

    offsets = adj.offsets()
    while heap:
        c_p, _, p = heapq.heappop(heap)
        if done[p]:
            continue
        done[p] = True
        r = root[p]
        acc = tree_sum[r]
        col_p = colors[p]
        for ch in channels:
            acc[ch] += col_p[ch]
        tree_cnt[r] += 1
        inv = 1.0 / tree_cnt[r]
        mean = [acc[ch] * inv for ch in channels]
        py, px = divmod(p, w)
        for dy, dx in offsets:
            qy, qx = py + dy, px + dx
            if not (0 <= qy < h and 0 <= qx < w):
                continue
            q = qy * w + qx
            if done[q]:
                continue
            col_q = colors[q]
            arc = 0.0
            for ch in channels:
                diff = col_q[ch] - mean[ch]
                arc += diff * diff
            arc = math.sqrt(arc)
            cand = arc if arc > c_p else c_p
            if cand < cost[q]:
                cost[q] = cand
                root[q] = r
                pred[q] = p
                heapq.heappush(heap, (cand, counter, q))
                counter += 1
    mask = is_internal[np.asarray(root)].reshape(h, w)
    if return_forest:
        return mask, np.asarray(cost), np.asarray(root), np.asarray(pred)
    return mask


def postprocess(saliency: np.ndarray, original: MultiChannelImage,
                cfg: PostprocConfig) -> np.ndarray:
    """Full pipeline: Otsu, optional frame removal, area filter, and
    optional seeded delineation in Lab space followed by a final area
    filter. The saliency map must already live on the image domain."""
    if saliency.shape != (original.height, original.width):
        raise ValueError("saliency must be upsampled to the image domain first")
    mask = binarize_otsu(saliency)
    if not mask.any():
        return mask
    if cfg.frame_removal:
        mask = remove_frame_components(mask, cfg.adjacency)
    mask = area_filter(mask, cfg.area_range[0], cfg.area_range[1], cfg.adjacency)
    if not cfg.delineation or not mask.any():
        return mask
    r_in, r_out = cfg.effective_radii(original.width, original.height)
    seeds = make_seeds(mask, r_in, r_out, cfg.adjacency)
    if not seeds.external.any():
        return mask
    lab = rgb_to_lab(original) if original.channels == 3 else original
    mask = dynamic_trees_delineate(lab, seeds, cfg.adjacency)
    return area_filter(mask, cfg.area_range[0], cfg.area_range[1], cfg.adjacency)
