"""Raster data model and shared image utilities.

Images are (h, w, m) float64 arrays wrapped in :class:`MultiChannelImage`;
binary masks are plain (h, w) bool arrays. Everything here is pure: no
function mutates its inputs, so images can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class ConstantInputError(ValueError):
    """All input values are equal, so no threshold can be computed."""


@dataclass(frozen=True)
class MultiChannelImage:
    """m-channel raster. ``data`` has shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, np.newaxis]
        if d.ndim != 3:
            raise ValueError(f"expected (h, w, m) array, got shape {d.shape}")
        if min(d.shape) < 1:
            raise ValueError(f"degenerate image shape {d.shape}")
        if d.dtype != np.float64:
            d = d.astype(np.float64)
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel(self, i: int) -> np.ndarray:
        return self.data[:, :, i]


@dataclass(frozen=True)
class PatchSpec:
    """Geometry of the square patch sampled around a pixel."""

    kernel_size: int
    dilation: int = 1
    channels: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")

    @property
    def length(self) -> int:
        return self.kernel_size * self.kernel_size * self.channels


@dataclass(frozen=True)
class AdjacencySpec:
    """Pixel-graph connectivity: 4 or 8 neighbors."""

    connectivity: int = 8

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")

    def structure(self) -> np.ndarray:
        """3x3 boolean structuring element for scipy.ndimage."""
        if self.connectivity == 4:
            return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        return np.ones((3, 3), dtype=bool)

    def offsets(self) -> list[tuple[int, int]]:
        """Neighbor (dy, dx) offsets in raster order."""
        if self.connectivity == 4:
            return [(-1, 0), (0, -1), (0, 1), (1, 0)]
        return [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> MultiChannelImage:
    """Read an 8-bit RGB/gray or 16-bit gray PNG, scaled to [0, 1] reals."""
    try:
        pil = PILImage.open(path)
        pil.load()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    mode = pil.mode
    if mode == "RGB":
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    elif mode == "L":
        arr = np.asarray(pil, dtype=np.float64)[:, :, np.newaxis] / 255.0
    elif mode in ("I;16", "I;16B", "I"):
        arr = np.asarray(pil, dtype=np.float64)
        if arr.max(initial=0.0) > 65535:
            raise ValueError(f"unsupported bit depth in {path} (mode {mode})")
        arr = arr[:, :, np.newaxis] / 65535.0
    else:
        raise ValueError(f"unsupported PNG format {mode!r} in {path} "
                         "(need 8-bit RGB/gray or 16-bit gray)")
    return MultiChannelImage(arr)


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a binary mask as an 8-bit gray PNG with values {0, 255}."""
    _check_mask(mask)
    PILImage.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Read a binary mask written by :func:`save_mask` (any nonzero is 1)."""
    img = load_image(path)
    if img.channels != 1:
        raise ValueError(f"mask file {path} is not single-channel")
    return img.data[:, :, 0] > 0


def encode_saliency_png(saliency: np.ndarray) -> tuple[bytes, float, float]:
    """Min-max scale a saliency map into 16-bit gray PNG bytes; returns the
    bytes plus the original (min, max) needed to undo the scaling."""
    import io

    sal = np.asarray(saliency, dtype=np.float64)
    if sal.ndim != 2:
        raise ValueError("saliency map must be single-channel 2D")
    lo, hi = float(sal.min()), float(sal.max())
    scaled = np.zeros_like(sal) if hi == lo else (sal - lo) / (hi - lo)
    arr16 = np.round(scaled * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    PILImage.fromarray(arr16).save(buf, format="PNG")
    return buf.getvalue(), lo, hi


def save_saliency(saliency: np.ndarray, path: str | Path) -> None:
    """Write a saliency map as 16-bit gray PNG after min-max scaling.

    A sidecar text file (same name, extension ``.range.txt``) records the
    original min and max so the map round-trips through :func:`load_saliency`.
    """
    png, lo, hi = encode_saliency_png(saliency)
    path = Path(path)
    path.write_bytes(png)
    path.with_suffix(".range.txt").write_text(f"{lo!r} {hi!r}\n")


def load_saliency(path: str | Path) -> np.ndarray:
    """Read a saliency map and undo the recorded min-max scaling."""
    path = Path(path)
    img = load_image(path)
    lo_s, hi_s = path.with_suffix(".range.txt").read_text().split()
    lo, hi = float(lo_s), float(hi_s)
    return img.data[:, :, 0] * (hi - lo) + lo


# ---------------------------------------------------------------------------
# Color conversion
# ---------------------------------------------------------------------------

# sRGB (D65, 2 degree observer). The forward matrix is the inverse of the
# published XYZ -> linear-RGB matrix so that round trips stay consistent.
_XYZ2RGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
_RGB2XYZ = np.linalg.inv(_XYZ2RGB)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(img: MultiChannelImage) -> MultiChannelImage:
    """Convert sRGB in [0, 1] to CIELAB (D65 white point)."""
    if img.channels != 3:
        raise ValueError(f"rgb_to_lab needs 3 channels, got {img.channels}")
    rgb = img.data
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB2XYZ.T
    t = xyz / _WHITE_D65
    delta = 6.0 / 29.0
    f = np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[:, :, 0] = 116.0 * f[:, :, 1] - 16.0
    lab[:, :, 1] = 500.0 * (f[:, :, 0] - f[:, :, 1])
    lab[:, :, 2] = 200.0 * (f[:, :, 1] - f[:, :, 2])
    return MultiChannelImage(lab)


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------

def extract_patch(img: MultiChannelImage, p: tuple[int, int], spec: PatchSpec) -> np.ndarray:
    """Patch vector at pixel p = (x, y): neighbors in raster order, channels
    innermost, out-of-domain neighbors contributing zeros."""
    x, y = p
    if not (0 <= x < img.width and 0 <= y < img.height):
        raise ValueError(f"pixel {p} outside {img.width}x{img.height} domain")
    if spec.channels != img.channels:
        raise ValueError(f"patch spec expects {spec.channels} channels, image has {img.channels}")
    k, d, m = spec.kernel_size, spec.dilation, img.channels
    r = k // 2
    out = np.zeros((k, k, m))
    for i, dy in enumerate(range(-r, r + 1)):
        for j, dx in enumerate(range(-r, r + 1)):
            yy, xx = y + d * dy, x + d * dx
            if 0 <= yy < img.height and 0 <= xx < img.width:
                out[i, j] = img.data[yy, xx]
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# Otsu thresholding
# ---------------------------------------------------------------------------

def otsu_threshold(values: np.ndarray) -> float:
    """Otsu threshold of a real-valued multiset.

    Values are min-max scaled onto 256 histogram bins; the returned
    threshold is the upper edge of the last class-0 bin for the split
    maximizing inter-class variance (lowest maximizing bin on ties).
    Class statistics use the raw values, not bin centers.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size < 2:
        raise ConstantInputError("need at least 2 values")
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        raise ConstantInputError("all values equal; thresholding is degenerate")
    nbins = 256
    idx = np.clip(((vals - lo) / (hi - lo) * nbins).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins).astype(np.float64)
    sums = np.bincount(idx, weights=vals, minlength=nbins)
    n = vals.size
    cum_n = np.cumsum(counts)          # class 0 = bins 0..k
    cum_s = np.cumsum(sums)
    w0 = cum_n / n
    w1 = 1.0 - w0
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = np.where(cum_n > 0, cum_s / cum_n, 0.0)
        mu1 = np.where(n - cum_n > 0, (cum_s[-1] - cum_s) / (n - cum_n), 0.0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(between))        # argmax returns the lowest maximizing index
    return lo + (hi - lo) * (k + 1) / nbins


# ---------------------------------------------------------------------------
# Masks: components, filters, morphology
# ---------------------------------------------------------------------------

def _check_mask(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    if m.dtype != bool:
        u = np.unique(m)
        if not np.isin(u, (0, 1)).all():
            raise ValueError("mask values must be strictly binary")
        m = m.astype(bool)
    return m


def connected_components(mask: np.ndarray, adj: AdjacencySpec = AdjacencySpec()) -> tuple[np.ndarray, np.ndarray]:
    """Label foreground components (labels 1..n) and return per-label areas.

    Returns (labels, areas) where areas[i] is the pixel count of label i+1.
    """
    m = _check_mask(mask)
    labels, n = ndimage.label(m, structure=adj.structure())
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, areas


def area_filter(mask: np.ndarray, min_area: int, max_area: int,
                adj: AdjacencySpec = AdjacencySpec()) -> np.ndarray:
    """Erase components with area outside [min_area, max_area] (inclusive)."""
    if min_area > max_area:
        raise ValueError(f"min_area {min_area} > max_area {max_area}")
    labels, areas = connected_components(mask, adj)
    if len(areas) == 0:
        return _check_mask(mask).copy()
    keep = (areas >= min_area) & (areas <= max_area)
    keep_table = np.concatenate(([False], keep))
    return keep_table[labels]


def remove_frame_components(mask: np.ndarray, adj: AdjacencySpec = AdjacencySpec()) -> np.ndarray:
    """Erase every component that touches the image frame."""
    labels, _ = connected_components(mask, adj)
    frame = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    bad = np.unique(frame[frame > 0])
    out = _check_mask(mask).copy()
    if bad.size:
        out[np.isin(labels, bad)] = False
    return out


def disc_footprint(radius: int) -> np.ndarray:
    """Euclidean disc structuring element: dx^2 + dy^2 <= r^2."""
    r = int(radius)
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    return (ys * ys + xs * xs) <= r * r


def morph(mask: np.ndarray, op: str, radius: int) -> np.ndarray:
    """Binary erosion or dilation with a Euclidean-disc structuring element."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    m = _check_mask(mask)
    fp = disc_footprint(radius)
    if op == "erode":
        return ndimage.binary_erosion(m, structure=fp, border_value=0)
    if op == "dilate":
        return ndimage.binary_dilation(m, structure=fp, border_value=0)
    raise ValueError(f"unknown morphology op {op!r}")


# ---------------------------------------------------------------------------
# Upsampling
# ---------------------------------------------------------------------------

def bilinear_upsample(saliency: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear upsampling of a single-channel map, corners aligned to
    pixel centers. Shrinking is rejected."""
    src = np.asarray(saliency, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError("expected single-channel 2D map")
    h, w = src.shape
    if target_w < w or target_h < h:
        raise ValueError(f"cannot shrink {w}x{h} to {target_w}x{target_h}")
    if (target_w, target_h) == (w, h):
        return src.copy()

    def axis_coords(src_n: int, dst_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if src_n == 1 or dst_n == 1:
            return np.zeros(dst_n, dtype=np.int64), np.zeros(dst_n, dtype=np.int64), np.zeros(dst_n)
        pos = np.arange(dst_n) * (src_n - 1) / (dst_n - 1)
        i0 = np.floor(pos).astype(np.int64)
        i0 = np.minimum(i0, src_n - 2)
        return i0, i0 + 1, pos - i0

    y0, y1, fy = axis_coords(h, target_h)
    x0, x1, fx = axis_coords(w, target_w)
    fy = fy[:, np.newaxis]
    fx = fx[np.newaxis, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy
