"""Marker sets: parsing, canonical serialization, block-domain mapping and
marker-pixel statistics used for normalization.

Canonical marker file (UTF-8 text)::

    FLIM-MARKERS 1
    <image-id> <width> <height>
    <x> <y> <marker-id> <label>
    ...

Coordinates are 0-based, label 1 = foreground, 2 = background. ``#`` starts
a comment. The canonical form orders markers by id and pixels by (y, x);
the annotation UI must emit exactly this form so saved files round-trip
byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgcore import MultiChannelImage

FOREGROUND = 1
BACKGROUND = 2


class MarkerParseError(ValueError):
    """Malformed marker file; carries a 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Marker:
    """A labeled scribble: id unique within its image, pixels as (x, y)."""

    id: int
    label: int
    pixels: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.label not in (FOREGROUND, BACKGROUND):
            raise ValueError(f"marker label must be 1 or 2, got {self.label}")
        if len(self.pixels) < 1:
            raise ValueError(f"marker {self.id} has no pixels")


@dataclass(frozen=True)
class ImageMarkers:
    """All markers of one image plus the image dimensions they refer to."""

    image_id: str
    width: int
    height: int
    markers: tuple[Marker, ...]


@dataclass(frozen=True)
class MarkerSet:
    """Per-image marker lists keyed by image identifier."""

    images: dict[str, ImageMarkers] = field(default_factory=dict)

    def marker_count(self) -> int:
        return sum(len(im.markers) for im in self.images.values())

    def image_ids(self) -> list[str]:
        return sorted(self.images)


@dataclass(frozen=True)
class MarkerStats:
    """Per-channel mean/std over all marker pixels of all training images."""

    mean: np.ndarray
    std: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if (np.asarray(self.std) < 0).any():
            raise ValueError("negative standard deviation")


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------

def parse_markers(text: str) -> MarkerSet:
    """Parse one canonical marker file into a single-image MarkerSet."""
    header = None
    image_line = None
    pixel_rows: list[tuple[int, int, int, int, int]] = []  # (x, y, id, label, lineno)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            if line != "FLIM-MARKERS 1":
                raise MarkerParseError(lineno, f"expected 'FLIM-MARKERS 1' header, got {line!r}")
            header = line
            continue
        if image_line is None:
            parts = line.split()
            if len(parts) != 3:
                raise MarkerParseError(lineno, "expected '<image-id> <width> <height>'")
            try:
                image_line = (parts[0], int(parts[1]), int(parts[2]))
            except ValueError:
                raise MarkerParseError(lineno, f"bad image dimensions in {line!r}") from None
            if image_line[1] < 1 or image_line[2] < 1:
                raise MarkerParseError(lineno, "image dimensions must be positive")
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MarkerParseError(lineno, "expected '<x> <y> <marker-id> <label>'")
        try:
            x, y, mid, label = (int(v) for v in parts)
        except ValueError:
            raise MarkerParseError(lineno, f"non-integer field in {line!r}") from None
        pixel_rows.append((x, y, mid, label, lineno))

    if header is None:
        raise MarkerParseError(1, "empty marker file")
    if image_line is None:
        raise MarkerParseError(1, "missing image line")
    image_id, width, height = image_line

    by_id: dict[int, tuple[int, set[tuple[int, int]]]] = {}
    for x, y, mid, label, lineno in pixel_rows:
        if label not in (FOREGROUND, BACKGROUND):
            raise MarkerParseError(lineno, f"label must be 1 or 2, got {label}")
        if not (0 <= x < width and 0 <= y < height):
            raise MarkerParseError(lineno, f"coordinate ({x},{y}) outside {width}x{height} domain")
        if mid in by_id:
            prev_label, pixels = by_id[mid]
            if prev_label != label:
                raise MarkerParseError(lineno, f"duplicate marker id {mid} with conflicting labels")
            pixels.add((x, y))
        else:
            by_id[mid] = (label, {(x, y)})

    markers = tuple(
        Marker(mid, label, tuple(sorted(pixels, key=lambda p: (p[1], p[0]))))
        for mid, (label, pixels) in sorted(by_id.items())
    )
    return MarkerSet({image_id: ImageMarkers(image_id, width, height, markers)})


def serialize_markers(im: ImageMarkers) -> str:
    """Emit the canonical text form of one image's markers."""
    lines = ["FLIM-MARKERS 1", f"{im.image_id} {im.width} {im.height}"]
    for marker in sorted(im.markers, key=lambda m: m.id):
        for x, y in sorted(marker.pixels, key=lambda p: (p[1], p[0])):
            lines.append(f"{x} {y} {marker.id} {marker.label}")
    return "\n".join(lines) + "\n"


def merge_marker_sets(sets: list[MarkerSet]) -> MarkerSet:
    """Combine single-image sets; image ids must not collide."""
    images: dict[str, ImageMarkers] = {}
    for ms in sets:
        for image_id, im in ms.images.items():
            if image_id in images:
                raise ValueError(f"image id {image_id!r} appears in more than one marker set")
            images[image_id] = im
    return MarkerSet(images)


# ---------------------------------------------------------------------------
# Block-domain mapping and statistics
# ---------------------------------------------------------------------------

def map_markers_to_block(ms: MarkerSet, cumulative_stride: int) -> MarkerSet:
    """Map marker pixels into the domain of a deeper block by floor division
    with the cumulative pooling stride; duplicates collapse."""
    if cumulative_stride < 1:
        raise ValueError(f"stride must be >= 1, got {cumulative_stride}")
    s = cumulative_stride
    if s == 1:
        return ms
    images = {}
    for image_id, im in ms.images.items():
        new_w = -(-im.width // s)
        new_h = -(-im.height // s)
        markers = tuple(
            Marker(m.id, m.label,
                   tuple(sorted({(x // s, y // s) for x, y in m.pixels},
                                key=lambda p: (p[1], p[0]))))
            for m in im.markers
        )
        images[image_id] = ImageMarkers(image_id, new_w, new_h, markers)
    return MarkerSet(images)


def marker_union(im: ImageMarkers) -> list[tuple[int, int]]:
    """Deduplicated union of all marker pixels of one image."""
    pixels = {p for m in im.markers for p in m.pixels}
    return sorted(pixels, key=lambda p: (p[1], p[0]))


def marker_stats(images: dict[str, MultiChannelImage], ms: MarkerSet,
                 epsilon: float = 1e-4) -> MarkerStats:
    """Per-channel mean and population std over the union of marker pixels
    across all images in the set.

    All images must share a channel count and cover the marker coordinates
    (i.e. the set has already been mapped to the images' block domain).
    """
    if not ms.images:
        raise ValueError("empty marker set")
    chunks = []
    channels = None
    for image_id in ms.image_ids():
        im = ms.images[image_id]
        if image_id not in images:
            raise ValueError(f"no image for marker set entry {image_id!r}")
        img = images[image_id]
        if (img.width, img.height) != (im.width, im.height):
            raise ValueError(
                f"image {image_id!r} is {img.width}x{img.height} but markers "
                f"refer to {im.width}x{im.height}")
        if channels is None:
            channels = img.channels
        elif img.channels != channels:
            raise ValueError("images disagree on channel count")
        union = marker_union(im)
        if union:
            xs = np.array([p[0] for p in union])
            ys = np.array([p[1] for p in union])
            chunks.append(img.data[ys, xs, :])
    if not chunks:
        raise ValueError("marker union is empty")
    vals = np.concatenate(chunks, axis=0)
    mean = vals.mean(axis=0)
    var = ((vals - mean) ** 2).mean(axis=0)
    return MarkerStats(mean=mean, std=np.sqrt(var), epsilon=epsilon)
