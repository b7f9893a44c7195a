"""Saliency decoders over encoder feature maps.

Five adaptive heuristics re-estimate tri-state weights {-1, 0, +1} per
image (ts, at, lt) or per pixel (pb, mb). Two fixed-weight decoders
complete the set: lm maps channel labels straight to signs, and bp learns
a real-valued weight vector with Adam on (Dice + BCE)/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgcore import ConstantInputError, MultiChannelImage, otsu_threshold
from .markers import BACKGROUND, FOREGROUND

DECODER_KINDS = ("ts", "at", "lt", "pb", "mb", "lm", "bp")

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class WeightVector:
    """Shared per-channel decoder weights; heuristic kinds are tri-state."""

    values: np.ndarray
    kind: str
    loss_history: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ValueError("weight vector must be 1D")
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        if self.kind in ("ts", "at", "lt", "lm") and not np.isin(self.values, (-1, 0, 1)).all():
            raise ValueError(f"{self.kind} weights must lie in {{-1, 0, +1}}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightVector":
        return cls(values=np.asarray(d["values"], dtype=np.float64), kind=d["kind"])


@dataclass(frozen=True)
class PixelWeightField:
    """One tri-state weight vector per pixel, shape (h, w, m')."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.int8))
        if self.values.ndim != 3:
            raise ValueError("weight field must be (h, w, m')")
        if not np.isin(self.values, (-1, 0, 1)).all():
            raise ValueError("field weights must lie in {-1, 0, +1}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelWeightField":
        return cls(values=np.asarray(d["values"], dtype=np.int8), kind=d["kind"])


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel statistics feeding the tri-state rule."""

    means: np.ndarray            # mean activation per channel
    tau: float                   # Otsu threshold of the mean distribution
    sigma: float                 # population std of the mean distribution
    above_otsu_frac: np.ndarray  # fraction of pixels above each channel's own Otsu


@dataclass(frozen=True)
class AttentionStats:
    """Spatial attention map and per-channel cosine importances."""

    attention: np.ndarray
    importances: np.ndarray
    mean_importance: float
    std_importance: float


@dataclass(frozen=True)
class LocalStats:
    """Label-conditional window statistics at one pixel."""

    mu: dict[int, float]
    var: dict[int, float]
    counts: dict[int, int]
    phi: np.ndarray   # (m', 2): phi[i, j-1] for labels j in {1, 2}


# ---------------------------------------------------------------------------
# Point-wise decoding
# ---------------------------------------------------------------------------

def decode_pointwise(featmap: MultiChannelImage, w: WeightVector) -> np.ndarray:
    """S(p) = max(0, sum_i alpha_i * I_i(p)) on the feature-map domain."""
    if w.values.shape[0] != featmap.channels:
        raise ValueError(f"weight length {w.values.shape[0]} != channels {featmap.channels}")
    # same multiply-reduce shape as decode_pixelwise so a constant field
    # decodes bit-identically to its shared vector
    return np.maximum((featmap.data * w.values).sum(axis=2), 0.0)


def decode_pixelwise(featmap: MultiChannelImage, field: PixelWeightField) -> np.ndarray:
    """Point-wise decoding with a per-pixel weight vector."""
    if field.values.shape != featmap.data.shape:
        raise ValueError(f"field shape {field.values.shape} != map shape {featmap.data.shape}")
    return np.maximum((featmap.data * field.values).sum(axis=2), 0.0)


# ---------------------------------------------------------------------------
# Tri-state (ts) and label-filtered tri-state (lt)
# ---------------------------------------------------------------------------

def channel_stats(featmap: MultiChannelImage) -> ChannelStats:
    """Mean activations, their Otsu threshold and spread, and each
    channel's above-own-Otsu pixel fraction."""
    if featmap.channels < 2:
        raise ValueError("channel statistics need at least 2 channels")
    data = featmap.data
    means = data.mean(axis=(0, 1))
    try:
        tau = otsu_threshold(means)
    except ConstantInputError:
        tau = float(means[0])
    sigma = float(means.std())
    fracs = np.empty(featmap.channels)
    npix = data.shape[0] * data.shape[1]
    for i in range(featmap.channels):
        chan = data[:, :, i]
        try:
            t = otsu_threshold(chan.ravel())
            fracs[i] = float((chan > t).sum()) / npix
        except ConstantInputError:
            fracs[i] = 0.0   # constant channel: no pixel exceeds any threshold
    return ChannelStats(means=means, tau=tau, sigma=sigma, above_otsu_frac=fracs)


def weights_ts(stats: ChannelStats, high_frac: float = 0.2,
               low_frac: float = 0.1) -> WeightVector:
    """Tri-state rule: -1 for background-looking channels (high mean, many
    bright pixels), +1 for object-looking ones, 0 otherwise."""
    minus = (stats.means >= stats.tau + stats.sigma) & (stats.above_otsu_frac > high_frac)
    plus = (stats.means <= stats.tau - stats.sigma) & (stats.above_otsu_frac < low_frac)
    values = np.where(minus, -1.0, np.where(plus, 1.0, 0.0))
    return WeightVector(values=values, kind="ts")


def weights_lt(featmap: MultiChannelImage, labels: np.ndarray,
               high_frac: float = 0.2, low_frac: float = 0.1) -> WeightVector:
    """Tri-state weights with background-labeled channels zeroed out."""
    labels = _check_labels(labels, featmap.channels)
    ts = weights_ts(channel_stats(featmap), high_frac, low_frac)
    values = np.where(labels == BACKGROUND, 0.0, ts.values)
    return WeightVector(values=values, kind="lt")


def _check_labels(labels, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (m,):
        raise ValueError(f"labels must have length {m}")
    if not np.isin(labels, (FOREGROUND, BACKGROUND)).all():
        raise ValueError("labels must lie in {1, 2}")
    return labels


# ---------------------------------------------------------------------------
# Attention-based (at)
# ---------------------------------------------------------------------------

def _scale01(arr: np.ndarray) -> np.ndarray:
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr)   # degenerate scaling is all zeros
    return (arr - lo) / (hi - lo)


def attention_stats(featmap: MultiChannelImage) -> AttentionStats:
    """Spatial attention from scaled cross-channel max+mean maps and the
    cosine of each channel against it."""
    if featmap.channels < 2:
        raise ValueError("attention needs at least 2 channels")
    data = featmap.data
    x = _scale01(data.max(axis=2))
    y = _scale01(data.mean(axis=2))
    attention = _scale01(x + y)
    a = attention.ravel()
    a_norm = np.linalg.norm(a)
    m = featmap.channels
    cs = np.zeros(m)
    for i in range(m):
        b = data[:, :, i].ravel()
        b_norm = np.linalg.norm(b)
        if a_norm > 0 and b_norm > 0:
            cs[i] = float(a @ b) / (a_norm * b_norm)
    return AttentionStats(attention=attention, importances=cs,
                          mean_importance=float(cs.mean()), std_importance=float(cs.std()))


def weights_at(featmap: MultiChannelImage) -> WeightVector:
    """+1 for channels whose cosine to the attention map is low, -1 when
    high; the half-sigma band around the mean maps to 0."""
    st = attention_stats(featmap)
    lo = st.mean_importance - st.std_importance / 2.0
    hi = st.mean_importance + st.std_importance / 2.0
    values = np.where(st.importances < lo, 1.0, np.where(st.importances > hi, -1.0, 0.0))
    return WeightVector(values=values, kind="at")


# ---------------------------------------------------------------------------
# Per-pixel decoders (pb, mb)
# ---------------------------------------------------------------------------

def _window_sum(arr: np.ndarray, radius: int) -> np.ndarray:
    """Sum of a (2r+1)^2 window at every pixel; out-of-domain excluded."""
    h, w = arr.shape
    xp = np.pad(arr, radius)
    out = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            out += xp[radius + dy: radius + dy + h, radius + dx: radius + dx + w]
    return out


def _label_window_stats(featmap: MultiChannelImage, labels: np.ndarray,
                        radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel label-conditional mean and variance over the window.

    Returns (mu, var, counts), each indexed [..., j] for labels j+1.
    """
    labels = _check_labels(labels, featmap.channels)
    if radius < 1:
        raise ValueError(f"neighborhood radius must be >= 1, got {radius}")
    data = featmap.data
    h, w, _ = data.shape
    in_window = _window_sum(np.ones((h, w)), radius)
    mu = np.empty((h, w, 2))
    var = np.empty((h, w, 2))
    counts = np.empty((h, w, 2))
    for j, label in enumerate((FOREGROUND, BACKGROUND)):
        sel = labels == label
        if not sel.any():
            raise ValueError(f"no channels with label {label}")
        group = data[:, :, sel]
        s1 = _window_sum(group.sum(axis=2), radius)
        s2 = _window_sum((group ** 2).sum(axis=2), radius)
        n = in_window * int(sel.sum())
        mu[:, :, j] = s1 / n
        var[:, :, j] = np.maximum(s2 / n - mu[:, :, j] ** 2, 0.0)
        counts[:, :, j] = n
    return mu, var, counts


def local_stats(featmap: MultiChannelImage, labels: np.ndarray, p: tuple[int, int],
                radius: int = 1) -> LocalStats:
    """Label-conditional window statistics and likelihoods at pixel p."""
    x, y = p
    if not (0 <= x < featmap.width and 0 <= y < featmap.height):
        raise ValueError(f"pixel {p} outside domain")
    mu, var, counts = _label_window_stats(featmap, labels, radius)
    var_f = np.maximum(var[y, x], VARIANCE_FLOOR)
    acts = featmap.data[y, x, :]
    phi = np.exp(-((acts[:, None] - mu[y, x][None, :]) ** 2) / (2.0 * var_f[None, :]))
    return LocalStats(
        mu={1: float(mu[y, x, 0]), 2: float(mu[y, x, 1])},
        var={1: float(var[y, x, 0]), 2: float(var[y, x, 1])},
        counts={1: int(counts[y, x, 0]), 2: int(counts[y, x, 1])},
        phi=phi,
    )


def weights_pb(featmap: MultiChannelImage, labels: np.ndarray,
               radius: int = 1) -> PixelWeightField:
    """Probability-based field: a channel votes with its label's sign when
    the pixel's activation is likelier under that label's local statistics."""
    labels = _check_labels(labels, featmap.channels)
    mu, var, _ = _label_window_stats(featmap, labels, radius)
    var = np.maximum(var, VARIANCE_FLOOR)
    data = featmap.data
    # phi[..., i, j] = exp(-(I_i - mu_j)^2 / (2 var_j))
    dev = data[:, :, :, None] - mu[:, :, None, :]
    phi = np.exp(-(dev ** 2) / (2.0 * var[:, :, None, :]))
    fg_likelier = phi[:, :, :, 0] > phi[:, :, :, 1]
    bg_likelier = phi[:, :, :, 0] < phi[:, :, :, 1]
    values = np.zeros(data.shape, dtype=np.int8)
    values[fg_likelier & (labels == FOREGROUND)[None, None, :]] = 1
    values[bg_likelier & (labels == BACKGROUND)[None, None, :]] = -1
    return PixelWeightField(values=values, kind="pb")


def weights_mb(featmap: MultiChannelImage, labels: np.ndarray,
               radius: int = 1) -> PixelWeightField:
    """Mean-based simplification of pb: compare the two label means only."""
    labels = _check_labels(labels, featmap.channels)
    mu, _, _ = _label_window_stats(featmap, labels, radius)
    fg_higher = mu[:, :, 0] > mu[:, :, 1]
    bg_higher = mu[:, :, 0] < mu[:, :, 1]
    values = np.zeros(featmap.data.shape, dtype=np.int8)
    values[fg_higher[:, :, None] & (labels == FOREGROUND)[None, None, :]] = 1
    values[bg_higher[:, :, None] & (labels == BACKGROUND)[None, None, :]] = -1
    return PixelWeightField(values=values, kind="mb")


# ---------------------------------------------------------------------------
# Label-based fixed decoder (lm)
# ---------------------------------------------------------------------------

def weights_lm(labels: np.ndarray) -> WeightVector:
    """+1 for foreground-labeled channels, -1 for background-labeled ones."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size < 1:
        raise ValueError("labels must be a non-empty 1D array")
    labels = _check_labels(labels, labels.size)
    values = np.where(labels == FOREGROUND, 1.0, -1.0)
    return WeightVector(values=values, kind="lm")


# ---------------------------------------------------------------------------
# Backpropagation-trained point-wise decoder (bp)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BpHyper:
    learning_rate: float = 0.01
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def nearest_downsample_mask(mask: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbor downsampling of a ground-truth mask."""
    mask = np.asarray(mask)
    h, w = mask.shape
    ys = np.minimum((np.arange(target_h) + 0.5) * h / target_h, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(target_w) + 0.5) * w / target_w, w - 1).astype(np.int64)
    return mask[np.ix_(ys, xs)]


def bp_loss_and_grad(alpha: np.ndarray, feats: list[np.ndarray],
                     gts: list[np.ndarray]) -> tuple[float, np.ndarray]:
    """Mean over images of (Dice loss + BCE)/2 for a sigmoid point-wise
    head, with its analytic gradient w.r.t. alpha.

    ``feats[i]`` is (n_pixels, m'), ``gts[i]`` is (n_pixels,) in {0, 1}.
    Dice uses smoothing constant 1 in numerator and denominator.
    """
    total_loss = 0.0
    grad = np.zeros_like(alpha)
    n_images = len(feats)
    for feat, gt in zip(feats, gts):
        z = feat @ alpha
        yhat = _sigmoid(z)
        npix = gt.shape[0]

        bce = float(np.mean(_softplus(z) - gt * z))
        d_bce_dz = (yhat - gt) / npix

        inter = float(yhat @ gt)
        denom = float(yhat.sum() + gt.sum()) + 1.0
        dice_loss = 1.0 - (2.0 * inter + 1.0) / denom
        d_dice_dy = -(2.0 * gt * denom - (2.0 * inter + 1.0)) / denom ** 2
        d_dice_dz = d_dice_dy * yhat * (1.0 - yhat)

        total_loss += (dice_loss + bce) / 2.0
        grad += feat.T @ ((d_bce_dz + d_dice_dz) / 2.0)
    return total_loss / n_images, grad / n_images


def xavier_init(m: int, rng: np.random.Generator) -> np.ndarray:
    """Xavier uniform for a single output unit: U(+-sqrt(6/(m+1)))."""
    limit = np.sqrt(6.0 / (m + 1))
    return rng.uniform(-limit, limit, size=m)


def train_bp_decoder(featmaps: list[MultiChannelImage], gts: list[np.ndarray],
                     hyper: BpHyper = BpHyper()) -> WeightVector:
    """Full-batch Adam on the (Dice + BCE)/2 loss for exactly
    ``hyper.epochs`` steps; ground truths are nearest-neighbor downsampled
    to each feature map's domain. Deterministic given the seed."""
    if not featmaps:
        raise ValueError("empty training set")
    if len(featmaps) != len(gts):
        raise ValueError("featmaps and ground truths disagree in length")
    m = featmaps[0].channels
    feats = []
    targets = []
    for fm, gt in zip(featmaps, gts):
        if fm.channels != m:
            raise ValueError("feature maps disagree on channel count")
        gt_small = nearest_downsample_mask(gt, fm.height, fm.width)
        feats.append(fm.data.reshape(-1, m))
        targets.append(gt_small.astype(np.float64).reshape(-1))

    rng = np.random.default_rng(hyper.seed)
    alpha = xavier_init(m, rng)
    mom = np.zeros(m)
    vel = np.zeros(m)
    history = []
    for t in range(1, hyper.epochs + 1):
        loss, grad = bp_loss_and_grad(alpha, feats, targets)
        history.append(loss)
        mom = hyper.beta1 * mom + (1 - hyper.beta1) * grad
        vel = hyper.beta2 * vel + (1 - hyper.beta2) * grad ** 2
        m_hat = mom / (1 - hyper.beta1 ** t)
        v_hat = vel / (1 - hyper.beta2 ** t)
        alpha = alpha - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.adam_eps)
    final_loss, _ = bp_loss_and_grad(alpha, feats, targets)
    history.append(final_loss)
    return WeightVector(values=alpha, kind="bp", loss_history=tuple(history))


def decode_bp(featmap: MultiChannelImage, w: WeightVector) -> np.ndarray:
    """Sigmoid head used both in training and at inference for bp."""
    if w.values.shape[0] != featmap.channels:
        raise ValueError(f"weight length {w.values.shape[0]} != channels {featmap.channels}")
    return _sigmoid(featmap.data @ w.values)
