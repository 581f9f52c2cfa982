"""Build three-channel images from time-frequency analyses.

Channel assignment is fixed and recorded here once: channel 0 holds
the per-segment scalogram, channel 1 the full-recording scalogram,
channel 2 the full-recording PSD rasterized by width replication so
its frequency axis lines up with the scalogram rows (top row = highest
frequency). Each channel is log1p-compressed by default, resampled,
and min-max normalized per image; a constant channel maps to flat 0.5
instead of dividing by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .timefreq import PsdEstimate, Scalogram

__all__ = [
    "ChannelRaster", "EncodedImage", "Provenance",
    "rasterize_scalogram", "rasterize_psd", "compose_rgb",
    "write_png", "read_png", "resize_bilinear",
]

CHANNEL_ROLES = ("segment_scalogram", "full_scalogram", "full_psd")


@dataclass(frozen=True)
class Provenance:
    """Where an encoded image came from."""

    subject_id: str
    segment_index: int
    label: int | None = None


@dataclass(frozen=True)
class ChannelRaster:
    """A single normalized [0,1] image plane."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("ChannelRaster: matrix must be 2-d")
        if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
            raise ValueError("ChannelRaster: values must be finite in [0,1]")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class EncodedImage:
    """An (h, w, 3) float image in [0,1] plus its origin."""

    pixels: np.ndarray
    provenance: Provenance | None = None

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("EncodedImage: pixels must be (h, w, 3)")
        if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise ValueError("EncodedImage: pixels must be finite in [0,1]")
        object.__setattr__(self, "pixels", p)


def resize_bilinear(m: np.ndarray, h: int, w: int) -> np.ndarray:
    """Separable bilinear resample with corner-aligned coordinates.

    Output pixel (r, c) samples the source at r*(H-1)/(h-1) so row
    positions map proportionally (the property the ridge-position test
    leans on). A 1-pixel output axis samples the source midpoint.
    """
    src_h, src_w = m.shape

    def axis_coords(n_out, n_in):
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.linspace(0.0, n_in - 1, n_out)

    rs = axis_coords(h, src_h)
    cs = axis_coords(w, src_w)
    r0 = np.floor(rs).astype(int)
    c0 = np.floor(cs).astype(int)
    r1 = np.minimum(r0 + 1, src_h - 1)
    c1 = np.minimum(c0 + 1, src_w - 1)
    wr = (rs - r0)[:, None]
    wc = (cs - c0)[None, :]
    top = (1 - wc) * m[np.ix_(r0, c0)] + wc * m[np.ix_(r0, c1)]
    bot = (1 - wc) * m[np.ix_(r1, c0)] + wc * m[np.ix_(r1, c1)]
    return (1 - wr) * top + wr * bot


def _resize_nearest(m: np.ndarray, h: int, w: int) -> np.ndarray:
    src_h, src_w = m.shape
    rs = np.full(1, (src_h - 1) / 2.0) if h == 1 else np.linspace(0, src_h - 1, h)
    cs = np.full(1, (src_w - 1) / 2.0) if w == 1 else np.linspace(0, src_w - 1, w)
    return m[np.ix_(np.round(rs).astype(int), np.round(cs).astype(int))]


def _resize(m, h, w, resample):
    if resample == "bilinear":
        return resize_bilinear(m, h, w)
    if resample == "nearest":
        return _resize_nearest(m, h, w)
    raise ValueError(f"unknown resample mode '{resample}'")


def _normalize(m: np.ndarray) -> np.ndarray:
    """Min-max to [0,1]; a degenerate (constant) plane becomes flat 0.5."""
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.full_like(m, 0.5)
    return (m - lo) / (hi - lo)


def rasterize_scalogram(sg: Scalogram, h: int, w: int, log_scale: bool = True,
                        resample: str = "bilinear") -> ChannelRaster:
    """Scale-by-time magnitude matrix to one normalized image plane."""
    m = sg.magnitudes
    if m.size == 0:
        raise ValueError("rasterize_scalogram: empty scalogram")
    if m.max() == m.min():
        return ChannelRaster(np.full((h, w), 0.5))
    if log_scale:
        m = np.log1p(m)
    return ChannelRaster(_normalize(_resize(m, h, w, resample)))


def rasterize_psd(psd: PsdEstimate, h: int, w: int, log_scale: bool = True,
                  resample: str = "bilinear") -> ChannelRaster:
    """Log-power curve to h frequency rows replicated across w columns.

    Rows run from highest frequency at the top to lowest at the bottom,
    matching scalogram row order.
    """
    p = psd.power
    if p.size == 0:
        raise ValueError("rasterize_psd: empty estimate")
    if p.max() == p.min():
        return ChannelRaster(np.full((h, w), 0.5))
    curve = np.log1p(p) if log_scale else p
    curve = curve[::-1]                                    # top row = Nyquist
    col = _resize(curve[:, None], h, 1, resample)
    return ChannelRaster(_normalize(np.repeat(col, w, axis=1)))


def compose_rgb(segment_sg: Scalogram, full_sg: Scalogram,
                full_psd: PsdEstimate, h: int, w: int,
                log_scale: bool = True, resample: str = "bilinear",
                provenance: Provenance | None = None) -> EncodedImage:
    """Stack the three channel rasters for one segment.

    Channels 1 and 2 depend only on the full recording, so every
    segment of the same recording shares them bit for bit. Inputs
    carrying source ids must agree on them.
    """
    ids = {s for s in (segment_sg.source_id, full_sg.source_id,
                       full_psd.source_id) if s is not None}
    if len(ids) > 1:
        raise ValueError(f"compose_rgb: inputs from different recordings: "
                         f"{sorted(ids)}")
    planes = (
        rasterize_scalogram(segment_sg, h, w, log_scale, resample),
        rasterize_scalogram(full_sg, h, w, log_scale, resample),
        rasterize_psd(full_psd, h, w, log_scale, resample),
    )
    return EncodedImage(np.stack([p.matrix for p in planes], axis=-1),
                        provenance=provenance)


def write_png(img: EncodedImage, path) -> None:
    """Quantize to 8-bit RGB and write a PNG."""
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    try:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise OSError(f"write_png: cannot write '{path}': {e}") from e


def read_png(path, provenance: Provenance | None = None) -> EncodedImage:
    """Read an 8-bit RGB PNG back into a [0,1] float image."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise OSError(f"read_png: cannot read '{path}': {e}") from e
    return EncodedImage(arr / 255.0, provenance=provenance)
