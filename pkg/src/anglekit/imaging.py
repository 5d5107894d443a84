"""Grayscale raster operations: ingestion, normalization, CLAHE, rotation, resizing.

An image is a 2-D float64 array, rows = y (top to bottom), cols = x.
After min-max normalization every value lives in [0, 1]. File I/O speaks
8-bit grayscale PNG and binary PGM (P5, maxval 255).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, InvalidArgumentError

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _require_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidArgumentError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    return arr


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG or binary PGM, scaling pixels by 1/255."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {p}: {exc}") from exc
    if data[:2] == b"P5":
        arr8 = _parse_pgm(data, p)
    elif data[:8] == _PNG_MAGIC:
        arr8 = _parse_png(data, p)
    else:
        raise IngestionError(f"{p}: unsupported format (want 8-bit grayscale PNG or P5 PGM)")
    return arr8.astype(np.float64) / 255.0


def save_image(img, path) -> None:
    """Write an image in [0, 1] as 8-bit PGM (.pgm) or grayscale PNG (.png)."""
    arr = _require_image(img)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("image contains non-finite pixels")
    arr8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".pgm":
        h, w = arr8.shape
        p.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr8.tobytes())
    elif suffix == ".png":
        Image.fromarray(arr8, mode="L").save(p, format="PNG")
    else:
        raise InvalidArgumentError(f"unsupported output extension {suffix!r} (want .pgm or .png)")


def encode_png(img) -> bytes:
    """Encode an image in [0, 1] as 8-bit grayscale PNG bytes."""
    arr = _require_image(img)
    arr8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _parse_pgm(data: bytes, p: Path) -> np.ndarray:
    pos = 0
    n = len(data)
    tokens: list[bytes] = []
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{p}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{p}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise IngestionError(f"{p}: non-numeric PGM header field") from exc
    if w < 1 or h < 1:
        raise IngestionError(f"{p}: bad PGM dimensions {w}x{h}")
    if maxval != 255:
        raise IngestionError(f"{p}: unsupported PGM maxval {maxval} (want 8-bit, 255)")
    if pos >= n or not data[pos : pos + 1].isspace():
        raise IngestionError(f"{p}: truncated PGM header")
    pos += 1
    payload = data[pos : pos + w * h]
    if len(payload) < w * h:
        raise IngestionError(f"{p}: truncated PGM payload ({len(payload)} of {w * h} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def _parse_png(data: bytes, p: Path) -> np.ndarray:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"{p}: unreadable PNG: {exc}") from exc
    if im.mode in ("RGB", "RGBA", "P", "LA", "CMYK", "YCbCr"):
        raise IngestionError(f"{p}: color image (mode {im.mode}), want 8-bit grayscale")
    if im.mode != "L":
        raise IngestionError(f"{p}: unsupported PNG mode {im.mode}, want 8-bit grayscale")
    return np.asarray(im, dtype=np.uint8)


def normalize_minmax(img) -> np.ndarray:
    """Rescale pixels to span [0, 1]; a constant image maps to all zeros."""
    arr = _require_image(img)
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def clahe(img, tiles: tuple[int, int] = (8, 8), clip_limit: float = 0.01, bins: int = 256) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    The image is divided into a tiles[0] x tiles[1] grid. Each tile's
    histogram (over `bins` gray levels) is clipped at clip_limit * tile
    pixel count, the excess is redistributed uniformly, and the clipped CDF
    becomes the tile's gray-level mapping. Every output pixel blends the
    four surrounding tile mappings bilinearly. With a single tile and
    clip_limit = 1 this reduces to plain global histogram equalization.
    """
    arr = _require_image(img)
    tr, tc = int(tiles[0]), int(tiles[1])
    if tr < 1 or tc < 1:
        raise InvalidArgumentError(f"tile grid must be at least (1, 1), got ({tr}, {tc})")
    h, w = arr.shape
    if tr > h or tc > w:
        raise InvalidArgumentError(f"tile grid ({tr}, {tc}) larger than image ({h}, {w})")
    if not 0 < clip_limit <= 1:
        raise InvalidArgumentError(f"clip_limit must be in (0, 1], got {clip_limit}")
    bins = int(bins)
    if bins < 2:
        raise InvalidArgumentError(f"bins must be at least 2, got {bins}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgumentError("input must be normalized to [0, 1] before CLAHE")

    q = np.minimum((arr * bins).astype(np.int64), bins - 1)
    luts, row_edges, col_edges = _clahe_luts(q, (tr, tc), clip_limit, bins)

    centers_y = (row_edges[:-1] + row_edges[1:] - 1) / 2.0
    centers_x = (col_edges[:-1] + col_edges[1:] - 1) / 2.0
    iy0, wy = _blend_coords(np.arange(h, dtype=np.float64), centers_y)
    ix0, wx = _blend_coords(np.arange(w, dtype=np.float64), centers_x)
    iy1 = np.minimum(iy0 + 1, tr - 1)
    ix1 = np.minimum(ix0 + 1, tc - 1)

    IY0, IY1, WY = iy0[:, None], iy1[:, None], wy[:, None]
    IX0, IX1, WX = ix0[None, :], ix1[None, :], wx[None, :]
    # Nested lerps keep the blend an exact partition of unity, so a
    # constant image stays exactly constant.
    top = _lerp(luts[IY0, IX0, q], luts[IY0, IX1, q], WX)
    bot = _lerp(luts[IY1, IX0, q], luts[IY1, IX1, q], WX)
    return _lerp(top, bot, WY)


def _lerp(a, b, t):
    return a + t * (b - a)


def _clahe_luts(q: np.ndarray, tiles: tuple[int, int], clip_limit: float, bins: int):
    """Per-tile clipped-CDF gray-level mappings over a quantized image."""
    h, w = q.shape
    tr, tc = tiles
    row_edges = (np.arange(tr + 1) * h) // tr
    col_edges = (np.arange(tc + 1) * w) // tc
    luts = np.empty((tr, tc, bins), dtype=np.float64)
    for i in range(tr):
        for j in range(tc):
            tile = q[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            limit = clip_limit * tile.size
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / bins
            # redistribution keeps the total at tile.size up to float error;
            # the CDF mathematically ends at exactly 1
            luts[i, j] = np.minimum(np.cumsum(hist) / tile.size, 1.0)
    return luts, row_edges, col_edges


def _blend_coords(coords: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left tile index and fractional weight toward the next tile center."""
    k = len(centers)
    if k == 1:
        return np.zeros(len(coords), dtype=np.int64), np.zeros(len(coords))
    idx = np.clip(np.searchsorted(centers, coords, side="right") - 1, 0, k - 2)
    t = (coords - centers[idx]) / (centers[idx + 1] - centers[idx])
    return idx, np.clip(t, 0.0, 1.0)


def blended_lut_at(img, y: int, x: int, tiles=(8, 8), clip_limit=0.01, bins=256) -> np.ndarray:
    """The effective gray-level mapping CLAHE applies at one pixel location.

    Exposed for verification: the blend of tile CDFs must be monotone in
    the input gray level.
    """
    arr = _require_image(img)
    h, w = arr.shape
    tr, tc = int(tiles[0]), int(tiles[1])
    q = np.minimum((arr * bins).astype(np.int64), bins - 1)
    luts, row_edges, col_edges = _clahe_luts(q, (tr, tc), clip_limit, bins)
    centers_y = (row_edges[:-1] + row_edges[1:] - 1) / 2.0
    centers_x = (col_edges[:-1] + col_edges[1:] - 1) / 2.0
    iy0, wy = _blend_coords(np.asarray([float(y)]), centers_y)
    ix0, wx = _blend_coords(np.asarray([float(x)]), centers_x)
    iy1 = min(int(iy0[0]) + 1, tr - 1)
    ix1 = min(int(ix0[0]) + 1, tc - 1)
    ty, tx = float(wy[0]), float(wx[0])
    top = _lerp(luts[iy0[0], ix0[0]], luts[iy0[0], ix1], tx)
    bot = _lerp(luts[iy1, ix0[0]], luts[iy1, ix1], tx)
    return _lerp(top, bot, ty)


def rotate(img, rho_deg: float, fill: float = 0.0, interp: str = "bilinear") -> np.ndarray:
    """Rotate about the image center, keeping the output size.

    The direction is fixed by the label contract: a line structure at
    orientation theta appears at wrap_angle(theta + rho_deg) in the output.
    Source samples falling outside the input take `fill`. interp is
    "bilinear" (default) or "nearest" (exact index permutation for
    multiples of 90, used by verification).
    """
    arr = _require_image(img)
    if not math.isfinite(rho_deg) or not -180.0 <= rho_deg <= 180.0:
        raise InvalidArgumentError(f"rotation must be within [-180, 180], got {rho_deg!r}")
    if interp not in ("bilinear", "nearest"):
        raise InvalidArgumentError(f"unknown interpolation {interp!r}")
    h, w = arr.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    r = math.radians(rho_deg)
    cos_r, sin_r = math.cos(r), math.sin(r)
    xo = np.arange(w, dtype=np.float64) - cx
    yo = np.arange(h, dtype=np.float64) - cy
    # Inverse map of the content transform that adds rho to line orientations.
    xs = cx + cos_r * xo[None, :] - sin_r * yo[:, None]
    ys = cy + sin_r * xo[None, :] + cos_r * yo[:, None]
    if interp == "nearest":
        xi = np.rint(xs).astype(np.int64)
        yi = np.rint(ys).astype(np.int64)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.full((h, w), float(fill))
        out[valid] = arr[yi[valid], xi[valid]]
        return out
    return _sample_bilinear(arr, xs, ys, float(fill))


def _sample_bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float) -> np.ndarray:
    h, w = arr.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(valid, arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], fill)
            out += wgt * vals
    return out


def resize_bilinear(img, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample to out_w x out_h using pixel-center alignment."""
    arr = _require_image(img)
    if out_w < 1 or out_h < 1:
        raise InvalidArgumentError(f"target dimensions must be positive, got {out_w}x{out_h}")
    h, w = arr.shape
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    grid_x = np.broadcast_to(xs[None, :], (out_h, out_w))
    grid_y = np.broadcast_to(ys[:, None], (out_h, out_w))
    return _sample_bilinear(arr, grid_x, grid_y, 0.0)


@dataclass(frozen=True)
class PreprocessConfig:
    """Normalization plus CLAHE settings applied before feature extraction."""

    clahe_tiles: tuple[int, int] = (8, 8)
    clip_limit: float = 0.01
    bins: int = 256
    apply_clahe: bool = True


def preprocess(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Min-max normalize, then apply CLAHE; rotation happens upstream."""
    out = normalize_minmax(img)
    if cfg.apply_clahe:
        out = clahe(out, cfg.clahe_tiles, cfg.clip_limit, cfg.bins)
    return out
