"""Frozen feature extraction standing in for pre-trained backbones.

The builtin extractor is a seeded stack of 3x3 same-padding convolutions,
each followed by ReLU and 2x2 average pooling. Weights are drawn once from
a He-scaled normal and never change, so extraction is a fixed function of
the input. Externally computed feature tensors (from real backbones) enter
through the `.ft` file format instead.

Feature tensors are 4-D float32 arrays laid out (batch, height, width,
channels), row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

FEATURE_MAGIC = b"FT01"
_MAX_ELEMENTS = 1 << 40  # caps dim products so corrupt headers cannot overflow


@dataclass(frozen=True)
class ExtractorSpec:
    """Extractor layout: input size, per-stage channels, weight seed.

    kind "builtin" runs the seeded conv stack; "imported" marks tensors
    computed by an external backbone and carried in through `.ft` files.
    """

    input_size: tuple[int, int] = (128, 128)
    stage_channels: tuple[int, ...] = (8, 16, 32, 64)
    weight_seed: int = 0
    kind: str = "builtin"

    def __post_init__(self) -> None:
        if self.kind not in ("builtin", "imported"):
            raise InvalidArgumentError(f"unknown extractor kind {self.kind!r}")
        if self.kind != "builtin":
            return
        if not self.stage_channels:
            raise InvalidArgumentError("a builtin extractor needs at least one stage")
        w, h = self.input_size
        factor = 2 ** len(self.stage_channels)
        if w % factor or h % factor:
            raise InvalidArgumentError(
                f"input size {w}x{h} must be divisible by 2^{len(self.stage_channels)}"
            )

    @property
    def output_dims(self) -> tuple[int, int, int]:
        """(height, width, channels) of the final stage for one sample."""
        w, h = self.input_size
        factor = 2 ** len(self.stage_channels)
        return h // factor, w // factor, self.stage_channels[-1]


class Extractor:
    """Frozen convolutional stack built from an ExtractorSpec."""

    def __init__(self, spec: ExtractorSpec):
        if spec.kind != "builtin":
            raise InvalidArgumentError(
                "imported feature tensors come from read_features, not an Extractor"
            )
        self.spec = spec
        rng = np.random.default_rng(spec.weight_seed)
        self.stages: list[tuple[np.ndarray, np.ndarray]] = []
        in_ch = 1
        for out_ch in spec.stage_channels:
            fan_in = 3 * 3 * in_ch
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(3, 3, in_ch, out_ch))
            w = w.astype(np.float32)
            b = np.zeros(out_ch, dtype=np.float32)
            w.flags.writeable = False  # transfer-learning freeze
            b.flags.writeable = False
            self.stages.append((w, b))
            in_ch = out_ch


def conv2d_valid_same(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padding cross-correlation, stride 1, per-output-channel bias.

    x is (batch, h, w, c_in); kernels are (kh, kw, c_in, c_out). The caller
    applies any nonlinearity.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if x.ndim != 4 or kernels.ndim != 4:
        raise InvalidArgumentError(
            f"need 4-D input and kernels, got {x.shape} and {kernels.shape}"
        )
    kh, kw, c_in, c_out = kernels.shape
    if x.shape[3] != c_in:
        raise InvalidArgumentError(
            f"kernel expects {c_in} input channels, input has {x.shape[3]}"
        )
    if bias.shape != (c_out,):
        raise InvalidArgumentError(f"bias shape {bias.shape} does not match {c_out} channels")
    n, h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    # windows: (n, h, w, c_in, kh, kw) -> columns (n*h*w, kh*kw*c_in)
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c_in)
    mat = kernels.reshape(kh * kw * c_in, c_out)
    out = cols @ mat
    out += bias
    return out.reshape(n, h, w, c_out)


def avg_pool_2x2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling, stride 2; spatial dims must be even."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise InvalidArgumentError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


_EXTRACT_CHUNK = 64  # fixed so chunking never affects results run to run


def extract(images, extractor: Extractor | ExtractorSpec) -> np.ndarray:
    """Run the frozen stack over a batch of 2-D images.

    Images must already be resized to the extractor input size. Returns the
    final 4-D float32 stage tensor (batch, height, width, channels).
    """
    if isinstance(extractor, ExtractorSpec):
        extractor = Extractor(extractor)
    spec = extractor.spec
    w_in, h_in = spec.input_size
    batch = [np.asarray(img, dtype=np.float32) for img in images]
    for img in batch:
        if img.shape != (h_in, w_in):
            raise InvalidArgumentError(
                f"extractor expects {h_in}x{w_in} input, got {img.shape}"
            )
    if not batch:
        oh, ow, oc = spec.output_dims
        return np.zeros((0, oh, ow, oc), dtype=np.float32)
    stacked = np.stack(batch)[..., None]  # (n, h, w, 1)
    outs = []
    for start in range(0, stacked.shape[0], _EXTRACT_CHUNK):
        x = stacked[start : start + _EXTRACT_CHUNK]
        for w, b in extractor.stages:
            x = conv2d_valid_same(x, w, b)
            np.maximum(x, 0.0, out=x)
            x = avg_pool_2x2(x)
        outs.append(x.astype(np.float32))
    return np.concatenate(outs, axis=0)


def flatten(t: np.ndarray) -> np.ndarray:
    """Row-major flatten of (height, width, channels) per sample."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise InvalidArgumentError(f"expected a 4-D tensor, got shape {t.shape}")
    return t.reshape(t.shape[0], -1)


def unflatten(mat: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of flatten for a known (height, width, channels)."""
    mat = np.asarray(mat)
    h, w, c = dims
    if mat.ndim != 2 or mat.shape[1] != h * w * c:
        raise InvalidArgumentError(f"matrix shape {mat.shape} does not match dims {dims}")
    return mat.reshape(mat.shape[0], h, w, c)


def write_features(t: np.ndarray, path) -> None:
    """Serialize a 4-D tensor as little-endian float32 with an FT01 header."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise InvalidArgumentError(f"feature tensors are 4-D, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("feature tensor contains non-finite values")
    header = FEATURE_MAGIC + struct.pack("<I", 4) + struct.pack("<4I", *t.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(t, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Read an FT01 feature file back into a float32 tensor.

    Raises FormatError naming the byte offset of the first problem.
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header at offset 0")
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated dim count at offset 4")
    (ndims,) = struct.unpack_from("<I", data, 4)
    if ndims != 4:
        raise FormatError(f"{path}: dim count must be 4, got {ndims}, at offset 4")
    if len(data) < 24:
        raise FormatError(f"{path}: truncated dims at offset 8")
    dims = struct.unpack_from("<4I", data, 8)
    count = 1
    for d in dims:
        count *= int(d)
    if count > _MAX_ELEMENTS:
        raise FormatError(f"{path}: dim overflow {dims} at offset 8")
    expected = 24 + 4 * count
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected - 24} bytes, "
            f"got {len(data) - 24}, at offset 24"
        )
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes at offset {expected}")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=24)
    return flat.reshape(dims).astype(np.float32)
