"""Dataset manifests, train/test splitting, rotation augmentation, and a
synthetic vessel generator with analytically known angles.

Augmentation carries labels along: rotating an image by rho moves a line
structure from theta to wrap_angle(theta + rho), and the sample's label is
updated with the same arithmetic. Splitting happens on unaugmented
originals only, so no augmented descendant of a test original can leak
into training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError, InvalidArgumentError
from .geometry import wrap_angle
from .imaging import load_image, rotate

GRID_ROTATIONS = tuple(range(-60, 65, 5))
"""The 25 grid rotation angles: -60 to 60 in 5-degree steps, 0 included."""

MANIFEST_COLUMNS = ("image_id", "path", "theta_deg", "origin_id", "applied_rotation_deg")
LABEL_COLUMNS = ("image_id", "x1", "y1", "x2", "y2", "theta_deg")


@dataclass
class LabeledSample:
    """One image with its Doppler-angle label and augmentation provenance."""

    image_id: str
    theta_deg: float
    origin_id: str
    applied_rotation_deg: float = 0.0
    path: str | None = None
    image: np.ndarray | None = None

    def load(self, base_dir: Path | str | None = None) -> np.ndarray:
        """The sample's pixels, reading from `path` if not already in memory."""
        if self.image is not None:
            return self.image
        if self.path is None:
            raise InvalidArgumentError(f"sample {self.image_id} has neither image nor path")
        p = Path(self.path)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return load_image(p)


@dataclass
class Manifest:
    """Ordered collection of samples with a dataset-level seed."""

    samples: list[LabeledSample] = field(default_factory=list)
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self) -> None:
        seen = set()
        for s in self.samples:
            if s.image_id in seen:
                raise InvalidArgumentError(f"duplicate image_id {s.image_id!r} in manifest")
            seen.add(s.image_id)
            if not 0.0 <= s.theta_deg < 180.0:
                raise InvalidArgumentError(
                    f"sample {s.image_id}: theta {s.theta_deg} outside [0, 180)"
                )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgumentError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


def split(manifest: Manifest, spec: SplitSpec) -> tuple[Manifest, Manifest]:
    """Partition originals into train/test buckets, deterministically by seed.

    Train size is round(train_fraction * N). Sample order within each
    bucket follows the input manifest.
    """
    if len(manifest) == 0:
        raise InvalidArgumentError("cannot split an empty manifest")
    for s in manifest.samples:
        if s.applied_rotation_deg != 0.0:
            raise InvalidArgumentError(
                f"split expects unaugmented originals; {s.image_id} has rotation "
                f"{s.applied_rotation_deg}"
            )
    n = len(manifest)
    n_train = int(round(spec.train_fraction * n))
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    train_idx = set(perm[:n_train].tolist())
    train = [s for i, s in enumerate(manifest.samples) if i in train_idx]
    test = [s for i, s in enumerate(manifest.samples) if i not in train_idx]
    return Manifest(train, spec.seed), Manifest(test, spec.seed)


def augment_grid(sample: LabeledSample, fill: float = 0.0,
                 base_dir: Path | str | None = None) -> list[LabeledSample]:
    """All 25 grid rotations of an original, labels updated, ascending rho."""
    img = sample.load(base_dir)
    out = []
    for rho in GRID_ROTATIONS:
        rotated = rotate(img, float(rho), fill=fill)
        out.append(
            LabeledSample(
                image_id=f"{sample.image_id}__r{rho:+03d}",
                theta_deg=wrap_angle(sample.theta_deg + rho),
                origin_id=sample.origin_id,
                applied_rotation_deg=float(rho),
                image=rotated,
            )
        )
    return out


def augment_random(sample: LabeledSample, rng: np.random.Generator,
                   fill: float = 0.0, base_dir: Path | str | None = None) -> LabeledSample:
    """One uniformly random rotation in [-60, 60], label updated."""
    img = sample.load(base_dir)
    rho = float(rng.uniform(-60.0, 60.0))
    return LabeledSample(
        image_id=f"{sample.image_id}__rnd",
        theta_deg=wrap_angle(sample.theta_deg + rho),
        origin_id=sample.origin_id,
        applied_rotation_deg=rho,
        image=rotate(img, rho, fill=fill),
    )


# Synthetic vessel rendering defaults; free parameters, chosen for clear
# wall/lumen/background separation under speckle.
WALL_INTENSITY = 0.9
LUMEN_INTENSITY = 0.1
BACKGROUND_INTENSITY = 0.45
DEFAULT_LUMEN_FRACTION = 0.18


def synth_vessel(theta_deg: float, size: tuple[int, int] = (390, 330),
                 lumen_width: float | None = None, noise_level: float = 0.1,
                 seed: int | None = None, image_id: str = "synth") -> LabeledSample:
    """Render a vessel through the image center at a known angle.

    Two bright wall bands flank a dark lumen over a mid-gray background,
    with multiplicative speckle of amplitude noise_level. The returned
    label is exactly theta_deg.
    """
    if not 0.0 <= theta_deg < 180.0:
        raise InvalidArgumentError(f"theta must be in [0, 180), got {theta_deg}")
    w, h = int(size[0]), int(size[1])
    if w < 4 or h < 4:
        raise InvalidArgumentError(f"image size too small: {w}x{h}")
    if lumen_width is None:
        lumen_width = DEFAULT_LUMEN_FRACTION * min(w, h)
    if lumen_width <= 0 or lumen_width > math.hypot(w, h):
        raise InvalidArgumentError(
            f"lumen width {lumen_width} does not fit the {w}x{h} image diagonal"
        )
    if noise_level < 0:
        raise InvalidArgumentError(f"noise_level must be non-negative, got {noise_level}")

    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    r = math.radians(theta_deg)
    # Signed distance from the center line running at theta (direction
    # (sin, cos) in x-right, y-down coordinates).
    xs = np.arange(w, dtype=np.float64)[None, :] - cx
    ys = np.arange(h, dtype=np.float64)[:, None] - cy
    dist = np.abs(xs * math.cos(r) - ys * math.sin(r))

    half_lumen = lumen_width / 2.0
    wall_width = lumen_width / 2.0
    img = np.full((h, w), BACKGROUND_INTENSITY)
    img[dist <= half_lumen + wall_width] = WALL_INTENSITY
    img[dist <= half_lumen] = LUMEN_INTENSITY

    if noise_level > 0:
        rng = np.random.default_rng(seed)
        img = img * (1.0 + noise_level * rng.standard_normal(img.shape))
        img = np.clip(img, 0.0, 1.0)
    return LabeledSample(image_id=image_id, theta_deg=float(theta_deg),
                         origin_id=image_id, image=img)


def orientation_from_moments(img, threshold: float = 0.7) -> float:
    """Independent orientation estimate from intensity-weighted moments.

    Thresholds the bright wall structure inside a centered disc, computes
    the second central moments weighted by intensity, and returns the
    principal axis angle in the vertical-referenced convention. The disc
    window keeps the rectangular frame from biasing diagonal orientations.
    Used as the ground-truth oracle for rotation and synthesis checks.
    """
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy = np.arange(h, dtype=np.float64)[:, None] - cy
    xx = np.arange(w, dtype=np.float64)[None, :] - cx
    radius = min(h, w) / 2.0 - 1.0
    mask = (arr > threshold) & (yy * yy + xx * xx <= radius * radius)
    if not mask.any():
        raise InvalidArgumentError(f"no pixels above threshold {threshold}")
    ys, xs = np.nonzero(mask)
    wts = arr[ys, xs]
    total = wts.sum()
    x_mean = (wts * xs).sum() / total
    y_mean = (wts * ys).sum() / total
    dx = xs - x_mean
    dy = ys - y_mean
    mu20 = (wts * dx * dx).sum()
    mu02 = (wts * dy * dy).sum()
    mu11 = (wts * dx * dy).sum()
    phi = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)  # principal axis from x-axis
    return wrap_angle(90.0 - math.degrees(phi))


def _format_float(x: float) -> str:
    return repr(float(x))


def save_manifest(manifest: Manifest, path) -> None:
    """Write the manifest CSV (UTF-8, LF line endings)."""
    manifest.validate()
    lines = [",".join(MANIFEST_COLUMNS)]
    for s in manifest.samples:
        lines.append(
            ",".join(
                (
                    s.image_id,
                    s.path or "",
                    _format_float(s.theta_deg),
                    s.origin_id,
                    _format_float(s.applied_rotation_deg),
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_manifest(path) -> Manifest:
    """Parse a manifest CSV, validating columns and label ranges.

    Annotation label CSVs (image_id,x1,y1,x2,y2,theta_deg) are accepted
    too: rows become unaugmented originals without paths, so they feed
    training directly once paths are resolved against an image directory
    (see resolve_paths).
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read manifest {p}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    header = tuple(reader.fieldnames or ())
    if header == LABEL_COLUMNS:
        return _manifest_from_label_rows(reader, p)
    if header != MANIFEST_COLUMNS:
        raise IngestionError(
            f"{p}: bad manifest header {list(header)}, want {list(MANIFEST_COLUMNS)} "
            f"or the label format {list(LABEL_COLUMNS)}"
        )
    samples = []
    for row in reader:
        try:
            samples.append(
                LabeledSample(
                    image_id=row["image_id"],
                    path=row["path"] or None,
                    theta_deg=float(row["theta_deg"]),
                    origin_id=row["origin_id"],
                    applied_rotation_deg=float(row["applied_rotation_deg"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"{p}: bad manifest row {row!r}") from exc
    manifest = Manifest(samples)
    try:
        manifest.validate()
    except InvalidArgumentError as exc:
        raise IngestionError(f"{p}: {exc}") from exc
    return manifest


def _manifest_from_label_rows(reader: csv.DictReader, p: Path) -> Manifest:
    samples = []
    for row in reader:
        try:
            samples.append(
                LabeledSample(
                    image_id=row["image_id"],
                    theta_deg=float(row["theta_deg"]),
                    origin_id=row["image_id"],
                )
            )
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"{p}: bad label row {row!r}") from exc
    manifest = Manifest(samples)
    try:
        manifest.validate()
    except InvalidArgumentError as exc:
        raise IngestionError(f"{p}: {exc}") from exc
    return manifest


def resolve_paths(manifest: Manifest, images_dir) -> Manifest:
    """Fill missing sample paths by matching image_id stems in a directory."""
    d = Path(images_dir)
    if not d.is_dir():
        raise IngestionError(f"image directory {d} does not exist")
    for s in manifest.samples:
        if s.path is not None or s.image is not None:
            continue
        for suffix in (".png", ".pgm"):
            candidate = d / f"{s.image_id}{suffix}"
            if candidate.exists():
                # absolute, so later joins against a manifest directory
                # cannot misresolve it
                s.path = str(candidate.resolve())
                break
        else:
            raise IngestionError(f"no image file for {s.image_id!r} under {d}")
    return manifest
