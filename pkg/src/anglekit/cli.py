"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 1 usage error (bad flags or violated
preconditions), 2 data or format error (unreadable or malformed files),
3 numeric failure (NaN detected).

Heavy imports happen inside the subcommand handlers so --threads can pin
the BLAS thread count through environment variables before numpy loads.
Every module default is surfaced as a flag; an optional --config JSON file
supplies values by flag name, with explicit flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (
    AngleKitError,
    AngleSingularError,
    CheckpointError,
    FormatError,
    IngestionError,
    InvalidArgumentError,
    NumericError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_SEED_ENV = "ANGLEKIT_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _apply_threads(threads):
    if threads is None:
        return
    if threads < 1:
        raise InvalidArgumentError(f"--threads must be at least 1, got {threads}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(threads)
    try:  # takes effect even when numpy is already loaded
        import threadpoolctl

        threadpoolctl.threadpool_limits(threads)
    except ImportError:
        pass


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IngestionError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise IngestionError(f"config {path} must hold a JSON object")
    return cfg


class _Flags:
    """Resolution order: explicit flag, then --config entry, then default."""

    def __init__(self, args, valid_names):
        self.args = args
        self.cfg = _load_config(getattr(args, "config", None))
        unknown = set(self.cfg) - set(valid_names)
        if unknown:
            raise InvalidArgumentError(
                f"unknown config keys {sorted(unknown)}; valid keys: {sorted(valid_names)}"
            )

    def get(self, name, default=None):
        value = getattr(self.args, name)
        if value is not None:
            return value
        if name in self.cfg:
            return self.cfg[name]
        return default

    def seed(self, name="seed", default=0):
        value = self.get(name)
        if value is not None:
            return int(value)
        env = os.environ.get(_SEED_ENV)
        if env is not None:
            try:
                return int(env)
            except ValueError as exc:
                raise InvalidArgumentError(f"{_SEED_ENV} must be an integer, got {env!r}") from exc
        return default


def _dest_names(parser):
    return [a.dest for a in parser._actions if a.dest not in ("help", "config")]


def _parse_ints(text, flag):
    try:
        return tuple(int(x) for x in str(text).split(","))
    except ValueError as exc:
        raise InvalidArgumentError(f"{flag} wants comma-separated integers, got {text!r}") from exc


def _parse_floats(text, flag):
    try:
        return tuple(float(x) for x in str(text).split(","))
    except ValueError as exc:
        raise InvalidArgumentError(f"{flag} wants comma-separated numbers, got {text!r}") from exc


def _parse_size(text):
    s = str(text).lower()
    parts = s.split("x") if "x" in s else [s, s]
    try:
        w, h = (int(p) for p in parts)
    except ValueError as exc:
        raise InvalidArgumentError(f"--input-size wants N or WxH, got {text!r}") from exc
    return w, h


def _write_stage_config(out_dir, stage, payload):
    path = Path(out_dir) / f"{stage}_config.json"
    path.write_text(json.dumps({"stage": stage, **payload}, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8", newline="\n")
    return path


def _info(args, message):
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


# ---------------------------------------------------------------- synth

def _cmd_synth(args, flag_names):
    import numpy as np

    from . import dataset as ds
    from .imaging import save_image

    flags = _Flags(args, flag_names)
    count = int(flags.get("count", 84))
    if count < 1:
        raise InvalidArgumentError(f"--count must be at least 1, got {count}")
    seed = flags.seed()
    width = int(flags.get("width", 390))
    height = int(flags.get("height", 330))
    noise = float(flags.get("noise", 0.1))
    lumen_width = flags.get("lumen_width")
    theta_min = float(flags.get("theta_min", 60.0))
    theta_max = float(flags.get("theta_max", 120.0))
    fmt = flags.get("image_format", "pgm")
    if fmt not in ("pgm", "png"):
        raise InvalidArgumentError(f"--image-format must be pgm or png, got {fmt!r}")
    if not 0.0 <= theta_min < theta_max <= 180.0:
        raise InvalidArgumentError(
            f"need 0 <= theta-min < theta-max <= 180, got {theta_min}, {theta_max}"
        )
    out_dir = Path(flags.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    streams = np.random.SeedSequence(seed).spawn(count + 1)
    theta_rng = np.random.default_rng(streams[0])
    samples = []
    for i in range(count):
        theta = float(theta_rng.uniform(theta_min, theta_max))
        image_id = f"img{i:04d}"
        sample = ds.synth_vessel(theta, size=(width, height),
                                 lumen_width=lumen_width, noise_level=noise,
                                 seed=streams[i + 1], image_id=image_id)
        filename = f"{image_id}.{fmt}"
        save_image(sample.image, out_dir / filename)
        sample.path = filename
        sample.image = None
        samples.append(sample)
        _info(args, f"synth {image_id} theta={theta:.2f}")
    manifest = ds.Manifest(samples, seed=seed)
    ds.save_manifest(manifest, out_dir / "manifest.csv")
    _write_stage_config(out_dir, "synth", {
        "count": count, "seed": seed, "width": width, "height": height,
        "noise": noise, "lumen_width": lumen_width,
        "theta_min": theta_min, "theta_max": theta_max, "image_format": fmt,
    })
    print(f"wrote {count} images and manifest.csv to {out_dir}")
    return EXIT_OK


# -------------------------------------------------------------- augment

def _grid_bucket(samples, base_dir, images_dir, rel_prefix, fill):
    from . import dataset as ds
    from .imaging import save_image

    images_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for sample in samples:
        for aug in ds.augment_grid(sample, fill=fill, base_dir=base_dir):
            filename = f"{aug.image_id}.pgm"
            save_image(aug.image, images_dir / filename)
            aug.path = f"{rel_prefix}/{filename}"
            aug.image = None
            out.append(aug)
    return out


def _cmd_augment(args, flag_names):
    import numpy as np

    from . import dataset as ds
    from .imaging import save_image

    flags = _Flags(args, flag_names)
    manifest_path = Path(flags.get("manifest"))
    mode = flags.get("mode", "grid")
    if mode not in ("grid", "random"):
        raise InvalidArgumentError(f"--mode must be grid or random, got {mode!r}")
    fill = float(flags.get("fill", 0.0))
    out_dir = Path(flags.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    split_fraction = flags.get("split")
    manifest = ds.load_manifest(manifest_path)
    images_dir = flags.get("images_dir")
    if images_dir is not None:
        ds.resolve_paths(manifest, images_dir)
    base_dir = manifest_path.parent

    if mode == "random":
        seed = flags.seed()
        copies = int(flags.get("copies", 1))
        if copies < 1:
            raise InvalidArgumentError(f"--copies must be at least 1, got {copies}")
        rng = np.random.default_rng(seed)
        images_dir = out_dir / "images"
        images_dir.mkdir(parents=True, exist_ok=True)
        out = []
        for sample in manifest.samples:
            for k in range(copies):
                aug = ds.augment_random(sample, rng, fill=fill, base_dir=base_dir)
                aug.image_id = f"{sample.image_id}__rnd{k:02d}"
                filename = f"{aug.image_id}.pgm"
                save_image(aug.image, images_dir / filename)
                aug.path = f"images/{filename}"
                aug.image = None
                out.append(aug)
        ds.save_manifest(ds.Manifest(out, seed=seed), out_dir / "augmented.csv")
        _write_stage_config(out_dir, "augment", {
            "mode": mode, "seed": seed, "copies": copies, "fill": fill,
            "source_manifest": str(manifest_path),
        })
        print(f"wrote {len(out)} augmented samples to {out_dir}")
        return EXIT_OK

    if split_fraction is None:
        augmented = _grid_bucket(manifest.samples, base_dir, out_dir / "images", "images", fill)
        ds.save_manifest(ds.Manifest(augmented, seed=manifest.seed), out_dir / "augmented.csv")
        _write_stage_config(out_dir, "augment", {
            "mode": mode, "fill": fill, "split": None,
            "source_manifest": str(manifest_path),
        })
        print(f"wrote {len(augmented)} augmented samples to {out_dir}")
        return EXIT_OK

    split_fraction = float(split_fraction)
    split_seed = flags.seed("split_seed")
    train_orig, test_orig = ds.split(manifest, ds.SplitSpec(split_fraction, split_seed))
    train_aug = _grid_bucket(train_orig.samples, base_dir, out_dir / "train", "train", fill)
    test_aug = _grid_bucket(test_orig.samples, base_dir, out_dir / "test", "test", fill)
    ds.save_manifest(ds.Manifest(train_aug, seed=split_seed), out_dir / "train.csv")
    ds.save_manifest(ds.Manifest(test_aug, seed=split_seed), out_dir / "test.csv")
    # Unaugmented test originals, re-pointed at the source images.
    relocated = []
    for s in test_orig.samples:
        src = Path(s.path) if s.path else None
        if src is not None and not src.is_absolute():
            src = base_dir / src
        relocated.append(ds.LabeledSample(
            image_id=s.image_id, theta_deg=s.theta_deg, origin_id=s.origin_id,
            applied_rotation_deg=0.0,
            path=os.path.relpath(src, out_dir) if src else None))
    ds.save_manifest(ds.Manifest(relocated, seed=split_seed), out_dir / "test_originals.csv")
    _write_stage_config(out_dir, "augment", {
        "mode": mode, "fill": fill, "split": split_fraction, "split_seed": split_seed,
        "source_manifest": str(manifest_path),
    })
    print(f"wrote {len(train_aug)} train / {len(test_aug)} test samples to {out_dir}")
    return EXIT_OK


# ------------------------------------------------------------- features

def _preprocess_cfg(flags):
    from .imaging import PreprocessConfig

    tiles = flags.get("clahe_tiles", (8, 8))
    if isinstance(tiles, str):
        tiles = _parse_ints(tiles, "--clahe-tiles")
    return PreprocessConfig(
        clahe_tiles=tuple(tiles),
        clip_limit=float(flags.get("clip_limit", 0.01)),
        bins=int(flags.get("bins", 256)),
        apply_clahe=not flags.get("no_clahe", False),
    )


def _extractor_spec(flags):
    from .features import ExtractorSpec

    size = flags.get("input_size", (128, 128))
    if isinstance(size, (str, int)):
        size = _parse_size(size)
    channels = flags.get("channels", (8, 16, 32, 64))
    if isinstance(channels, str):
        channels = _parse_ints(channels, "--channels")
    return ExtractorSpec(input_size=tuple(size), stage_channels=tuple(channels),
                         weight_seed=flags.seed("weight_seed"))


def _featurize_manifest(manifest, base_dir, pcfg, spec, args):
    from .features import Extractor, extract
    from .imaging import preprocess, resize_bilinear

    w_in, h_in = spec.input_size
    images = []
    for i, sample in enumerate(manifest.samples):
        img = preprocess(sample.load(base_dir), pcfg)
        images.append(resize_bilinear(img, w_in, h_in).astype("float32"))
        if (i + 1) % 200 == 0:
            _info(args, f"preprocessed {i + 1}/{len(manifest)}")
    return extract(images, Extractor(spec))


def _cmd_features(args, flag_names):
    from . import dataset as ds
    from .features import read_features, write_features

    flags = _Flags(args, flag_names)
    out_path = Path(flags.get("out", "features.ft"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    import_path = flags.get("import_path")
    stage = f"features_{out_path.stem}"
    if import_path is not None:
        tensor = read_features(import_path)
        write_features(tensor, out_path)
        _write_stage_config(out_path.parent, stage, {
            "imported_from": str(import_path), "dims": list(tensor.shape),
        })
        print(f"imported {tensor.shape} features to {out_path}")
        return EXIT_OK
    manifest_arg = flags.get("manifest")
    if manifest_arg is None:
        raise InvalidArgumentError("features needs --manifest or --import")
    manifest_path = Path(manifest_arg)
    manifest = ds.load_manifest(manifest_path)
    images_dir = flags.get("images_dir")
    if images_dir is not None:
        ds.resolve_paths(manifest, images_dir)
    if len(manifest) == 0:
        raise InvalidArgumentError("manifest has no samples")
    pcfg = _preprocess_cfg(flags)
    spec = _extractor_spec(flags)
    tensor = _featurize_manifest(manifest, manifest_path.parent, pcfg, spec, args)
    write_features(tensor, out_path)
    _write_stage_config(out_path.parent, stage, {
        "manifest": str(manifest_path), "dims": list(tensor.shape),
        "input_size": list(spec.input_size), "channels": list(spec.stage_channels),
        "weight_seed": spec.weight_seed,
        "clahe_tiles": list(pcfg.clahe_tiles), "clip_limit": pcfg.clip_limit,
        "bins": pcfg.bins, "apply_clahe": pcfg.apply_clahe,
    })
    print(f"wrote {tensor.shape} features to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _cmd_train(args, flag_names):
    import numpy as np

    from . import dataset as ds
    from . import training as tr
    from .features import Extractor, flatten, read_features
    from .model import build_head, save_checkpoint

    flags = _Flags(args, flag_names)
    manifest_path = Path(flags.get("manifest"))
    manifest = ds.load_manifest(manifest_path)
    images_dir = flags.get("images_dir")
    if images_dir is not None:
        ds.resolve_paths(manifest, images_dir)
    labels = np.asarray([s.theta_deg for s in manifest.samples])
    seed = flags.seed()
    init_seed = flags.get("init_seed")
    init_seed = seed if init_seed is None else int(init_seed)

    tcfg = tr.TrainConfig(
        epochs=int(flags.get("epochs", 200)),
        batch_size=int(flags.get("batch_size", 32)),
        seed=seed,
        augmentation=flags.get("augment_mode", tr.GRID_OFFLINE),
        val_fraction=float(flags.get("val_fraction", 0.1)),
    )
    acfg = tr.AdamConfig(
        alpha=float(flags.get("alpha", 1e-4)),
        beta1=float(flags.get("beta1", 0.9)),
        beta2=float(flags.get("beta2", 0.999)),
        epsilon=float(flags.get("adam_eps", 1e-8)),
    )

    hidden = flags.get("widths", (256, 64))
    if isinstance(hidden, str):
        hidden = _parse_ints(hidden, "--widths")
    dropout_p = flags.get("dropout", (0.5, 0.5))
    if isinstance(dropout_p, str):
        dropout_p = _parse_floats(dropout_p, "--dropout")
    if len(dropout_p) != len(hidden):
        raise InvalidArgumentError(
            f"--dropout needs one probability per hidden width "
            f"({len(hidden)}), got {len(dropout_p)}"
        )

    if tcfg.augmentation == tr.RANDOM_ON_THE_FLY:
        spec = _extractor_spec(flags)
        oh, ow, oc = spec.output_dims
        feature_len = oh * ow * oc
        data = tr.TrainData(labels_deg=labels, samples=manifest.samples,
                            extractor=Extractor(spec),
                            preprocess_cfg=_preprocess_cfg(flags),
                            base_dir=manifest_path.parent)
        feature_source = "on-the-fly"
    else:
        features_arg = flags.get("features")
        if features_arg is None:
            raise InvalidArgumentError("grid-offline training needs --features")
        tensor = read_features(features_arg)
        if tensor.shape[0] != len(manifest):
            raise IngestionError(
                f"feature rows ({tensor.shape[0]}) do not match manifest rows "
                f"({len(manifest)})"
            )
        mat = flatten(tensor).astype(np.float64)
        feature_len = mat.shape[1]
        data = tr.TrainData(labels_deg=labels, features=mat)
        feature_source = str(features_arg)

    model = build_head(
        widths=(feature_len, *hidden),
        dropout_p=dropout_p,
        seed=init_seed,
        momentum=float(flags.get("bn_momentum", 0.9)),
        epsilon=float(flags.get("bn_eps", 1e-5)),
        target_scale=float(flags.get("target_scale", 180.0)),
    )
    _info(args, f"training head {model.widths} for {tcfg.epochs} epochs")
    model, history = tr.train(model, data, tcfg, acfg)

    out_path = Path(flags.get("out", "checkpoint.akpt"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_path)
    history_path = flags.get("history")
    if history_path is not None:
        tr.save_history(history, history_path)
    _write_stage_config(out_path.parent, "train", {
        "manifest": str(manifest_path), "features": feature_source,
        "epochs": tcfg.epochs, "batch_size": tcfg.batch_size, "seed": seed,
        "init_seed": init_seed, "augment_mode": tcfg.augmentation,
        "val_fraction": tcfg.val_fraction,
        "alpha": acfg.alpha, "beta1": acfg.beta1, "beta2": acfg.beta2,
        "adam_eps": acfg.epsilon,
        "widths": list(model.widths), "dropout": list(dropout_p),
        "bn_momentum": float(flags.get("bn_momentum", 0.9)),
        "bn_eps": float(flags.get("bn_eps", 1e-5)),
        "target_scale": model.target_scale,
    })
    print(f"trained {tcfg.epochs} epochs; final train loss "
          f"{history[-1].train_loss:.6g}; checkpoint at {out_path}")
    return EXIT_OK


# ----------------------------------------------------------------- eval

def _cmd_eval(args, flag_names):
    import numpy as np

    from . import dataset as ds
    from . import training as tr
    from .features import flatten, read_features
    from .model import load_checkpoint

    flags = _Flags(args, flag_names)
    model = load_checkpoint(flags.get("checkpoint"))
    manifest = ds.load_manifest(flags.get("manifest"))
    tensor = read_features(flags.get("features"))
    if tensor.shape[0] != len(manifest):
        raise IngestionError(
            f"feature rows ({tensor.shape[0]}) do not match manifest rows ({len(manifest)})"
        )
    mat = flatten(tensor).astype(np.float64)
    labels = np.asarray([s.theta_deg for s in manifest.samples])
    preds = tr.evaluate(model, mat, labels, [s.image_id for s in manifest.samples])
    out_path = Path(flags.get("out", "predictions.csv"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tr.save_predictions(preds, out_path)
    print(f"wrote {len(preds.image_ids)} predictions to {out_path}")
    return EXIT_OK


# --------------------------------------------------------------- report

def _cmd_report(args, flag_names):
    from . import metrics as mx
    from . import training as tr
    from .config import defaults_snapshot

    flags = _Flags(args, flag_names)
    preds = tr.load_predictions(flags.get("predictions"))
    if not preds.image_ids:
        raise InvalidArgumentError("predictions file has no rows")
    edges = flags.get("bin_edges", (60.0, 120.0))
    if isinstance(edges, str):
        edges = _parse_floats(edges, "--bin-edges")
    mape_floor = float(flags.get("mape_floor", mx.MAPE_FLOOR_DEG))
    metric_set = mx.compute_metrics(preds.theta_pred_deg, preds.theta_true_deg,
                                    mape_floor=mape_floor)
    binned = mx.binned_errors(preds.theta_pred_deg, preds.theta_true_deg, edges)

    run_config = {}
    stage_configs = flags.get("configs")
    if stage_configs:
        if isinstance(stage_configs, str):
            stage_configs = stage_configs.split(",")
        for cfg_path in stage_configs:
            payload = _load_config(cfg_path)
            run_config[payload.get("stage", Path(cfg_path).stem)] = payload
    config = {"defaults": defaults_snapshot(), "run": run_config,
              "bin_edges": list(edges), "mape_floor": mape_floor}

    out_path = Path(flags.get("out", "report.json"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    scatter_path = Path(flags.get("scatter", out_path.with_name("scatter.csv")))
    scatter_path.parent.mkdir(parents=True, exist_ok=True)
    mx.emit_report(metric_set, binned, preds, config, out_path, scatter_path)
    print(f"mae={metric_set.mae:.4g} rmse={metric_set.rmse:.4g} "
          f"me={metric_set.me:.4g} -> {out_path}")
    return EXIT_OK


# ------------------------------------------------------------- velocity

def _cmd_velocity(args, flag_names):
    from .geometry import COS_FLOOR, DopplerParams, doppler_velocity

    flags = _Flags(args, flag_names)
    params = DopplerParams(f0=float(flags.get("f0")), c=float(flags.get("c")),
                           fd=float(flags.get("fd")))
    velocity = doppler_velocity(params, float(flags.get("theta")),
                                cos_floor=float(flags.get("cos_floor", COS_FLOOR)))
    print(f"{velocity:.6g}")
    return EXIT_OK


# ------------------------------------------------------------- annotate

def _cmd_annotate(args, flag_names):
    import uvicorn

    from .service import create_app

    flags = _Flags(args, flag_names)
    images_dir = Path(flags.get("images"))
    if not images_dir.is_dir():
        raise InvalidArgumentError(f"--images directory {images_dir} does not exist")
    labels_path = Path(flags.get("labels"))
    ui_dir = flags.get("ui_dir")
    if ui_dir is None and Path("frontend/dist/index.html").exists():
        ui_dir = "frontend/dist"
    app = create_app(images_dir, labels_path, ui_dir=ui_dir)
    uvicorn.run(app, host=flags.get("host", "127.0.0.1"),
                port=int(flags.get("port", 8080)), log_level="warning")
    return EXIT_OK


# ----------------------------------------------------------------- main

def _add_common(sub):
    sub.add_argument("--config", help="JSON file whose keys mirror flag names")
    sub.add_argument("--verbose", action="store_true", default=None,
                     help="progress notes on standard error")


def build_parser() -> _Parser:
    parser = _Parser(prog="anglekit",
                     description="Doppler angle estimation pipeline")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synth", help="generate a synthetic vessel dataset")
    p.add_argument("--count", type=int, help="number of images (default 84)")
    p.add_argument("--seed", type=int, help=f"RNG seed (default 0 or ${_SEED_ENV})")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width", type=int, help="image width in pixels (default 390)")
    p.add_argument("--height", type=int, help="image height in pixels (default 330)")
    p.add_argument("--lumen-width", dest="lumen_width", type=float,
                   help="lumen width in pixels (default 0.18*min(width,height))")
    p.add_argument("--noise", type=float, help="speckle amplitude (default 0.1)")
    p.add_argument("--theta-min", dest="theta_min", type=float,
                   help="smallest vessel angle (default 60)")
    p.add_argument("--theta-max", dest="theta_max", type=float,
                   help="largest vessel angle, exclusive (default 120)")
    p.add_argument("--image-format", dest="image_format", choices=("pgm", "png"),
                   help="output image format (default pgm)")
    _add_common(p)
    p.set_defaults(func=_cmd_synth, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("augment", help="rotation-augment a manifest with label updates")
    p.add_argument("--manifest", required=True,
                   help="input manifest CSV of originals (label CSVs accepted)")
    p.add_argument("--images-dir", dest="images_dir",
                   help="directory to resolve label-CSV image ids against")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("grid", "random"),
                   help="grid: 25 rotations -60..60 step 5 (default); random: uniform draws")
    p.add_argument("--fill", type=float, help="out-of-bounds fill value (default 0)")
    p.add_argument("--split", type=float,
                   help="train fraction; splits originals before augmenting (default off)")
    p.add_argument("--split-seed", dest="split_seed", type=int,
                   help=f"split RNG seed (default 0 or ${_SEED_ENV})")
    p.add_argument("--seed", type=int, help="random-mode rotation seed (default 0)")
    p.add_argument("--copies", type=int, help="random-mode draws per original (default 1)")
    _add_common(p)
    p.set_defaults(func=_cmd_augment, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("features", help="extract builtin features or import a tensor")
    p.add_argument("--manifest", help="manifest CSV to featurize (label CSVs accepted)")
    p.add_argument("--images-dir", dest="images_dir",
                   help="directory to resolve label-CSV image ids against")
    p.add_argument("--out", help="output .ft path (default features.ft)")
    p.add_argument("--import", dest="import_path",
                   help="re-serialize an externally computed .ft tensor instead")
    p.add_argument("--input-size", dest="input_size",
                   help="extractor input, N or WxH (default 128)")
    p.add_argument("--channels", help="per-stage channels (default 8,16,32,64)")
    p.add_argument("--weight-seed", dest="weight_seed", type=int,
                   help="frozen weight seed (default 0)")
    p.add_argument("--clahe-tiles", dest="clahe_tiles", help="CLAHE tile grid (default 8,8)")
    p.add_argument("--clip-limit", dest="clip_limit", type=float,
                   help="CLAHE clip limit fraction (default 0.01)")
    p.add_argument("--bins", type=int, help="CLAHE histogram bins (default 256)")
    p.add_argument("--no-clahe", dest="no_clahe", action="store_true", default=None,
                   help="skip CLAHE, normalize only")
    p.add_argument("--threads", type=int, help="BLAS thread count (default library choice)")
    _add_common(p)
    p.set_defaults(func=_cmd_features, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("train", help="train the regression head")
    p.add_argument("--manifest", required=True,
                   help="training manifest CSV (label CSVs accepted)")
    p.add_argument("--images-dir", dest="images_dir",
                   help="directory to resolve label-CSV image ids against")
    p.add_argument("--features", help="precomputed .ft tensor (grid-offline mode)")
    p.add_argument("--out", help="checkpoint path (default checkpoint.akpt)")
    p.add_argument("--history", help="per-epoch loss CSV path")
    p.add_argument("--epochs", type=int, help="training epochs (default 200)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="mini-batch size, at least 2 (default 32)")
    p.add_argument("--seed", type=int, help=f"training seed (default 0 or ${_SEED_ENV})")
    p.add_argument("--init-seed", dest="init_seed", type=int,
                   help="weight init seed (default: the training seed)")
    p.add_argument("--alpha", type=float, help="Adam learning rate (default 1e-4)")
    p.add_argument("--beta1", type=float, help="Adam beta1 (default 0.9)")
    p.add_argument("--beta2", type=float, help="Adam beta2 (default 0.999)")
    p.add_argument("--adam-eps", dest="adam_eps", type=float,
                   help="Adam epsilon (default 1e-8)")
    p.add_argument("--val-fraction", dest="val_fraction", type=float,
                   help="validation carve from the training bucket (default 0.1)")
    p.add_argument("--widths", help="hidden widths (default 256,64)")
    p.add_argument("--dropout", help="dropout per module (default 0.5,0.5)")
    p.add_argument("--bn-momentum", dest="bn_momentum", type=float,
                   help="BatchNorm running-stat retention (default 0.9)")
    p.add_argument("--bn-eps", dest="bn_eps", type=float,
                   help="BatchNorm epsilon (default 1e-5)")
    p.add_argument("--target-scale", dest="target_scale", type=float,
                   help="degrees per optimization unit (default 180)")
    p.add_argument("--augment-mode", dest="augment_mode",
                   choices=("grid-offline", "random-on-the-fly"),
                   help="feature source (default grid-offline)")
    p.add_argument("--input-size", dest="input_size",
                   help="on-the-fly extractor input (default 128)")
    p.add_argument("--channels", help="on-the-fly extractor channels (default 8,16,32,64)")
    p.add_argument("--weight-seed", dest="weight_seed", type=int,
                   help="on-the-fly extractor weight seed (default 0)")
    p.add_argument("--clahe-tiles", dest="clahe_tiles",
                   help="on-the-fly CLAHE tile grid (default 8,8)")
    p.add_argument("--clip-limit", dest="clip_limit", type=float,
                   help="on-the-fly CLAHE clip limit (default 0.01)")
    p.add_argument("--bins", type=int, help="on-the-fly CLAHE bins (default 256)")
    p.add_argument("--no-clahe", dest="no_clahe", action="store_true", default=None,
                   help="on-the-fly: skip CLAHE")
    p.add_argument("--threads", type=int, help="BLAS thread count; 1 = deterministic mode")
    _add_common(p)
    p.set_defaults(func=_cmd_train, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("eval", help="predict angles for a test manifest")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint path")
    p.add_argument("--features", required=True, help="test .ft tensor")
    p.add_argument("--manifest", required=True, help="test manifest CSV")
    p.add_argument("--out", help="predictions CSV path (default predictions.csv)")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    _add_common(p)
    p.set_defaults(func=_cmd_eval, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("report", help="metrics, binned errors, and scatter data")
    p.add_argument("--predictions", required=True, help="predictions CSV from eval")
    p.add_argument("--out", help="report JSON path (default report.json)")
    p.add_argument("--scatter", help="scatter CSV path (default next to the report)")
    p.add_argument("--bin-edges", dest="bin_edges",
                   help="angle band edges in degrees (default 60,120)")
    p.add_argument("--mape-floor", dest="mape_floor", type=float,
                   help="smallest truth MAPE accepts, degrees (default 1)")
    p.add_argument("--configs", help="comma-separated stage config JSONs to embed")
    _add_common(p)
    p.set_defaults(func=_cmd_report, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("velocity", help="Doppler shift to velocity conversion")
    p.add_argument("--fd", required=True, type=float, help="measured Doppler shift, Hz")
    p.add_argument("--f0", required=True, type=float, help="transmit frequency, Hz")
    p.add_argument("--c", required=True, type=float, help="speed of sound, m/s")
    p.add_argument("--theta", required=True, type=float, help="Doppler angle, degrees")
    p.add_argument("--cos-floor", dest="cos_floor", type=float,
                   help="singularity floor on |cos(theta)| (default 1e-6)")
    _add_common(p)
    p.set_defaults(func=_cmd_velocity, flag_names=tuple(_dest_names(p)))

    p = subs.add_parser("annotate", help="serve the ground-truth annotation workflow")
    p.add_argument("--images", required=True, help="directory of PNG/PGM images")
    p.add_argument("--labels", required=True, help="label CSV path (created if missing)")
    p.add_argument("--port", type=int, help="listen port (default 8080)")
    p.add_argument("--host", help="bind address (default 127.0.0.1)")
    p.add_argument("--ui-dir", dest="ui_dir",
                   help="static UI bundle directory (default frontend/dist if present)")
    _add_common(p)
    p.set_defaults(func=_cmd_annotate, flag_names=tuple(_dest_names(p)))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(getattr(args, "threads", None))
        return args.func(args, args.flag_names)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InvalidArgumentError, AngleSingularError) as exc:
        print(f"anglekit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, FormatError, CheckpointError) as exc:
        print(f"anglekit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"anglekit: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AngleKitError as exc:
        print(f"anglekit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
