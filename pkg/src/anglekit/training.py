"""Loss, Adam optimization, the training loop, and evaluation.

The loop is deterministic for a fixed seed: the validation carve, epoch
shuffles, dropout masks, and on-the-fly augmentation draws all come from
named child streams of one seed sequence, consumed in a fixed order.
Single-threaded execution reproduces checkpoints bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LabeledSample, augment_random
from .errors import IngestionError, InvalidArgumentError, NumericError
from .features import Extractor, extract, flatten
from .imaging import PreprocessConfig, preprocess, resize_bilinear
from .model import HeadModel, head_backward, head_forward, parameters_of

PREDICTION_COLUMNS = ("image_id", "theta_true_deg", "theta_pred_deg")
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss")

GRID_OFFLINE = "grid-offline"
RANDOM_ON_THE_FLY = "random-on-the-fly"


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidArgumentError(
                f"betas must be in [0, 1), got {self.beta1}, {self.beta2}"
            )


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    augmentation: str = GRID_OFFLINE
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise InvalidArgumentError(
                f"batch_size must be at least 2 (BatchNorm needs a batch of 2 or more "
                f"in train mode), got {self.batch_size}"
            )
        if self.augmentation not in (GRID_OFFLINE, RANDOM_ON_THE_FLY):
            raise InvalidArgumentError(f"unknown augmentation mode {self.augmentation!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidArgumentError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}"
            )


@dataclass
class TrainData:
    """Inputs for one training run.

    Grid-offline mode consumes precomputed flattened features. Random
    on-the-fly mode consumes original samples plus a frozen extractor and
    re-augments every epoch.
    """

    labels_deg: np.ndarray
    features: np.ndarray | None = None
    samples: list[LabeledSample] | None = None
    extractor: Extractor | None = None
    preprocess_cfg: PreprocessConfig = field(default_factory=PreprocessConfig)
    base_dir: Path | str | None = None


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class Predictions:
    """Per-sample predictions in manifest order, in degrees."""

    image_ids: list[str]
    theta_true_deg: np.ndarray
    theta_pred_deg: np.ndarray


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient 2 (pred - target) / N."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise InvalidArgumentError("cannot compute a loss over an empty batch")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, cfg: AdamConfig):
    """One Adam update, in place on the parameter tensors."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("parameter, gradient, and state lists must align")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} != parameter {p.shape}")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.alpha * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, state


def _materialize_epoch(data: TrainData, indices: np.ndarray,
                       augment_rng: np.random.Generator | None):
    """Feature matrix and scaled targets for the given sample indices."""
    if data.features is not None:
        return data.features[indices], data.labels_deg[indices]
    assert data.samples is not None and data.extractor is not None
    w_in, h_in = data.extractor.spec.input_size
    images = []
    labels = []
    for i in indices:
        sample = data.samples[i]
        if augment_rng is not None:
            sample = augment_random(sample, augment_rng, base_dir=data.base_dir)
        img = preprocess(sample.load(data.base_dir), data.preprocess_cfg)
        images.append(resize_bilinear(img, w_in, h_in))
        labels.append(sample.theta_deg)
    feats = flatten(extract(images, data.extractor)).astype(np.float64)
    return feats, np.asarray(labels)


def train(model: HeadModel, data: TrainData, tcfg: TrainConfig,
          acfg: AdamConfig = AdamConfig()):
    """Fit the head and return (model, per-epoch history).

    Mini-batches are reshuffled every epoch; trailing batches of size 1 are
    dropped (BatchNorm precondition). Validation is carved from the
    training pool up front and scored in eval mode each epoch.
    """
    on_the_fly = tcfg.augmentation == RANDOM_ON_THE_FLY
    if on_the_fly:
        if data.samples is None or data.extractor is None:
            raise InvalidArgumentError(
                "random-on-the-fly training needs samples and an extractor"
            )
        n = len(data.samples)
    else:
        if data.features is None:
            raise InvalidArgumentError("grid-offline training needs a feature matrix")
        if data.features.shape[0] != data.labels_deg.shape[0]:
            raise InvalidArgumentError(
                f"{data.features.shape[0]} feature rows vs "
                f"{data.labels_deg.shape[0]} labels"
            )
        n = data.features.shape[0]

    n_val = int(round(tcfg.val_fraction * n))
    if n - n_val < 2 * tcfg.batch_size:
        raise InvalidArgumentError(
            f"need at least {2 * tcfg.batch_size} training samples after the "
            f"validation carve, have {n - n_val}"
        )

    val_ss, shuffle_ss, dropout_ss, augment_ss = np.random.SeedSequence(tcfg.seed).spawn(4)
    val_rng = np.random.default_rng(val_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    augment_rng = np.random.default_rng(augment_ss) if on_the_fly else None

    order = val_rng.permutation(n)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])

    params = parameters_of(model)
    state = AdamState.for_params(params)
    scale = model.target_scale
    history: list[EpochStats] = []

    for epoch in range(1, tcfg.epochs + 1):
        model.train()
        perm = shuffle_rng.permutation(len(train_idx))
        batch_losses = []
        for start in range(0, len(perm), tcfg.batch_size):
            batch = train_idx[perm[start : start + tcfg.batch_size]]
            if len(batch) < 2:
                continue
            feats, labels = _materialize_epoch(data, batch, augment_rng)
            pred, cache = head_forward(model, feats, dropout_rng)
            loss, dpred = mse_loss(pred, labels / scale)
            grads = head_backward(model, cache, dpred)
            adam_step(params, grads, state, acfg)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        if not np.isfinite(train_loss):
            raise NumericError(f"training loss became non-finite at epoch {epoch}")

        if n_val > 0:
            model.eval()
            # On-the-fly validation is re-augmented each epoch, mirroring
            # the freshly generated training batches.
            vfeats, vlabels = _materialize_epoch(data, val_idx, augment_rng)
            vpred, _ = head_forward(model, vfeats)
            val_loss, _ = mse_loss(vpred, vlabels / scale)
            if not np.isfinite(val_loss):
                raise NumericError(f"validation loss became non-finite at epoch {epoch}")
        else:
            val_loss = float("nan")
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
    model.eval()
    return model, history


def evaluate(model: HeadModel, features: np.ndarray, labels_deg: np.ndarray,
             image_ids: list[str]) -> Predictions:
    """Eval-mode predictions in degrees, in the given manifest order."""
    if len(image_ids) != len(labels_deg):
        raise InvalidArgumentError(
            f"{len(image_ids)} ids vs {len(labels_deg)} labels"
        )
    if len(image_ids) == 0:
        return Predictions(image_ids=[], theta_true_deg=np.zeros(0),
                           theta_pred_deg=np.zeros(0))
    if features.shape[0] != len(image_ids):
        raise InvalidArgumentError(
            f"{features.shape[0]} feature rows vs {len(image_ids)} ids"
        )
    model.eval()
    pred, _ = head_forward(model, np.asarray(features, dtype=np.float64))
    pred_deg = pred * model.target_scale
    if not np.all(np.isfinite(pred_deg)):
        raise NumericError("predictions contain non-finite values")
    return Predictions(image_ids=list(image_ids),
                       theta_true_deg=np.asarray(labels_deg, dtype=np.float64),
                       theta_pred_deg=pred_deg)


def save_history(history: list[EpochStats], path) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss!r},{h.val_loss!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def save_predictions(preds: Predictions, path) -> None:
    lines = [",".join(PREDICTION_COLUMNS)]
    for image_id, t, p in zip(preds.image_ids, preds.theta_true_deg, preds.theta_pred_deg):
        lines.append(f"{image_id},{float(t)!r},{float(p)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_predictions(path) -> Predictions:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read predictions {p}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or tuple(reader.fieldnames) != PREDICTION_COLUMNS:
        raise IngestionError(
            f"{p}: bad predictions header {reader.fieldnames}, want {list(PREDICTION_COLUMNS)}"
        )
    ids, true, pred = [], [], []
    for row in reader:
        try:
            ids.append(row["image_id"])
            true.append(float(row["theta_true_deg"]))
            pred.append(float(row["theta_pred_deg"]))
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"{p}: bad predictions row {row!r}") from exc
    return Predictions(image_ids=ids, theta_true_deg=np.asarray(true),
                       theta_pred_deg=np.asarray(pred))
