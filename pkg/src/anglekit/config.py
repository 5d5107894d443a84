"""Every tunable default in one auditable snapshot.

Reports embed this snapshot so a run's provenance includes the values that
were not explicitly overridden.
"""

from __future__ import annotations

import copy

from . import dataset, features, geometry, imaging, metrics, model, training

DEFAULTS = {
    "geometry": {
        "cos_floor": geometry.COS_FLOOR,
    },
    "imaging": {
        "clahe_tiles": list(imaging.PreprocessConfig.clahe_tiles),
        "clahe_clip_limit": imaging.PreprocessConfig.clip_limit,
        "clahe_bins": imaging.PreprocessConfig.bins,
        "rotation_fill": 0.0,
        "rotation_interp": "bilinear",
        "preprocess_order": ["normalize_minmax", "clahe"],
    },
    "dataset": {
        "grid_rotations_deg": list(dataset.GRID_ROTATIONS),
        "random_rotation_range_deg": [-60.0, 60.0],
        "train_fraction": 0.8,
        "synth_size": [390, 330],
        "synth_wall_intensity": dataset.WALL_INTENSITY,
        "synth_lumen_intensity": dataset.LUMEN_INTENSITY,
        "synth_background_intensity": dataset.BACKGROUND_INTENSITY,
        "synth_lumen_fraction": dataset.DEFAULT_LUMEN_FRACTION,
        "synth_noise_level": 0.1,
        "synth_theta_range_deg": [60.0, 120.0],
        "orientation_oracle_threshold": 0.7,
    },
    "features": {
        "input_size": list(features.ExtractorSpec.input_size),
        "stage_channels": list(features.ExtractorSpec.stage_channels),
        "weight_seed": features.ExtractorSpec.weight_seed,
        "kernel": [3, 3],
        "pool": [2, 2],
    },
    "model": {
        "widths": list(model.DEFAULT_WIDTHS),
        "dropout_p": list(model.DEFAULT_DROPOUT),
        "bn_momentum": model.DEFAULT_BN_MOMENTUM,
        "bn_epsilon": model.DEFAULT_BN_EPSILON,
        "target_scale": model.DEFAULT_TARGET_SCALE,
        "final_bias_init": model.DEFAULT_FINAL_BIAS_INIT,
        "init_seed": 0,
    },
    "training": {
        "loss": "mse_on_scaled_targets",
        "adam_alpha": training.AdamConfig.alpha,
        "adam_beta1": training.AdamConfig.beta1,
        "adam_beta2": training.AdamConfig.beta2,
        "adam_epsilon": training.AdamConfig.epsilon,
        "epochs": training.TrainConfig.epochs,
        "batch_size": training.TrainConfig.batch_size,
        "val_fraction": training.TrainConfig.val_fraction,
        "augmentation": training.TrainConfig.augmentation,
        "seed": training.TrainConfig.seed,
    },
    "metrics": {
        "mape_floor_deg": metrics.MAPE_FLOOR_DEG,
        "bin_edges_deg": list(metrics.DEFAULT_BIN_EDGES),
        "signed_error": "pred_minus_true",
    },
}


def defaults_snapshot() -> dict:
    """A deep copy callers may embed or override freely."""
    return copy.deepcopy(DEFAULTS)
