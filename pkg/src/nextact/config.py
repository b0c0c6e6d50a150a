"""Named hyperparameter presets and config merging.

Presets bundle the published per-dataset settings plus desk-scale variants
small enough for laptop runs; explicit flags always win over presets, and a
JSON config file sits between the two.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["PRESETS", "preset_settings", "merge_settings"]

_SGD = {"kind": "sgd", "momentum": 0.9, "weight_decay": 5e-5, "batch_size": 128, "epochs": 100}

PRESETS: dict[str, dict] = {
    # published egocentric settings
    "epic": {
        "model": {"aggregator": "gru", "dropout": 0.5, "alpha": 0.01, "beta": 0.8},
        "train": {
            "protocol": "egocentric", "o": 6, "a": 8,
            "n_contrast": 128, "sampling_mode": "all_video",
            "optimizer": {**_SGD, "lr": 0.1},
        },
    },
    "egtea": {
        "model": {"aggregator": "gru", "dropout": 0.5, "alpha": 0.5, "beta": 0.5},
        "train": {
            "protocol": "egocentric", "o": 6, "a": 8,
            "n_contrast": 128, "sampling_mode": "all_video",
            "optimizer": {**_SGD, "lr": 0.1},
        },
    },
    # published dense (third-person) settings
    "salads-dense": {
        "model": {"aggregator": "gru", "dropout": 0.5, "alpha": 0.9, "beta": 0.1},
        "train": {
            "protocol": "dense", "o": 16, "a": 16, "stride": 1,
            "n_contrast": 128, "sampling_mode": "all_video",
            "optimizer": {"kind": "adam", "lr": 0.001, "beta1": 0.9, "beta2": 0.999,
                          "weight_decay": 5e-5, "batch_size": 128, "epochs": 100},
        },
    },
    "breakfast-dense": {
        "model": {"aggregator": "gru", "dropout": 0.5, "alpha": 0.5, "beta": 0.5},
        "train": {
            "protocol": "dense", "o": 16, "a": 16, "stride": 1,
            "n_contrast": 128, "sampling_mode": "all_video",
            "optimizer": {"kind": "adam", "lr": 0.01, "beta1": 0.9, "beta2": 0.999,
                          "weight_decay": 5e-5, "batch_size": 128, "epochs": 80},
        },
    },
    # desk-scale variants (synthetic data, single thread, minutes not days)
    "epic-desk": {
        "model": {"aggregator": "gru", "dropout": 0.1, "alpha": 0.5, "beta": 0.5},
        "train": {
            "protocol": "egocentric", "o": 6, "a": 8,
            "n_contrast": 16, "sampling_mode": "all_video",
            "optimizer": {"kind": "sgd", "lr": 0.1, "momentum": 0.9, "lr_decay": 0.9,
                          "weight_decay": 5e-5, "batch_size": 32, "epochs": 30},
        },
    },
    "dense-desk": {
        "model": {"aggregator": "gru", "dropout": 0.1, "alpha": 0.5, "beta": 0.5},
        "train": {
            "protocol": "dense", "o": 16, "a": 16, "stride": 4,
            "n_contrast": 16, "sampling_mode": "all_video",
            "optimizer": {"kind": "adam", "lr": 0.003, "beta1": 0.9, "beta2": 0.999,
                          "weight_decay": 5e-5, "batch_size": 32, "epochs": 20},
        },
    },
    "ablate-desk": {
        "model": {"aggregator": "gru", "dropout": 0.1, "alpha": 0.3, "beta": 0.3},
        "train": {
            "protocol": "egocentric", "o": 6, "a": 8,
            "n_contrast": 16, "sampling_mode": "all_video",
            "optimizer": {"kind": "sgd", "lr": 0.1, "momentum": 0.9, "lr_decay": 0.9,
                          "weight_decay": 5e-5, "batch_size": 32, "epochs": 18},
        },
    },
}


def preset_settings(name: str | None) -> dict:
    """Flattened preset (model + train + optimizer keys in one namespace)."""
    if name is None:
        return {}
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    spec = PRESETS[name]
    flat = dict(spec["model"])
    for key, val in spec["train"].items():
        if key == "optimizer":
            flat.update(val)
        else:
            flat[key] = val
    return flat


def merge_settings(defaults: dict, *layers: dict, allowed=None) -> dict:
    """Left-to-right overlay; later layers win; unknown keys rejected."""
    out = dict(defaults)
    for layer in layers:
        for key, val in layer.items():
            if allowed is not None and key not in allowed:
                raise ConfigError(f"unknown configuration key {key!r}")
            if val is not None:
                out[key] = val
    return out
