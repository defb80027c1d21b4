"""Named experiment presets: the theorem-verification and protocol experiments."""

import copy
import json
from typing import Any, Dict, List

# pl_sine started at w0 = 3, the common oracle of the synthetic experiments
_PL_SINE = {"kind": "synthetic", "objective": "pl_sine", "dim": 1, "sigma2": 1.0, "w0": 3.0}

# 1/L for pl_sine and eps^2 / (2 L sigma2) at eps = 0.15
_ETA1 = 0.125
_ETA2 = 0.00140625

PRESETS: Dict[str, Dict[str, Any]] = {
    "theorem1": {
        "name": "theorem1",
        "oracle": dict(_PL_SINE, delta=0.001, bias_fraction=0.5),
        "algorithm": {"kind": "lsr", "schedule": "auto", "epsilon": 0.1},
        "repeats": 200,
        "eval_stride": 100,
        "verify": {"checks": ["bounds"]},
    },
    "theorem1_floor": {
        "name": "theorem1_floor",
        "oracle": dict(_PL_SINE, delta=0.25, bias_fraction=1.0),
        "algorithm": {"kind": "lsr", "schedule": "auto", "epsilon": 0.1},
        "repeats": 200,
        "verify": {"checks": ["bounds"]},
    },
    "theorem3": {
        "name": "theorem3",
        "oracle": dict(_PL_SINE, delta=0.0),
        "algorithm": {"kind": "baseline", "schedule": "auto", "epsilon": 0.2},
        "repeats": 200,
        "eval_stride": 1000,
        "verify": {"checks": ["bounds"]},
    },
    "theorem2": {
        "name": "theorem2",
        "oracle": dict(_PL_SINE, delta=0.05, bias_fraction=0.5),
        "algorithm": {"kind": "tsla", "schedule": "auto", "epsilon": 0.15},
        "repeats": 100,
        "eval_stride": 1000,
        "verify": {"checks": ["bounds"]},
    },
    # Matched budget: the TSLA drop point is the scheduled T1 for delta = 0.05
    "ordering_appropriate": {
        "name": "ordering_appropriate",
        "oracle": dict(_PL_SINE, delta=0.05, bias_fraction=0.5),
        "algorithm": {
            "kind": "tsla",
            "theta": 1.0 / 1.05,
            "eta1": _ETA1,
            "eta2": _ETA2,
            "budget": 460,
        },
        "sweep": {"kind": "drop", "values": [160], "include_reference": True},
        "repeats": 50,
        "verify": {"checks": ["ordering"]},
    },
    # delta >= 1: smoothing with a persistent bias hurts
    "ordering_inappropriate": {
        "name": "ordering_inappropriate",
        "oracle": dict(_PL_SINE, delta=2.0, bias_fraction=1.0),
        "algorithm": {
            "kind": "tsla",
            "theta": 1.0 / 3.0,
            "eta1": _ETA1,
            "eta2": _ETA2,
            "budget": 5000,
        },
        "sweep": {"kind": "drop", "values": [0, 5000]},
        "repeats": 50,
        "eval_stride": 100,
        "verify": {"checks": ["ordering"]},
    },
    "protocol_analog": {
        "name": "protocol_analog",
        "oracle": {
            "kind": "classification",
            "model": "softmax_linear",
            "batch_size": 1,
            "dataset": {
                "num_classes": 20,
                "num_features": 10,
                "n": 2000,
                "n_test": 2000,
                "class_separation": 4.0,
                "label_noise_rate": 0.2,
                "seed": 0,
            },
        },
        "algorithm": {
            "kind": "tsla",
            "unit": "epoch",
            "theta": 0.4,
            "source": "uniform",
            "eta1": 0.05,
            "eta2": 0.005,
            "budget": 30,
        },
        "sweep": {"kind": "drop", "values": [5, 10, 15, 20, 25], "include_reference": True},
        "repeats": 5,
        "eval_stride": 200,
        "verify": {"checks": ["drop_accuracy"]},
    },
}


def list_presets() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> Dict[str, Any]:
    """Return a copy of the named preset config."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset '{name}', expected one of {list_presets()}")
    return copy.deepcopy(PRESETS[name])


def preset_text(name: str) -> str:
    """The preset as JSON text, ready for parse_config."""
    return json.dumps(get_preset(name), indent=2)
