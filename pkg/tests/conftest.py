import json

import pytest

# a config small enough that a full run takes a few seconds
TINY = {
    "seed": 0,
    "dataset": {"source": "builtin:blobs-6-3", "split_sizes": [150, 75, 75],
                "options": {"informative": 4, "centers_per_class": 1, "separation": 3.0}},
    "space": {"hyperparameters": [
        {"name": "layers", "lower": 1, "upper": 2, "step": 1},
        {"name": "neurons", "lower": 4, "upper": 16, "step": 4},
        {"name": "dr_method", "lower": 1, "upper": 5, "step": 1, "kind": "categorical"},
        {"name": "dr_ratio", "lower": 1.0, "upper": 2.0, "step": 0.5, "kind": "real"},
        {"name": "quant", "lower": 1, "upper": 4, "step": 1, "kind": "categorical"},
    ]},
    "train": {"epochs": 3, "batch_size": 32, "learning_rate": 0.01},
    "selector": {"pool_count": 60, "iter_count": 10, "max_iterations": 2, "max_stages": 20},
    "evolve": {"population": 10, "max_iterations": 10},
    "local": {"max_iterations": 4, "epochs_per_iteration": 2, "prune_fraction": 0.5},
    "baseline": {"hidden": [8]},
}


def tiny(**overrides) -> dict:
    cfg = json.loads(json.dumps(TINY))
    for section, values in overrides.items():
        if isinstance(values, dict) and isinstance(cfg.get(section), dict):
            cfg[section].update(values)
        else:
            cfg[section] = values
    return cfg


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path
