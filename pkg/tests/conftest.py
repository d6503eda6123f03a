import json

import pytest


def tiny_config(root, **over):
    cfg = {
        "seed": 0,
        "datasets": [str(root / "data" / f"d{i}") for i in (1, 2, 3)],
        "generate": {"n_train": 6, "n_eval": 3},
        "batch_size": 2,
        "pretrain": {"steps": 2},
        "adapt": {"steps": 2},
        "descriptor_subset": 6,
        "loss_weights": {"w_sz": 200.0},
        "output_dir": str(root / "run"),
    }
    cfg.update(over)
    return cfg


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """Shared directory holding three tiny generated datasets."""
    from protoadapt.config import ExperimentConfig
    from protoadapt.harness import prepare_datasets

    root = tmp_path_factory.mktemp("tiny")
    prepare_datasets(ExperimentConfig(tiny_config(root)))
    return root


@pytest.fixture
def write_config(tmp_path):
    def write(cfg, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(cfg))
        return path

    return write
