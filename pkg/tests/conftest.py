import pytest

from pfedmb.config import ExperimentConfig


def make_config(**overrides):
    """Small, fast experiment config; tests override what they care about."""
    base = dict(
        method="pfedmb",
        clients=4,
        sample_size=4,
        rounds=2,
        branches=2,
        lr_alpha=0.5,
        lr_w=0.1,
        shared_alpha=False,
        hidden_dims=(8,),
        data={
            "synthetic": {
                "num_classes": 4,
                "input_dim": 5,
                "noise_std": 0.6,
                "samples_per_class": 36,
            }
        },
        partition={"scheme": "paired_clusters", "num_pairs": 2, "classes_per_pair": 2},
        seed=0,
        output_dir="unused",
        local_epochs=2,
        batch_size=16,
        threads=1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def config_factory():
    return make_config
