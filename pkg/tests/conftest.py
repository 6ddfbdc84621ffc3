import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus import resolve_data_dir  # noqa: E402


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """Directory of MNIST-format IDX files (real MNIST or the fallback)."""
    path, description = resolve_data_dir(
        str(tmp_path_factory.mktemp("corpus", numbered=False))
    )
    print(f"\n[data] {description}")
    return path


@pytest.fixture(scope="session")
def trained_toy_model():
    """A small plain-SGD net fitted to separable template data.

    Attacks and robustness checks need a model that is actually right on
    clean inputs; an untrained net is at chance and attacks would have
    nothing to break.
    """
    from andnet.dataset import LabeledSet
    from andnet.numerics import RngStream
    from andnet.training import TrainConfig, train

    rng = RngStream(42)
    templates = rng.uniform(0.1, 0.9, (3, 12))
    labels = rng.indices(3, 300)
    images = np.clip(
        templates[labels] + rng.uniform(-0.15, 0.15, (300, 12)), 0.0, 1.0
    )
    data = LabeledSet(images, labels)
    config = TrainConfig(
        layer_sizes=(12, 8, 3), epochs=30, batch_size=30, seed=0
    ).defense_off()
    params, _ = train(config, data)
    return params, data
