import numpy as np
import pytest

from shapeprior.trainer import TrainConfig, train
from shapeprior.volume import LabelVolume


def make_cube(side=12, lo=3, hi=9, shape_id="cube", n_class=2):
    labels = np.zeros((side, side, side), dtype=np.uint8)
    labels[lo:hi, lo:hi, lo:hi] = 1
    return LabelVolume(labels, (1.0, 1.0, 1.0), n_class, shape_id)


@pytest.fixture(scope="session")
def tiny_world():
    """Two nested cubes plus a small decoder fitted to them.

    Shared across test modules; treat everything in here as read-only.
    """
    dataset = [make_cube(lo=3, hi=9, shape_id="a"),
               make_cube(lo=2, hi=10, shape_id="b")]
    config = TrainConfig(epochs=300, lr_network=1e-3, voxel_batch_per_shape=512,
                         hidden_width=12, latent_dim=10, seed=0)
    params, latents, history = train(dataset, config)
    return {"params": params, "latents": latents, "history": history,
            "dataset": dataset, "config": config}
