import hashlib
import json
import os

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from texweave.data import make_synthetic_dataset
from texweave.models import ModelBundle, build_model, desk_config
from texweave.training import TrainConfig, Trainer

CACHE_DIR = os.path.join(os.path.dirname(__file__), "_artifacts")

DESK_FAMILIES = ("stripes", "blobs")
DESK_DATASET_ARGS = dict(families=DESK_FAMILIES, n_per_family=32,
                         image_size=128, seed=3, augmentations_per_item=12)
DESK_TRAIN_STEPS = 2000


@pytest.fixture(scope="session")
def desk_datasets():
    return make_synthetic_dataset(**DESK_DATASET_ARGS)


@pytest.fixture(scope="session")
def untrained_bundle():
    return ModelBundle(build_model(desk_config(seed=11)))


def desk_train_recipe():
    model_cfg = desk_config(seed=11)
    train_cfg = TrainConfig(steps=DESK_TRAIN_STEPS, batch_size=8, seed=5,
                            checkpoint_every=1000)
    return model_cfg, train_cfg


def _recipe_key(model_cfg, train_cfg):
    payload = json.dumps([model_cfg.to_dict(), train_cfg.to_dict(),
                          DESK_DATASET_ARGS], sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def trained_checkpoint_path(desk_datasets):
    """Train the desk-scale model once per recipe; cache on disk."""
    model_cfg, train_cfg = desk_train_recipe()
    key = _recipe_key(model_cfg, train_cfg)
    os.makedirs(CACHE_DIR, exist_ok=True)
    out_dir = os.path.join(CACHE_DIR, f"desk_{key}")
    final = os.path.join(out_dir, f"step_{train_cfg.steps}.ckpt")
    if not os.path.exists(final):
        train_ds, _ = desk_datasets
        trainer = Trainer(model_cfg, train_cfg, train_ds, out_dir)
        trainer.run()
    return final


@pytest.fixture(scope="session")
def trained_bundle(trained_checkpoint_path):
    from texweave.service import load_bundle

    return load_bundle(trained_checkpoint_path)


@pytest.fixture(scope="session")
def test_patch_bank(desk_datasets):
    from texweave.training import build_patch_bank

    _, test_ds = desk_datasets
    bank, labels = build_patch_bank(test_ds, 32, seed=41)
    return bank, labels


@pytest.fixture(scope="session")
def desk_sources(desk_datasets):
    train_ds, _ = desk_datasets
    images = [it.load() for it in train_ds.items]
    labels = [it.label for it in train_ds.items]
    return images, labels


@pytest.fixture(scope="session")
def seam_classifier(desk_sources):
    from texweave.classifiers import (seam_example_sampler,
                                      train_binary_classifier)

    images, labels = desk_sources
    return train_binary_classifier(
        "seam", seam_example_sampler(images, 32, labels=labels), seed=1)


@pytest.fixture(scope="session")
def repetition_classifier(desk_sources):
    from texweave.classifiers import (repetition_example_sampler,
                                      train_binary_classifier)

    images, _ = desk_sources
    return train_binary_classifier(
        "repetition", repetition_example_sampler(images, 32), seed=1)


@pytest.fixture(scope="session")
def family_classifier(desk_sources):
    from texweave.classifiers import train_family_classifier

    images, labels = desk_sources
    return train_family_classifier(images, labels, 32, seed=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
