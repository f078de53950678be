import numpy as np
import pytest

from mfhnp.datasets import SplitSpec, make_split, synth_task, write_dataset
from mfhnp.experiment import TrainConfig
from mfhnp.np_models import MfhnpModel, NpConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(variant: str = "hnp-mean", aggregation: str = "ba", **kwargs) -> NpConfig:
    settings = dict(
        d_x_low=2,
        d_y_low=3,
        d_x_high=2,
        d_y_high=4,
        d_z=3,
        d_r=5,
        encoder_hidden=(6,),
        decoder_hidden=(6,),
        activation="tanh",
        k_samples=1,
        s_samples=1,
    )
    settings.update(kwargs)
    return NpConfig.for_variant(variant, aggregation=aggregation, **settings)


@pytest.fixture
def make_config():
    return tiny_config


@pytest.fixture
def tiny_model():
    return MfhnpModel.initialize(tiny_config(), seed=7)


@pytest.fixture
def synth_pair():
    return synth_task(24, 24, n_samples=2, noise=0.05, seed=3)


@pytest.fixture
def synth_split(synth_pair):
    low, _ = synth_pair
    spec = SplitSpec(mode="nested", n_train_low=12, n_train_high=6, n_val=4, n_test=6, seed=0)
    return make_split(low.ids, spec)


@pytest.fixture
def quick_train_config():
    return TrainConfig(learning_rate=5e-3, batch_size=8, patience=3, max_epochs=3, seed=0, eval_latent_samples=4)


@pytest.fixture
def synth_dir(tmp_path, synth_pair, synth_split):
    low, high = synth_pair
    path = str(tmp_path / "synth")
    write_dataset(path, low, high, synth_split)
    return path
