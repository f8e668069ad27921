"""
Shared fixtures
"""

import numpy as np
import pytest

from pgmotion.datasets import WindowedDataset, synth_motion, windows_from_sequences
from pgmotion.models import ModelConfig, SynthParams, TrainConfig
from pgmotion.network import init_model
from pgmotion.tensor import GRADCHECK_DTYPE


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """Smallest useful architecture: L=6, M=3, D=2, F=4"""
    return ModelConfig(num_stages=2, t_h=3, t_f=3, joints=3, dims=2, features=4,
                       encoder_gcbs=1, decoder_gcbs=1, dropout_rate=0.0)


@pytest.fixture
def tiny_model(tiny_config):
    return init_model(tiny_config, seed=0)


@pytest.fixture
def tiny_model64(tiny_config):
    return init_model(tiny_config, seed=0, dtype=GRADCHECK_DTYPE)


@pytest.fixture
def tiny_batch(rng, tiny_config):
    """(obs, future) with 4 windows"""
    obs = rng.normal(size=(4, tiny_config.t_h, tiny_config.joints, tiny_config.dims))
    future = rng.normal(size=(4, tiny_config.t_f, tiny_config.joints, tiny_config.dims))
    return obs.astype(np.float32), future.astype(np.float32)


@pytest.fixture
def tiny_dataset(tiny_config):
    params = SynthParams(amplitude_min=0.5, amplitude_max=1.0, drift=0.5, noise_sigma=0.05)
    sequences = synth_motion(3, 2, 12, tiny_config.joints, tiny_config.dims, params)
    return windows_from_sequences(sequences, tiny_config.t_h, tiny_config.t_f)


@pytest.fixture
def quick_train():
    return TrainConfig(epochs=2, batch_size=4, horizons_ms=[40, 80, 120])


@pytest.fixture
def corpus(tmp_path):
    """Synthetic corpus on disk sized for the tiny config"""
    from pgmotion.datasets import write_corpus
    params = SynthParams(amplitude_min=0.5, amplitude_max=1.0, drift=0.5, noise_sigma=0.05)
    sequences = synth_motion(11, 10, 12, 3, 2, params)
    write_corpus(sequences, tmp_path / "corpus", seed=11)
    return tmp_path / "corpus"
