import pytest
import torch

from ldmshield.data import make_dataset
from ldmshield.models import ToyLDM
from ldmshield.training import TrainConfig, train_ldm

# Medium-budget session model: large enough for meaningful gradients and
# generation, small enough to train in about a minute on one core.
SESSION_TRAIN = TrainConfig(codec_steps=500, denoiser_steps=1000,
                            batch_size=48, seed=7)


@pytest.fixture(scope="session")
def shapes_dataset():
    return make_dataset(128, seed=11)


@pytest.fixture(scope="session")
def trained_bundle(shapes_dataset):
    torch.manual_seed(0)
    model = ToyLDM()
    codec_trace, denoiser_trace = train_ldm(model, shapes_dataset, SESSION_TRAIN)
    return {"model": model, "dataset": shapes_dataset,
            "codec_trace": codec_trace, "denoiser_trace": denoiser_trace,
            "config": SESSION_TRAIN}


@pytest.fixture(scope="session")
def trained_model(trained_bundle):
    return trained_bundle["model"]
