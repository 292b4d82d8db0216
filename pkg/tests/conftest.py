import numpy as np
import pytest

from videodms.model import ModelConfig
from videodms.sampleio import Labels, SampleBundle


def small_model_config(t=8, dtype="float32"):
    """A narrow model that keeps unit tests fast; full architecture."""
    return ModelConfig(t=t, d=4, k=2, expert_hidden=8, temporal_expert_hidden=8,
                       router_hidden=8, gate_hidden=8, region_channels=(2, 3),
                       stmap_channels=(3, 4), landmark_channels=2, dtype=dtype)


def random_inputs(cfg: ModelConfig, batch: int, rng: np.random.Generator):
    shapes = {
        "left_eye": (batch, cfg.t, *cfg.eye_hw, 3),
        "right_eye": (batch, cfg.t, *cfg.eye_hw, 3),
        "mouth": (batch, cfg.t, *cfg.mouth_hw, 3),
        "landmarks": (batch, cfg.t, cfg.n_landmarks, 2),
        "stmap": (batch, cfg.t, cfg.stmap_rois, 3),
    }
    return {k: rng.uniform(0, 1, shapes[k]).astype(cfg.np_dtype)
            for k in cfg.features}


def random_bundle(rng: np.random.Generator, t=8, labels=None) -> SampleBundle:
    return SampleBundle(
        left_eye=rng.uniform(0, 1, (t, 25, 25, 3)).astype(np.float32),
        right_eye=rng.uniform(0, 1, (t, 25, 25, 3)).astype(np.float32),
        mouth=rng.uniform(0, 1, (t, 35, 15, 3)).astype(np.float32),
        landmarks=rng.uniform(0, 128, (t, 106, 2)).astype(np.float32),
        stmap=rng.uniform(0, 1, (t, 25, 3)).astype(np.float32),
        labels=labels or Labels(72.0, 15.0, int(rng.integers(0, 2)),
                                int(rng.integers(0, 2))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
