import numpy as np
import pytest

from pathx.ml.numeric import Rng
from pathx.ml.vit import init_vit_weights
from pathx.models.models import ClinicalRecord
from pathx.schemas.schemas import ViTConfig


@pytest.fixture
def toy_vit_config():
    return ViTConfig(image_size=32, patch_size=16, embed_dim=8, num_heads=2, num_layers=1, mlp_hidden=16)


@pytest.fixture
def toy_vit_weights(toy_vit_config):
    return init_vit_weights(toy_vit_config, Rng(11))


@pytest.fixture
def toy_tile():
    generator = np.random.default_rng(3)
    return generator.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)


def make_records(times, events, prefix="c"):
    return [
        ClinicalRecord(case_id=f"{prefix}{i}", time=float(t), event=bool(e))
        for i, (t, e) in enumerate(zip(times, events))
    ]
