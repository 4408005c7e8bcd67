import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from shapereid.backbone import make_backbone_config
from shapereid.synth import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_ds(tmp_path_factory):
    """Small paired dataset shared by unit tests: 8 identities at 64x32."""
    cfg = SynthConfig(num_identities=8, images_per_identity_per_modality=3,
                      image_size=(64, 32), corruption_rate=0.5,
                      eval_images_per_identity=2, seed=1)
    return generate_dataset(cfg, tmp_path_factory.mktemp("tiny_ds"))


@pytest.fixture(scope="session")
def mini_bb():
    return make_backbone_config("toy", input_size=(64, 32))
