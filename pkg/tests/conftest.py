import numpy as np
import pytest

from vtryon import (
    Codec,
    CodecParams,
    GenConfig,
    LoraConfig,
    ModelConfig,
    TrainConfig,
    build_bundle,
    build_dataset,
)


@pytest.fixture(scope="session")
def tiny_gen_config() -> GenConfig:
    return GenConfig(
        num_frames=6,
        height=32,
        width=32,
        patch_size=4,
        garment_size=16,
        pool_size=3,
        train_samples=3,
        eval_samples=3,
        seed=11,
    )


@pytest.fixture(scope="session")
def tiny_manifest(tiny_gen_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    return build_dataset(tiny_gen_config, out)


@pytest.fixture(scope="session")
def tiny_model_cfg(tiny_gen_config) -> ModelConfig:
    return ModelConfig(
        frames=tiny_gen_config.num_frames,
        height=tiny_gen_config.height,
        width=tiny_gen_config.width,
        patch_size=tiny_gen_config.patch_size,
    )


@pytest.fixture(scope="session")
def tiny_bundle(tiny_model_cfg):
    return build_bundle(
        tiny_model_cfg, lora_cfg=LoraConfig(), train_cfg=TrainConfig(steps=2)
    )


@pytest.fixture()
def small_codec() -> Codec:
    return Codec(CodecParams(d=16, patch_size=2, height=8, width=8, seed=3))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
