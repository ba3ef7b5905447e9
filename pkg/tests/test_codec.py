import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtryon import Codec, CodecParams, ConfigError
from vtryon.codec import disassemble


def test_params_validation():
    with pytest.raises(ConfigError, match="mode"):
        CodecParams(mode="banana").validate()
    with pytest.raises(ConfigError, match="not divisible"):
        CodecParams(height=30).validate()
    with pytest.raises(ConfigError, match="must be >="):
        CodecParams(d=16, patch_size=4).validate()  # patch dim 48 > 16
    CodecParams().validate()


def test_embedding_orthonormal_columns(small_codec):
    e = small_codec.embedding
    k = small_codec.params.patch_dim
    assert e.shape == (small_codec.params.d, k)
    np.testing.assert_allclose(e.T @ e, np.eye(k), atol=1e-12)


def test_embedding_deterministic():
    a = Codec(CodecParams(seed=9)).embedding
    b = Codec(CodecParams(seed=9)).embedding
    c = Codec(CodecParams(seed=10)).embedding
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_encode_shapes(small_codec, rng):
    video = rng.random((5, 3, 8, 8)).astype(np.float32)
    latents = small_codec.encode_video(video)
    assert latents.shape == (5, 16, 16)  # (F, P, d)
    assert latents.dtype == np.float32


def test_round_trip_within_1e5(small_codec, rng):
    for _ in range(20):
        video = rng.random((3, 3, 8, 8)).astype(np.float32)
        back = small_codec.decode_video(small_codec.encode_video(video))
        assert np.abs(back - video).max() <= 1e-5


def test_patch_layout_frame_major_row_major():
    codec = Codec(CodecParams(d=16, patch_size=2, height=4, width=4, seed=0))
    video = np.zeros((2, 3, 4, 4), dtype=np.float32)
    video[1, :, 0, 2:] = 1.0  # top-right patch of frame 1 only
    latents = codec.encode_video(video)
    norms = np.linalg.norm(latents, axis=2)  # (F, P)
    assert norms[0].max() == 0.0
    active = np.nonzero(norms[1])[0]
    assert list(active) == [1]  # patch index 1 = row 0, col 1


def test_decode_rejects_bad_shapes(small_codec):
    with pytest.raises(ConfigError, match="decode_video wants"):
        small_codec.decode_video(np.zeros((2, 16, 15), dtype=np.float32))
    with pytest.raises(ConfigError, match="encode_video wants"):
        small_codec.encode_video(np.zeros((3, 8, 8), dtype=np.float32))
    with pytest.raises(ConfigError, match="expected frames"):
        small_codec.encode_video(np.zeros((2, 3, 8, 10), dtype=np.float32))


def test_encode_image_modes(small_codec, rng):
    image = rng.random((3, 8, 8)).astype(np.float32)
    block = small_codec.encode_image(image)
    assert block.shape == (16, 16)
    pooled = small_codec.encode_image(image, mode="single-pooled")
    assert pooled.shape == (1, 16)
    np.testing.assert_allclose(pooled[0], block.mean(axis=0), atol=1e-6)
    with pytest.raises(ConfigError, match="mode"):
        small_codec.encode_image(image, mode="weird")
    with pytest.raises(ConfigError, match="encode_image wants"):
        small_codec.encode_image(image[None])


def test_assemble_sequence_layout(small_codec, rng):
    video = rng.random((3, 3, 8, 8)).astype(np.float32)
    image = rng.random((3, 8, 8)).astype(np.float32)
    block = small_codec.encode_image(image)
    latents = small_codec.encode_video(video)
    seq = small_codec.assemble_sequence(block, latents)
    assert seq.block_len == 16
    assert seq.n_tokens == 16 + 3 * 16
    assert seq.tokens.dtype == np.float32
    np.testing.assert_array_equal(seq.garment_rows(), block)
    np.testing.assert_array_equal(
        seq.video_rows(), latents.reshape(-1, latents.shape[-1])
    )
    tags = seq.index_map
    assert tags[0] == ("garment", 0)
    assert tags[16] == ("frame", 0, 0)
    assert tags[16 + 16] == ("frame", 1, 0)
    assert tags[-1] == ("frame", 2, 15)


def test_assemble_accepts_pooled_block(small_codec, rng):
    latents = small_codec.encode_video(rng.random((2, 3, 8, 8)).astype(np.float32))
    pooled = small_codec.encode_image(
        rng.random((3, 8, 8)).astype(np.float32), mode="single-pooled"
    )
    seq = small_codec.assemble_sequence(pooled, latents)
    assert seq.block_len == 1


def test_assemble_rejects_bad_inputs(small_codec, rng):
    latents = small_codec.encode_video(rng.random((2, 3, 8, 8)).astype(np.float32))
    with pytest.raises(ConfigError, match="2-D"):
        small_codec.assemble_sequence(latents[0, 0], latents)
    with pytest.raises(ConfigError, match="width mismatch"):
        small_codec.assemble_sequence(np.zeros((16, 15), dtype=np.float32), latents)
    with pytest.raises(ConfigError, match="neither 1 nor"):
        small_codec.assemble_sequence(np.zeros((5, 16), dtype=np.float32), latents)
    with pytest.raises(ConfigError, match="latent frames"):
        small_codec.assemble_sequence(np.zeros((16, 16), dtype=np.float32), latents[0])


def test_disassemble_inverts_assemble(small_codec, rng):
    block = rng.random((16, 16)).astype(np.float32)
    latents = rng.random((2, 16, 16)).astype(np.float32)
    seq = small_codec.assemble_sequence(block, latents)
    garment, video = disassemble(seq)
    np.testing.assert_array_equal(garment, block)
    np.testing.assert_array_equal(video, latents)


@settings(max_examples=10, deadline=None)
@given(
    ps=st.sampled_from([1, 2, 4]),
    frames=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=100),
)
def test_round_trip_property_over_geometries(ps, frames, seed):
    d = 3 * ps * ps
    params = CodecParams(d=max(d, 4), patch_size=ps, height=8, width=8, seed=seed)
    codec = Codec(params)
    video = np.random.default_rng(seed).random((frames, 3, 8, 8)).astype(np.float32)
    back = codec.decode_video(codec.encode_video(video))
    assert np.abs(back - video).max() <= 1e-5
