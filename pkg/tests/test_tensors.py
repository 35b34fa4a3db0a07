import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexti2v.errors import DimensionError, FormatError
from flexti2v.tensors import (
    Codec,
    ConditionSet,
    LatentFrame,
    LatentVideo,
    decode,
    encode,
    read_ltn,
    read_ppm,
    write_ltn,
    write_ppm,
)


def rand_raster(rng, h=8, w=8):
    return rng.uniform(-1.0, 1.0, (3, h, w)).astype(np.float32)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


def test_latent_frame_rejects_non_finite():
    bad = np.zeros((1, 2, 2), dtype=np.float32)
    bad[0, 0, 0] = np.inf
    with pytest.raises(DimensionError):
        LatentFrame(bad)


def test_latent_frame_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        LatentFrame(np.zeros((2, 2), dtype=np.float32))


def test_video_from_frames_checks_dims():
    a = LatentFrame(np.zeros((1, 2, 2), dtype=np.float32))
    b = LatentFrame(np.zeros((1, 2, 3), dtype=np.float32))
    with pytest.raises(DimensionError):
        LatentVideo.from_frames([a, b])


def test_condition_set_invariants():
    lat = LatentFrame(np.zeros((1, 2, 2), dtype=np.float32))
    with pytest.raises(DimensionError):
        ConditionSet((), ())
    with pytest.raises(DimensionError):
        ConditionSet((lat, lat), (3, 3))
    with pytest.raises(DimensionError):
        ConditionSet((lat, lat), (5, 2))
    cs = ConditionSet((lat, lat), (2, 5))
    assert len(cs) == 2 and cs.positions == (2, 5)


# ---------------------------------------------------------------------------
# codecs
# ---------------------------------------------------------------------------


def test_identity_encode_constant_gray():
    img = np.full((3, 2, 2), 0.5, dtype=np.float32)
    lat = encode(img, Codec())
    assert lat.dims == (3, 2, 2)
    assert np.array_equal(lat.data, img)


def test_patchify_shape():
    img = np.zeros((3, 4, 4), dtype=np.float32)
    lat = encode(img, Codec(kind="patchify", patch=2))
    assert lat.dims == (12, 2, 2)
    back = decode(lat, Codec(kind="patchify", patch=2))
    assert back.shape == (3, 4, 4)


def test_patchify_rejects_indivisible():
    img = np.zeros((3, 5, 4), dtype=np.float32)
    with pytest.raises(DimensionError):
        encode(img, Codec(kind="patchify", patch=2))


def test_decode_checks_channels():
    lat = LatentFrame(np.zeros((4, 2, 2), dtype=np.float32))
    with pytest.raises(DimensionError):
        decode(lat, Codec())


def test_codec_rejects_unsafe_affine():
    with pytest.raises(DimensionError):
        Codec(scale=0.3)
    with pytest.raises(DimensionError):
        Codec(offset=0.1)
    Codec(scale=0.25)  # power of two is fine


@pytest.mark.parametrize(
    "codec",
    [
        Codec(),
        Codec(scale=2.0),
        Codec(kind="patchify", patch=2),
        Codec(kind="patchify", patch=2, scale=(0.5,) * 12),
    ],
)
def test_roundtrip_bit_exact(codec):
    rng = np.random.default_rng(5)
    img = rand_raster(rng)
    assert np.array_equal(decode(encode(img, codec), codec), img)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=1, max_value=3).map(lambda f: 2 * f),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_roundtrip_property(size, seed):
    rng = np.random.default_rng(seed)
    img = rand_raster(rng, size, size)
    for codec in (Codec(), Codec(kind="patchify", patch=2, scale=4.0)):
        assert np.array_equal(decode(encode(img, codec), codec), img)


def test_patchify_is_space_to_depth():
    img = np.arange(3 * 4 * 4, dtype=np.float32).reshape(3, 4, 4)
    lat = encode(img, Codec(kind="patchify", patch=2))
    # latent channel c*4 + di*2 + dj at (i, j) holds pixel (c, 2i+di, 2j+dj)
    for c in range(3):
        for di in range(2):
            for dj in range(2):
                for i in range(2):
                    for j in range(2):
                        assert (
                            lat.data[c * 4 + di * 2 + dj, i, j]
                            == img[c, 2 * i + di, 2 * j + dj]
                        )


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------


def test_ppm_single_pixel_values(tmp_path):
    path = tmp_path / "one.ppm"
    path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 127]))
    raster = read_ppm(path)
    assert raster.shape == (3, 1, 1)
    assert raster[0, 0, 0] == 1.0
    assert raster[1, 0, 0] == -1.0
    assert raster[2, 0, 0] == pytest.approx(127.0 / 127.5 - 1.0, abs=1e-7)


def test_ppm_roundtrip_byte_exact(tmp_path):
    rng = np.random.default_rng(11)
    src = tmp_path / "src.ppm"
    src.write_bytes(b"P6\n4 3\n255\n" + bytes(rng.integers(0, 256, 36, dtype=np.uint8)))
    back = tmp_path / "back.ppm"
    write_ppm(read_ppm(src), back)
    assert back.read_bytes() == src.read_bytes()


def test_ppm_write_clamps(tmp_path):
    img = np.array([[[2.0]], [[-3.0]], [[0.0]]], dtype=np.float32)
    path = tmp_path / "clamp.ppm"
    write_ppm(img, path)
    assert read_ppm(path)[0, 0, 0] == 1.0
    assert read_ppm(path)[1, 0, 0] == -1.0


def test_ppm_every_byte_value_roundtrips(tmp_path):
    # read then write must reproduce all 256 quantization levels exactly
    payload = bytes(range(256)) * 3
    src = tmp_path / "levels.ppm"
    src.write_bytes(b"P6\n16 16\n255\n" + payload)
    back = tmp_path / "levels2.ppm"
    write_ppm(read_ppm(src), back)
    assert back.read_bytes() == src.read_bytes()


def test_zero_latent_decodes_to_mid_gray_file(tmp_path):
    lat = LatentFrame(np.zeros((3, 2, 2), dtype=np.float32))
    raster = decode(lat, Codec())
    assert np.array_equal(raster, np.zeros((3, 2, 2), dtype=np.float32))
    path = tmp_path / "gray.ppm"
    write_ppm(raster, path)
    # 0.0 maps to 127.5, rounding half away from zero to 128
    assert path.read_bytes()[-12:] == bytes([128] * 12)


def test_ppm_bad_magic(tmp_path):
    path = tmp_path / "gray.pgm"
    path.write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError, match="magic"):
        read_ppm(path)


def test_ppm_truncated_payload(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="expected 12 bytes, got 5"):
        read_ppm(path)


def test_ppm_bad_maxval(tmp_path):
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError, match="maxval"):
        read_ppm(path)


# ---------------------------------------------------------------------------
# LTN
# ---------------------------------------------------------------------------


def test_ltn_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    video = LatentVideo(rng.standard_normal((3, 4, 8, 8)).astype(np.float32))
    path = tmp_path / "v.ltn"
    write_ltn(video, path)
    assert np.array_equal(read_ltn(path).data, video.data)


def test_ltn_scalar_payload_encoding(tmp_path):
    video = LatentVideo(np.full((1, 1, 1, 1), 2.0, dtype=np.float32))
    path = tmp_path / "two.ltn"
    write_ltn(video, path)
    raw = path.read_bytes()
    assert raw[:4] == b"LTN1"
    assert struct.unpack("<H", raw[4:6])[0] == 1
    assert struct.unpack("<4I", raw[6:22]) == (1, 1, 1, 1)
    assert raw[22:] == bytes([0x00, 0x00, 0x00, 0x40])


def test_ltn_truncated_payload(tmp_path):
    video = LatentVideo(np.zeros((1, 1, 2, 2), dtype=np.float32))
    path = tmp_path / "t.ltn"
    write_ltn(video, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="expected 16 bytes, got 13"):
        read_ltn(path)


def test_ltn_bad_magic(tmp_path):
    path = tmp_path / "bad.ltn"
    path.write_bytes(b"XTN1" + bytes(30))
    with pytest.raises(FormatError, match="magic"):
        read_ltn(path)


def test_ltn_bad_version(tmp_path):
    path = tmp_path / "v9.ltn"
    path.write_bytes(b"LTN1" + struct.pack("<HIIII", 9, 1, 1, 1, 1) + bytes(4))
    with pytest.raises(FormatError, match="version"):
        read_ltn(path)


def test_ltn_dim_overflow(tmp_path):
    path = tmp_path / "huge.ltn"
    path.write_bytes(
        b"LTN1" + struct.pack("<HIIII", 1, 2**31, 2**31, 64, 64) + bytes(4)
    )
    with pytest.raises(FormatError, match="overflow"):
        read_ltn(path)
