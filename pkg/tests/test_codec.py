import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentscore.codec import (
    CodecSpec,
    LatentSequence,
    PatchSequence,
    Waveform,
    decode,
    encode,
    patchify,
    unpatchify,
)
from latentscore.container import read_array, write_array
from latentscore.errors import ConfigError, DataError
from latentscore.tensor import Rng

SPEC = CodecSpec(frame_size=8, channels=8, seed=1234)


def test_codec_matrix_is_orthogonal_and_reproducible():
    q = SPEC.matrix()
    assert np.max(np.abs(q.T @ q - np.eye(8))) < 1e-10
    assert np.array_equal(q, CodecSpec(frame_size=8, channels=8, seed=1234).matrix())
    other = CodecSpec(frame_size=8, channels=8, seed=99).matrix()
    assert not np.array_equal(q, other)


def test_codec_requires_square_map():
    with pytest.raises(ConfigError):
        CodecSpec(frame_size=8, channels=4)


def test_encode_zero_waveform_gives_zero_latents():
    z = encode(Waveform(np.zeros(32)), SPEC)
    assert np.array_equal(z.frames, np.zeros((4, 8)))


def test_encode_rejects_empty_waveform():
    with pytest.raises(DataError):
        Waveform(np.array([]))


def test_roundtrip_and_isometry():
    rng = Rng(5)
    w = Waveform(rng.normal(40))
    z = encode(w, SPEC)
    back = decode(z, SPEC)
    assert back.samples.shape == w.samples.shape
    assert np.max(np.abs(back.samples - w.samples)) < 1e-10
    assert abs(np.linalg.norm(z.frames) - np.linalg.norm(w.samples)) < 1e-10


def test_roundtrip_with_padding_trim():
    rng = Rng(6)
    w = Waveform(rng.normal(21))  # not a multiple of frame_size
    z = encode(w, SPEC)
    assert z.frames.shape == (3, 8)
    back = decode(z, SPEC)
    assert back.samples.shape == (21,)
    assert np.max(np.abs(back.samples - w.samples)) < 1e-10


def test_latent_roundtrip_other_direction():
    rng = Rng(7)
    z = LatentSequence(rng.normal((5, 8)))
    w = decode(z, SPEC)
    z2 = encode(w, SPEC)
    assert np.max(np.abs(z2.frames - z.frames)) < 1e-10
    assert abs(np.linalg.norm(w.samples) - np.linalg.norm(z.frames)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=97), st.integers(min_value=0, max_value=2**31))
def test_roundtrip_property(n_samples, seed):
    w = Waveform(Rng(seed).normal(n_samples))
    back = decode(encode(w, SPEC), SPEC)
    assert np.max(np.abs(back.samples - w.samples)) < 1e-10


def test_patchify_ordering():
    frames = np.arange(16 * 8, dtype=float).reshape(16, 8)
    m = patchify(LatentSequence(frames), 4)
    assert m.count == 4 and m.patch_len == 4
    assert np.array_equal(m.patches[1], frames[4:8])


def test_patchify_pads_tail_with_zeros():
    frames = np.ones((10, 8))
    m = patchify(LatentSequence(frames), 4)
    assert m.count == 3
    assert np.array_equal(m.patches[2][2:], np.zeros((2, 8)))
    assert np.array_equal(m.patches[2][:2], np.ones((2, 8)))


def test_patchify_rejects_bad_patch_len():
    with pytest.raises(ConfigError):
        patchify(LatentSequence(np.zeros((4, 8))), 0)


@pytest.mark.parametrize("p", [4, 8, 16])
def test_unpatchify_roundtrip_bit_exact(p):
    rng = Rng(p)
    frames = rng.normal((p * 3, 8))
    z = LatentSequence(frames)
    back = unpatchify(patchify(z, p))
    assert np.array_equal(back.frames, frames)


def test_patchify_of_unpatchify_identity():
    rng = Rng(17)
    m = PatchSequence(rng.normal((3, 4, 8)))
    again = patchify(unpatchify(m), 4)
    assert np.array_equal(again.patches, m.patches)


# ---------------------------------------------------------------------------
# binary container


def test_container_roundtrip(tmp_path):
    rng = Rng(2)
    arr = rng.normal((7, 3))
    path = tmp_path / "a.lsc"
    write_array(path, arr)
    assert np.array_equal(read_array(path), arr)


def test_container_writes_are_deterministic(tmp_path):
    arr = Rng(3).normal((4, 4))
    p1, p2 = tmp_path / "x1", tmp_path / "x2"
    write_array(p1, arr)
    write_array(p2, arr)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_header_layout(tmp_path):
    path = tmp_path / "h.lsc"
    write_array(path, np.zeros((2, 5)))
    raw = path.read_bytes()
    assert raw[:12] == b"LSCORE-ARR\x00\x00"
    assert int.from_bytes(raw[12:16], "little") == 1
    assert int.from_bytes(raw[16:20], "little") == 2
    assert int.from_bytes(raw[20:28], "little") == 2
    assert int.from_bytes(raw[28:36], "little") == 5
    assert len(raw) == 36 + 8 * 10


@pytest.mark.parametrize(
    "mangle",
    [
        lambda raw: b"BADMAGIC!!!!" + raw[12:],
        lambda raw: raw[:40],
        lambda raw: raw + b"\x00" * 8,
        lambda raw: raw[:12] + (9).to_bytes(4, "little") + raw[16:],
    ],
)
def test_container_rejects_corruption(tmp_path, mangle):
    path = tmp_path / "c.lsc"
    write_array(path, np.ones((3, 3)))
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(DataError, match="c.lsc"):
        read_array(path)
