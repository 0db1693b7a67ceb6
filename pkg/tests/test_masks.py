import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskgan.masks import (
    CodecError,
    ImageTensor,
    LabelMask,
    OneHotMask,
    decode_image_png,
    decode_mask_png,
    encode_image_png,
    encode_mask_png,
    label_to_onehot,
    onehot_to_label,
    resize_mask,
)
from maskgan.palette import DEFAULT_PALETTE, CategoryPalette, make_palette

PAL3 = make_palette([("a", (0, 0, 0)), ("b", (255, 0, 0)), ("c", (0, 255, 0))])


def random_mask(rng, h, w, count):
    return LabelMask(rng.integers(0, count, size=(h, w), dtype=np.uint8))


def test_palette_default_has_19_categories_background_first():
    assert DEFAULT_PALETTE.count == 19
    assert DEFAULT_PALETTE.categories[0].name == "background"
    assert [c.index for c in DEFAULT_PALETTE.categories] == list(range(19))


def test_palette_rejects_gaps_and_duplicates():
    from maskgan.palette import Category

    with pytest.raises(ValueError):
        CategoryPalette((Category(0, "a", (0, 0, 0)), Category(2, "b", (1, 1, 1))))
    with pytest.raises(ValueError):
        CategoryPalette((Category(0, "a", (0, 0, 0)), Category(1, "a", (1, 1, 1))))


def test_palette_json_round_trip(tmp_path):
    path = tmp_path / "palette.json"
    DEFAULT_PALETTE.save(path)
    assert CategoryPalette.load(path) == DEFAULT_PALETTE


def test_label_to_onehot_single_pixel():
    m = LabelMask(np.zeros((1, 1), dtype=np.uint8))
    oh = label_to_onehot(m, PAL3)
    assert oh.values[0, 0].tolist() == [1, 0, 0]


def test_label_to_onehot_constant_mask():
    m = LabelMask(np.full((2, 2), 18, dtype=np.uint8))
    oh = label_to_onehot(m, DEFAULT_PALETTE)
    assert (oh.values[:, :, 18] == 1).all()
    assert oh.values.sum() == 4


def test_label_to_onehot_rejects_out_of_range():
    m = LabelMask(np.array([[0, 7]], dtype=np.uint8))
    with pytest.raises(CodecError, match=r"\(0, 1\)"):
        label_to_onehot(m, PAL3)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_onehot_round_trip_random_masks(seed):
    rng = np.random.default_rng(seed)
    m = random_mask(rng, 8, 8, DEFAULT_PALETTE.count)
    back = onehot_to_label(label_to_onehot(m, DEFAULT_PALETTE), DEFAULT_PALETTE)
    assert (back.labels == m.labels).all()


def test_onehot_to_label_soft_and_ties():
    soft = OneHotMask(np.array([[[0.2, 0.5, 0.3]]], dtype=np.float32))
    assert onehot_to_label(soft).labels[0, 0] == 1
    tie = OneHotMask(np.array([[[0.5, 0.5, 0.0]]], dtype=np.float32))
    assert onehot_to_label(tie).labels[0, 0] == 0


def test_onehot_channel_mismatch_errors():
    oh = OneHotMask(np.zeros((2, 2, 5), dtype=np.float32))
    with pytest.raises(CodecError):
        onehot_to_label(oh, PAL3)


def test_resize_mask_upscale_and_identity():
    m = LabelMask(np.array([[5]], dtype=np.uint8))
    up = resize_mask(m, 2, 2)
    assert (up.labels == 5).all() and up.labels.shape == (2, 2)
    m2 = random_mask(np.random.default_rng(0), 6, 9, 19)
    assert resize_mask(m2, 6, 9) is m2


def test_resize_mask_rejects_bad_dims():
    m = LabelMask(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        resize_mask(m, 0, 2)
    with pytest.raises(ValueError):
        resize_mask(m, 2, -1)


def test_resize_never_invents_labels():
    rng = np.random.default_rng(1)
    m = random_mask(rng, 17, 13, 19)
    out = resize_mask(m, 5, 29)
    assert set(np.unique(out.labels)) <= set(np.unique(m.labels))


def test_resize_512_64_512_preserves_block_structure():
    # Block-structured mask: 8x8 blocks of 64 px, like coarse face regions.
    rng = np.random.default_rng(7)
    blocks = rng.integers(0, 19, size=(8, 8), dtype=np.uint8)
    full = LabelMask(np.kron(blocks, np.ones((64, 64), dtype=np.uint8)))
    down = resize_mask(full, 64, 64)
    back = resize_mask(down, 512, 512)
    agreement = (back.labels == full.labels).mean()
    assert agreement >= 0.90


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_mask_png_round_trip(seed):
    rng = np.random.default_rng(seed)
    m = random_mask(rng, 16, 16, DEFAULT_PALETTE.count)
    data = encode_mask_png(m, DEFAULT_PALETTE)
    back = decode_mask_png(data, DEFAULT_PALETTE)
    assert (back.labels == m.labels).all()


def test_mask_png_all_zero_decodes_to_background():
    m = LabelMask(np.zeros((4, 4), dtype=np.uint8))
    back = decode_mask_png(encode_mask_png(m, DEFAULT_PALETTE), DEFAULT_PALETTE)
    assert (back.labels == 0).all()


def test_mask_png_out_of_range_value_rejected():
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.full((2, 2), 200, dtype=np.uint8), mode="L").save(buf, format="PNG")
    with pytest.raises(CodecError):
        decode_mask_png(buf.getvalue(), DEFAULT_PALETTE)


def test_mask_png_garbage_rejected():
    with pytest.raises(CodecError):
        decode_mask_png(b"not a png", DEFAULT_PALETTE)


def test_mask_png_embedded_palette_mismatch():
    data = encode_mask_png(LabelMask(np.array([[0, 1], [2, 1]], dtype=np.uint8)), PAL3)
    # Same bytes decode fine without the strict check but fail against a
    # 19-category palette whose colors differ.
    decode_mask_png(data, DEFAULT_PALETTE)
    with pytest.raises(CodecError, match="palette"):
        decode_mask_png(data, DEFAULT_PALETTE, check_embedded_palette=True)


def test_image_round_trip_quantization_bound():
    rng = np.random.default_rng(3)
    img = ImageTensor(rng.uniform(-1, 1, size=(8, 8, 3)).astype(np.float32))
    back = decode_image_png(encode_image_png(img))
    assert np.abs(back.values - img.values).max() <= 1 / 127


def test_image_encode_clamps():
    img = ImageTensor(np.full((2, 2, 3), 4.0, dtype=np.float32))
    back = decode_image_png(encode_image_png(img))
    assert np.allclose(back.values, 1.0)
