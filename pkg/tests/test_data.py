import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdnet.data import (
    MASK_BAND,
    DatasetIndex,
    blob_mask,
    read_image,
    read_mask,
    split_dataset,
    synth_generate,
    synth_sample,
    value_noise,
)


def test_synth_is_byte_identical_across_runs(tmp_path):
    a = synth_generate(8, 64, 7, tmp_path / "a")
    b = synth_generate(8, 64, 7, tmp_path / "b")
    assert len(a.entries) == 8
    for ea, eb in zip(a.entries, b.entries):
        for rel_a, rel_b in ((ea.image, eb.image), (ea.mask, eb.mask)):
            assert filecmp.cmp(tmp_path / "a" / rel_a, tmp_path / "b" / rel_b, shallow=False)


def test_synth_seed_changes_content(tmp_path):
    a = synth_generate(2, 32, 1, tmp_path / "a")
    b = synth_generate(2, 32, 2, tmp_path / "b")
    assert not np.array_equal(read_image(tmp_path / "a" / a.entries[0].image),
                              read_image(tmp_path / "b" / b.entries[0].image))


def test_synth_files_decode_to_expected_layout(tmp_path):
    index = synth_generate(3, 32, 0, tmp_path)
    index.validate()
    again = DatasetIndex.load(tmp_path)
    assert again.entries == index.entries and again.seed == 0
    ids, images, masks = again.load_arrays("train")
    assert ids == ["0000", "0001", "0002"]
    assert images.shape == (3, 32, 32, 3) and masks.shape == (3, 32, 32)
    assert set(np.unique(masks)) <= {0.0, 1.0}


@pytest.mark.parametrize("n", [0, -3])
def test_synth_rejects_non_positive_count(tmp_path, n):
    with pytest.raises(ValueError):
        synth_generate(n, 32, 0, tmp_path)


def test_synth_rejects_bad_contrast(tmp_path):
    with pytest.raises(ValueError):
        synth_generate(1, 32, 0, tmp_path, contrast=1.5)


def test_mask_fraction_band_scan():
    fractions = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        for size in (32, 64):
            fractions.append(blob_mask(rng, size).mean())
    assert MASK_BAND[0] <= min(fractions) and max(fractions) <= MASK_BAND[1]


def test_saved_masks_keep_the_band(tmp_path):
    index = synth_generate(12, 64, 7, tmp_path)
    for e in index.entries:
        assert MASK_BAND[0] <= read_mask(tmp_path / e.mask).mean() <= MASK_BAND[1]


def test_full_contrast_separates_foreground_colour():
    rng = np.random.default_rng(3)
    image, mask = synth_sample(rng, 64, contrast=1.0)
    fg = image[mask > 0].mean(axis=0)
    bg = image[mask == 0].mean(axis=0)
    matched = synth_sample(np.random.default_rng(3), 64, contrast=0.0)
    fg0 = matched[0][matched[1] > 0].mean(axis=0)
    bg0 = matched[0][matched[1] == 0].mean(axis=0)
    assert np.abs(fg - bg).sum() > np.abs(fg0 - bg0).sum()


def test_value_noise_range():
    noise = value_noise(np.random.default_rng(0), 48)
    assert noise.shape == (48, 48)
    assert noise.min() == pytest.approx(0.0, abs=1e-9) and noise.max() == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- splitting


def fake_index(n):
    from fdnet.data import Entry

    return DatasetIndex("unused", [Entry(f"images/{i}.png", f"masks/{i}.png") for i in range(n)], 0)


def test_ten_items_split_eight_two():
    out = split_dataset(fake_index(10), 0.8, seed=0)
    assert len(out.subset("train")) == 8 and len(out.subset("test")) == 2


def test_ratio_one_keeps_everything_in_train():
    out = split_dataset(fake_index(7), 1.0, seed=4)
    assert len(out.subset("train")) == 7


def test_same_seed_same_assignment():
    a = split_dataset(fake_index(20), 0.8, seed=11)
    b = split_dataset(fake_index(20), 0.8, seed=11)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split_dataset(fake_index(3), 1.2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.floats(0.0, 1.0), st.integers(0, 2**16))
def test_split_is_exhaustive_and_honours_ratio(n, ratio, seed):
    out = split_dataset(fake_index(n), ratio, seed)
    train, test = out.subset("train"), out.subset("test")
    assert len(train) + len(test) == n
    assert {e.image for e in train}.isdisjoint({e.image for e in test})
    assert abs(len(train) - ratio * n) <= 1


def test_validate_reports_missing_file(tmp_path):
    index = synth_generate(1, 32, 0, tmp_path)
    (tmp_path / index.entries[0].mask).unlink()
    with pytest.raises(FileNotFoundError):
        DatasetIndex.load(tmp_path).validate()
