"""Tests for the procedural garment dataset."""

import numpy as np
import pytest
from PIL import Image

from creagen.synth import (
    DatasetError,
    N_SHAPES,
    N_TEXTURES,
    apply_jitter,
    area_fraction,
    generate_dataset,
    is_four_connected,
    jitter,
    load_dataset,
    load_image_directory,
    mask_iou,
    render_item,
    save_dataset,
)

WHITE = np.array([1.0, 1.0, 1.0])


@pytest.fixture(scope="module")
def small():
    return generate_dataset(n_items=98, size=32, augment_factor=2, seed=3)


class TestRenderItem:
    @pytest.mark.parametrize("size", [32, 64])
    def test_item_invariants_all_cells(self, size):
        for s in range(N_SHAPES):
            for t in range(N_TEXTURES):
                for seed in (0, 1):
                    item = render_item(s, t, seed, size)
                    assert item.image.shape == (size, size, 3)
                    assert item.image.min() >= 0 and item.image.max() <= 1
                    np.testing.assert_array_equal(item.mask, np.any(item.image != WHITE, axis=2))
                    assert 0.1 <= area_fraction(item.mask) <= 0.8
                    assert is_four_connected(item.mask)

    def test_uniform_texture_single_colour(self):
        item = render_item(2, 0, 11, 64)
        colours = np.unique(item.image[item.mask], axis=0)
        assert len(colours) == 1

    def test_deterministic(self):
        a, b = render_item(3, 4, 9, 32), render_item(3, 4, 9, 32)
        np.testing.assert_array_equal(a.image, b.image)

    def test_style_seed_changes_image(self):
        a, b = render_item(3, 4, 9, 32), render_item(3, 4, 10, 32)
        assert not np.array_equal(a.image, b.image)
        assert (a.shape_label, a.texture_label) == (b.shape_label, b.texture_label)

    @pytest.mark.parametrize("s,t", [(7, 0), (0, 7), (-1, 0)])
    def test_out_of_range(self, s, t):
        with pytest.raises(ValueError):
            render_item(s, t, 0, 32)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            render_item(0, 0, 0, 48)


class TestJitter:
    def test_identity(self):
        item = render_item(1, 2, 5, 64)
        out = apply_jitter(item, 1.0, 0.0, 0.0)
        np.testing.assert_array_equal(out.image, item.image)
        np.testing.assert_array_equal(out.mask, item.mask)

    @pytest.mark.parametrize("scale", [0.9, 0.95, 1.05, 1.1])
    def test_area_scales_quadratically(self, scale):
        item = render_item(0, 0, 2, 64)
        out = apply_jitter(item, scale, 0.0, 0.0)
        ratio = out.mask.sum() / item.mask.sum()
        assert abs(ratio / scale**2 - 1) <= 0.03

    def test_labels_and_mask_exactness(self):
        item = render_item(4, 6, 3, 64)
        for seed in range(10):
            out = jitter(item, seed)
            assert (out.shape_label, out.texture_label) == (4, 6)
            np.testing.assert_array_equal(out.mask, np.any(out.image != WHITE, axis=2))
            assert out.mask.sum() >= 0.95 * 0.81 * item.mask.sum()


class TestGenerateDataset:
    def test_one_per_cell(self):
        ds = generate_dataset(n_items=49, size=32, augment_factor=1, seed=0)
        np.testing.assert_array_equal(ds.cell_counts(), np.ones((7, 7)))

    def test_rtw_count_cells(self):
        ds = generate_dataset(n_items=4157, size=32, augment_factor=1, seed=0)
        assert set(np.unique(ds.cell_counts())) == {84, 85}
        assert len(ds) == 4157

    def test_augment_provenance(self, small):
        assert len(small) == 196
        for b in np.unique(small.base_ids):
            rows = np.nonzero(small.base_ids == b)[0]
            assert len(rows) == 2
            assert len(set(small.splits[rows])) == 1
            assert len(set(small.shape_labels[rows])) == 1

    def test_same_seed_identical(self, small):
        again = generate_dataset(n_items=98, size=32, augment_factor=2, seed=3)
        assert again.images.tobytes() == small.images.tobytes()
        assert again.masks.tobytes() == small.masks.tobytes()

    def test_too_few_items(self):
        with pytest.raises(ValueError):
            generate_dataset(n_items=48, size=32)

    def test_has_val_split(self):
        ds = generate_dataset(n_items=490, size=32, augment_factor=1, seed=0)
        val = ds.indices("val")
        assert len(val) == 49
        assert set(np.unique(ds.cell_counts())) == {10}


class TestDiskRoundTrip:
    def test_round_trip(self, small, tmp_path):
        save_dataset(small, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(back.images, small.images)
        np.testing.assert_array_equal(back.masks, small.masks)
        np.testing.assert_array_equal(back.shape_labels, small.shape_labels)
        np.testing.assert_array_equal(back.texture_labels, small.texture_labels)
        np.testing.assert_array_equal(back.splits, small.splits)
        np.testing.assert_array_equal(back.base_ids, small.base_ids)
        assert back.seed == 3

    def test_save_is_byte_stable(self, small, tmp_path):
        save_dataset(small, tmp_path / "a")
        save_dataset(small, tmp_path / "b")
        for name in ("index.csv", "meta.json", "images/000005.png", "masks/000005.png"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_image_names_id(self, small, tmp_path):
        save_dataset(small, tmp_path / "ds")
        (tmp_path / "ds" / "images" / "000007.png").unlink()
        with pytest.raises(DatasetError, match="id 7"):
            load_dataset(tmp_path / "ds")

    def test_missing_index(self, tmp_path):
        with pytest.raises(DatasetError, match="index.csv"):
            load_dataset(tmp_path)

    def test_label_out_of_range_names_row(self, small, tmp_path):
        save_dataset(small, tmp_path / "ds")
        idx = tmp_path / "ds" / "index.csv"
        lines = idx.read_text().splitlines()
        parts = lines[3].split(",")
        parts[1] = "9"
        lines[3] = ",".join(parts)
        idx.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match="row 4"):
            load_dataset(tmp_path / "ds")

    def test_size_mismatch(self, small, tmp_path):
        save_dataset(small, tmp_path / "ds")
        Image.new("RGB", (16, 16), "white").save(tmp_path / "ds" / "images" / "000002.png")
        with pytest.raises(DatasetError, match="row"):
            load_dataset(tmp_path / "ds")

    def test_no_masks_flagged(self, small, tmp_path):
        import shutil

        save_dataset(small, tmp_path / "ds")
        shutil.rmtree(tmp_path / "ds" / "masks")
        ds = load_dataset(tmp_path / "ds")
        assert not ds.has_masks
        assert any("masks absent" in n for n in ds.notes)

    def test_external_directory(self, tmp_path):
        for i in range(3):
            Image.new("RGB", (40, 40), (i * 50, 0, 0)).save(tmp_path / f"{i}.png")
        ds = load_image_directory(tmp_path, size=32)
        assert ds.images.shape == (3, 32, 32, 3)
        assert not ds.has_masks and not ds.has_labels


class TestHelpers:
    def test_iou(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[:2] = True
        b[1:3] = True
        assert mask_iou(a, b) == pytest.approx(1 / 3)
        assert mask_iou(a, a) == 1.0
