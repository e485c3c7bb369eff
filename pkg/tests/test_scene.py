import json

import numpy as np
import pytest

from fptc import (DatasetSplits, GridSpec, IngestionError, MeasurementSet,
                  NormalizationRange, RadioMap, RangeError, Scene,
                  TransmitterConfig, ValidationError, apportion,
                  crop_interest_area, list_scene_ids, load_scene,
                  normalize_rsrp, save_scene, split_dataset)
from conftest import make_scene


class TestGridSpec:
    def test_shape_is_rows_columns(self):
        g = GridSpec(width_px=4, height_px=3)
        assert g.shape == (3, 4)
        assert g.n_pixels == 12

    def test_contains(self):
        g = GridSpec(4, 3)
        assert g.contains(0, 0) and g.contains(3, 2)
        assert not g.contains(4, 0) and not g.contains(0, 3)
        assert not g.contains(-1, 0)

    @pytest.mark.parametrize("kwargs", [
        dict(width_px=0, height_px=4),
        dict(width_px=4, height_px=-1),
        dict(width_px=4, height_px=4, cell_size_m=0.0),
        dict(width_px=4, height_px=4, cell_size_m=float("nan")),
        dict(width_px=4.5, height_px=4),
    ])
    def test_rejects_bad_dimensions(self, kwargs):
        with pytest.raises(ValidationError):
            GridSpec(**kwargs)


class TestRadioMap:
    def test_shape_must_match_grid(self):
        with pytest.raises(ValidationError):
            RadioMap(grid=GridSpec(4, 4), values_dbm=np.zeros((3, 4)))

    def test_rejects_non_finite(self):
        v = np.zeros((4, 4))
        v[1, 1] = np.inf
        with pytest.raises(ValidationError):
            RadioMap(grid=GridSpec(4, 4), values_dbm=v)

    def test_values_are_frozen(self):
        m = RadioMap(grid=GridSpec(4, 4), values_dbm=np.zeros((4, 4)))
        with pytest.raises(ValueError):
            m.values_dbm[0, 0] = 1.0


class TestScene:
    def test_tx_must_be_inside(self):
        with pytest.raises(ValidationError):
            make_scene(tx=(16, 0))

    def test_rx_must_be_below_antenna(self):
        with pytest.raises(ValidationError):
            make_scene(h_b=10.0, rx=10.0)

    def test_heights_must_be_non_negative(self):
        h = np.zeros((16, 16))
        h[0, 0] = -1.0
        with pytest.raises(ValidationError):
            make_scene(heights=h)

    def test_ground_truth_grid_must_match(self):
        gt = RadioMap(grid=GridSpec(8, 8), values_dbm=np.zeros((8, 8)))
        with pytest.raises(ValidationError):
            make_scene(gt=gt)


class TestMeasurementSet:
    def test_positions_and_values(self):
        m = MeasurementSet(samples=((1, 2, -80.0), (3, 4, -90.0)))
        assert m.positions.tolist() == [[1, 2], [3, 4]]
        np.testing.assert_allclose(m.values_dbm, [-80.0, -90.0])
        assert len(m) == 2

    def test_empty(self):
        m = MeasurementSet(samples=())
        assert len(m) == 0
        assert m.positions.shape == (0, 2)

    def test_rejects_non_finite_value(self):
        with pytest.raises(ValidationError):
            MeasurementSet(samples=((0, 0, float("nan")),))


class TestNormalization:
    def test_range_requires_min_below_max(self):
        with pytest.raises(ValidationError):
            NormalizationRange(rsrp_min_dbm=-40, rsrp_max_dbm=-150)

    def test_forward_is_linear_and_clamped(self):
        rng = NormalizationRange(-150, -40)
        assert normalize_rsrp(-150.0, rng) == 0.0
        assert normalize_rsrp(-40.0, rng) == 1.0
        assert normalize_rsrp(-95.0, rng) == pytest.approx(0.5)
        assert normalize_rsrp(-200.0, rng) == 0.0        # clamps below
        assert normalize_rsrp(0.0, rng) == 1.0           # clamps above

    def test_round_trip_inside_range(self):
        rng = NormalizationRange(-150, -40)
        v = np.linspace(-150, -40, 23)
        np.testing.assert_allclose(
            normalize_rsrp(normalize_rsrp(v, rng), rng, "inverse"), v)

    def test_inverse_rejects_out_of_unit_values(self):
        rng = NormalizationRange(-150, -40)
        with pytest.raises(ValidationError):
            normalize_rsrp(1.2, rng, "inverse")

    def test_unknown_direction(self):
        with pytest.raises(ValidationError):
            normalize_rsrp(0.5, NormalizationRange(), "sideways")


class TestSceneIO:
    def test_round_trip(self, tmp_path):
        h = np.zeros((8, 8))
        h[2:4, 3:6] = 12.5
        gt = np.random.default_rng(0).uniform(-120, -50, (8, 8))
        scene = make_scene(width=8, height=8, cell=2.0, tx=(1, 6), heights=h,
                           gt=gt, scene_id="roundtrip")
        save_scene(scene, tmp_path / "roundtrip")
        back = load_scene(tmp_path / "roundtrip")
        assert back.scene_id == "roundtrip"
        assert back.grid == scene.grid
        assert back.tx == scene.tx
        np.testing.assert_allclose(back.heights, scene.heights, rtol=1e-9)
        np.testing.assert_allclose(back.ground_truth.values_dbm, gt, rtol=1e-9)

    def test_ground_truth_is_optional(self, tmp_path):
        save_scene(make_scene(width=8, height=8, tx=(0, 0)), tmp_path / "s")
        assert load_scene(tmp_path / "s").ground_truth is None

    def test_missing_file_is_named(self, tmp_path):
        save_scene(make_scene(width=8, height=8, tx=(0, 0)), tmp_path / "s")
        (tmp_path / "s" / "heights.csv").unlink()
        with pytest.raises(IngestionError, match="heights.csv"):
            load_scene(tmp_path / "s")

    def test_missing_meta_key_is_named(self, tmp_path):
        save_scene(make_scene(width=8, height=8, tx=(0, 0)), tmp_path / "s")
        meta = json.loads((tmp_path / "s" / "meta.json").read_text())
        del meta["freq_mhz"]
        (tmp_path / "s" / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(IngestionError, match="freq_mhz"):
            load_scene(tmp_path / "s")

    def test_unparsable_grid(self, tmp_path):
        save_scene(make_scene(width=8, height=8, tx=(0, 0)), tmp_path / "s")
        (tmp_path / "s" / "heights.csv").write_text("1,2\nx,4\n")
        with pytest.raises(IngestionError, match="heights.csv"):
            load_scene(tmp_path / "s")

    def test_ground_truth_shape_mismatch(self, tmp_path):
        scene = make_scene(width=8, height=8, tx=(0, 0),
                           gt=np.zeros((8, 8)))
        save_scene(scene, tmp_path / "s")
        np.savetxt(tmp_path / "s" / "ground_truth.csv", np.zeros((4, 4)),
                   delimiter=",")
        with pytest.raises(ValidationError):
            load_scene(tmp_path / "s")

    def test_list_scene_ids_sorted_and_filtered(self, tmp_path):
        for name in ("b_scene", "a_scene"):
            save_scene(make_scene(width=4, height=4, tx=(0, 0)), tmp_path / name)
        (tmp_path / "not_a_scene").mkdir()
        (tmp_path / "stray.txt").write_text("x")
        assert list_scene_ids(tmp_path) == ["a_scene", "b_scene"]

    def test_list_scene_ids_missing_root(self, tmp_path):
        with pytest.raises(IngestionError):
            list_scene_ids(tmp_path / "nowhere")


class TestCrop:
    def test_crop_translates_transmitter(self):
        h = np.arange(256, dtype=float).reshape(16, 16)
        scene = make_scene(heights=h, tx=(9, 10),
                           gt=np.arange(256, dtype=float).reshape(16, 16) - 300)
        cropped = crop_interest_area(scene, origin=(6, 8), size=8)
        assert cropped.grid.shape == (8, 8)
        assert (cropped.tx.x_px, cropped.tx.y_px) == (3, 2)
        np.testing.assert_array_equal(cropped.heights, h[8:16, 6:14])
        np.testing.assert_array_equal(cropped.ground_truth.values_dbm,
                                      scene.ground_truth.values_dbm[8:16, 6:14])

    def test_window_must_fit(self, flat_scene):
        with pytest.raises(RangeError):
            crop_interest_area(flat_scene, origin=(10, 10), size=8)

    def test_window_must_contain_tx(self, flat_scene):
        with pytest.raises(ValidationError):
            crop_interest_area(flat_scene, origin=(0, 0), size=4)


class TestSplits:
    def test_apportion_preserves_total(self):
        rng = np.random.default_rng(1)
        for total in rng.integers(0, 10000, size=50):
            counts = apportion(int(total))
            assert sum(counts) == total
            assert all(c >= 0 for c in counts)

    def test_apportion_tie_breaks_toward_earlier_bucket(self):
        assert apportion(2) == [1, 1, 0, 0, 0]
        assert apportion(10) == [4, 3, 1, 1, 1]

    def test_split_sizes_and_partition(self):
        ids = [f"s{i:04d}" for i in range(357)]
        splits = split_dataset(ids, seed=7)
        sizes = [len(getattr(splits, n)) for n in
                 ("train_predict", "train_correct", "val_predict",
                  "val_correct", "test")]
        assert sizes == apportion(357)
        combined = (splits.train_predict + splits.train_correct
                    + splits.val_predict + splits.val_correct + splits.test)
        assert sorted(combined) == sorted(ids)

    def test_split_is_seed_deterministic(self):
        ids = [f"s{i}" for i in range(40)]
        assert split_dataset(ids, 3) == split_dataset(ids, 3)
        assert split_dataset(ids, 3) != split_dataset(ids, 4)

    def test_split_needs_five_scenes(self):
        with pytest.raises(ValidationError):
            split_dataset(["a", "b", "c", "d"], 0)

    def test_split_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            split_dataset(["a"] * 6, 0)

    def test_dataset_splits_reject_overlap(self):
        with pytest.raises(ValidationError):
            DatasetSplits(train_predict=("a",), train_correct=("a",),
                          val_predict=("b",), val_correct=("c",), test=("d",))

    def test_dataset_splits_dict_round_trip(self):
        splits = split_dataset([f"s{i}" for i in range(11)], seed=2)
        assert DatasetSplits.from_dict(splits.as_dict()) == splits

    def test_dataset_splits_missing_key(self):
        with pytest.raises(ValidationError, match="test"):
            DatasetSplits.from_dict({n: [] for n in
                                     ("train_predict", "train_correct",
                                      "val_predict", "val_correct")})
