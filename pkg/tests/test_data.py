"""Synthetic generators, file formats, and normalization."""

import hashlib

import numpy as np
import pytest

from ibt.data import (Dataset, FAMILIES, PALETTE, gen_synthetic, load_off,
                      load_xyz, normalize_cloud, part_ranges_for,
                      read_colored_ply, write_colored_ply, write_xyz)
from ibt.errors import ConfigError, DataError, ParseError
from ibt.geometry import PointCloud


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    for cloud in ds.clouds:
        h.update(cloud.coords.tobytes())
        if cloud.point_labels is not None:
            h.update(cloud.point_labels.tobytes())
    return h.hexdigest()


class TestGenSynthetic:
    def test_noiseless_sphere_has_unit_radius(self):
        ds = gen_synthetic(["sphere"], 2, 200, noise=0.0, seed=0)
        for cloud in ds.clouds:
            radii = np.linalg.norm(cloud.coords, axis=1)
            assert np.abs(radii - 1.0).max() <= 1e-9

    def test_fixed_seed_gives_identical_dataset(self):
        a = gen_synthetic(list(FAMILIES), 3, 64, noise=0.05, seed=42)
        b = gen_synthetic(list(FAMILIES), 3, 64, noise=0.05, seed=42)
        assert dataset_hash(a) == dataset_hash(b)
        c = gen_synthetic(list(FAMILIES), 3, 64, noise=0.05, seed=43)
        assert dataset_hash(a) != dataset_hash(c)

    def test_splits_differ(self):
        a = gen_synthetic(["cube"], 2, 64, noise=0.0, seed=0, split="train")
        b = gen_synthetic(["cube"], 2, 64, noise=0.0, seed=0, split="test")
        assert dataset_hash(a) != dataset_hash(b)

    def test_cylinder_labels_match_analytic_regions(self):
        ds = gen_synthetic(["cylinder"], 3, 500, noise=0.0, seed=1,
                           task="part_segmentation")
        for cloud in ds.clouds:
            z = cloud.coords[:, 2]
            h2 = np.abs(z).max()  # caps sit exactly at +-h/2
            on_caps = np.abs(z) == h2
            assert set(cloud.point_labels[on_caps]) <= {1, 2}
            assert (cloud.point_labels[~on_caps] == 0).all()
            top = on_caps & (z > 0)
            assert (cloud.point_labels[top] == 1).all()

    def test_segmentation_label_ranges_contiguous_per_category(self):
        families = ["sphere", "cube", "cylinder", "torus"]
        ds = gen_synthetic(families, 2, 256, noise=0.0, seed=2,
                           task="part_segmentation")
        assert ds.part_ranges == part_ranges_for(families)
        for cloud in ds.clouds:
            r = ds.part_ranges[cloud.category]
            used = set(cloud.point_labels.tolist())
            assert used <= set(r)
            assert used == set(r)  # 256 points cover every analytic region

    def test_empty_family_list_rejected(self):
        with pytest.raises(ConfigError):
            gen_synthetic([], 2, 64, noise=0.0, seed=0)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            gen_synthetic(["pyramid"], 2, 64, noise=0.0, seed=0)

    def test_classification_clouds_carry_categories(self):
        ds = gen_synthetic(["sphere", "torus"], 2, 32, noise=0.0, seed=3)
        assert [c.category for c in ds.clouds] == [0, 0, 1, 1]
        assert ds.class_names == ["sphere", "torus"]


class TestNormalize:
    def test_postconditions(self):
        rng = np.random.default_rng(4)
        cloud = PointCloud(rng.standard_normal((50, 3)) * 3 + 7)
        out = normalize_cloud(cloud)
        assert np.abs(out.coords.mean(axis=0)).max() <= 1e-12
        assert abs(np.linalg.norm(out.coords, axis=1).max() - 1.0) <= 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        cloud = normalize_cloud(PointCloud(rng.standard_normal((20, 3))))
        again = normalize_cloud(cloud)
        assert np.abs(again.coords - cloud.coords).max() <= 1e-12

    def test_single_point_maps_to_origin(self):
        out = normalize_cloud(PointCloud([[5.0, 6.0, 7.0]]))
        assert np.array_equal(out.coords, [[0.0, 0.0, 0.0]])


class TestXyz:
    def test_basic_parse(self, tmp_path):
        path = tmp_path / "two.xyz"
        path.write_text("0 0 0\n1 0 0\n")
        cloud = load_xyz(path)
        assert cloud.num_points == 2

    def test_labels_parsed(self, tmp_path):
        path = tmp_path / "lab.xyz"
        path.write_text("0 0 0 1\n1 0 0 2\n")
        cloud = load_xyz(path)
        assert cloud.point_labels.tolist() == [1, 2]

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        cloud = PointCloud(rng.standard_normal((40, 3)) * 10,
                           point_labels=rng.integers(0, 5, 40))
        path = tmp_path / "rt.xyz"
        write_xyz(cloud, path)
        back = load_xyz(path)
        assert np.abs(back.coords - cloud.coords).max() <= 1e-6
        assert np.array_equal(back.point_labels, cloud.point_labels)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 zz 0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_xyz(path)

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad2.xyz"
        path.write_text("0 0\n")
        with pytest.raises(ParseError, match="line 1"):
            load_xyz(path)


class TestOff:
    def test_standard_header(self, tmp_path):
        path = tmp_path / "tri.off"
        path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        cloud = load_off(path)
        assert cloud.num_points == 3

    def test_counts_glued_to_header(self, tmp_path):
        path = tmp_path / "glued.off"
        path.write_text("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        assert load_off(path).num_points == 3

    def test_missing_header(self, tmp_path):
        path = tmp_path / "no.off"
        path.write_text("3 1 0\n0 0 0\n1 0 0\n0 1 0\n")
        with pytest.raises(ParseError, match="OFF"):
            load_off(path)

    def test_too_few_vertices(self, tmp_path):
        path = tmp_path / "short.off"
        path.write_text("OFF\n5 0 0\n0 0 0\n1 0 0\n")
        with pytest.raises(ParseError):
            load_off(path)

    def test_bad_coordinate_reports_line(self, tmp_path):
        path = tmp_path / "badv.off"
        path.write_text("OFF\n2 0 0\n0 0 0\nx 0 0\n")
        with pytest.raises(ParseError, match="line 4"):
            load_off(path)


class TestPly:
    def test_palette_is_distinct(self):
        assert len({tuple(c) for c in PALETTE}) == 50

    def test_single_point_header_and_color(self, tmp_path):
        path = tmp_path / "one.ply"
        write_colored_ply(PointCloud([[0.0, 0.0, 0.0]]), np.array([0]), path)
        text = path.read_text().splitlines()
        assert "element vertex 1" in text
        r, g, b = PALETTE[0]
        assert text[-1].endswith(f"{r} {g} {b}")

    def test_vertex_count_matches(self, tmp_path):
        rng = np.random.default_rng(7)
        cloud = PointCloud(rng.standard_normal((17, 3)))
        path = tmp_path / "n.ply"
        write_colored_ply(cloud, rng.integers(0, 50, 17), path)
        assert f"element vertex {17}" in path.read_text()

    def test_label_round_trip_via_palette(self, tmp_path):
        rng = np.random.default_rng(8)
        cloud = PointCloud(rng.standard_normal((30, 3)))
        labels = rng.integers(0, 50, 30)
        path = tmp_path / "rt.ply"
        write_colored_ply(cloud, labels, path)
        back, back_labels = read_colored_ply(path)
        assert np.array_equal(back_labels, labels)
        assert np.abs(back.coords - cloud.coords).max() <= 1e-6

    def test_label_out_of_palette_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_colored_ply(PointCloud([[0.0, 0, 0]]), np.array([50]),
                              tmp_path / "x.ply")

    def test_wrong_label_count_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_colored_ply(PointCloud([[0.0, 0, 0]]), np.array([0, 1]),
                              tmp_path / "x.ply")


class TestDataset:
    def test_category_out_of_range_rejected(self):
        cloud = PointCloud([[0.0, 0, 0]], category=3)
        with pytest.raises(DataError):
            Dataset([cloud], class_names=["a", "b"])

    def test_segmentation_requires_labels(self):
        cloud = PointCloud([[0.0, 0, 0]], category=0)
        with pytest.raises(DataError):
            Dataset([cloud], class_names=["a"], task="part_segmentation")
