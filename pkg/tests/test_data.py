import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vatlab.data import (
    BLOB_BG,
    BLOB_FG,
    Dataset,
    ManifestRecord,
    PgmError,
    SyntheticSpec,
    _render_blob,
    gen_blob_images,
    gen_moons,
    generate,
    load_image_dataset,
    load_manifest,
    load_points,
    read_pgm,
    save_points,
    write_manifest,
    write_pgm,
)


class TestReadPgm:
    def test_two_by_two_example(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = read_pgm(p)
        assert img.shape == (1, 2, 2)
        expected = np.array([[0.0, 1.0], [128 / 255, 64 / 255]])
        assert np.array_equal(img[0], expected)

    def test_header_comments_are_skipped(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5 # magic\n# a full comment line\n2 1 # dims\n255\n" + bytes([7, 9]))
        img = read_pgm(p)
        assert np.array_equal(img[0], np.array([[7 / 255, 9 / 255]]))

    def test_arbitrary_whitespace_between_fields(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\t\t3\n  1\r\n255 " + bytes([1, 2, 3]))
        assert read_pgm(p).shape == (1, 1, 3)

    def test_rejects_wrong_magic(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
        with pytest.raises(PgmError, match="magic"):
            read_pgm(p)

    def test_rejects_wide_maxval(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(PgmError, match="maxval"):
            read_pgm(p)

    def test_rejects_truncated_payload(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([1, 2, 3]))
        with pytest.raises(PgmError, match="truncated payload"):
            read_pgm(p)

    def test_rejects_truncated_header(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2")
        with pytest.raises(PgmError, match="truncated header"):
            read_pgm(p)

    def test_rejects_non_numeric_dimension(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\nx 2\n255\n" + bytes(4))
        with pytest.raises(PgmError, match="integer"):
            read_pgm(p)

    def test_rejects_zero_dimension(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n0 2\n255\n")
        with pytest.raises(PgmError, match="dimensions"):
            read_pgm(p)


class TestWritePgm:
    def test_byte_layout(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm(np.array([[0.0, 1.0], [0.5, 64 / 255]]), p)
        assert p.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])

    def test_half_rounds_up(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm(np.array([[0.5, 127.5 / 255, 254.5 / 255]]), p)
        assert p.read_bytes()[-3:] == bytes([128, 128, 255])

    def test_accepts_leading_channel_axis(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm(np.zeros((1, 3, 4)), p)
        assert read_pgm(p).shape == (1, 3, 4)

    def test_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            write_pgm(np.array([[1.0001]]), tmp_path / "a.pgm")
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            write_pgm(np.array([[-0.2]]), tmp_path / "a.pgm")

    def test_rejects_bad_rank(self, tmp_path):
        with pytest.raises(ValueError, match="shape"):
            write_pgm(np.zeros((2, 3, 4)), tmp_path / "a.pgm")

    def test_round_trip_hits_every_byte(self, tmp_path):
        p = tmp_path / "a.pgm"
        payload = bytes(range(256))
        p.write_bytes(b"P5\n16 16\n255\n" + payload)
        q = tmp_path / "b.pgm"
        write_pgm(read_pgm(p), q)
        assert q.read_bytes() == p.read_bytes()

    @settings(max_examples=30, deadline=None)
    @given(st.binary(min_size=6, max_size=6))
    def test_round_trip_is_identity_on_files(self, tmp_path_factory, payload):
        d = tmp_path_factory.mktemp("pgm")
        p = d / "a.pgm"
        p.write_bytes(b"P5\n3 2\n255\n" + payload)
        write_pgm(read_pgm(p), d / "b.pgm")
        assert (d / "b.pgm").read_bytes() == p.read_bytes()


class TestManifest:
    def test_round_trip_preserves_order(self, tmp_path):
        p = tmp_path / "m.txt"
        recs = [ManifestRecord("b/x.pgm", 1), ManifestRecord("a.pgm", 0)]
        write_manifest(p, recs)
        m = load_manifest(p)
        assert list(m.records) == recs

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("# heading\n\na.pgm,0  # trailing\n  b.pgm , 1\n")
        m = load_manifest(p)
        assert list(m.records) == [ManifestRecord("a.pgm", 0), ManifestRecord("b.pgm", 1)]

    def test_empty_file_gives_empty_manifest(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("")
        assert len(load_manifest(p)) == 0

    def test_rejects_duplicate_path(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("a.pgm,0\na.pgm,1\n")
        with pytest.raises(ValueError, match="duplicate path"):
            load_manifest(p)

    def test_rejects_label_outside_binary(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("a.pgm,2\n")
        with pytest.raises(ValueError, match="label"):
            load_manifest(p)

    def test_rejects_missing_comma(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("a.pgm 0\n")
        with pytest.raises(ValueError, match="m.txt:1"):
            load_manifest(p)


class TestLoadImageDataset:
    def _write_images(self, d, sides, labels):
        lines = []
        for i, (s, lab) in enumerate(zip(sides, labels)):
            name = f"img_{i}.pgm"
            write_pgm(np.full((s, s), i / 255), d / name)
            lines.append(f"{name},{lab}")
        (d / "manifest.txt").write_text("".join(f"{l}\n" for l in lines))
        return d / "manifest.txt"

    def test_loads_in_manifest_order(self, tmp_path):
        m = self._write_images(tmp_path, [4, 4, 4], [1, 0, 1])
        ds = load_image_dataset(m)
        assert ds.x.shape == (3, 1, 4, 4)
        assert ds.y.tolist() == [1, 0, 1]
        assert np.array_equal(ds.x[2], np.full((1, 4, 4), 2 / 255))

    def test_missing_file_names_the_entry(self, tmp_path):
        m = self._write_images(tmp_path, [4], [0])
        (tmp_path / "manifest.txt").write_text("img_0.pgm,0\ngone.pgm,1\n")
        with pytest.raises(FileNotFoundError, match="gone.pgm"):
            load_image_dataset(m)

    def test_rejects_mismatched_shapes(self, tmp_path):
        m = self._write_images(tmp_path, [4, 8], [0, 1])
        with pytest.raises(ValueError, match="img_1.pgm"):
            load_image_dataset(m)

    def test_rejects_sides_not_divisible_by_four(self, tmp_path):
        m = self._write_images(tmp_path, [6, 6], [0, 1])
        with pytest.raises(ValueError, match="divisible by 4"):
            load_image_dataset(m)

    def test_empty_manifest_is_no_samples(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("")
        with pytest.raises(ValueError, match="no samples"):
            load_image_dataset(p)

    def test_manifest_in_subdirectory_resolves_relative(self, tmp_path):
        sub = tmp_path / "ds"
        sub.mkdir()
        m = self._write_images(sub, [4], [1])
        ds = load_image_dataset(m)
        assert ds.y.tolist() == [1]


class TestPointsTable:
    def test_round_trip_is_exact(self, tmp_path):
        ds = Dataset(np.array([[0.1, -2.5], [1e-17, 3.0]]), np.array([0, 1]))
        p = tmp_path / "pts.csv"
        save_points(p, ds)
        back = load_points(p)
        assert np.array_equal(back.x, ds.x)
        assert np.array_equal(back.y, ds.y)

    def test_row_count_matches_samples(self, tmp_path):
        ds = gen_moons(SyntheticSpec("moons", per_class=500, noise=0.1))
        p = tmp_path / "pts.csv"
        save_points(p, ds)
        assert len(p.read_text().splitlines()) == 1000

    def test_malformed_row_names_line(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0.0,1.0,0\noops\n")
        with pytest.raises(ValueError, match="pts.csv:2"):
            load_points(p)

    def test_rejects_non_binary_label(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0.0,1.0,3\n")
        with pytest.raises(ValueError, match="label"):
            load_points(p)

    def test_empty_table_is_no_samples(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("# nothing\n")
        with pytest.raises(ValueError, match="no samples"):
            load_points(p)


class TestSyntheticSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            SyntheticSpec("rings", 10, 0.1)

    def test_rejects_zero_per_class(self):
        with pytest.raises(ValueError, match="per_class"):
            SyntheticSpec("moons", 0, 0.1)

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError, match="noise"):
            SyntheticSpec("moons", 10, -0.1)

    def test_rejects_side_not_multiple_of_four(self):
        with pytest.raises(ValueError, match="side"):
            SyntheticSpec("blob_images", 10, 0.1, side=30)


class TestGenMoons:
    def test_counts_and_labels(self):
        ds = gen_moons(SyntheticSpec("moons", per_class=500, noise=0.1, seed=3))
        assert ds.x.shape == (1000, 2)
        assert ds.y.tolist() == [0] * 500 + [1] * 500

    def test_zero_noise_class0_on_upper_unit_circle(self):
        ds = gen_moons(SyntheticSpec("moons", per_class=200, noise=0.0, seed=1))
        pts = ds.x[:200]
        assert np.allclose(np.hypot(pts[:, 0], pts[:, 1]), 1.0)
        assert np.all(pts[:, 1] >= 0)

    def test_zero_noise_class1_on_shifted_lower_arc(self):
        ds = gen_moons(SyntheticSpec("moons", per_class=200, noise=0.0, seed=1))
        pts = ds.x[200:]
        centered = pts - np.array([1.0, 0.5])
        assert np.allclose(np.hypot(centered[:, 0], centered[:, 1]), 1.0)
        assert np.all(pts[:, 1] <= 0.5)

    def test_same_seed_reproduces(self):
        spec = SyntheticSpec("moons", per_class=50, noise=0.2, seed=9)
        assert np.array_equal(gen_moons(spec).x, gen_moons(spec).x)

    def test_different_seed_differs(self):
        a = gen_moons(SyntheticSpec("moons", per_class=50, noise=0.2, seed=9))
        b = gen_moons(SyntheticSpec("moons", per_class=50, noise=0.2, seed=10))
        assert not np.array_equal(a.x, b.x)

    def test_noise_perturbs_off_the_arc(self):
        ds = gen_moons(SyntheticSpec("moons", per_class=300, noise=0.1, seed=4))
        radii = np.hypot(ds.x[:300, 0], ds.x[:300, 1])
        assert radii.std() > 0.01


class TestRenderBlob:
    def test_plain_disk_matches_distance_rule(self):
        img = _render_blob(16, 3.0, 7.5, 7.5, spikes=False)
        rows, cols = np.ogrid[0:16, 0:16]
        inside = (rows - 7.5) ** 2 + (cols - 7.5) ** 2 <= 9.0
        assert np.array_equal(img == BLOB_FG, inside)
        assert np.all(img[~inside] == BLOB_BG)

    def test_spikes_only_add_foreground(self):
        plain = _render_blob(32, 5.0, 15.5, 15.5, spikes=False)
        spiked = _render_blob(32, 5.0, 15.5, 15.5, spikes=True)
        changed = spiked != plain
        assert changed.sum() > 0
        assert np.all(spiked[changed] == BLOB_FG)

    def test_spike_pixels_lie_in_radial_band(self):
        side, radius = 32, 5.0
        plain = _render_blob(side, radius, 15.5, 15.5, spikes=False)
        spiked = _render_blob(side, radius, 15.5, 15.5, spikes=True)
        ys, xs = np.nonzero(spiked != plain)
        dist = np.hypot(ys - 15.5, xs - 15.5)
        assert np.all(dist >= radius - 1.0)
        assert np.all(dist <= radius + side / 8.0 + 1.0)

    def test_axis_aligned_spikes_have_unit_width(self):
        # the rightward spike occupies a single row at the center height
        side, radius = 32, 4.0
        spiked = _render_blob(side, radius, 16.0, 16.0, spikes=True)
        col = int(round(16.0 + radius + 2))
        assert np.count_nonzero(spiked[:, col] == BLOB_FG) == 1

    def test_eight_spikes_at_equal_angles(self):
        side, radius = 64, 8.0
        plain = _render_blob(side, radius, 31.5, 31.5, spikes=False)
        spiked = _render_blob(side, radius, 31.5, 31.5, spikes=True)
        ys, xs = np.nonzero(spiked != plain)
        ang = np.arctan2(ys - 31.5, xs - 31.5)
        octant = np.round(ang / (np.pi / 4)).astype(int) % 8
        assert set(octant.tolist()) == set(range(8))


class TestGenBlobImages:
    def test_shape_and_labels(self):
        ds = gen_blob_images(SyntheticSpec("blob_images", per_class=4, noise=0.05, side=16, seed=2))
        assert ds.x.shape == (8, 1, 16, 16)
        assert ds.y.tolist() == [0] * 4 + [1] * 4

    def test_zero_noise_uses_two_gray_levels(self):
        ds = gen_blob_images(SyntheticSpec("blob_images", per_class=3, noise=0.0, side=16, seed=5))
        assert set(np.unique(ds.x).tolist()) == {BLOB_BG, BLOB_FG}

    def test_values_clamped_to_unit_interval(self):
        ds = gen_blob_images(SyntheticSpec("blob_images", per_class=3, noise=5.0, side=16, seed=5))
        assert ds.x.min() >= 0.0
        assert ds.x.max() <= 1.0

    def test_same_seed_reproduces(self):
        spec = SyntheticSpec("blob_images", per_class=3, noise=0.1, side=16, seed=7)
        assert np.array_equal(gen_blob_images(spec).x, gen_blob_images(spec).x)

    def test_geometry_varies_between_images(self):
        ds = gen_blob_images(SyntheticSpec("blob_images", per_class=3, noise=0.0, side=32, seed=7))
        assert not np.array_equal(ds.x[0], ds.x[1])

    def test_disk_radius_within_configured_band(self):
        # foreground area of a plain disk stays between the extreme radii
        ds = gen_blob_images(SyntheticSpec("blob_images", per_class=20, noise=0.0, side=32, seed=1))
        areas = (ds.x[:20] == BLOB_FG).sum(axis=(1, 2, 3))
        assert areas.min() >= np.pi * (32 / 8 - 1.0) ** 2
        assert areas.max() <= np.pi * (32 / 6 + 1.0) ** 2

    def test_spiked_class_adds_pixels_for_matching_geometry(self):
        spec = SyntheticSpec("blob_images", per_class=5, noise=0.0, side=32, seed=11)
        ds = gen_blob_images(spec)
        rng_replay = __import__("vatlab.rng", fromlist=["Rng"]).Rng(spec.seed)
        for i in range(2 * spec.per_class):
            radius = float(rng_replay.uniform(4.0, 32 / 6.0, ()))
            cx = 15.5 + float(rng_replay.uniform(-4.0, 4.0, ()))
            cy = 15.5 + float(rng_replay.uniform(-4.0, 4.0, ()))
            expect = _render_blob(32, radius, cx, cy, spikes=(i >= spec.per_class))
            assert np.array_equal(ds.x[i, 0], expect)


def test_generate_dispatches_on_kind():
    moons = generate(SyntheticSpec("moons", 5, 0.0))
    blobs = generate(SyntheticSpec("blob_images", 5, 0.0, side=8))
    assert moons.x.shape == (10, 2)
    assert blobs.x.shape == (10, 1, 8, 8)
