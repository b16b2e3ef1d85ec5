import numpy as np
import pytest

from lidar_forge import (
    PointCloud,
    build_database,
    extract_instances,
    load_database,
    sample_instance,
    save_database,
)
from lidar_forge.instances import (
    DB_FORMAT_VERSION,
    DatabaseFormatError,
    FrameRef,
    InstanceSource,
)
from lidar_forge.kitti_io import pack_labels, write_frame
from lidar_forge.synth import ObjectSpec, make_scene

from helpers import make_db, make_instance, sensor_shape
from oracles import cell_of_point


def cluster_cloud(clusters, classes, ids, intensity=0.5):
    """Stack point clusters into one labeled cloud."""
    pts = np.concatenate(clusters).astype(np.float32)
    points = np.empty((len(pts), 4), dtype=np.float32)
    points[:, :3] = pts
    points[:, 3] = intensity
    sem = np.concatenate(
        [np.full(len(c), k, dtype=np.uint32) for c, k in zip(clusters, classes)]
    )
    inst = np.concatenate(
        [np.full(len(c), i, dtype=np.uint32) for c, i in zip(clusters, ids)]
    )
    return PointCloud(points, pack_labels(sem, inst))


def blob(rng, center, n=40, spread=0.15):
    return np.asarray(center) + rng.normal(0.0, spread, (n, 3))


class TestExtraction:
    def test_labeled_instances_come_out_whole(self, sensor, rng):
        a = blob(rng, [10.0, 0.0, -0.5])
        b = blob(rng, [0.0, -12.0, -0.5])
        cloud = cluster_cloud([a, b], classes=[10, 10], ids=[1, 2])
        out = extract_instances(cloud, sensor, [10], min_points=20, sequence=3, frame=7)
        assert [inst.source for inst in out] == [
            InstanceSource(3, 7, 1),
            InstanceSource(3, 7, 2),
        ]
        assert np.array_equal(out[0].points, cloud.points[: len(a)])
        assert np.array_equal(out[1].points, cloud.points[len(a):])

    def test_stored_cells_match_projection(self, sensor, rng):
        cloud = cluster_cloud([blob(rng, [15.0, 5.0, -1.0])], classes=[30], ids=[4])
        (inst,) = extract_instances(cloud, sensor, [30], min_points=10)
        shape = sensor_shape(sensor)
        for p, row, col in zip(inst.points, inst.rows, inst.cols):
            assert cell_of_point(p[0], p[1], p[2], *shape) == (row, col)

    def test_anonymous_points_split_by_distance(self, sensor, rng):
        near = blob(rng, [10.0, 0.0, -0.5])
        far = blob(rng, [10.0, 6.0, -0.5])  # 6 m apart: separate objects
        cloud = cluster_cloud([near, far], classes=[30, 30], ids=[0, 0])
        out = extract_instances(cloud, sensor, [30], min_points=20)
        assert len(out) == 2
        assert {inst.source.instance_id for inst in out} == {0}

    def test_anonymous_chain_stays_one_object(self, sensor):
        # A string of points 0.4 m apart links up under the 0.5 m radius.
        xyz = np.array([[10.0 + 0.4 * i, 0.0, -0.5] for i in range(25)])
        cloud = cluster_cloud([xyz], classes=[30], ids=[0])
        out = extract_instances(cloud, sensor, [30], min_points=20)
        assert len(out) == 1
        assert out[0].point_count == 25

    def test_small_groups_are_skipped(self, sensor, rng):
        cloud = cluster_cloud([blob(rng, [10.0, 0.0, -0.5], n=12)], classes=[11], ids=[1])
        assert extract_instances(cloud, sensor, [11], min_points=20) == []
        assert len(extract_instances(cloud, sensor, [11], min_points=10)) == 1

    def test_only_visible_points_are_stored(self, sensor, rng):
        visible = blob(rng, [12.0, 0.0, -0.5], n=30, spread=0.1)
        hidden = blob(rng, [1.0, 0.0, -10.0], n=30, spread=0.1)  # far below the window
        cloud = cluster_cloud(
            [np.concatenate([visible, hidden])], classes=[30], ids=[5]
        )
        (inst,) = extract_instances(cloud, sensor, [30], min_points=20)
        assert inst.point_count == 30

    def test_ground_classes_are_refused(self, sensor, rng):
        cloud = cluster_cloud([blob(rng, [10.0, 0.0, -0.5])], classes=[40], ids=[0])
        with pytest.raises(ValueError, match="ground"):
            extract_instances(cloud, sensor, [40])

    def test_surface_classes_are_refused(self, sensor, rng):
        cloud = cluster_cloud([blob(rng, [10.0, 0.0, -0.5])], classes=[50], ids=[0])
        with pytest.raises(ValueError, match="not a countable"):
            extract_instances(cloud, sensor, [50])

    def test_unlabeled_cloud_is_refused(self, sensor, rng):
        cloud = PointCloud(rng.normal(0, 10, (30, 4)).astype(np.float32))
        with pytest.raises(ValueError, match="labeled"):
            extract_instances(cloud, sensor, [30])


class TestBuildDatabase:
    def write_frames(self, root, sensor, rng, count=3):
        refs = []
        for frame in range(count):
            scene = make_scene(
                rng,
                sensor,
                n_background=500,
                objects=[
                    ObjectSpec(11, 1, 80),
                    ObjectSpec(30, 2, 60),
                ],
            )
            scan = root / f"{frame:06d}.bin"
            label = root / f"{frame:06d}.label"
            write_frame(scene, scan, label)
            refs.append(FrameRef(0, frame, scan, label))
        return refs

    def test_counts_add_up_across_frames(self, tmp_path, sensor, rng):
        refs = self.write_frames(tmp_path, sensor, rng)
        db = build_database(refs, sensor, [11, 30], min_points=20)
        assert db.count(11) == 3
        assert db.count(30) == 3
        assert db.total_instances() == 6
        assert db.manifest.class_counts == {11: 3, 30: 3}
        assert not db.manifest.errors

    def test_unreadable_frame_is_recorded_not_fatal(self, tmp_path, sensor, rng):
        refs = self.write_frames(tmp_path, sensor, rng)
        refs.append(FrameRef(0, 99, tmp_path / "missing.bin", tmp_path / "missing.label"))
        db = build_database(refs, sensor, [11], min_points=20)
        assert db.count(11) == 3
        assert len(db.manifest.errors) == 1
        assert db.manifest.errors[0].frame == 99

    def test_fingerprint_tracks_inputs(self, tmp_path, sensor, rng):
        refs = self.write_frames(tmp_path, sensor, rng)
        a = build_database(refs, sensor, [11], min_points=20)
        b = build_database(refs, sensor, [11], min_points=20)
        c = build_database(refs[:2], sensor, [11], min_points=20)
        d = build_database(refs, sensor, [11], min_points=25)
        assert a.manifest.fingerprint == b.manifest.fingerprint
        assert a.manifest.fingerprint != c.manifest.fingerprint
        assert a.manifest.fingerprint != d.manifest.fingerprint


class TestPersistence:
    def build(self, tmp_path, sensor, rng):
        refs = TestBuildDatabase().write_frames(tmp_path, sensor, rng)
        refs.append(FrameRef(1, 0, tmp_path / "gone.bin", tmp_path / "gone.label"))
        return build_database(refs, sensor, [11, 30], min_points=20)

    def test_roundtrip_preserves_everything(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        path = tmp_path / "instances.db"
        save_database(db, path)
        back = load_database(path)
        assert back.sensor == db.sensor
        assert back.manifest.fingerprint == db.manifest.fingerprint
        assert back.manifest.class_counts == db.manifest.class_counts
        assert back.manifest.errors == db.manifest.errors
        for class_id in db.classes:
            for i in range(db.count(class_id)):
                a, b = db.get(class_id, i), back.get(class_id, i)
                assert a.source == b.source
                assert np.array_equal(a.points, b.points)
                assert np.array_equal(a.rows, b.rows)
                assert np.array_equal(a.cols, b.cols)

    def test_save_load_save_is_byte_stable(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        first = tmp_path / "a.db"
        second = tmp_path / "b.db"
        save_database(db, first)
        save_database(load_database(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_file_size_is_exactly_accounted(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        path = tmp_path / "sized.db"
        save_database(db, path)
        expected = 76  # fixed header
        for err in db.manifest.errors:
            expected += 12 + len(err.message.encode())
        for class_id in db.classes:
            expected += 8
            for i in range(db.count(class_id)):
                expected += 16 + 20 * db.get(class_id, i).point_count
        assert path.stat().st_size == expected

    def test_foreign_file_is_rejected(self, tmp_path):
        path = tmp_path / "noise.db"
        path.write_bytes(b"PNGBLOB!" + bytes(100))
        with pytest.raises(DatabaseFormatError, match="bad magic"):
            load_database(path)

    def test_future_version_is_named_in_error(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        path = tmp_path / "v9.db"
        save_database(db, path)
        raw = bytearray(path.read_bytes())
        raw[8:12] = (9).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(
            DatabaseFormatError, match=f"version 9.*version {DB_FORMAT_VERSION}"
        ):
            load_database(path)

    def test_truncation_names_failing_record(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        path = tmp_path / "cut.db"
        save_database(db, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(DatabaseFormatError, match="truncated at byte.*record"):
            load_database(path)

    def test_trailing_bytes_are_rejected(self, tmp_path, sensor, rng):
        db = self.build(tmp_path, sensor, rng)
        path = tmp_path / "tail.db"
        save_database(db, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DatabaseFormatError, match="2 trailing bytes"):
            load_database(path)


class TestSampling:
    def test_unknown_class_names_holdings(self, sensor, rng):
        db = make_db(sensor, {11: [make_instance(rng, sensor)]})
        with pytest.raises(KeyError, match="15"):
            db.count(15)

    def test_empty_class_yields_none(self, sensor, rng):
        db = make_db(sensor, {11: []})
        assert sample_instance(db, 11, rng) is None

    def test_draws_are_roughly_uniform(self, sensor, rng):
        members = [
            make_instance(rng, sensor, source=InstanceSource(0, 0, i)) for i in range(4)
        ]
        db = make_db(sensor, {11: members})
        hits = {i: 0 for i in range(4)}
        for _ in range(1000):
            hits[sample_instance(db, 11, rng).source.instance_id] += 1
        for count in hits.values():
            assert abs(count / 1000 - 0.25) < 0.05
