import hashlib
import json
from pathlib import Path

import pytest

pytest.importorskip("lidar_forge_bindings", reason="bindings package not installed")

from lidar_forge import cli
from lidar_forge.synth import write_fixture_dataset


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    write_fixture_dataset(
        root, seed=91, sequences=("00",), frames_per_sequence=50, n_background=1400
    )
    return root


@pytest.fixture(scope="session")
def db_path(dataset_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("db")
    assert cli.main(["build-db", "--data", str(dataset_root), "--out", str(out)]) == 0
    return out / cli.DB_FILENAME


@pytest.fixture
def config_file(tmp_path):
    def write(**fields) -> Path:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(fields))
        return path

    return write


def tree_hash(root) -> str:
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


@pytest.fixture(scope="session")
def hash_tree():
    return tree_hash
