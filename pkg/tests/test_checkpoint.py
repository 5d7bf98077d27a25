import json

import numpy as np
import pytest

from lib.gmnse_integration.errors import CheckpointError
from lib.gmnse_integration.spectral_core import TorusDomain, random_field
from lib.models.attractor_model import EnsembleLabel, EnsembleState
from lib.models.checkpoint_model import read_checkpoint, read_ensemble, write_checkpoint, write_ensemble


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_field_round_trip_is_exact(tmp_path, domain3d, rng, fmt):
    u = random_field(domain3d, rng, h_norm=2.5)
    path = write_checkpoint(u, tmp_path / "u.ckpt", fmt)
    back = read_checkpoint(path)
    assert back.domain == domain3d
    assert np.array_equal(back.coeffs, u.coeffs)


def test_text_format_is_readable(tmp_path, domain2d, field2d):
    path = write_checkpoint(field2d, tmp_path / "u.txt", "text")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "GMNSE-CHECKPOINT 1"
    assert lines[1:3] == ["dimension 2", "resolution 16"]
    assert len(lines) - 4 == np.count_nonzero(field2d.coeffs)


def test_unknown_format(tmp_path, field2d):
    with pytest.raises(ValueError, match="unknown checkpoint format"):
        write_checkpoint(field2d, tmp_path / "u.ckpt", "hdf5")


def test_bad_magic(tmp_path, domain2d):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError, match="not a GMNSE checkpoint") as info:
        read_checkpoint(path)
    assert info.value.exit_code == 6


def test_truncated_payload(tmp_path, field2d):
    path = write_checkpoint(field2d, tmp_path / "u.ckpt")
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CheckpointError, match="coefficient bytes"):
        read_checkpoint(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "u.ckpt"
    path.write_bytes(b"GMNSECKP\x01")
    with pytest.raises(CheckpointError, match="truncated header"):
        read_checkpoint(path)


def test_domain_mismatch(tmp_path, field2d):
    path = write_checkpoint(field2d, tmp_path / "u.ckpt")
    with pytest.raises(CheckpointError, match="does not match"):
        read_checkpoint(path, TorusDomain(8, 2))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read checkpoint"):
        read_checkpoint(tmp_path / "absent.ckpt")


def test_text_line_errors_name_the_line(tmp_path, field2d):
    path = write_checkpoint(field2d, tmp_path / "u.txt", "text")
    path.write_text(path.read_text(encoding="utf-8") + "0 1\n", encoding="utf-8")
    with pytest.raises(CheckpointError, match="line"):
        read_checkpoint(path)


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_ensemble_round_trip(tmp_path, domain2d, rng, fmt):
    members = tuple(random_field(domain2d, rng) for _ in range(3))
    ensemble = EnsembleState(members, EnsembleLabel.ATTRACTOR_APPROX, {"snapshot_times": [1.0, 1.5, 2.0]})
    directory = write_ensemble(ensemble, tmp_path / "ensemble", params_hash="abc", fmt=fmt)

    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["member_count"] == 3
    assert manifest["params_hash"] == "abc"

    back = read_ensemble(directory)
    assert back.label is EnsembleLabel.ATTRACTOR_APPROX
    assert back.metadata == {"snapshot_times": [1.0, 1.5, 2.0]}
    assert all(np.array_equal(a.coeffs, b.coeffs) for a, b in zip(back, ensemble))


def test_ensemble_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError, match="manifest"):
        read_ensemble(tmp_path)
