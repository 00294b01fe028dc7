"""CLI contract: subcommands, exit codes, determinism, file outputs."""
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import tifffile

from aberra import generator as gen
from aberra.cli import main
from aberra.estimator import ArchitectureSpec, ModelCheckpoint, Regressor
from aberra.imageio import read_manifest, read_tiff, write_tiff
from aberra.volume import Volume

DESK_DOC = {
    "generator": {
        "nomenclature": "ansi",
        "modes": [3, 5, 8],
        "crop_size": [16, 16, 16],
        "noise": {"mean": [20, 60], "std": [2, 8], "snr": [8, 30]},
        "seed": 42,
    },
    "architecture": {"n_blocks": 3},
    "train": {"epochs": 3, "val_size": 4},
}


@pytest.fixture()
def desk_config_path(tmp_path):
    path = tmp_path / "desk.json"
    path.write_text(json.dumps(DESK_DOC))
    return path


def tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def make_checkpoint(tmp_path, config_doc=DESK_DOC) -> Path:
    from aberra.imageio import config_from_dict

    config = config_from_dict(json.loads(json.dumps(config_doc)))
    model = Regressor(config.architecture, config.generator.image_shape,
                      seed=config.train.seed)
    ckpt = ModelCheckpoint.from_model(model, generator_config=config.generator)
    path = tmp_path / "untrained.abrn"
    ckpt.save(path)
    return path


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def test_gen_counts_and_empty_train_manifest(tmp_path, desk_config_path, capsys):
    rc = main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
               "--n-train", "0", "--n-test-per-mode", "2"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_test"] == 6
    test_files = list((tmp_path / "d" / "test").rglob("*.tif"))
    assert len(test_files) == 6
    train_manifest = (tmp_path / "d" / "train" / "manifest.csv").read_text().splitlines()
    assert len(train_manifest) == 1  # header only
    assert train_manifest[0].startswith("filename,amp_ansi_3,")


def test_gen_is_hash_deterministic(tmp_path, desk_config_path):
    for name in ("a", "b"):
        rc = main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / name),
                   "--n-train", "2", "--n-val", "1", "--n-test-per-mode", "1"])
        assert rc == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_gen_seed_override_changes_content(tmp_path, desk_config_path):
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "a"),
          "--n-train", "1"])
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "b"),
          "--n-train", "1", "--seed", "999"])
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")


# ---------------------------------------------------------------------------
# psf / wavefront / measure
# ---------------------------------------------------------------------------

def test_psf_command_writes_normalized_volume(tmp_path, desk_config_path, capsys):
    amps = tmp_path / "amps.json"
    amps.write_text(json.dumps({"nomenclature": "ansi", "amplitudes": {"8": 0.05}}))
    out = tmp_path / "psf.tif"
    rc = main(["psf", "--config", str(desk_config_path), "--amps", str(amps),
               "--out", str(out), "--shape", "16", "16", "16"])
    assert rc == 0
    volume = read_tiff(out)
    assert volume.data.sum() == pytest.approx(1.0, abs=1e-6)
    assert json.loads(capsys.readouterr().out)["sum"] == pytest.approx(1.0, abs=1e-6)


def test_wavefront_command(tmp_path, capsys):
    amps = tmp_path / "amps.json"
    amps.write_text(json.dumps({"nomenclature": "ansi", "amplitudes": {"5": 0.075}}))
    out = tmp_path / "wf.tif"
    rc = main(["wavefront", "--amps", str(amps), "--size", "64", "--out", str(out)])
    assert rc == 0
    wf = read_tiff(out)
    assert wf.shape == (1, 64, 64)
    # unit-RMS normalization: RMS over the pupil equals the amplitude
    assert json.loads(capsys.readouterr().out)["rms_um"] == pytest.approx(0.075, rel=0.02)


def test_measure_command(tmp_path, capsys):
    data = np.full((4, 8, 8), 40.0)
    data[:, :4] = 320.0
    fg = np.zeros_like(data)
    fg[:, :4] = 1.0
    bg = np.zeros_like(data)
    bg[:, 4:] = 1.0
    write_tiff(Volume(data), tmp_path / "vol.tif")
    write_tiff(Volume(fg), tmp_path / "fg.tif")
    write_tiff(Volume(bg), tmp_path / "bg.tif")
    rc = main(["measure", "--volume", str(tmp_path / "vol.tif"),
               "--fg-mask", str(tmp_path / "fg.tif"), "--bg-mask", str(tmp_path / "bg.tif")])
    assert rc == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["snr"] == pytest.approx(8.0)


# ---------------------------------------------------------------------------
# predict / restore / eval
# ---------------------------------------------------------------------------

def test_predict_outputs_amplitude_json(tmp_path, desk_config_path, capsys):
    checkpoint = make_checkpoint(tmp_path)
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
          "--n-test-per-mode", "1"])
    capsys.readouterr()
    volume = tmp_path / "d" / "test" / "ansi_8" / "vol_00000.tif"
    out = tmp_path / "pred.json"
    psf_out = tmp_path / "pred_psf.tif"
    rc = main(["predict", "--checkpoint", str(checkpoint), "--volume", str(volume),
               "--out", str(out), "--psf", str(psf_out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert [m["j"] for m in doc["modes"]] == [3, 5, 8]
    assert all(np.isfinite(m["amplitude_um"]) for m in doc["modes"])
    assert read_tiff(psf_out).data.sum() == pytest.approx(1.0, abs=1e-6)


def test_predict_rejects_wrong_voxel_size(tmp_path, desk_config_path, capsys):
    checkpoint = make_checkpoint(tmp_path)
    wrong = Volume(np.ones((16, 16, 16)), (0.5, 0.5, 0.5))
    write_tiff(wrong, tmp_path / "wrong.tif")
    rc = main(["predict", "--checkpoint", str(checkpoint),
               "--volume", str(tmp_path / "wrong.tif"), "--out", str(tmp_path / "o.json")])
    assert rc == 2


def test_restore_requires_exactly_one_psf_source(tmp_path, capsys):
    rc = main(["restore", "--volume", "x.tif", "--out", "y.tif"])
    assert rc == 1
    rc = main(["restore", "--volume", "x.tif", "--out", "y.tif",
               "--checkpoint", "a", "--psf-file", "b"])
    assert rc == 1


def test_restore_with_delta_psf_is_identity(tmp_path, capsys):
    rng = np.random.default_rng(0)
    volume = Volume(rng.uniform(0, 1, size=(16, 16, 16)))
    write_tiff(volume, tmp_path / "in.tif")
    kernel = np.zeros((16, 16, 16))
    kernel[8, 8, 8] = 1.0
    write_tiff(Volume(kernel), tmp_path / "delta.tif")
    rc = main(["restore", "--volume", str(tmp_path / "in.tif"),
               "--psf-file", str(tmp_path / "delta.tif"),
               "--out", str(tmp_path / "out.tif"), "--iterations", "25"])
    assert rc == 0
    out = read_tiff(tmp_path / "out.tif")
    assert np.abs(out.data - volume.data).max() < 1e-5


def test_restore_with_checkpoint_runs(tmp_path, desk_config_path, capsys):
    checkpoint = make_checkpoint(tmp_path)
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
          "--n-test-per-mode", "1"])
    capsys.readouterr()
    volume = tmp_path / "d" / "test" / "ansi_3" / "vol_00000.tif"
    rc = main(["restore", "--volume", str(volume), "--checkpoint", str(checkpoint),
               "--out", str(tmp_path / "restored.tif"), "--iterations", "3"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["predicted_modes"]) == 3
    assert (tmp_path / "restored.tif").exists()


def test_eval_produces_report_files(tmp_path, desk_config_path, capsys):
    checkpoint = make_checkpoint(tmp_path)
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
          "--n-test-per-mode", "2"])
    rc = main(["eval", "--checkpoint", str(checkpoint),
               "--test-dir", str(tmp_path / "d" / "test"), "--out", str(tmp_path / "ev")])
    assert rc == 0
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["n_samples"] == 6
    assert set(summary["box_stats"]) == {"ansi_3", "ansi_5", "ansi_8"}
    lines = (tmp_path / "ev" / "predictions.csv").read_text().splitlines()
    assert len(lines) == 7  # header + 6 samples


def test_eval_reports_missing_volumes(tmp_path, desk_config_path, capsys):
    checkpoint = make_checkpoint(tmp_path)
    main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
          "--n-test-per-mode", "1"])
    victim = tmp_path / "d" / "test" / "ansi_5" / "vol_00000.tif"
    victim.unlink()
    rc = main(["eval", "--checkpoint", str(checkpoint),
               "--test-dir", str(tmp_path / "d" / "test"), "--out", str(tmp_path / "ev")])
    assert rc == 2
    assert "vol_00000" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# configuration overrides and exit codes
# ---------------------------------------------------------------------------

def test_set_override_changes_generator(tmp_path, desk_config_path, capsys):
    rc = main(["gen", "--config", str(desk_config_path), "--out", str(tmp_path / "d"),
               "--n-train", "1", "--set", "generator.modes=[3]"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["modes"] == [3]


def test_validation_error_exit_code(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"microscope": {"na": 2.4}}))
    rc = main(["gen", "--config", str(config), "--out", str(tmp_path / "d")])
    assert rc == 2


def test_unknown_key_exit_code(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"generator": {"bogus": 1}}))
    rc = main(["gen", "--config", str(config), "--out", str(tmp_path / "d")])
    assert rc == 2


def test_missing_file_exit_code(tmp_path, capsys):
    rc = main(["measure", "--volume", str(tmp_path / "nope.tif"),
               "--fg-mask", "x", "--bg-mask", "y"])
    assert rc == 3


def test_usage_error_exit_code(capsys):
    assert main(["frobnicate"]) == 1
