"""End-to-end command line flows against a temporary workspace."""

import json

import numpy as np
import pytest
from conftest import synthetic_image

from proxdenoise.checkpoint import load_checkpoint, save_checkpoint
from proxdenoise.cli import main
from proxdenoise.netpbm import read_image, write_image
from proxdenoise.network import desk_architecture, init_network, network_forward, parameters


@pytest.fixture()
def workspace(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for s in range(6):
        write_image(src / f"img{s}.pgm", synthetic_image(s, 48, 48))
    return tmp_path


def make_data(workspace, crop=32):
    rc = main([
        "dataset", "make", "--src", str(workspace / "src"), "--out", str(workspace / "data"),
        "--crop", str(crop), "--seed", "3",
    ])
    assert rc == 0
    return workspace / "data" / "manifest.json"


def small_model(workspace, variant="local"):
    arch = desk_architecture(
        variant=variant, stages=2, filters=4, kernel=(3, 3), group_size=3, window=(7, 7)
    )
    path = workspace / "model.ckpt"
    save_checkpoint(path, init_network(arch, seed=1))
    return path


class TestDatasetMake:
    def test_writes_manifest_and_crops(self, workspace, capsys):
        manifest = make_data(workspace)
        assert manifest.exists()
        doc = json.loads(manifest.read_text())
        assert len(doc["entries"]) == 6
        assert capsys.readouterr().out.strip() == str(manifest)

    def test_missing_source_dir_is_runtime_error(self, workspace, capsys):
        rc = main(["dataset", "make", "--src", str(workspace / "nope"), "--out",
                   str(workspace / "d")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_trains_and_writes_artifacts(self, workspace, capsys):
        manifest = make_data(workspace)
        config = workspace / "config.json"
        config.write_text(json.dumps({
            "manifest": str(manifest.relative_to(workspace)),
            "epochs": 1,
            "batch_size": 2,
            "lr": 1e-4,
            "noise_grid": [15.0],
            "seed": 5,
            "arch": {"stages": 2, "filters": 4, "kernel": [3, 3]},
        }))
        out = workspace / "trained.ckpt"
        rc = main(["train", "--config", str(config), "--variant", "local",
                   "--channels", "gray", "--out", str(out)])
        assert rc == 0
        params = load_checkpoint(out)
        assert params.arch.variant == "local"
        assert params.arch.stages == 2 and params.arch.filters == 4
        losses = (workspace / "trained.ckpt.losses.csv").read_text().splitlines()
        assert losses[0] == "epoch,joint_loss"
        assert len(losses) == 2

    def test_reproducible_checkpoints(self, workspace):
        manifest = make_data(workspace)
        config = workspace / "config.json"
        config.write_text(json.dumps({
            "manifest": str(manifest.relative_to(workspace)),
            "epochs": 1,
            "batch_size": 2,
            "lr": 1e-4,
            "noise_grid": [21.0],
            "seed": 9,
            "arch": {"stages": 1, "filters": 4, "kernel": [3, 3]},
        }))
        a, b = workspace / "a.ckpt", workspace / "b.ckpt"
        for out in (a, b):
            rc = main(["train", "--config", str(config), "--variant", "local",
                       "--channels", "gray", "--out", str(out)])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_without_manifest(self, workspace, capsys):
        config = workspace / "config.json"
        config.write_text(json.dumps({"epochs": 1}))
        rc = main(["train", "--config", str(config), "--variant", "local",
                   "--channels", "gray", "--out", str(workspace / "x.ckpt")])
        assert rc == 1
        assert "manifest" in capsys.readouterr().err


class TestDenoise:
    def test_round_trip(self, workspace, capsys):
        model = small_model(workspace)
        noisy = workspace / "noisy.pgm"
        write_image(noisy, synthetic_image(7, 40, 40))
        out = workspace / "out.pgm"
        rc = main(["denoise", "--model", str(model), "--sigma", "15",
                   "--in", str(noisy), "--out", str(out)])
        assert rc == 0
        img = read_image(out)
        assert img.shape == (40, 40, 1)
        want = network_forward(read_image(noisy), 15.0, load_checkpoint(model))
        np.testing.assert_array_equal(img, np.floor(np.clip(want, 0, 255) + 0.5))

    def test_sigma_zero_is_usage_error(self, workspace):
        model = small_model(workspace)
        with pytest.raises(SystemExit) as exc:
            main(["denoise", "--model", str(model), "--sigma", "0",
                  "--in", "x.pgm", "--out", "y.pgm"])
        assert exc.value.code == 2

    def test_negative_sigma_is_usage_error(self, workspace):
        with pytest.raises(SystemExit) as exc:
            main(["denoise", "--model", "m.ckpt", "--sigma", "-5",
                  "--in", "x.pgm", "--out", "y.pgm"])
        assert exc.value.code == 2

    def test_missing_model_is_runtime_error(self, workspace, capsys):
        rc = main(["denoise", "--model", str(workspace / "nope.ckpt"), "--sigma", "10",
                   "--in", "x.pgm", "--out", "y.pgm"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_wrong_variant_loads_fine_without_expectation(self, workspace):
        # denoise accepts either variant; the checkpoint itself fixes it
        model = small_model(workspace, variant="nonlocal")
        noisy = workspace / "n.pgm"
        write_image(noisy, synthetic_image(2, 36, 36))
        rc = main(["denoise", "--model", str(model), "--sigma", "10",
                   "--in", str(noisy), "--out", str(workspace / "o.pgm")])
        assert rc == 0


class TestEval:
    def test_csv_format_and_reproducibility(self, workspace, capsys):
        manifest = make_data(workspace)
        model = small_model(workspace)
        capsys.readouterr()  # drain the dataset-make output
        argv = ["eval", "--model", str(model), "--manifest", str(manifest),
                "--sigmas", "10,25", "--seed", "4"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        lines = first.strip().splitlines()
        assert lines[0] == "sigma,avg_input_psnr,avg_psnr"
        assert len(lines) == 3
        assert lines[1].startswith("10,") and lines[2].startswith("25,")
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_seed_changes_noise(self, workspace, capsys):
        manifest = make_data(workspace)
        model = small_model(workspace)
        capsys.readouterr()
        base = ["eval", "--model", str(model), "--manifest", str(manifest), "--sigmas", "10"]
        assert main(base + ["--seed", "0"]) == 0
        a = capsys.readouterr().out
        assert main(base + ["--seed", "1"]) == 0
        assert capsys.readouterr().out != a

    def test_bad_sigma_list_is_usage_error(self, workspace):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--model", "m", "--manifest", "f", "--sigmas", "10,-5"])
        assert exc.value.code == 2


class TestGradcheck:
    def test_single_module_passes(self, capsys):
        rc = main(["gradcheck", "--module", "projection", "--seed", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PASS  projection" in out and "FAIL" not in out

    def test_unknown_module_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["gradcheck", "--module", "bogus"])
        assert exc.value.code == 2


class TestParser:
    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
