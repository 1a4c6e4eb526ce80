import numpy as np
import pytest

from pcsr.cli import main
from pcsr.data import read_cloud, write_cloud
from pcsr.training import init_trainer, load_checkpoint, save_checkpoint

TINY_MODEL = [
    "--set", "surface_points=2000",
    "--set", "gt_size=64",
    "--set", "input_size=16",
    "--set", "channels=4",
    "--set", "residual_layers=1",
    "--set", "feature_depth=2",
    "--set", "k=4",
    "--set", "stages=1",
    "--set", "d_channels=4",
    "--set", "d_residual_layers=1",
    "--set", "d_feature_depth=1",
    "--set", "d_output_points=8",
    "--set", "batch_size=2",
]


@pytest.fixture()
def dataset_dir(tmp_path):
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(
        "sphere radius=1.0 patches=2 seed=3 split=train\n"
        "torus major=1.0 minor=0.4 patches=1 seed=4 split=test\n"
    )
    out = tmp_path / "data"
    code = main(["synth", str(manifest), str(out)] + TINY_MODEL)
    assert code == 0
    return out


class TestSynth:
    def test_file_count_matches_manifest(self, dataset_dir):
        files = sorted(p.name for p in dataset_dir.glob("*.xyz"))
        assert len(files) == 3  # 2 + 1 patches
        assert (dataset_dir / "index.txt").exists()

    def test_rerun_is_bit_identical(self, dataset_dir, tmp_path):
        manifest = tmp_path / "manifest.txt"
        out2 = tmp_path / "data2"
        assert main(["synth", str(manifest), str(out2)] + TINY_MODEL) == 0
        for p in sorted(dataset_dir.glob("*")):
            assert p.read_bytes() == (out2 / p.name).read_bytes()

    def test_malformed_manifest_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("sphere radius=1.0\nellipsoid a=1\n")
        assert main(["synth", str(bad), str(tmp_path / "out")]) == 2
        assert ":2" in capsys.readouterr().err

    def test_missing_manifest_exits_2(self, tmp_path):
        assert main(["synth", str(tmp_path / "nope.txt"), str(tmp_path / "out")]) == 2


class TestTrain:
    def test_zero_epochs_checkpoint_equals_initialization(self, dataset_dir, tmp_path):
        ckpt = tmp_path / "model.ckpt"
        code = main([
            "train", str(dataset_dir), "--out", str(ckpt),
            "--phase1-epochs", "0", "--phase2-epochs", "0", "--seed", "5",
        ] + TINY_MODEL)
        assert code == 0
        loaded = load_checkpoint(ckpt)
        fresh = init_trainer(loaded.config)
        for a, b in zip(loaded.generator.parameters(), fresh.generator.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_short_training_writes_log(self, dataset_dir, tmp_path):
        ckpt = tmp_path / "model.ckpt"
        log = tmp_path / "losses.csv"
        code = main([
            "train", str(dataset_dir), "--out", str(ckpt), "--log", str(log),
            "--phase1-epochs", "2", "--phase2-epochs", "1", "--seed", "5",
        ] + TINY_MODEL)
        assert code == 0
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "step,l_cd,l_g,l_d"
        assert len(lines) >= 3
        # phase-1 rows leave the adversarial columns empty
        assert lines[1].endswith(",,")
        assert lines[-1].count(",") == 3 and not lines[-1].endswith(",,")

    def test_missing_dataset_exits_2(self, tmp_path):
        assert main(["train", str(tmp_path / "nope"), "--out", str(tmp_path / "x.ckpt")]) == 2


@pytest.fixture()
def trained_checkpoint(dataset_dir, tmp_path):
    ckpt = tmp_path / "trained.ckpt"
    code = main([
        "train", str(dataset_dir), "--out", str(ckpt),
        "--phase1-epochs", "1", "--phase2-epochs", "0", "--seed", "5",
    ] + TINY_MODEL)
    assert code == 0
    return ckpt


class TestUpsample:
    def test_single_iteration_ratio(self, trained_checkpoint, tmp_path):
        rng = np.random.default_rng(0)
        in_path = tmp_path / "in.xyz"
        out_path = tmp_path / "out.xyz"
        write_cloud(rng.normal(size=(32, 3)), in_path)
        code = main(["upsample", str(trained_checkpoint), str(in_path), str(out_path)])
        assert code == 0
        assert len(read_cloud(out_path)) == 64  # stages=1 model: ratio 2

    def test_two_iterations_compound(self, trained_checkpoint, tmp_path):
        rng = np.random.default_rng(1)
        in_path = tmp_path / "in.xyz"
        out_path = tmp_path / "out.xyz"
        write_cloud(rng.normal(size=(32, 3)), in_path)
        code = main(["upsample", str(trained_checkpoint), str(in_path), str(out_path),
                     "--iterations", "2"])
        assert code == 0
        assert len(read_cloud(out_path)) == 128

    def test_input_file_untouched(self, trained_checkpoint, tmp_path):
        rng = np.random.default_rng(2)
        in_path = tmp_path / "in.xyz"
        write_cloud(rng.normal(size=(32, 3)), in_path)
        before = in_path.read_bytes()
        main(["upsample", str(trained_checkpoint), str(in_path), str(tmp_path / "o.xyz")])
        assert in_path.read_bytes() == before

    def test_bad_checkpoint_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        in_path = tmp_path / "in.xyz"
        write_cloud(np.zeros((8, 3)) + np.arange(8)[:, None], in_path)
        assert main(["upsample", str(bad), str(in_path), str(tmp_path / "o.xyz")]) == 2

    def test_missing_input_exits_2(self, trained_checkpoint, tmp_path):
        assert main(["upsample", str(trained_checkpoint), str(tmp_path / "nope.xyz"),
                     str(tmp_path / "o.xyz")]) == 2


class TestEval:
    def write_grid(self, path, n, extent=1.0, lift=0.0):
        xs = np.linspace(0.0, extent, n)
        gx, gy = np.meshgrid(xs, xs)
        pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, lift)])
        write_cloud(pts, path)
        return pts

    def test_perfect_prediction_row(self, tmp_path, capsys):
        pred = tmp_path / "pred.xyz"
        gt = tmp_path / "gt.xyz"
        ref = tmp_path / "ref.xyz"
        self.write_grid(pred, 16)
        self.write_grid(gt, 16)
        self.write_grid(ref, 60)
        assert main(["eval", str(pred), str(gt), str(ref)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        header, row = out[0].split(","), out[1].split(",")
        values = dict(zip(header, row))
        assert float(values["cd"]) == 0.0
        assert float(values["emd"]) == 0.0
        assert float(values["fscore_tau0.01"]) == 1.0
        assert values["deviation_mean"] != ""

    def test_hand_worked_fixture_row(self, tmp_path, capsys):
        # gt two points, pred one point: mean CD 0.5 each way -> cd 0.5 + 0
        pred = tmp_path / "pred.xyz"
        gt = tmp_path / "gt.xyz"
        ref = tmp_path / "ref.xyz"
        write_cloud(np.array([[0.0, 0.0, 0.0]]), pred)
        write_cloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), gt)
        self.write_grid(ref, 10)
        assert main(["eval", str(pred), str(gt), str(ref)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        values = dict(zip(out[0].split(","), out[1].split(",")))
        assert float(values["cd"]) == 0.5
        assert values["emd"] == ""  # size mismatch reported as absent, not a crash
        assert float(values["fscore_tau0.01"]) == pytest.approx(2.0 / 3.0)

    def test_missing_file_exits_2(self, tmp_path):
        gt = tmp_path / "gt.xyz"
        write_cloud(np.zeros((1, 3)), gt)
        assert main(["eval", str(tmp_path / "nope.xyz"), str(gt), str(gt)]) == 2


class TestConfigHandling:
    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("warp_speed = 9\n")
        manifest = tmp_path / "m.txt"
        manifest.write_text("sphere radius=1.0\n")
        assert main(["synth", str(manifest), str(tmp_path / "o"), "--config", str(cfg)]) == 2

    def test_unknown_set_key_exits_2(self, tmp_path):
        manifest = tmp_path / "m.txt"
        manifest.write_text("sphere radius=1.0\n")
        assert main(["synth", str(manifest), str(tmp_path / "o"), "--set", "bogus=1"]) == 2

    def test_flag_overrides_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("seed = 11\nsurface_points = 500   # comment\ngt_size = 64\n")
        manifest = tmp_path / "m.txt"
        manifest.write_text("sphere radius=1.0\n")
        code = main(["synth", str(manifest), str(tmp_path / "o"),
                     "--config", str(cfg), "--seed", "42"])
        assert code == 0
        err = capsys.readouterr().err
        assert "config: seed = 42" in err
        assert "config: surface_points = 500" in err

    def test_resolved_config_printed(self, tmp_path, capsys):
        manifest = tmp_path / "m.txt"
        manifest.write_text("sphere radius=1.0\n")
        main(["synth", str(manifest), str(tmp_path / "o"), "--set", "gt_size=64",
              "--set", "surface_points=500"])
        err = capsys.readouterr().err
        assert "config: gt_size = 64" in err
