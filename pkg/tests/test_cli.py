import csv

import pytest

from diamond.cli import main, parse_config_text
from diamond.errors import ConfigError

FAST = [
    "--set", "embed_dim=32", "--set", "n_heads=2", "--set", "patch_size=8",
    "--set", "use_m=false", "--set", "use_p=false",
    "--set", "lr_max=0.001", "--set", "batch_size=16", "--set", "val_interval=50",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "40", "--seed", "3", "--out", str(root / "data")]) == 0
    assert main(["split", "--manifest", str(root / "data/manifest.csv"), "--candidates", "50", "--out", str(root / "split")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset):
    run = dataset / "run"
    argv = ["train", "--manifest", str(dataset / "data/manifest.csv"), "--split-file", str(dataset / "split/split.csv"),
            "--out", str(run), "--set", "total_iterations=150", *FAST]
    assert main(argv) == 0
    return run


def read_kv(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


class TestSynth:
    def test_file_count_and_determinism(self, tmp_path):
        assert main(["synth", "--n", "50", "--dims", "8", "--out", str(tmp_path / "a")]) == 0
        assert main(["synth", "--n", "50", "--dims", "8", "--out", str(tmp_path / "b")]) == 0
        vols = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.dmvol"))
        assert len(vols) == 100
        for rel in vols + [tmp_path / "a" / "manifest.csv"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_missing_out_is_usage_error(self):
        assert main(["synth", "--n", "4"]) == 64

    def test_no_command_and_bad_flag(self):
        assert main([]) == 64
        assert main(["synth", "--bogus"]) == 64


class TestSplit:
    def test_sizes(self, dataset):
        report = read_kv(dataset / "split/split_report.txt")
        assert (report["train_size"], report["val_size"], report["test_size"]) == ("26", "6", "8")
        with open(dataset / "split/split.csv") as fh:
            assert len(list(csv.reader(fh))) == 41

    def test_single_candidate(self, dataset, tmp_path):
        assert main(["split", "--manifest", str(dataset / "data/manifest.csv"), "--candidates", "1", "--out", str(tmp_path)]) == 0
        assert read_kv(tmp_path / "split_report.txt")["candidate_index"] == "0"

    def test_bad_ratios(self, dataset, tmp_path):
        manifest = str(dataset / "data/manifest.csv")
        assert main(["split", "--manifest", manifest, "--ratios", "a,b", "--out", str(tmp_path)]) == 64
        assert main(["split", "--manifest", manifest, "--ratios", "0.5,0.5,0.5", "--out", str(tmp_path)]) == 2


class TestTrainEval:
    def test_run_directory(self, trained):
        for name in ("config.txt", "split.csv", "model.dmckpt", "history.csv", "metrics.txt"):
            assert (trained / name).is_file()
        snapshot = parse_config_text((trained / "config.txt").read_text())
        assert snapshot["embed_dim"] == 32 and snapshot["use_m"] is False

    def test_eval_on_train_split(self, dataset, trained, tmp_path):
        argv = ["eval", "--checkpoint", str(trained / "model.dmckpt"), "--manifest", str(dataset / "data/manifest.csv"),
                "--split", "train", "--fairness", "--out", str(tmp_path)]
        assert main(argv) == 0
        metrics = read_kv(tmp_path / "metrics.txt")
        assert float(metrics["bacc"]) >= 0.95
        assert (tmp_path / "fairness.csv").read_text().startswith("demographic,group,metric,value,n")

    def test_geometry_mismatch(self, trained, tmp_path):
        assert main(["synth", "--n", "10", "--dims", "32", "--out", str(tmp_path / "big")]) == 0
        argv = ["eval", "--checkpoint", str(trained / "model.dmckpt"), "--manifest", str(tmp_path / "big/manifest.csv"),
                "--split", "all", "--out", str(tmp_path)]
        assert main(argv) == 2

    def test_missing_checkpoint(self, dataset, tmp_path):
        argv = ["eval", "--checkpoint", str(tmp_path / "none.dmckpt"), "--manifest", str(dataset / "data/manifest.csv")]
        assert main(argv) == 2

    def test_unknown_config_key(self, dataset, tmp_path):
        (tmp_path / "c.txt").write_text("embed_dim = 32\nlearning_rate = 0.1\n")
        argv = ["train", "--manifest", str(dataset / "data/manifest.csv"), "--split-file", str(dataset / "split/split.csv"),
                "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "run")]
        assert main(argv) == 2


class TestAblate:
    def test_regbn_axis(self, dataset, tmp_path):
        argv = ["ablate", "--manifest", str(dataset / "data/manifest.csv"), "--split-file", str(dataset / "split/split.csv"),
                "--axis", "regbn", "--seeds", "1", "--out", str(tmp_path), "--set", "total_iterations=10", *FAST]
        assert main(argv) == 0
        with open(tmp_path / "ablation_regbn.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["without_regbn", "with_regbn"]
        assert all(r["n_seeds"] == "1" for r in rows)


class TestConfigText:
    def test_comments_and_types(self):
        values = parse_config_text("# run\nembed_dim = 64  # width\ntau = 0.05\ndims = 16,16,32\nuse_p = no\n")
        assert values == {"embed_dim": 64, "tau": 0.05, "dims": (16, 16, 32), "use_p": False}

    def test_errors_name_the_line(self):
        with pytest.raises(ConfigError, match="cfg:2"):
            parse_config_text("embed_dim = 64\nnot a pair\n", "cfg")
        with pytest.raises(ConfigError, match="cfg:1"):
            parse_config_text("embed_dim = wide\n", "cfg")
