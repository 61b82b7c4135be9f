import os

import numpy as np
import pandas as pd
import pytest


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated data plus one short training run shared by the CLI tests."""
    from ratervar.cli.main import main

    root = tmp_path_factory.mktemp("cli")
    data = os.path.join(root, "data")
    run = os.path.join(root, "run")
    assert main([
        "gen-data", "--out", data, "--train", "3", "--test", "2", "--size", "16", "--classes", "3",
        "--shapes", "2", "--raters", "faithful,confuser:1:2:0.8", "--seed", "1",
    ]) == 0
    assert main([
        "train", "--dataset", os.path.join(data, "train"), "--out", run, "--epochs", "1",
        "--latent-dim", "4", "--batch-size", "3", "--no-augment",
    ]) == 0
    return {"root": str(root), "data": data, "run": run, "ckpt": os.path.join(run, "model.ckpt")}


def test_gen_data_and_train_outputs(workspace):
    from ratervar.data.dataset import load_dataset
    from ratervar.misc.utils import parse_key_values

    assert len(load_dataset(os.path.join(workspace["data"], "train"))) == 3
    assert os.path.isfile(os.path.join(workspace["data"], "manifest.txt"))
    assert os.path.isfile(os.path.join(workspace["data"], "run_manifest.txt"))
    log = pd.read_csv(os.path.join(workspace["run"], "train_log.csv"))
    assert len(log) == 1
    with open(os.path.join(workspace["run"], "run_manifest.txt")) as f:
        manifest = parse_key_values(f.read())
    assert manifest["subcommand"] == "train"
    assert manifest["config.D"] == "4" and manifest["config.augment"] == "false"
    assert "sha256.model.ckpt" in manifest
    assert "--no-augment" in manifest["argv"]


def test_predict_outputs(workspace):
    from ratervar.cli.main import main
    from ratervar.data.io import load_mask

    out = os.path.join(workspace["root"], "pred")
    code = main([
        "predict", "--checkpoint", workspace["ckpt"], "--dataset", os.path.join(workspace["data"], "test"),
        "--out", out, "--K", "3", "--save-samples", "--workers", "2",
    ])
    assert code == 0
    names = sorted(os.listdir(out))
    assert "test_0000_argmax.pgm" in names and "test_0000_uncertainty.pgm" in names
    assert "test_0001_sample_002.pgm" in names and "test_0001.txt" in names
    assert load_mask(os.path.join(out, "test_0000_argmax.pgm"), numClasses=3).shape == (16, 16)
    with open(os.path.join(out, "test_0000.txt")) as f:
        sidecar = f.read()
    assert "rater = 2" in sidecar and "gold = true" in sidecar


def test_uncertainty_image_scale():
    from ratervar.cli.main import uncertainty_to_pgm

    assert uncertainty_to_pgm(np.array([0.0, 0.5, 1.0, 1.5])).tolist() == [255, 127, 0, 0]


def test_simulate_blend_and_fuse(workspace):
    from ratervar.cli.main import main

    test = os.path.join(workspace["data"], "test")
    sim = os.path.join(workspace["root"], "sim")
    assert main(["simulate", "--checkpoint", workspace["ckpt"], "--dataset", test, "--out", sim, "--rater", "1", "--K", "2"]) == 0
    assert os.path.isfile(os.path.join(sim, "test_0000_sample_001.pgm"))

    blend = os.path.join(workspace["root"], "blend")
    args = ["predict", "--checkpoint", workspace["ckpt"], "--dataset", test, "--out", blend, "--K", "2", "--rater", "0"]
    assert main(args + ["--blend-with", "1"]) == 0
    assert main(args + ["--blend-with", "0"]) == 0
    assert main(args + ["--blend-with", "9"]) == 1

    fused = os.path.join(workspace["root"], "fused")
    assert main(["fuse", "--dataset", test, "--out", fused]) == 0
    assert os.path.isfile(os.path.join(fused, "confusion.csv"))
    assert len(pd.read_csv(os.path.join(fused, "staple_log.csv"))) >= 1
    assert os.path.isfile(os.path.join(fused, "test_0001.pgm"))
    majority = os.path.join(workspace["root"], "majority")
    assert main(["fuse", "--dataset", test, "--out", majority, "--method", "majority"]) == 0


def test_eval_identical_directories(workspace):
    from ratervar.cli.main import main

    gold = os.path.join(workspace["data"], "test", "gold")
    out = os.path.join(workspace["root"], "eval", "same.csv")
    assert main(["eval", "--pred", gold, "--ref", gold, "--classes", "3", "--out", out]) == 0
    table = pd.read_csv(out)
    assert len(table) == 1
    assert table.kappa_unweighted[0] == 1.0 and table.accuracy[0] == 1.0
    assert os.path.isfile(os.path.join(workspace["root"], "eval", "same_run_manifest.txt"))
    assert main(["eval", "--pred", gold, "--ref", gold, "--out", out]) == 1


def test_eval_against_dataset(workspace):
    from ratervar.cli.main import main

    test = os.path.join(workspace["data"], "test")
    pred = os.path.join(workspace["root"], "pred_eval")
    assert main(["predict", "--checkpoint", workspace["ckpt"], "--dataset", test, "--out", pred, "--K", "2"]) == 0
    out = os.path.join(workspace["root"], "eval", "vs_dataset.csv")
    assert main(["eval", "--pred", pred, "--ref", test, "--mode", "per_image", "--out", out]) == 0
    table = pd.read_csv(out)
    assert list(table.reference) == ["rater_0", "rater_1", "gold"]
    assert set(table.prediction) == {"pred_eval"}


def test_inspect_latent(workspace, capsys):
    from ratervar.cli.main import main

    assert main(["inspect-latent", "--checkpoint", workspace["ckpt"]]) == 0
    printed = capsys.readouterr().out
    assert "gold" in printed and "bhatt_0" in printed
    beside = os.path.join(workspace["run"], "model_inspect_run_manifest.txt")
    with open(beside) as f:
        assert "subcommand = inspect-latent" in f.read()
    out = os.path.join(workspace["root"], "latent.csv")
    assert main(["inspect-latent", "--checkpoint", workspace["ckpt"], "--out", out]) == 0
    assert len(pd.read_csv(out)) == 3


def test_report(workspace):
    from ratervar.cli.main import main

    out = os.path.join(workspace["root"], "report")
    test = os.path.join(workspace["data"], "test")
    assert main(["report", "--checkpoint", workspace["ckpt"], "--dataset", test, "--out", out, "--K", "2", "--gold-metrics"]) == 0
    agreement = pd.read_csv(os.path.join(out, "agreement.csv"))
    assert list(agreement.rater.astype(str)) == ["0", "1", "gold"]
    assert len(os.listdir(os.path.join(out, "overlays"))) == 2


def test_verify_detects_tampering(workspace, capsys):
    from ratervar.cli.main import main

    out = os.path.join(workspace["root"], "fused_verify")
    assert main(["fuse", "--dataset", os.path.join(workspace["data"], "test"), "--out", out, "--method", "majority"]) == 0
    manifest = os.path.join(out, "run_manifest.txt")
    assert main(["verify", manifest]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    with open(os.path.join(out, "test_0000.pgm"), "ab") as f:
        f.write(b"\x00")
    assert main(["verify", manifest]) == 2
    assert "mismatch" in capsys.readouterr().out


def test_config_precedence(workspace, tmp_path):
    from ratervar.cli.main import main
    from ratervar.train.config import TrainConfig

    config = os.path.join(tmp_path, "train.txt")
    with open(config, "w") as f:
        f.write("epochs = 7\nlr_net = 0.001\nlambda = 0.002\n")
    out = os.path.join(tmp_path, "run")
    train = os.path.join(workspace["data"], "train")
    assert main(["train", "--config", config, "--dataset", train, "--out", out, "--epochs", "0", "-D", "4"]) == 0
    cfg = TrainConfig.from_file(os.path.join(out, "config.txt"))
    assert (cfg.epochs, cfg.lr_net, cfg.lambda_kl, cfg.D) == (0, 0.001, 0.002, 4)
    assert cfg.batch_size == TrainConfig().batch_size


def test_sweep_subset(workspace, tmp_path):
    from ratervar.cli.main import main

    out = os.path.join(tmp_path, "sweep")
    code = main([
        "sweep", "--train-set", os.path.join(workspace["data"], "train"),
        "--test-set", os.path.join(workspace["data"], "test"), "--out", out,
        "--only", "D", "--epochs", "0", "--K", "2",
    ])
    assert code == 0
    table = pd.read_csv(os.path.join(out, "sweep.csv"))
    assert list(table.value) == [4, 8, 16]
    assert main(["sweep", "--train-set", "x", "--test-set", "y", "--out", out, "--only", "depth"]) == 1


def test_exit_codes(workspace, tmp_path, monkeypatch):
    from ratervar.cli import main as cli
    from ratervar.exception.exception import NumericalError

    train = os.path.join(workspace["data"], "train")
    assert cli.main([]) == 1
    assert cli.main(["train", "--dataset", train]) == 1
    assert cli.main(["train", "--dataset", train, "--out", str(tmp_path / "r"), "--epochs", "-1"]) == 1
    assert cli.main(["train", "--dataset", train, "--out", os.path.join(train, "inside")]) == 1
    assert cli.main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 2
    assert cli.main(["--version"]) == 0

    broken = os.path.join(tmp_path, "broken.ckpt")
    with open(broken, "wb") as f:
        f.write(b"nope")
    assert cli.main(["inspect-latent", "--checkpoint", broken]) == 2

    def diverge(*args, **kwargs):
        raise NumericalError("loss is not finite")

    monkeypatch.setattr(cli, "train", diverge)
    assert cli.main(["train", "--dataset", train, "--out", str(tmp_path / "nan"), "--epochs", "1"]) == 3


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__]))
