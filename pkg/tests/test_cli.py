import csv
import glob
import os

import numpy as np
import pytest

from corrnet import cli
from corrnet.exceptions import ConfigError, FormatError
from corrnet.weights import load_weights, save_weights

SMALL = """\
# tiny synthetic run
preset = lenet_fc
regularizer = corrreg
lam = 0.05
batch_size = 32
epochs = 2
n_samples = 200
width = 16
lr_initial = 0.01
noise_sigma = 2.0
view_shape = 1x4x8
"""


def _run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out", str(tmp_path / "runs")])


def _only_dir(tmp_path):
    (d,) = glob.glob(str(tmp_path / "runs" / "*"))
    return d


def _config(tmp_path, text=SMALL):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_parse_config_types_and_defaults():
    cfg = cli.parse_config("lam = 0.1\nlr_decay_epochs = 3, 6\nrecord_time = yes\n", overrides=["seed=4"])
    assert cfg.lam == 0.1 and cfg.lr_decay_epochs == (3, 6) and cfg.record_time and cfg.seed == 4
    assert cfg.preset == "lenet_fc"


@pytest.mark.parametrize("text,needle", [
    ("lam = 0.1\nlamda = 3\n", "f.cfg:2: unknown key 'lamda'"),
    ("epochs = ten\n", "f.cfg:1: field 'epochs'"),
    ("just words\n", "f.cfg:1: expected key = value"),
    ("regularizer = magic\n", "regularizer must be one of"),
    ("preset = vgg\n", "unknown preset"),
    ("dataset = idx\n", "needs idx_images"),
])
def test_parse_config_diagnostics(text, needle):
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text, "f.cfg")
    assert needle in str(err.value)


def test_effective_config_round_trips():
    cfg = cli.parse_config(SMALL)
    assert cli.parse_config(cfg.to_text()) == cfg


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    path = _config(tmp_path)
    assert _run(tmp_path / "a", "train", "--config", path, "--quiet") == 0
    assert _run(tmp_path / "b", "train", "--config", path, "--quiet") == 0
    da, db = _only_dir(tmp_path / "a"), _only_dir(tmp_path / "b")
    assert sorted(os.listdir(da)) == ["config.txt", "metrics.csv", "summary.txt", "weights.crwt"]
    assert open(f"{da}/metrics.csv", "rb").read() == open(f"{db}/metrics.csv", "rb").read()
    assert os.path.basename(da).endswith("_seed0")
    rows = list(csv.DictReader(open(f"{da}/metrics.csv")))
    assert len(rows) == 2 and rows[0]["seconds"] == "NA"
    # effective config reproduces the run
    assert cli.parse_config(open(f"{da}/config.txt").read()) == cli.parse_config(SMALL)


def test_lenet_mini_smoke(tmp_path):
    text = SMALL.replace("lenet_fc", "lenet_mini").replace("1x4x8", "2x4x4")
    assert _run(tmp_path, "train", "--config", _config(tmp_path, text), "--quiet") == 0
    assert "final test accuracy" in open(f"{_only_dir(tmp_path)}/summary.txt").read()


def test_train_exit_codes(tmp_path, capsys):
    path = _config(tmp_path)
    assert _run(tmp_path, "train", "--config", path, "--set", "bogus=1") == 2
    assert "unknown key 'bogus'" in capsys.readouterr().err
    assert _run(tmp_path, "train", "--config", path, "--set", "dataset=csv", "--set", "csv_path=/missing.csv") == 2
    assert _run(tmp_path, "train", "--config", str(tmp_path / "nope.cfg")) == 2
    diverge = ["--set", "lr_initial=1e8", "--set", "momentum=0", "--set", "regularizer=none", "--quiet"]
    with np.errstate(all="ignore"):
        assert _run(tmp_path, "train", "--config", path, *diverge) == 3


def test_gradcheck_command(tmp_path):
    assert _run(tmp_path, "gradcheck", "--scope", "l2regu") == 0
    assert os.path.exists(f"{_only_dir(tmp_path)}/gradcheck.csv")
    assert _run(tmp_path / "neg", "gradcheck", "--scope", "l2regu", "--perturb", "1e-3") == 1


def test_bench_command(tmp_path):
    assert _run(tmp_path, "bench", "--repetitions", "3") == 0
    rows = list(csv.DictReader(open(f"{_only_dir(tmp_path)}/bench.csv")))
    assert [int(r["m"]) for r in rows] == [128, 256, 512]
    assert all(float(r["ratio"]) > 0 for r in rows)


def test_robustness_command(tmp_path):
    _run(tmp_path / "t", "train", "--config", _config(tmp_path), "--quiet")
    model = f"{_only_dir(tmp_path / 't')}/weights.crwt"
    assert _run(tmp_path, "robustness", "--model", model, "--sizes", "0,2,4,8", "--repeats", "5") == 0
    rows = {int(r["size"]): r for r in csv.DictReader(open(f"{_only_dir(tmp_path)}/robustness.csv"))}
    cfg, net, _, te = cli.load_model(model)
    from corrnet.optim import accuracy
    assert float(rows[0]["mean_accuracy"]) == accuracy(net, te)
    assert float(rows[8]["mean_accuracy"]) == pytest.approx(1 / cfg.n_classes, abs=0.03)
    means = [float(rows[s]["mean_accuracy"]) for s in (0, 2, 4, 8)]
    assert all(b <= a + 0.01 for a, b in zip(means, means[1:]))


def test_robustness_needs_image_views(tmp_path):
    _run(tmp_path / "t", "train", "--config", _config(tmp_path, SMALL.replace("view_shape = 1x4x8\n", "")),
         "--quiet")
    model = f"{_only_dir(tmp_path / 't')}/weights.crwt"
    assert _run(tmp_path, "robustness", "--model", model, "--sizes", "2") == 2


def test_weights_round_trip_and_layout(tmp_path, g):
    tensors = {"a.W": g.normal(size=(3, 2)), "b": np.arange(4.0), "s": np.array(2.5)}
    save_weights(tmp_path / "w", tensors, "lam = 0.1\n")
    raw = (tmp_path / "w").read_bytes()
    assert raw[:4] == b"CRWT" and raw[4:8] == (1).to_bytes(4, "little")
    back, text = load_weights(tmp_path / "w")
    assert text == "lam = 0.1\n" and list(back) == list(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    (tmp_path / "t").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "t")
    (tmp_path / "m").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "m")
