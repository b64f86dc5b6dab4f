"""CLI tests: subcommands, flag precedence, exit codes."""

import numpy as np
import pytest

from pspool.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    build_train_config,
    main,
    make_parser,
    parse_config_file,
)
from pspool.errors import DataError
from pspool.mesh import Mesh, save_off
from pspool.training import TrainConfig


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    data = root / "data"
    pre = root / "pre"
    assert main(["synth", "--out", str(data), "--seed", "31",
                 "--classes", "2", "--per-class", "6"]) == EXIT_OK
    assert main(["precompute", "--data", str(data), "--out", str(pre),
                 "--depth", "2"]) == EXIT_OK
    return root, data, pre


# ---------------------------------------------------------------------------
# Config files and flag precedence


def test_parse_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nlr = 0.01\nbatch_size=4\npooling = sag\n")
    assert parse_config_file(cfg) == {"lr": 0.01, "batch_size": 4,
                                      "pooling": "sag"}


def test_parse_config_file_rejects_junk(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("not a pair\n")
    with pytest.raises(DataError, match="key=value"):
        parse_config_file(cfg)
    cfg.write_text("mystery = 3\n")
    with pytest.raises(DataError, match="unknown key"):
        parse_config_file(cfg)
    cfg.write_text("lr = banana\n")
    with pytest.raises(DataError):
        parse_config_file(cfg)


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lr = 0.01\nseed = 9\npooling = sag\n")
    parser = make_parser()
    args = parser.parse_args(["train-ae", "--data", "d", "--pre", "p",
                              "--out", "o", "--config", str(cfg),
                              "--lr", "0.5", "--pooling", "ps-max"])
    config = build_train_config(args)
    assert config.lr == 0.5            # flag beats file
    assert config.seed == 9            # file beats default
    assert config.pooling == "ps_max"  # dashed flag form mapped
    assert config.batch_size == TrainConfig().batch_size


def test_repo_config_files_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for cfg in sorted(root.glob("*.cfg")):
        settings = parse_config_file(cfg)
        TrainConfig(**settings)


# ---------------------------------------------------------------------------
# Exit codes


def test_usage_errors_exit_1():
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["train-ae"]) == EXIT_USAGE  # missing required flags
    assert main(["probe", "--data", "d", "--pre", "p", "--out", "o",
                 "--pooling", "mean"]) == EXIT_USAGE  # bad choice


def test_data_errors_exit_2(tmp_path):
    assert main(["precompute", "--data", str(tmp_path), "--out",
                 str(tmp_path / "pre")]) == EXIT_DATA  # no manifest
    assert main(["dump-op", str(tmp_path / "missing.psph")]) == EXIT_DATA
    assert main(["validate", str(tmp_path / "missing.off")]) == EXIT_DATA


def test_validate_exit_codes(tmp_path, capsys):
    good = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
                np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]))
    save_off(good, tmp_path / "good.off")
    # small and non-manifold: three faces share the edge (0, 1)
    bad = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                         [0, -1, 0]]),
               np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]))
    save_off(bad, tmp_path / "bad.off")
    assert main(["validate", str(tmp_path / "good.off")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "accept" in out
    assert main(["validate", str(tmp_path / "good.off"),
                 str(tmp_path / "bad.off")]) == EXIT_DATA


# ---------------------------------------------------------------------------
# Pipeline subcommands (tiny corpus)


def test_precompute_rerun_cached(cli_corpus, capsys):
    _, data, pre = cli_corpus
    assert main(["precompute", "--data", str(data), "--out", str(pre),
                 "--depth", "2"]) == EXIT_OK
    assert "12 cached" in capsys.readouterr().out


def test_dump_op_lines(cli_corpus, capsys):
    _, data, pre = cli_corpus
    psph = sorted(pre.glob("*.psph"))[0]
    assert main(["dump-op", str(psph), "--stage", "1",
                 "--which", "unpool"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    parts = lines[0].split()
    assert len(parts) == 3
    int(parts[0]), int(parts[1]), float(parts[2])
    assert main(["dump-op", str(psph), "--stage", "9"]) == EXIT_DATA


def test_train_probe_eval_export_flow(cli_corpus, tmp_path, capsys):
    _, data, pre = cli_corpus
    out = tmp_path / "runs"
    assert main(["train-ae", "--data", str(data), "--pre", str(pre),
                 "--out", str(out), "--max-epochs", "1",
                 "--lr", "3e-3"]) == EXIT_OK
    ae_ckpt = out / "ae-ps_mean-S-s0.pspw"
    assert ae_ckpt.exists()

    assert main(["probe", "--data", str(data), "--pre", str(pre),
                 "--out", str(out), "--max-epochs", "2",
                 "--encoder", str(ae_ckpt)]) == EXIT_OK
    assert (out / "probe-ps_mean-S-s0-f1.pspw").exists()

    assert main(["train-clf", "--data", str(data), "--pre", str(pre),
                 "--out", str(out), "--max-epochs", "1"]) == EXIT_OK
    clf_ckpt = out / "clf-ps_mean-S-s0-f1.pspw"
    assert clf_ckpt.exists()

    assert main(["eval", "--checkpoint", str(clf_ckpt), "--data", str(data),
                 "--pre", str(pre), "--split", "val"]) == EXIT_OK
    assert "accuracy" in capsys.readouterr().out

    assert main(["export-embeddings", "--checkpoint", str(ae_ckpt),
                 "--data", str(data), "--pre", str(pre),
                 "--out", str(tmp_path / "z.csv")]) == EXIT_OK
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert len(lines) == 13


def test_eval_rejects_autoencoder_checkpoint(cli_corpus, tmp_path):
    _, data, pre = cli_corpus
    out = tmp_path / "runs"
    main(["train-ae", "--data", str(data), "--pre", str(pre),
          "--out", str(out), "--max-epochs", "1"])
    assert main(["eval", "--checkpoint", str(out / "ae-ps_mean-S-s0.pspw"),
                 "--data", str(data), "--pre", str(pre)]) == EXIT_DATA


def test_probe_encoder_mismatch_rejected(cli_corpus, tmp_path):
    _, data, pre = cli_corpus
    out = tmp_path / "runs"
    main(["train-ae", "--data", str(data), "--pre", str(pre),
          "--out", str(out), "--max-epochs", "1"])
    assert main(["probe", "--data", str(data), "--pre", str(pre),
                 "--out", str(out), "--pooling", "sag",
                 "--encoder", str(out / "ae-ps_mean-S-s0.pspw")]) == EXIT_DATA


def test_label_fraction_flag(cli_corpus, tmp_path, capsys):
    _, data, pre = cli_corpus
    out = tmp_path / "runs"
    with pytest.warns(Warning):
        code = main(["probe", "--data", str(data), "--pre", str(pre),
                     "--out", str(out), "--max-epochs", "1",
                     "--label-fraction", "0.1"])
    assert code == EXIT_OK
    assert (out / "probe-ps_mean-S-s0-f0.1.pspw").exists()
