import subprocess
import sys

import numpy as np
import pytest

from dualsam import cli, codec, imaging
from dualsam.imaging import RawImage
from dualsam.model import load_checkpoint


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "dualsam", *map(str, argv)],
                          capture_output=True, text=True)


def write_mask(path, mask):
    cli.write_mask(path, mask)
    return path


# --------------------------------------------------------------- parsing

def test_parse_encode():
    args = cli.parse_args(["encode", "--mask", "m.pgm", "--out", "m.c3pl"])
    assert (args.command, args.mask, args.out) == ("encode", "m.pgm", "m.c3pl")


def test_parse_defaults():
    args = cli.parse_args(["selftest"])
    assert (args.seed, args.epochs, args.xi, args.gamma_variant, args.levels) == (0, 30, 0.5, "as-written", 4)


@pytest.mark.parametrize("argv,needle", [
    (["encode", "--out", "x"], "--mask"),
    (["encode", "--mask", "m.pgm"], "--out"),
    (["bogus"], "invalid choice"),
    (["encode", "--mask", "a", "--out", "b", "--frobnicate"], "unrecognized"),
    (["decode", "--label", "a", "--out", "b", "--xi", "1.5"], "--xi"),
])
def test_usage_errors_exit_2(argv, needle, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(argv)
    assert exc.value.code == 2 and needle in capsys.readouterr().err


def test_help_exits_0(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["--help"])
    assert exc.value.code == 0 and "usage" in capsys.readouterr().out


def test_subprocess_exit_codes(tmp_path):
    assert run_cli("encode").returncode == 2
    proc = run_cli("decode", "--label", tmp_path / "missing.c3pl", "--out", tmp_path / "x.pgm")
    assert proc.returncode == 1
    assert len(proc.stderr.strip().splitlines()) == 1 and "error" in proc.stderr


# -------------------------------------------------------------- commands

def test_encode_decode_round_trip(tmp_path):
    m = np.zeros((12, 10), np.uint8)
    m[2:8, 3:9] = 1
    m[9:11, 1] = 1
    src = write_mask(tmp_path / "m.pgm", m)
    assert cli.main(["encode", "--mask", str(src), "--out", str(tmp_path / "m.c3pl")]) == 0
    assert np.array_equal(codec.load_label((tmp_path / "m.c3pl").read_bytes()), codec.encode(m))
    assert cli.main(["decode", "--label", str(tmp_path / "m.c3pl"), "--out", str(tmp_path / "d.pgm")]) == 0
    back = imaging.read_pnm(tmp_path / "d.pgm")
    assert np.array_equal(back.pixels[:, :, 0] > 0, m.astype(bool))
    assert set(np.unique(back.pixels)) <= {0, 255}


def test_decode_map_file(tmp_path):
    m = np.zeros((6, 6), np.uint8)
    m[1:5, 1:5] = 1
    prob = codec.encode(m) * 0.9 + 0.05
    (tmp_path / "p.c3pf").write_bytes(codec.save_map(prob))
    assert cli.main(["decode", "--label", str(tmp_path / "p.c3pf"), "--out", str(tmp_path / "d.pgm")]) == 0
    assert np.array_equal(cli.read_mask(tmp_path / "d.pgm"), m)


def test_gamma_command(tmp_path, capsys):
    img = RawImage.from_array(np.full((4, 4, 3), 64, np.uint8))
    imaging.write_pnm(tmp_path / "in.ppm", img)
    assert cli.main(["gamma", "--in", str(tmp_path / "in.ppm"), "--out", str(tmp_path / "o.ppm"),
                     "--gamma-variant", "standard-agc"]) == 0
    g = float(capsys.readouterr().out.strip().split("=")[1])
    assert g == pytest.approx(np.log10(0.5) / np.log10(64 / 255))
    out = imaging.read_pnm(tmp_path / "o.ppm").pixels
    assert np.all(out == round(255 * (64 / 255) ** g))


def test_gamma_degenerate_exits_1(tmp_path):
    imaging.write_pnm(tmp_path / "k.pgm", RawImage.from_array(np.zeros((2, 2), np.uint8)))
    assert cli.main(["gamma", "--in", str(tmp_path / "k.pgm"), "--out", str(tmp_path / "o.pgm")]) == 1


def test_synth_command_deterministic(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["synth", "--count", "3", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["img_0000.ppm", "img_0001.ppm", "img_0002.ppm",
                     "mask_0000.pgm", "mask_0001.pgm", "mask_0002.pgm"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_train_zero_epochs_then_eval(tmp_path):
    run = tmp_path / "run"
    assert cli.main(["train", "--epochs", "0", "--train-count", "4", "--out", str(run)]) == 0
    assert (run / "init.ckpt").read_bytes() == (run / "final.ckpt").read_bytes()
    assert (run / "history.csv").read_text().count("\n") == 1
    assert "model.seed=0" in (run / "config.txt").read_text()
    assert cli.main(["eval", "--run", str(run), "--count", "3"]) == 0
    lines = (run / "metrics.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("mean,")
    assert (run / "metrics_summary.txt").exists()


def test_train_one_epoch_small(tmp_path):
    run = tmp_path / "r"
    assert cli.main(["train", "--epochs", "1", "--train-count", "8", "--levels", "2",
                     "--head", "pixel", "--out", str(run)]) == 0
    state = load_checkpoint((run / "final.ckpt").read_bytes())
    assert state["alpha.head.0.w"].shape[0] == 1 and "alpha.head.2.w" not in state


def test_selftest_passes():
    proc = run_cli("selftest")
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 5


def test_selftest_reports_failure(monkeypatch, capsys):
    from dualsam import selftest
    monkeypatch.setattr(selftest, "CHECKS", [("always fails", lambda _r: False)])
    assert cli.main(["selftest"]) == 1
    assert "FAIL always fails" in capsys.readouterr().out


def test_ablate_command_small(tmp_path, capsys):
    out = tmp_path / "table.txt"
    assert cli.main(["ablate", "--seeds", "1", "--epochs", "1", "--train-count", "8",
                     "--test-count", "2", "--levels", "1", "--out", str(out)]) == 0
    table = out.read_text().splitlines()
    assert table[0].split() == ["variant", "miou", "f_beta", "mae"]
    assert [row.split()[0] for row in table[1:]] == ["pixel-single", "pixel-dual", "pixel-dual-pms",
                                                     "c3p-single", "c3p-dual", "c3p-dual-pms"]
