import math
import subprocess
import sys

import pytest

from bvloc.bvimage import read_pgm
from bvloc.cli import main, read_manifest
from bvloc.config import FLAT_KEYS, Config, dump_config, load_config, parse_config_text, with_overrides


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("pair")
    assert main(["synth", "--seed", "3", "--out", str(d / "a.bin"), "--pose", "2,-1,30", "--out-b", str(d / "b.bin")]) == 0
    return d / "a.bin", d / "b.bin"


@pytest.fixture(scope="module")
def street(tmp_path_factory):
    d = tmp_path_factory.mktemp("street")
    assert main(["synth", "--seed", "4", "--street", "6", "--out", str(d)]) == 0
    return d


# ---------------------------------------------------------------- config


def test_config_round_trip():
    cfg = with_overrides(Config(), {"g": "0.5", "ransac_inlier_px": "3", "icp": "no", "words": "77"})
    back = parse_config_text(dump_config(cfg))
    assert back == cfg
    assert back.registration.inlier_px == 3.0 and back.registration.icp is False
    assert back.retrieval.words == 77


def test_config_file_comments(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# test\n\ng = 0.5   # leaf\nn_orient=6\n")
    cfg = load_config(p)
    assert cfg.g == 0.5 and cfg.bank.n_orient == 6


def test_config_errors():
    with pytest.raises(KeyError):
        with_overrides(Config(), {"gg": "1"})
    with pytest.raises(ValueError, match="line 2"):
        parse_config_text("g = 0.4\nnonsense\n")
    with pytest.raises(ValueError):
        with_overrides(Config(), {"icp": "maybe"})


def test_every_key_is_dumped():
    text = dump_config(Config())
    assert {line.split(" = ")[0] for line in text.splitlines()} == set(FLAT_KEYS)


# ---------------------------------------------------------------- subcommands


def test_synth_render_pgm(tmp_path, capsys):
    assert run(capsys, "synth", "--seed", "7", "--out", str(tmp_path / "a.xyz"))[0] == 0
    code, out, _ = run(capsys, "render-bv", str(tmp_path / "a.xyz"), "--out", str(tmp_path / "a.pgm"))
    assert code == 0
    assert read_pgm(tmp_path / "a.pgm").shape == (250, 250)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n250 250\n255\n")


def test_describe_writes_records(pair, tmp_path, capsys):
    code, out, _ = run(capsys, "describe", str(pair[0]), "--out", str(tmp_path / "a.bvft"), "--csv", str(tmp_path / "k.csv"))
    assert code == 0 and (tmp_path / "a.bvft").read_bytes()[:4] == b"BVFT"
    assert (tmp_path / "k.csv").read_text().startswith("index,u,v,variant,orientation_deg")


def test_match_pair_deterministic(pair, capsys):
    a, b = map(str, pair)
    c1, o1, _ = run(capsys, "match-pair", a, b, "--seed", "1")
    c2, o2, _ = run(capsys, "match-pair", a, b, "--seed", "1")
    assert c1 == c2 == 0 and o1 == o2
    head, line = o1.strip().splitlines()
    assert head == "frame_a,frame_b,theta_deg,tx,ty,inliers,residual_rms"
    f = line.split(",")
    assert abs(float(f[2]) - 30) < 1 and abs(float(f[3]) - 2) < 0.2 and abs(float(f[4]) + 1) < 0.2


def test_synth_street_manifest(street):
    rows = read_manifest(street / "manifest.csv")
    assert len(rows) == 6 and all(p.exists() for _, p, _ in rows)
    assert all(abs(b[2].tx - a[2].tx - 10) < 1e-9 for a, b in zip(rows, rows[1:]))


def test_build_query_and_self_recall(street, tmp_path, capsys):
    db = str(tmp_path / "s.bvdb")
    code, out, _ = run(capsys, "build-db", str(street / "manifest.csv"), "--words", "40", "--out", db)
    assert code == 0 and "6 keyframes" in out
    code, out, _ = run(capsys, "eval-recall", db, str(street / "manifest.csv"), "--out", str(tmp_path / "r.csv"))
    assert code == 0 and "recall@1 = 1.000" in out
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "n,recall"
    code, out, _ = run(capsys, "query", db, str(street / "frame0003.bin"), "--top", "3")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 4 and lines[1].split(",")[1] == "frame0003"


def test_train_dict_then_build(street, tmp_path, capsys):
    npy = str(tmp_path / "d.npy")
    assert run(capsys, "train-dict", str(street / "manifest.csv"), "--words", "30", "--out", npy)[0] == 0
    code, out, _ = run(capsys, "build-db", str(street / "manifest.csv"), "--dict", npy, "--out", str(tmp_path / "x.bvdb"))
    assert code == 0 and "b=30" in out


def test_build_db_same_seed_same_bytes(street, tmp_path, capsys):
    for name in ("1", "2"):
        run(capsys, "build-db", str(street / "manifest.csv"), "--words", "20", "--seed", "5", "--out", str(tmp_path / name))
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_eval_pose(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("frame_id,tx,ty,theta_deg\na,1,0,0\nb,3,0,0\n")
    (tmp_path / "t.csv").write_text("frame_id,tx,ty,theta_deg\na,0,0,0\nb,0,0,0\n")
    code, out, _ = run(capsys, "eval-pose", str(tmp_path / "e.csv"), str(tmp_path / "t.csv"), "--out", str(tmp_path / "o.csv"))
    assert code == 0 and "success=0.500" in out
    assert (tmp_path / "o.csv").read_text().splitlines()[1].startswith("a,1.000000,0.000000,1")


# ---------------------------------------------------------------- exit codes


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        [],
        ["render-bv"],
        ["synth", "--out", "x", "--bogus"],
        ["synth", "--out", "x", "--set", "nokey=1"],
        ["synth", "--out", "x", "--pose", "1,2"],
    ],
)
def test_usage_errors_exit_one(argv, capsys):
    assert run(capsys, *argv)[0] == 1


def test_runtime_errors_exit_two(tmp_path, capsys):
    code, _, err = run(capsys, "render-bv", str(tmp_path / "missing.xyz"), "--out", str(tmp_path / "o.pgm"))
    assert code == 2 and "error" in err
    (tmp_path / "bad.bvdb").write_bytes(b"XXXX1234")
    code, _, err = run(capsys, "query", str(tmp_path / "bad.bvdb"), str(tmp_path / "missing.xyz"))
    assert code == 2 and "not a BVDB file" in err


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bvloc.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("bvloc ")


def test_config_flag_applies(pair, tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("ransac_ratio = 0.95\nicp = false\n")
    code, out, _ = run(capsys, "match-pair", *map(str, pair), "--config", str(tmp_path / "c.cfg"))
    assert code == 0
    theta = float(out.strip().splitlines()[1].split(",")[2])
    assert abs(theta - 30) < 1.5 and not math.isnan(theta)
