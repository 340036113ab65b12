import json
import os
from pathlib import Path

import numpy as np
import pytest

from faceae import cli
from faceae.mesh_io import RawMesh, read_obj_file, write_obj_file
from faceae.metrics import SELF_CD_THRESHOLD
from faceae.tokenizer import load as load_tokens

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = ["gen-data", "prep", "stats", "train", "reconstruct", "eval", "ablate", "gradcheck"]

TINY_CONFIG = """\
[model]
resolution = 16
d_model = 32
d_latent = 32
bottleneck_dim = 8
k = 8
m = 64
enc_layers = 1
dec_layers = 1
max_faces = 120
head_hidden = 32
d_coord = 8

[train]
steps = {steps}
batch_size = 2
lr = 0.003
"""


@pytest.fixture(autouse=True)
def _env(monkeypatch):
    monkeypatch.setenv("FACE_LOG", "quiet")
    monkeypatch.setenv("COLUMNS", "100")


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def grid_mesh(nx: int, ny: int) -> RawMesh:
    """Height-field patch with 2 * nx * ny faces."""
    xs, ys = np.meshgrid(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1), indexing="ij")
    z = 0.2 * np.sin(3 * xs) * np.cos(2 * ys)
    v = np.stack([xs, ys, z], -1).reshape(-1, 3)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a, b = i * (ny + 1) + j, (i + 1) * (ny + 1) + j
            faces += [(a, b, b + 1), (a, b + 1, a + 1)]
    return RawMesh(v, faces)


@pytest.mark.parametrize("command", [None] + COMMANDS)
def test_help_snapshot(command, capsys):
    argv = ["--help"] if command is None else [command, "--help"]
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 0
    text = capsys.readouterr().out
    path = SNAPSHOTS / f"help_{command or 'main'}.txt"
    if os.environ.get("UPDATE_SNAPSHOTS"):
        path.write_text(text)
    assert text == path.read_text()
    if command is not None:
        # every option is listed along with its default
        assert "--threads" in text and "(default: 1)" in text


def test_usage_errors_exit_1(capsys):
    for argv in ([], ["bogus"], ["prep", "--in", "x.obj"], ["prep", "--in", "x", "--out", "y", "--order", "spiral"],
                 ["eval", "--gt", "a", "--pred", "b", "--samples", "many"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 1, argv
    capsys.readouterr()


def test_bad_log_level_is_usage_error(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("FACE_LOG", "chatty")
    code, _, err = run(capsys, "gradcheck")
    assert code == 1 and "FACE_LOG" in err


def test_data_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "prep", "--in", tmp_path / "missing.obj", "--out", tmp_path / "x.ftok")[0] == 2
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nf 1 2 3\n")
    code, _, err = run(capsys, "prep", "--in", bad, "--out", tmp_path / "x.ftok")
    assert code == 2 and "error" in err
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[model]\nwidth = 3\n")
    (tmp_path / "d").mkdir()
    write_obj_file(grid_mesh(2, 2), tmp_path / "d" / "a.obj")
    assert run(capsys, "train", "--config", cfg, "--data", tmp_path / "d", "--out", tmp_path / "m.ckpt")[0] == 2
    assert run(capsys, "stats", "--in", tmp_path / "nothing")[0] == 2


def test_gen_data_and_prep(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"items": [{"kind": "torus", "seg_major": 10, "seg_minor": 6, "count": 2},
                                          {"kind": "icosphere", "subdiv": 2, "noise": 0.05}]}))
    code, out, _ = run(capsys, "gen-data", "--spec", spec, "--out", tmp_path / "data")
    assert code == 0
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())["meshes"]
    assert [m["faces"] for m in manifest] == [120, 120, 320]
    first = (tmp_path / "data" / manifest[0]["file"]).read_text()
    run(capsys, "gen-data", "--spec", spec, "--out", tmp_path / "again")
    assert (tmp_path / "again" / manifest[0]["file"]).read_text() == first

    code, out, _ = run(capsys, "prep", "--in", tmp_path / "data" / manifest[2]["file"], "--resolution", 64,
                       "--out", tmp_path / "t" / "ico.ftok")
    assert code == 0
    fields = dict(line.split("=", 1) for line in out.splitlines())
    assert fields["faces"] == "320" and fields["tokens"] == "321"
    assert fields["ratio"].endswith("(107/960)") and fields["ratio_without_eos"].endswith("(1/9)")
    tok = load_tokens(tmp_path / "t" / "ico.ftok")
    assert tok.n_faces == 320 and tok.resolution == 64


def test_prep_thousand_faces_ratio(capsys, tmp_path):
    write_obj_file(grid_mesh(25, 20), tmp_path / "g.obj")
    code, out, _ = run(capsys, "prep", "--in", tmp_path / "g.obj", "--out", tmp_path / "g.ftok")
    fields = dict(line.split("=", 1) for line in out.splitlines())
    assert code == 0 and fields["faces"] == "1000"
    assert fields["ratio"].startswith("0.111")


def test_stats_writes_csv_and_figure(capsys, tmp_path):
    run(capsys, "gen-data", "--preset", "overfit", "--count", 3, "--out", tmp_path / "data")
    code, out, _ = run(capsys, "stats", "--in", tmp_path / "data", "--csv", tmp_path / "rep" / "stats.csv")
    assert code == 0 and "aggregate" in out and "published" in out
    lines = (tmp_path / "rep" / "stats.csv").read_text().splitlines()
    assert lines[0] == "name,faces,face_tokens,baseline_tokens,ratio,source"
    assert len(lines) == 1 + 3 + 1 + 12
    assert (tmp_path / "rep" / "stats.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_self_comparison(capsys, tmp_path):
    from faceae.synthetic import icosphere

    write_obj_file(icosphere(2), tmp_path / "s.obj")
    code, out, _ = run(capsys, "eval", "--gt", tmp_path / "s.obj", "--pred", tmp_path / "s.obj")
    assert code == 0 and out.startswith("# L2 distances")
    fields = dict(kv.split("=") for kv in out.splitlines()[1].split())
    assert float(fields["chamfer"]) < SELF_CD_THRESHOLD
    _, again, _ = run(capsys, "eval", "--gt", tmp_path / "s.obj", "--pred", tmp_path / "s.obj", "--exact")
    assert again == out


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and "FAIL" not in out and "all" in out


def test_gradcheck_failure_exits_3(capsys, monkeypatch):
    from faceae import gradcheck

    monkeypatch.setattr(gradcheck, "run_all", lambda seed=0: [gradcheck.CheckResult("broken", 1.0, 1e-4)])
    code, out, err = run(capsys, "gradcheck")
    assert code == 3 and "FAIL" in out and "broken" in err


def test_train_reconstruct_resume(capsys, tmp_path):
    run(capsys, "gen-data", "--preset", "overfit", "--count", 3, "--out", tmp_path / "data")
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CONFIG.format(steps=6))
    ck = tmp_path / "run" / "m.ckpt"
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", tmp_path / "data", "--out", ck)
    assert code == 0 and ck.exists()
    log_csv = tmp_path / "run" / "m.log.csv"
    assert len(log_csv.read_text().splitlines()) == 7
    assert (tmp_path / "run" / "m.log.png").exists()

    cube = tmp_path / "data" / "mesh_0000_cube.obj"
    args = ("reconstruct", "--ckpt", ck, "--in", cube, "--max-faces", 4)
    code, out, _ = run(capsys, *args, "--out", tmp_path / "r1.obj")
    assert code == 0 and "stop_reason=" in out
    _, out2, _ = run(capsys, *args, "--out", tmp_path / "r2.obj")
    assert out2 == out
    assert (tmp_path / "r1.obj").read_text() == (tmp_path / "r2.obj").read_text()

    # a longer schedule continues from the saved step
    cfg.write_text(TINY_CONFIG.format(steps=8))
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", tmp_path / "data", "--out", ck, "--resume", ck)
    assert code == 0 and "steps=8" in out
    assert [l.split(",")[0] for l in log_csv.read_text().splitlines()[-2:]] == ["6", "7"]


def test_reconstruct_from_point_cloud(capsys, tmp_path):
    from faceae.sampling import sample_surface, save
    from faceae.synthetic import cube

    run(capsys, "gen-data", "--preset", "overfit", "--count", 2, "--out", tmp_path / "data")
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CONFIG.format(steps=2))
    ck = tmp_path / "m.ckpt"
    run(capsys, "train", "--config", cfg, "--data", tmp_path / "data", "--out", ck)
    save(sample_surface(cube(), 64, seed=0), tmp_path / "c.fpc")
    code, out, _ = run(capsys, "reconstruct", "--ckpt", ck, "--in", tmp_path / "c.fpc", "--out", tmp_path / "c.obj",
                       "--max-faces", 0)
    assert code == 0 and "faces=0 stop_reason=limit" in out


def test_ablate_writes_table_and_figure(capsys, tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CONFIG.format(steps=2) + "\n[data]\nholdout = 1\n")
    code, out, _ = run(capsys, "ablate", "--suite", "orderings", "--config", cfg, "--train-meshes", 3,
                       "--csv", tmp_path / "abl" / "orderings.csv")
    assert code == 0
    assert "spatial (zyx, zyx-component)" in out
    lines = (tmp_path / "abl" / "orderings.csv").read_text().splitlines()
    assert lines[0].startswith("variant,final_loss")
    assert [l.split(",")[0] for l in lines[1:]] == ["zyx", "zyx-component", "dfs", "bfs"]
    assert (tmp_path / "abl" / "orderings.png").exists()


def test_ablate_data_needs_test(capsys, tmp_path):
    (tmp_path / "d").mkdir()
    write_obj_file(grid_mesh(2, 2), tmp_path / "d" / "a.obj")
    code, _, err = run(capsys, "ablate", "--suite", "heads", "--data", tmp_path / "d")
    assert code == 1 and "--test" in err
