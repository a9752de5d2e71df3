import json

import numpy as np
import pytest

from voxrender import cli
from voxrender.diffengine import load_checkpoint
from voxrender.imageio import load_image


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-shapes", "--n", "3", "--seed", "1", "--out", str(d / "shapes")]) == 0
    assert cli.main(["gen-dataset", "--shapes", str(d / "shapes"), "--views", "2", "--seed", "1",
                     "--out", str(d / "data")]) == 0
    (d / "train.json").write_text(json.dumps({"dataset": "data/manifest.json", "epochs": 1,
                                              "batch_size": 2}))
    return d


def test_gen_shapes_writes_grids_and_recipes(workdir):
    assert len(list((workdir / "shapes").glob("*.vxg"))) == 3
    recipes = json.loads((workdir / "shapes" / "recipes.json").read_text())
    assert sorted(recipes) == ["shape_0000.vxg", "shape_0001.vxg", "shape_0002.vxg"]


def test_gen_shapes_rejects_zero(tmp_path):
    with pytest.raises(ValueError):
        cli.main(["gen-shapes", "--n", "0", "--out", str(tmp_path)])


def test_train_zero_steps_writes_checkpoint(workdir):
    out = workdir / "run0"
    assert cli.main(["train", "--config", str(workdir / "train.json"), "--steps", "0",
                     "--out", str(out)]) == 0
    params, extra = load_checkpoint(out / "final")
    assert extra["step"] == 0 and "proj.w" in params.params


def test_train_is_seed_deterministic(workdir):
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(workdir / "train.json"), "--steps", "2",
                         "--seed", "4", "--out", str(workdir / name)]) == 0
    la = [r.split(",")[2] for r in (workdir / "a" / "log.csv").read_text().splitlines()[1:]]
    lb = [r.split(",")[2] for r in (workdir / "b" / "log.csv").read_text().splitlines()[1:]]
    assert la == lb and len(la) == 2
    pa = (workdir / "a" / "final" / "p0000.f32").read_bytes()
    assert pa == (workdir / "b" / "final" / "p0000.f32").read_bytes()


def test_render_and_eval(workdir, capsys):
    png = workdir / "net.png"
    assert cli.main(["render", "--checkpoint", str(workdir / "run0" / "final"), "--grid",
                     str(workdir / "shapes" / "shape_0000.vxg"), "--out", str(png)]) == 0
    assert load_image(png).shape == (64, 64, 1)
    capsys.readouterr()
    assert cli.main(["eval", "--images", str(png), str(png)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "a,b,psnr" and rows[1].endswith(",99.0000")
    g = str(workdir / "shapes" / "shape_0001.vxg")
    assert cli.main(["eval", "--grids", g, g]) == 0
    assert capsys.readouterr().out.strip().endswith(",1.000000")


def test_render_ref(workdir):
    out = workdir / "ref.png"
    assert cli.main(["render-ref", "--grid", str(workdir / "shapes" / "shape_0000.vxg"),
                     "--azimuth", "30", "--out", str(out)]) == 0
    img = load_image(out)
    assert img.shape == (64, 64, 1) and img.max() > 0


def test_bad_inputs_exit_2(workdir, tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{oops")
    assert cli.main(["train", "--config", str(tmp_path / "bad.json")]) == 2
    assert cli.main(["render", "--checkpoint", str(tmp_path), "--grid",
                     str(workdir / "shapes" / "shape_0000.vxg"), "--out", str(tmp_path / "x.png")]) == 2
    assert "error:" in capsys.readouterr().err


def test_gradcheck_exit_codes(capsys):
    assert cli.main(["gradcheck", "--tol", "1e-5", "--precision", "double"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("name,kind,error,tolerance,pass")
    assert ",0\n" not in out
    # an impossible tolerance must fail loudly
    assert cli.main(["gradcheck", "--tol", "0"]) == 1


def test_reconstruct_report(workdir):
    ae = workdir / "ae"
    (workdir / "ae.json").write_text(json.dumps({"shapes": "shapes", "epochs": 1}))
    assert cli.main(["train-ae", "--config", str(workdir / "ae.json"), "--out", str(ae)]) == 0
    assert cli.main(["render-ref", "--grid", str(workdir / "shapes" / "shape_0000.vxg"),
                     "--out", str(workdir / "obs.png")]) == 0
    (workdir / "rec.json").write_text(json.dumps({
        "renderer": "run0/final", "image": "obs.png", "shape_prior": "ae", "max_steps": 4,
        "reinit_every": 2, "n_restarts": 2, "ground_truth": "shapes/shape_0000.vxg"}))
    assert cli.main(["reconstruct", "--config", str(workdir / "rec.json"),
                     "--out", str(workdir / "rec")]) == 0
    rep = json.loads((workdir / "rec" / "report.json").read_text())
    assert {"azimuth", "elevation", "latent", "round_losses", "psnr", "iou"} <= rep.keys()
    assert len(rep["round_losses"]) == 2 and 0.0 <= rep["iou"] <= 1.0
    assert (workdir / "rec" / "round_00.png").is_file()
    assert np.isfinite(rep["loss"])
