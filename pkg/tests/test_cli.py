import json

import numpy as np
import pytest

from mrstct import cli, io


def run(*argv):
    return cli.main([str(a) for a in argv])


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.fixture
def small_cfg(tmp_path):
    cfg = {
        "patch": {"side": 4, "stride": 2},
        "geometry": {"n_angles": 24},
        "noise": {"incident_photons": 1e4, "seed": 3},
        "learn": {"thresholds": [20.0], "iterations": 5, "n_patches": 300, "seed": 1},
        "recon": {"beta": 1e-4, "gammas": [20.0], "outer_iters": 3},
    }
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))
    return path


def test_disk_pipeline_smoke(tmp_path, capsys, small_cfg):
    d = tmp_path
    assert run("phantom", "--kind", "disk", "--size", 24, "--pixel-size", 2,
               "--out", d / "truth") == 0
    assert run("simulate", "--image", d / "truth", "--config", small_cfg,
               "--out", d / "sino") == 0
    assert run("fbp", "--sino", d / "sino", "--like", d / "truth", "--out", d / "fbp") == 0
    capsys.readouterr()
    assert run("evaluate", "--reference", d / "truth", "--recon", f"FBP={d / 'fbp'}",
               "--out", d / "table.tsv") == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split("\t")[0] for r in rows] == ["metric", "RMSE", "PSNR", "SSIM"]
    assert all(np.isfinite(float(r.split("\t")[1])) for r in rows[1:])
    assert (d / "table.tsv").read_text().splitlines() == rows


def test_config_errors_are_collected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"recon": {"beta": -1, "alpha": 2.5, "typo": 1},
                               "bogus": {}}))
    assert run("reconstruct", "--sino", "s", "--model", "m", "--init", "i", "--out", "o",
               "--config", bad) == cli.EXIT_CONFIG
    err = last_error(capsys)
    assert err["error"] == "config" and err["exit_code"] == cli.EXIT_CONFIG
    for needle in ("recon/beta", "recon/alpha", "typo", "bogus"):
        assert needle in err["message"]


def test_set_overrides(tmp_path):
    cfg = cli.load_config(None, ["recon.beta=2e-5", "recon.gammas=[1, 2, 3]",
                                 "noise.incident_photons=inf"])
    assert cfg["recon"]["beta"] == 2e-5 and cfg["recon"]["gammas"] == [1, 2, 3]
    assert cfg["noise"]["incident_photons"] == float("inf")
    assert cfg["recon"]["inner_iters"] == cli.DEFAULTS["recon"]["inner_iters"]
    with pytest.raises(cli.CliError) as exc:
        cli.load_config(None, ["recon.nope=1", "patch.side=0"])
    assert "patch/side" in str(exc.value) and "nope" in str(exc.value)


def test_exit_codes(tmp_path, capsys):
    assert run("fbp", "--sino", tmp_path / "absent", "--size", 8, "--out",
               tmp_path / "x") == cli.EXIT_MISSING
    assert last_error(capsys)["error"] == "missing"
    (tmp_path / "broken.mrst").write_bytes(b"MRSX" + bytes(12))
    run("phantom", "--kind", "disk", "--size", 8, "--out", tmp_path / "img")
    run("simulate", "--image", tmp_path / "img", "--seed", 0, "--out", tmp_path / "sino")
    capsys.readouterr()
    assert run("reconstruct", "--sino", tmp_path / "sino", "--model", tmp_path / "broken.mrst",
               "--init", tmp_path / "img", "--out", tmp_path / "r") == cli.EXIT_FORMAT
    assert "magic" in last_error(capsys)["message"]
    assert run("simulate", "--image", tmp_path / "img", "--out", tmp_path / "s2") \
        == cli.EXIT_CONFIG
    assert "seed" in last_error(capsys)["message"]


def _learn_and_reconstruct(d, cfg, tag, *extra):
    run("learn", "--images", d / "truth", "--config", cfg, "--out", d / f"{tag}.mrst", *extra)
    return run("reconstruct", "--sino", d / "sino", "--model", d / f"{tag}.mrst",
               "--init", d / "fbp", "--config", cfg, "--out", d / f"{tag}_rec", *extra)


@pytest.fixture
def prepared(tmp_path, small_cfg):
    d = tmp_path
    run("phantom", "--kind", "shepp_logan", "--size", 24, "--pixel-size", 2, "--out", d / "truth")
    run("simulate", "--image", d / "truth", "--config", small_cfg, "--out", d / "sino")
    run("fbp", "--sino", d / "sino", "--like", d / "truth", "--out", d / "fbp")
    return d


def test_st_and_single_layer_mrst_match(prepared, small_cfg):
    d = prepared
    assert _learn_and_reconstruct(d, small_cfg, "st", "--set", "recon.method=\"st\"") == 0
    assert _learn_and_reconstruct(d, small_cfg, "m1") == 0
    assert (d / "st_rec.raw").read_bytes() == (d / "m1_rec.raw").read_bytes()
    assert (d / "st.mrst").read_bytes() == (d / "m1.mrst").read_bytes()


def test_st_method_rejects_deep_model(prepared, small_cfg, capsys):
    d = prepared
    code = _learn_and_reconstruct(d, small_cfg, "deep", "--set", "learn.thresholds=[20,10]",
                                  "--set", "recon.gammas=[20,10]", "--set", "recon.method=st")
    assert code == cli.EXIT_CONFIG
    assert "recon/method" in last_error(capsys)["message"]


def test_run_header_lists_parameters(prepared, small_cfg, capsys):
    d = prepared
    capsys.readouterr()
    _learn_and_reconstruct(d, small_cfg, "h")
    err = capsys.readouterr().err
    header = next(l for l in err.splitlines() if '"command": "reconstruct"' in l)
    fields = json.loads(header.split("run ", 1)[1])
    for key in ("beta", "gammas", "outer_iters", "inner_iters", "subsets", "alpha", "rho_min"):
        assert key in fields["recon"]


def test_reconstruct_log(prepared, small_cfg):
    d = prepared
    run("learn", "--images", d / "truth", "--config", small_cfg, "--out", d / "m.mrst")
    assert run("reconstruct", "--sino", d / "sino", "--model", d / "m.mrst", "--init", d / "fbp",
               "--config", small_cfg, "--reference", d / "truth", "--log", d / "trace.jsonl",
               "--out", d / "rec") == 0
    lines = [json.loads(l) for l in (d / "trace.jsonl").read_text().splitlines()]
    assert len(lines) == 3 and all(np.isfinite(l["rmse"]) for l in lines)
    assert io.load_image(d / "rec").data.shape == (24, 24)
