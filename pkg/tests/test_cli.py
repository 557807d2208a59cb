import json
import subprocess
import sys

import numpy as np
import pytest

from wmgraph import __version__
from wmgraph.activation import DesignMatrix, glm_fit, t_map
from wmgraph.cli import main
from wmgraph.graph import build_graph, load_graph
from wmgraph.phantom import BlockParadigm
from wmgraph.spectral import HeatKernel, cheb_coefficients, filter_timeseries
from wmgraph.volume_io import read_mask, read_odf_field, read_volume


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert run("synth", "--seed", 3, "--dims", "18,18,12", "--width", 5,
               "--streamlines-per-tract", 15, "--out", ds) == 0
    assert run("build-graph", "--mask", ds / "mask.vol", "--odf", ds / "odf.odf",
               "--out", root / "g.grf") == 0
    assert run("phantom", "--streamlines", ds / "streamlines.json", "--dims", "18,18,12",
               "--seed", 5, "--n-streamlines", 6, "--diffusion-sigma", 3, "--frames", 40,
               "--out", root / "ph") == 0
    return root


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "wmgraph", "--version"], capture_output=True, text=True,
                         check=False)
    assert res.returncode == 0 and __version__ in res.stdout


def test_graph_matches_library(workspace):
    ds = workspace / "ds"
    g, _ = build_graph(read_mask(ds / "mask.vol"), read_odf_field(ds / "odf.odf"))
    assert load_graph(workspace / "g.grf").digest() == g.digest()
    side = json.loads((workspace / "g.grf.json").read_text())
    assert side["report"]["n_vertices"] == g.n_vertices
    assert [i["name"] for i in side["inputs"]] == ["mask.vol", "odf.odf"]


def test_filter_and_analyze_match_library(workspace):
    ds, ph = workspace / "ds", workspace / "ph"
    out = workspace / "f.vol"
    assert run("filter", "--series", ph / "series.vol", "--method", "graph", "--tau", 1.4,
               "--mask", ds / "mask.vol", "--graph", workspace / "g.grf", "--out", out) == 0
    mask = read_mask(ds / "mask.vol")
    ref = filter_timeseries(load_graph(workspace / "g.grf"), cheb_coefficients(HeatKernel(1.4)),
                            read_volume(ph / "series.vol"), mask)
    assert read_volume(out).data.tobytes() == ref.data.tobytes()

    assert run("analyze", "--series", out, "--mask", ds / "mask.vol", "--frames", 40,
               "--out", workspace / "t.vol") == 0
    tm = t_map(glm_fit(ref, DesignMatrix.from_paradigm(BlockParadigm(n_frames=40)), mask))
    assert read_volume(workspace / "t.vol").data.tobytes() == tm.values.data.tobytes()
    assert json.loads((workspace / "t.vol.json").read_text())["dof"] == 38


def test_filter_threads_do_not_change_output(workspace):
    ds, ph = workspace / "ds", workspace / "ph"
    outs = []
    for t in ("1", "3", "auto"):
        out = workspace / f"thr{t}" / "f.vol"
        out.parent.mkdir()
        assert run("filter", "--series", ph / "series.vol", "--method", "uniform-graph", "--tau", 2.2,
                   "--mask", ds / "mask.vol", "--threads", t, "--out", out) == 0
        outs.append((out.read_bytes(), (out.parent / "f.vol.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_gaussian_filter_and_roc(workspace, capsys):
    ph, ds = workspace / "ph", workspace / "ds"
    assert run("filter", "--series", ph / "series.vol", "--method", "gaussian", "--fwhm-mm", 4,
               "--out", workspace / "gs.vol") == 0
    assert run("analyze", "--series", workspace / "gs.vol", "--frames", 40, "--mask", ds / "mask.vol",
               "--out", workspace / "gt.vol") == 0
    capsys.readouterr()
    assert run("roc", "--tmaps", workspace / "gt.vol", "--truths", ph / "ground_truth.vol",
               "--mask", ds / "mask.vol", "--label", "gaussian", "--out", workspace / "roc.csv") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["filter"] == "gaussian" and 0 <= summary["auc"] <= 1
    lines = (workspace / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr" and len(lines) == 1003


def test_phantom_provenance_replay(workspace):
    ds = workspace / "ds"
    assert run("phantom", "--streamlines", ds / "streamlines.json",
               "--from-provenance", workspace / "ph" / "provenance.json", "--out", workspace / "ph2") == 0
    for name in ("series.vol", "amplitude.vol", "ground_truth.vol", "provenance.json"):
        assert (workspace / "ph" / name).read_bytes() == (workspace / "ph2" / name).read_bytes()


def test_config_file_and_override(workspace):
    ds = workspace / "ds"
    cfg = workspace / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "dims": [18, 18, 12], "n_streamlines": 6,
                               "diffusion_sigma": 3.0, "frames": 40}))
    assert run("phantom", "--config", cfg, "--streamlines", ds / "streamlines.json",
               "--out", workspace / "ph3") == 0
    assert (workspace / "ph3" / "series.vol").read_bytes() == (workspace / "ph" / "series.vol").read_bytes()
    assert run("phantom", "--config", cfg, "--seed", 6, "--streamlines", ds / "streamlines.json",
               "--out", workspace / "ph4") == 0
    assert (workspace / "ph4" / "series.vol").read_bytes() != (workspace / "ph" / "series.vol").read_bytes()


def _stderr_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_usage_errors_exit_2(workspace, capsys):
    ph = workspace / "ph"
    assert run("filter", "--series", ph / "series.vol", "--method", "wavelet", "--out", workspace / "x") == 2
    assert _stderr_error(capsys)["error"] == "UsageError"
    assert run("phantom", "--streamlines", workspace / "ds" / "streamlines.json", "--out", workspace / "x") == 2
    assert "--seed" in _stderr_error(capsys)["message"]
    assert run("analyze", "--series", workspace / "missing.vol", "--out", workspace / "x") == 2
    assert _stderr_error(capsys)["error"] == "FileNotFoundError"
    bad = workspace / "bad.json"
    bad.write_text(json.dumps({"sed": 1}))
    assert run("synth", "--config", bad, "--out", workspace / "x") == 2
    assert "unknown config keys" in _stderr_error(capsys)["message"]
    with pytest.raises(SystemExit) as exc:
        main(["filter", "--tau", "abc"])
    assert exc.value.code == 2


def test_input_format_error_exit_2(workspace, capsys):
    junk = workspace / "junk.vol"
    junk.write_bytes(b"not a volume")
    assert run("analyze", "--series", junk, "--out", workspace / "x") == 2
    assert _stderr_error(capsys)["error"] == "FormatError"


def test_pipeline_small(tmp_path, capsys):
    args = ["pipeline", "--seed", 0, "--n-phantoms", 2, "--dims", "18,18,12", "--n-streamlines", 8,
            "--diffusion-sigma", 4, "--frames", 40, "--tau", "1.4,3.3", "--fwhm-mm", "2,6",
            "--uniform-tau", "1.4", "--cheb-order", 20]
    assert run(*args, "--out", tmp_path / "a") == 0
    aucs = json.loads(capsys.readouterr().out)
    assert set(aucs) == {"none", "gaussian:2", "gaussian:6", "graph:1.4", "graph:3.3", "uniform-graph:1.4"}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert len(summary["results"]) == 6
    assert all(0 <= r["auc"] <= 1 and r["n_phantoms"] == 2 for r in summary["results"])
    assert (tmp_path / "a" / "roc_graph_1.4.csv").exists()
    assert np.isfinite(summary["provenance"]["build_report"]["n_vertices"])


def test_roc_two_phantom_average_matches_library(workspace, capsys):
    from wmgraph.activation import average_roc, roc_curve

    ds = workspace / "ds"
    tmaps, truths = [], []
    for seed in (11, 12):
        ph = workspace / f"roc{seed}"
        assert run("phantom", "--streamlines", ds / "streamlines.json", "--dims", "18,18,12", "--seed", seed,
                   "--n-streamlines", 6, "--diffusion-sigma", 3, "--frames", 40, "--out", ph) == 0
        assert run("analyze", "--series", ph / "series.vol", "--mask", ds / "mask.vol", "--frames", 40,
                   "--out", ph / "t.vol") == 0
        tmaps.append(ph / "t.vol")
        truths.append(ph / "ground_truth.vol")
    capsys.readouterr()
    assert run("roc", "--tmaps", *tmaps, "--truths", *truths, "--mask", ds / "mask.vol",
               "--out", workspace / "avg.csv") == 0
    auc = json.loads(capsys.readouterr().out)["auc"]
    mask = read_mask(ds / "mask.vol").voxels
    ref = average_roc([roc_curve(read_volume(t), read_volume(g), 200, mask) for t, g in zip(tmaps, truths)])
    assert auc == ref.auc
    assert run("roc", "--tmaps", *tmaps, "--truths", truths[0], "--out", workspace / "x.csv") == 2


def test_noiseless_analyze_gives_infinite_t(workspace):
    ds = workspace / "ds"
    ph = workspace / "clean"
    assert run("phantom", "--streamlines", ds / "streamlines.json", "--dims", "18,18,12", "--seed", 1,
               "--n-streamlines", 4, "--diffusion-sigma", 3, "--noise-sigma", 0, "--frames", 40,
               "--out", ph) == 0
    assert run("analyze", "--series", ph / "series.vol", "--frames", 40, "--out", ph / "t.vol") == 0
    t = read_volume(ph / "t.vol").data
    active = read_volume(ph / "amplitude.vol").data > 0
    assert np.all(np.isposinf(t[active])) and np.all(t[~active] == 0)
    assert run("analyze", "--series", ph / "series.vol", "--frames", 41, "--out", ph / "u.vol") == 2
