"""Command-line interface.

Subcommands: ``synth``, ``build-graph``, ``phantom``, ``filter``,
``analyze``, ``roc`` and ``pipeline``.  Options may also be given in a JSON
file passed with ``--config``; command-line flags override it.  Exit status
is 0 on success, 1 on a computational failure and 2 on bad usage or input.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .activation import DesignMatrix, average_roc, glm_fit, roc_curve, t_map, write_roc_csv
from .baseline import GaussianSpec, gaussian_filter, masked_uniform_graph
from .exceptions import (
    ConsistencyError,
    DomainError,
    FormatError,
    ShapeError,
    WMGraphError,
)
from .experiment import ExperimentConfig, run_experiment, summary_records
from .graph import GraphBuildConfig, build_graph, load_graph, save_graph
from .phantom import (
    BlockParadigm,
    Grid,
    PhantomSpec,
    make_phantom,
    phantom_from_provenance,
    write_phantom_bundle,
)
from .spectral import DEFAULT_ORDER, HeatKernel, cheb_coefficients, filter_timeseries
from .synthetic import crossing_tracts
from .volume_io import (
    Volume3D,
    Volume4D,
    read_mask,
    read_odf_field,
    read_streamlines,
    read_volume,
    write_mask,
    write_odf_field,
    write_streamlines,
    write_volume,
)

logger = logging.getLogger("wmgraph")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
_INPUT_ERRORS = (FormatError, ShapeError, ConsistencyError, DomainError, FileNotFoundError,
                 IsADirectoryError, PermissionError, KeyError)


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _threads(value):
    if value in (None, "auto"):
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise UsageError("--threads must be >= 1 or 'auto'")
    return n


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _inputs_record(*paths):
    return [{"name": os.path.basename(p), "sha256": _sha256(p)} for p in paths if p]


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _merge_config(args, keys):
    """Config file values overridden by explicitly given flags."""
    merged = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key, default in keys.items():
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
        merged.setdefault(key, default)
    return merged


def _require(cfg, *names):
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


_PATH_KEYS = ("mask", "odf", "streamlines", "series", "graph", "tmaps", "truths", "from_provenance")


def _provenance(command, cfg, *inputs):
    """Record of a run.  Paths are reduced to basenames (inputs are identified by
    their hashes) so identical runs in different directories write identical files."""
    record = {}
    for key, value in cfg.items():
        if key in ("out", "threads"):
            continue
        if key in _PATH_KEYS and value is not None:
            value = [os.path.basename(v) for v in value] if isinstance(value, list) else os.path.basename(value)
        record[key] = value
    return {"command": command, "version": __version__, "config": record, "inputs": _inputs_record(*inputs)}


def _paradigm(cfg):
    return BlockParadigm(cfg["frames"], cfg["tr"], cfg["block_on"], cfg["block_off"], cfg["amplitude_scale"])


_PARADIGM_KEYS = {"frames": 200, "tr": 1.0, "block_on": 10, "block_off": 10, "amplitude_scale": 1.0}
_GRAPH_KEYS = {"sharpening_power": 2, "cone_cos_threshold": 48.0 / 49.0, "min_weight_epsilon": 0.0}


def _graph_config(cfg):
    return GraphBuildConfig(cfg["sharpening_power"], cfg["cone_cos_threshold"], cfg["min_weight_epsilon"])


# -- commands ------------------------------------------------------------------------

_SYNTH_KEYS = {"seed": None, "dims": [40, 40, 40], "width": 10, "kappa": 20.0,
               "streamlines_per_tract": 150, "out": None}


def cmd_synth(args):
    cfg = _merge_config(args, _SYNTH_KEYS)
    _require(cfg, "seed", "out")
    ds = crossing_tracts(tuple(cfg["dims"]), cfg["width"], kappa=cfg["kappa"],
                         streamlines_per_tract=cfg["streamlines_per_tract"], seed=cfg["seed"])
    os.makedirs(cfg["out"], exist_ok=True)
    write_mask(ds.mask, os.path.join(cfg["out"], "mask.vol"))
    write_odf_field(ds.odf, os.path.join(cfg["out"], "odf.odf"))
    write_streamlines(ds.streamlines, os.path.join(cfg["out"], "streamlines.json"))
    _write_json(_provenance("synth", cfg), os.path.join(cfg["out"], "synth.json"))
    print(json.dumps({"mask_voxels": len(ds.mask), "streamlines": len(ds.streamlines)}))


_BUILD_KEYS = {"mask": None, "odf": None, "out": None, **_GRAPH_KEYS}


def cmd_build_graph(args):
    cfg = _merge_config(args, _BUILD_KEYS)
    _require(cfg, "mask", "odf", "out")
    mask = read_mask(cfg["mask"])
    odf = read_odf_field(cfg["odf"])
    graph, report = build_graph(mask, odf, _graph_config(cfg))
    save_graph(graph, cfg["out"])
    _write_json({**_provenance("build-graph", cfg, cfg["mask"], cfg["odf"]), "report": report.to_dict()},
                cfg["out"] + ".json")
    print(json.dumps(report.to_dict(), sort_keys=True))


_PHANTOM_KEYS = {"streamlines": None, "out": None, "seed": None, "dims": None,
                 "voxel_size": [1.0, 1.0, 1.0], "n_streamlines": 100, "diffusion_sigma": 10.0,
                 "noise_sigma": 1.0, "activation_floor": 0.1, "from_provenance": None,
                 **_PARADIGM_KEYS}


def cmd_phantom(args):
    cfg = _merge_config(args, _PHANTOM_KEYS)
    _require(cfg, "streamlines", "out")
    lines = read_streamlines(cfg["streamlines"])
    if cfg["from_provenance"]:
        with open(cfg["from_provenance"], encoding="utf-8") as fh:
            record = json.load(fh)
        ph = phantom_from_provenance(record, lines)
    else:
        _require(cfg, "seed", "dims")
        grid = Grid(tuple(cfg["dims"]), tuple(cfg["voxel_size"]))
        spec = PhantomSpec(cfg["n_streamlines"], cfg["diffusion_sigma"], cfg["noise_sigma"],
                           cfg["seed"], cfg["activation_floor"])
        ph = make_phantom(lines, grid, spec, _paradigm(cfg))
    write_phantom_bundle(ph, cfg["out"])
    truth = ph.pattern.ground_truth_mask
    print(json.dumps({"active_voxels": int(truth.sum()), "frames": ph.series.n_frames}))


_FILTER_KEYS = {"series": None, "method": None, "out": None, "mask": None, "graph": None,
                "tau": None, "fwhm_mm": None, "cheb_order": DEFAULT_ORDER, "threads": 1}


def _single(values, flag):
    if values is None:
        raise UsageError(f"{flag} is required for this method")
    values = values if isinstance(values, list) else [values]
    if len(values) != 1:
        raise UsageError(f"{flag} takes a single value for 'filter'")
    return float(values[0])


def cmd_filter(args):
    cfg = _merge_config(args, _FILTER_KEYS)
    _require(cfg, "series", "method", "out")
    method = cfg["method"]
    if method not in ("graph", "gaussian", "uniform-graph"):
        raise UsageError(f"unknown method {method!r}; choose graph, gaussian or uniform-graph")
    series = read_volume(cfg["series"])
    if not isinstance(series, Volume4D):
        raise UsageError(f"{cfg['series']}: expected a 4D series")
    if method == "gaussian":
        out = gaussian_filter(series, GaussianSpec(_single(cfg["fwhm_mm"], "--fwhm-mm")))
    else:
        _require(cfg, "mask")
        tau = _single(cfg["tau"], "--tau")
        mask = read_mask(cfg["mask"])
        if method == "graph":
            _require(cfg, "graph")
            graph = load_graph(cfg["graph"])
        else:
            graph = masked_uniform_graph(mask)
        approx = cheb_coefficients(HeatKernel(tau), cfg["cheb_order"])
        out = filter_timeseries(graph, approx, series, mask, _threads(cfg["threads"]))
    write_volume(out, cfg["out"])
    _write_json(_provenance("filter", cfg, cfg["series"], cfg["mask"], cfg["graph"]),
                cfg["out"] + ".json")


_ANALYZE_KEYS = {"series": None, "out": None, "mask": None, **_PARADIGM_KEYS}


def cmd_analyze(args):
    cfg = _merge_config(args, _ANALYZE_KEYS)
    _require(cfg, "series", "out")
    series = read_volume(cfg["series"])
    if not isinstance(series, Volume4D):
        raise UsageError(f"{cfg['series']}: expected a 4D series")
    design = DesignMatrix.from_paradigm(_paradigm(cfg))
    mask = read_mask(cfg["mask"]) if cfg["mask"] else None
    tm = t_map(glm_fit(series, design, mask))
    write_volume(tm.values, cfg["out"])
    _write_json({**_provenance("analyze", cfg, cfg["series"], cfg["mask"]), "dof": tm.dof},
                cfg["out"] + ".json")


_ROC_KEYS = {"tmaps": None, "truths": None, "mask": None, "out": None, "n_thresholds": 200,
             "label": None}


def cmd_roc(args):
    cfg = _merge_config(args, _ROC_KEYS)
    _require(cfg, "tmaps", "truths", "out")
    if len(cfg["tmaps"]) != len(cfg["truths"]):
        raise UsageError(f"got {len(cfg['tmaps'])} t-maps but {len(cfg['truths'])} ground truths")
    mask = read_mask(cfg["mask"]).voxels if cfg["mask"] else None
    curves = []
    for tp, gp in zip(cfg["tmaps"], cfg["truths"]):
        tmap, truth = read_volume(tp), read_volume(gp)
        if not isinstance(tmap, Volume3D) or not isinstance(truth, Volume3D):
            raise UsageError("t-maps and ground truths must be 3D volumes")
        curves.append(roc_curve(tmap, truth, cfg["n_thresholds"], mask))
    avg = average_roc(curves)
    write_roc_csv(avg, cfg["out"])
    summary = {"filter": cfg["label"], "param": None, "auc": avg.auc, "n_phantoms": len(curves)}
    _write_json({**summary, "provenance": _provenance("roc", cfg, *cfg["tmaps"], *cfg["truths"],
                                                      cfg["mask"])},
                os.path.splitext(cfg["out"])[0] + ".json")
    print(json.dumps(summary))


_PIPELINE_KEYS = {"out": None, "seed": None, "n_phantoms": 10, "tau": [1.3, 1.4, 2.2, 3.3],
                  "fwhm_mm": [2.0, 4.0, 6.0], "uniform_tau": [], "cheb_order": DEFAULT_ORDER,
                  "threads": 1, "mask": None, "odf": None, "streamlines": None,
                  "dims": [40, 40, 40], "voxel_size": [1.0, 1.0, 1.0], "n_streamlines": 30,
                  "diffusion_sigma": 10.0, "noise_sigma": 1.0, "activation_floor": 0.1,
                  "n_thresholds": 200, **_PARADIGM_KEYS, **_GRAPH_KEYS}


def cmd_pipeline(args):
    """phantom -> filter -> analyze -> roc for every filter setting, in one process."""
    cfg = _merge_config(args, _PIPELINE_KEYS)
    _require(cfg, "out", "seed")
    given = [cfg[k] is not None for k in ("mask", "odf", "streamlines")]
    if any(given) and not all(given):
        raise UsageError("--mask, --odf and --streamlines must be given together")
    if all(given):
        mask, odf = read_mask(cfg["mask"]), read_odf_field(cfg["odf"])
        lines = read_streamlines(cfg["streamlines"])
        grid = Grid(mask.dims, mask.voxel_size_mm)
        inputs = (cfg["mask"], cfg["odf"], cfg["streamlines"])
    else:
        ds = crossing_tracts(tuple(cfg["dims"]), seed=cfg["seed"])
        mask, odf, lines, grid = ds.mask, ds.odf, ds.streamlines, ds.grid
        inputs = ()
    seeds = tuple(cfg["seed"] + k for k in range(cfg["n_phantoms"]))
    exp_cfg = ExperimentConfig(
        seeds=seeds, taus=tuple(cfg["tau"]), fwhms_mm=tuple(cfg["fwhm_mm"]),
        uniform_taus=tuple(cfg["uniform_tau"]), cheb_order=cfg["cheb_order"],
        n_thresholds=cfg["n_thresholds"], n_streamlines=cfg["n_streamlines"],
        diffusion_sigma_mm=cfg["diffusion_sigma"], noise_sigma=cfg["noise_sigma"],
        activation_floor=cfg["activation_floor"], paradigm=_paradigm(cfg),
        graph=_graph_config(cfg), threads=_threads(cfg["threads"]))
    result = run_experiment(mask, odf, lines, grid, exp_cfg)

    os.makedirs(cfg["out"], exist_ok=True)
    for key, curve in result.averaged.items():
        write_roc_csv(curve, os.path.join(cfg["out"], f"roc_{key.replace(':', '_')}.csv"))
    records = summary_records(result, len(seeds))
    prov = _provenance("pipeline", cfg, *inputs)
    prov["experiment"] = exp_cfg.to_dict()
    prov["experiment"].pop("threads")
    if result.build_report is not None:
        prov["build_report"] = {k: v for k, v in result.build_report.to_dict().items()
                                if k not in ("isolated_voxels", "degenerate_voxels")}
    _write_json({"results": records, "provenance": prov}, os.path.join(cfg["out"], "summary.json"))
    print(json.dumps({r["filter"] + ("" if r["param"] is None else f":{r['param']:g}"): round(r["auc"], 6)
                      for r in records}, sort_keys=True))


# -- parser --------------------------------------------------------------------------


def _add_common(p, seed=False):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help="output path")
    if seed:
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (required)")


def _add_paradigm(p):
    p.add_argument("--frames", type=int)
    p.add_argument("--tr", type=float)
    p.add_argument("--block-on", type=int)
    p.add_argument("--block-off", type=int)
    p.add_argument("--amplitude-scale", type=float)


def _add_graph(p):
    p.add_argument("--sharpening-power", type=int)
    p.add_argument("--cone-cos-threshold", type=float)
    p.add_argument("--min-weight-epsilon", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="wmgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic crossing-tract dataset")
    _add_common(p, seed=True)
    p.add_argument("--dims", type=_int_list)
    p.add_argument("--width", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--streamlines-per-tract", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="build a white-matter graph from a mask and ODF field")
    _add_common(p)
    p.add_argument("--mask")
    p.add_argument("--odf")
    _add_graph(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("phantom", help="generate a semi-synthetic phantom bundle")
    _add_common(p, seed=True)
    p.add_argument("--streamlines")
    p.add_argument("--dims", type=_int_list)
    p.add_argument("--voxel-size", type=_float_list)
    p.add_argument("--n-streamlines", type=int)
    p.add_argument("--diffusion-sigma", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--activation-floor", type=float)
    p.add_argument("--from-provenance", help="regenerate from a bundle's provenance.json")
    _add_paradigm(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("filter", help="filter a 4D series")
    _add_common(p)
    p.add_argument("--series")
    p.add_argument("--method")
    p.add_argument("--mask")
    p.add_argument("--graph")
    p.add_argument("--tau", type=_float_list)
    p.add_argument("--fwhm-mm", type=_float_list)
    p.add_argument("--cheb-order", type=int)
    p.add_argument("--threads")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("analyze", help="GLM t-map of a 4D series")
    _add_common(p)
    p.add_argument("--series")
    p.add_argument("--mask")
    _add_paradigm(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("roc", help="average ROC of t-maps against ground truths")
    _add_common(p)
    p.add_argument("--tmaps", nargs="+")
    p.add_argument("--truths", nargs="+")
    p.add_argument("--mask")
    p.add_argument("--n-thresholds", type=int)
    p.add_argument("--label")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("pipeline", help="run the full filter comparison")
    _add_common(p, seed=True)
    p.add_argument("--n-phantoms", type=int)
    p.add_argument("--tau", type=_float_list)
    p.add_argument("--fwhm-mm", type=_float_list)
    p.add_argument("--uniform-tau", type=_float_list)
    p.add_argument("--cheb-order", type=int)
    p.add_argument("--threads")
    p.add_argument("--mask")
    p.add_argument("--odf")
    p.add_argument("--streamlines")
    p.add_argument("--dims", type=_int_list)
    p.add_argument("--n-streamlines", type=int)
    p.add_argument("--diffusion-sigma", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--activation-floor", type=float)
    p.add_argument("--n-thresholds", type=int)
    _add_paradigm(p)
    _add_graph(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError,) + _INPUT_ERRORS as exc:
        return _fail(EXIT_USAGE, exc)
    except (WMGraphError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_FAILURE, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
