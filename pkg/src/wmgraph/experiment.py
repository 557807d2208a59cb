"""Filter comparison experiment: phantoms -> filtering -> GLM -> averaged ROC."""

import logging
from dataclasses import asdict, dataclass, field

from .activation import DesignMatrix, average_roc, glm_fit, roc_curve, t_map
from .baseline import GaussianSpec, gaussian_filter, masked_uniform_graph
from .graph import GraphBuildConfig, build_graph
from .phantom import BlockParadigm, PhantomSpec, make_phantom
from .spectral import DEFAULT_ORDER, HeatKernel, cheb_coefficients, filter_timeseries

logger = logging.getLogger(__name__)

DEFAULT_TAUS = (1.3, 1.4, 2.2, 3.3)
DEFAULT_FWHMS_MM = (2.0, 4.0, 6.0)


@dataclass
class ExperimentConfig:
    seeds: tuple = tuple(range(10))
    taus: tuple = DEFAULT_TAUS
    fwhms_mm: tuple = DEFAULT_FWHMS_MM
    uniform_taus: tuple = ()
    cheb_order: int = DEFAULT_ORDER
    n_thresholds: int = 200
    n_streamlines: int = 30
    diffusion_sigma_mm: float = 10.0
    noise_sigma: float = 1.0
    activation_floor: float = 0.1
    paradigm: BlockParadigm = field(default_factory=BlockParadigm)
    graph: GraphBuildConfig = field(default_factory=GraphBuildConfig)
    threads: int = 1

    def phantom_spec(self, seed):
        return PhantomSpec(self.n_streamlines, self.diffusion_sigma_mm, self.noise_sigma,
                           int(seed), self.activation_floor)

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["taus"] = list(self.taus)
        d["fwhms_mm"] = list(self.fwhms_mm)
        d["uniform_taus"] = list(self.uniform_taus)
        return d


def method_key(method, param=None):
    return method if param is None else f"{method}:{float(param):g}"


@dataclass
class ExperimentResult:
    curves: dict
    averaged: dict
    build_report: object

    def aucs(self):
        return {k: c.auc for k, c in self.averaged.items()}

    def best(self, method):
        """``(key, auc)`` of the best parameter for ``method``."""
        cands = {k: a for k, a in self.aucs().items() if k.split(":")[0] == method}
        key = max(cands, key=cands.get)
        return key, cands[key]


def run_experiment(mask, odf, streamlines, grid, config=ExperimentConfig(), graph=None):
    """Score every filter on one phantom per seed and average the ROC curves.

    Methods are ``none`` (unfiltered), ``gaussian:<fwhm>``, ``graph:<tau>``
    and, if requested, ``uniform-graph:<tau>``.  All t-maps are scored over
    the white-matter mask.
    """
    if graph is None:
        graph, report = build_graph(mask, odf, config.graph)
    else:
        report = None
    uniform = masked_uniform_graph(mask) if config.uniform_taus else None
    approx = {t: cheb_coefficients(HeatKernel(t), config.cheb_order) for t in
              sorted(set(config.taus) | set(config.uniform_taus))}
    design = DesignMatrix.from_paradigm(config.paradigm)
    curves = {}

    def score(key, series, truth):
        tm = t_map(glm_fit(series, design, mask))
        curves.setdefault(key, []).append(roc_curve(tm, truth, config.n_thresholds))

    for seed in config.seeds:
        ph = make_phantom(streamlines, grid, config.phantom_spec(seed), config.paradigm)
        truth = ph.pattern.ground_truth_mask
        score(method_key("none"), ph.series, truth)
        for fwhm in config.fwhms_mm:
            score(method_key("gaussian", fwhm), gaussian_filter(ph.series, GaussianSpec(fwhm)), truth)
        for tau in config.taus:
            out = filter_timeseries(graph, approx[tau], ph.series, mask, config.threads)
            score(method_key("graph", tau), out, truth)
        for tau in config.uniform_taus:
            out = filter_timeseries(uniform, approx[tau], ph.series, mask, config.threads)
            score(method_key("uniform-graph", tau), out, truth)
        logger.info("seed %s done", seed)

    averaged = {k: average_roc(v) for k, v in curves.items()}
    return ExperimentResult(curves, averaged, report)


def summary_records(result, n_phantoms):
    out = []
    for key, curve in result.averaged.items():
        method, _, param = key.partition(":")
        out.append({"filter": method, "param": float(param) if param else None,
                    "auc": curve.auc, "n_phantoms": n_phantoms})
    return out


