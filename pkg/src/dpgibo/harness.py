"""Experiment configuration, presets and the multi-seed runner.

Configurations are INI files read with :mod:`configparser`::

    [experiment]
    name = huber_vs_dpgd
    seeds = 0, 1, 2
    output = results
    budget_mode = iterations        ; or: evaluations

    [problem]
    kind = huber                    ; normal_location | huber | gp_tuning | svm_surrogate
    n = 100
    d = 4

    [method:dpgibo]
    algorithm = dpgibo              ; dpgibo | dpgd | random_search
    T = 100
    eta = 1.0
    mu = 1.0
    ...

A method section may override problem options with ``problem.<key>``
entries (for example ``problem.noise_lambda = 0.01``).

Each ``(method, seed)`` run writes ``<output>/<name>/<method>/seed_<s>.csv``
plus a JSON sidecar, and ``<output>/<name>/summary.csv`` collects one row
per run and one aggregate row per method.  Runs are deterministic given the
configuration, so reruns produce byte-identical CSV files.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionConfig
from .kernels import Kernel, KernelFamily, matern, polynomial2, rbf
from .optimizer import OptimizerConfig, dp_gibo_run, gradient_descent_run
from .privacy import Purpose, rng_stream
from .problems import (
    Problem,
    gp_lengthscale_tuning_problem,
    huber_regression_problem,
    noisy_wrapper,
    normal_location_problem,
    random_search_baseline,
    svm_surrogate_problem,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "load_config",
    "parse_config",
    "dump_config",
    "preset",
    "PRESETS",
    "build_problem",
    "build_optimizer_config",
    "run_experiment",
    "dim_scaling_study",
]

ALGORITHMS = ("dpgibo", "dpgd", "random_search")
PROBLEM_KINDS = ("normal_location", "huber", "gp_tuning", "svm_surrogate")


class ConfigError(ValueError):
    """The configuration is malformed or refers to unknown names."""


@dataclass
class ExperimentConfig:
    name: str
    problem: dict[str, str]
    methods: dict[str, dict[str, str]]
    seeds: list[int]
    output: str = "results"
    budget_mode: str = "iterations"
    dims: list[int] | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.methods:
            raise ConfigError("at least one [method:NAME] section is required")
        if self.budget_mode not in ("iterations", "evaluations"):
            raise ConfigError("budget_mode must be 'iterations' or 'evaluations'")
        kind = self.problem.get("kind")
        if kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {kind!r}; expected one of {', '.join(PROBLEM_KINDS)}")
        for m, opts in self.methods.items():
            alg = opts.get("algorithm", "dpgibo")
            if alg not in ALGORITHMS:
                raise ConfigError(f"method {m!r}: unknown algorithm {alg!r}; expected one of {', '.join(ALGORITHMS)}")
            if alg == "random_search" and "budget_evals" not in opts and self.budget_mode != "evaluations":
                raise ConfigError(f"method {m!r}: random_search needs budget_evals in iterations mode")
        if self.dims is not None and not self.dims:
            raise ConfigError("dims must be nonempty when given")

    def with_overrides(self, *, seeds: list[int] | None = None, output: str | None = None) -> "ExperimentConfig":
        return replace(self, seeds=list(seeds) if seeds else self.seeds, output=output or self.output)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected a list of integers, got {text!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if "experiment" not in cp or "problem" not in cp:
        raise ConfigError("config needs [experiment] and [problem] sections")
    ex = cp["experiment"]
    methods = {
        sec.split(":", 1)[1].strip(): dict(cp[sec]) for sec in cp.sections() if sec.startswith("method:")
    }
    return ExperimentConfig(
        name=ex.get("name", "experiment"),
        problem=dict(cp["problem"]),
        methods=methods,
        seeds=_int_list(ex.get("seeds", "0")),
        output=ex.get("output", "results"),
        budget_mode=ex.get("budget_mode", "iterations"),
        dims=_int_list(ex["dims"]) if "dims" in ex else None,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    ex = {
        "name": cfg.name,
        "seeds": ", ".join(map(str, cfg.seeds)),
        "output": cfg.output,
        "budget_mode": cfg.budget_mode,
    }
    if cfg.dims is not None:
        ex["dims"] = ", ".join(map(str, cfg.dims))
    cp["experiment"] = ex
    cp["problem"] = cfg.problem
    for m, opts in cfg.methods.items():
        cp[f"method:{m}"] = opts
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- builders


def _get(opts: dict[str, str], key: str, conv, default=None):
    if key not in opts or opts[key].strip() == "":
        return default
    raw = opts[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _float_or_inf(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity", "none") else float(text)


def build_problem(opts: dict[str, str], seed: int) -> Problem:
    """Instantiate the problem for one replication.

    ``data_seed`` fixes the data across replications; without it each
    replication draws its own data set from its seed.
    """
    kind = opts.get("kind")
    s = _get(opts, "data_seed", int, seed)
    if kind == "normal_location":
        p = normal_location_problem(n=_get(opts, "n", int, 50), d=_get(opts, "d", int, 5), seed=s)
    elif kind == "huber":
        p = huber_regression_problem(
            n=_get(opts, "n", int, 100), d=_get(opts, "d", int, 4), c=_get(opts, "c", float, 1.0), seed=s
        )
    elif kind == "gp_tuning":
        p = gp_lengthscale_tuning_problem(d=_get(opts, "d", int, 15), n_total=_get(opts, "n_total", int, 600), seed=s)
    elif kind == "svm_surrogate":
        p = svm_surrogate_problem(d=_get(opts, "d", int, 20), seed=s, n=_get(opts, "n", int, 100))
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    lam = _get(opts, "noise_lambda", float, 0.0)
    if lam > 0:
        p = noisy_wrapper(p, lam, _get(opts, "declared_sigma", float, None))
    elif "declared_sigma" in opts:
        p = replace(p, declared_sigma=_get(opts, "declared_sigma", float))
    return p


def _kernel(opts: dict[str, str]) -> Kernel:
    fam = KernelFamily.parse(opts.get("kernel", "rbf"))
    ell = _get(opts, "lengthscale", float, 1.0)
    scale = _get(opts, "output_scale", float, 1.0)
    if fam is KernelFamily.RBF:
        return rbf(ell, scale)
    if fam is KernelFamily.POLY2:
        return polynomial2(ell, scale)
    return matern(2.5 if fam is KernelFamily.MATERN52 else 3.5, ell, scale)


def _theta0(opts: dict[str, str], p: Problem, seed: int) -> np.ndarray:
    spec = opts.get("theta0", "zeros").strip().lower()
    if spec == "zeros":
        return np.zeros(p.dim)
    if spec == "random":
        # replications restart uniformly inside the domain box
        return p.sample_box(rng_stream(seed, 0, Purpose.INIT))
    vals = [float(v) for v in spec.replace(",", " ").split()]
    if len(vals) == 1:
        vals = vals * p.dim
    if len(vals) != p.dim:
        raise ConfigError(f"theta0 has {len(vals)} entries, problem dimension is {p.dim}")
    return np.array(vals)


def build_optimizer_config(opts: dict[str, str], p: Problem, seed: int) -> OptimizerConfig:
    """Optimizer settings for one run; ``mu = inf`` selects the non-private mode."""
    sigma = _get(opts, "sigma", float, None)
    mu = _get(opts, "mu", _float_or_inf, 0.0)
    b_max = opts.get("b_max", "").strip().lower()
    if b_max == "d+1":
        b_max_val = p.dim + 1
    else:
        b_max_val = _get(opts, "b_max", int, None)
    acq = AcquisitionConfig(
        search_radius=_get(opts, "search_radius", float, 1.0),
        restarts=_get(opts, "restarts", int, AcquisitionConfig.restarts),
        local_steps=_get(opts, "local_steps", int, AcquisitionConfig.local_steps),
        candidate_seed_count=_get(opts, "candidate_seed_count", int, AcquisitionConfig.candidate_seed_count),
    )
    try:
        return OptimizerConfig(
            T=_get(opts, "T", int, 10),
            eta=_get(opts, "eta", float, 0.1),
            theta0=_theta0(opts, p, seed),
            step_rule=opts.get("step_rule", "plain"),
            clip_B=_get(opts, "clip_B", float, 1.0),
            epsilon=_get(opts, "epsilon", float, 0.5),
            sigma2=None if sigma is None else sigma**2,
            mu=0.0 if mu == math.inf else mu,
            b_max=b_max_val,
            kernel=_kernel(opts),
            acquisition=acq,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------- running


@dataclass
class RunResult:
    method: str
    seed: int
    status: str
    final_loss: float
    total_evaluations: int
    wall_time: float
    dim: int | None = None
    path: str = ""


def _run_one(task: tuple) -> RunResult:
    problem_opts, method, opts, seed, budget, out_dir, dim = task
    problem_opts = {**problem_opts, **{k[len("problem."):]: v for k, v in opts.items() if k.startswith("problem.")}}
    try:
        p = build_problem(problem_opts, seed)
        alg = opts.get("algorithm", "dpgibo")
        if alg == "random_search":
            rec = random_search_baseline(p, int(budget), seed)
        else:
            cfg = build_optimizer_config(opts, p, seed)
            rec = dp_gibo_run(p, cfg, method) if alg == "dpgibo" else gradient_descent_run(p, cfg, method)
        path = Path(out_dir) / method / f"seed_{seed}.csv"
        rec.write(path)
        status = "failed" if rec.failed else "ok"
        return RunResult(method, seed, status, rec.final_loss, rec.total_evaluations, rec.wall_time, dim, str(path))
    except ConfigError:
        raise
    except Exception as exc:  # a crashed replication is reported, not fatal
        logger.exception("run %s seed %d crashed", method, seed)
        return RunResult(method, seed, f"error: {type(exc).__name__}", math.nan, 0, 0.0, dim)


def _schedule(cfg: ExperimentConfig, out_dir: Path, jobs: int, dim: int | None = None) -> list[RunResult]:
    problem_opts = dict(cfg.problem)
    if dim is not None:
        problem_opts["d"] = str(dim)
    gibo = [m for m, o in cfg.methods.items() if o.get("algorithm", "dpgibo") != "random_search"]
    searches = [m for m in cfg.methods if m not in gibo]
    first = [(problem_opts, m, cfg.methods[m], s, None, str(out_dir), dim) for m in gibo for s in cfg.seeds]
    results = _map(first, jobs)
    ref = {}
    if gibo:
        ref = {r.seed: r.total_evaluations for r in results if r.method == gibo[0]}
    second = []
    for m in searches:
        opts = cfg.methods[m]
        for s in cfg.seeds:
            spec = opts.get("budget_evals", "").strip()
            if spec.startswith("match:"):
                other = spec.split(":", 1)[1].strip()
                budget = next((r.total_evaluations for r in results if r.method == other and r.seed == s), 0)
            elif spec:
                budget = int(spec)
            else:
                budget = ref.get(s, 0)
            second.append((problem_opts, m, opts, s, max(budget, 1), str(out_dir), dim))
    return results + _map(second, jobs)


def _map(tasks: list[tuple], jobs: int) -> list[RunResult]:
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))


def _quantiles(values: list[float]) -> tuple[float, float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q = np.quantile(v, [0.25, 0.5, 0.75])
    return float(q[1]), float(q[0]), float(q[2])


SUMMARY_COLUMNS = ["dim", "method", "seed", "status", "final_loss", "final_loss_q25", "final_loss_q75", "total_evaluations"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _summary_rows(results: list[RunResult]) -> list[list]:
    rows = []
    keys = []
    for r in results:
        if (r.dim, r.method) not in keys:
            keys.append((r.dim, r.method))
    for dim, m in keys:
        runs = sorted((r for r in results if r.method == m and r.dim == dim), key=lambda r: r.seed)
        for r in runs:
            rows.append([dim, m, r.seed, r.status, r.final_loss, None, None, r.total_evaluations])
        med, q25, q75 = _quantiles([r.final_loss for r in runs])
        bad = sum(r.status != "ok" for r in runs)
        evals = int(np.median([r.total_evaluations for r in runs]))
        rows.append([dim, m, "median", "ok" if bad == 0 else f"{bad} failed", med, q25, q75, evals])
    return rows


def _write_summary(out_dir: Path, results: list[RunResult], extra: list[list] | None = None) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in _summary_rows(results) + (extra or []):
        w.writerow([_fmt(x) for x in row])
    path = out_dir / "summary.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    timing = {f"{r.method}/d{r.dim}/seed_{r.seed}" if r.dim else f"{r.method}/seed_{r.seed}": r.wall_time for r in results}
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list[RunResult], Path]:
    """Run every ``(method, seed)`` pair and write the CSV artifacts.

    Random-search methods run after the others so that ``budget_evals =
    match:<method>`` (or evaluations mode) can copy each seed's evaluation
    count.  Returns the per-run results and the experiment directory.
    """
    if cfg.dims is not None:
        return dim_scaling_study(cfg, jobs=jobs)
    out_dir = Path(cfg.output) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    results = _schedule(cfg, out_dir, jobs)
    _write_summary(out_dir, results)
    return results, out_dir


def dim_scaling_study(cfg: ExperimentConfig, dims: list[int] | None = None, jobs: int = 1) -> tuple[list[RunResult], Path]:
    """Repeat the experiment at each dimension and tabulate the loss gap.

    The summary gains one ``gap`` row per dimension: median final loss of
    the random-search method minus that of the first optimizer method.
    """
    dims = list(dims if dims is not None else cfg.dims or [])
    if not dims:
        raise ConfigError("dims must be nonempty")
    out_root = Path(cfg.output) / cfg.name
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.ini").write_text(dump_config(replace(cfg, dims=dims)), encoding="utf-8")
    gibo = next(m for m, o in cfg.methods.items() if o.get("algorithm", "dpgibo") != "random_search")
    search = next((m for m, o in cfg.methods.items() if o.get("algorithm") == "random_search"), None)
    results: list[RunResult] = []
    gaps = []
    for d in dims:
        res = _schedule(cfg, out_root / f"d{d}", jobs, dim=d)
        results += res
        if search is not None:
            g = _quantiles([r.final_loss for r in res if r.method == gibo])[0]
            s = _quantiles([r.final_loss for r in res if r.method == search])[0]
            gaps.append([d, f"{search}-{gibo}", "gap", "ok", s - g, None, None, None])
    _write_summary(out_root, results, gaps)
    return results, out_root


# ----------------------------------------------------------------- presets


def _m(**kw) -> dict[str, str]:
    return {k: str(v) for k, v in kw.items()}


def _gp_tuning_base(paper_scale: bool) -> dict[str, str]:
    return _m(kind="gp_tuning", d=15, n_total=2000 if paper_scale else 600)


_GP_ADAGRAD = dict(step_rule="adagrad", eta=0.3, theta0="random", kernel="rbf", lengthscale=1.0)


def _preset_normal_location(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=150, eta=0.1, clip_B=1.0, epsilon=1e-8, b_max=3, kernel="poly2", theta0="zeros", sigma=0.0)
    return ExperimentConfig(
        name="normal_location",
        problem=_m(kind="normal_location", n=50, d=5),
        methods={
            "nonprivate": _m(algorithm="dpgibo", mu=0.0, **common),
            "mu2": _m(algorithm="dpgibo", mu=2.0, **common),
            "mu0.5": _m(algorithm="dpgibo", mu=0.5, **common),
        },
        seeds=list(range(10)),
    )


def _preset_huber(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=100, eta=1.0, clip_B=1.0, theta0="zeros")
    return ExperimentConfig(
        name="huber_vs_dpgd",
        problem=_m(kind="huber", n=100, d=4),
        methods={
            "dpgibo": _m(algorithm="dpgibo", mu=1.0, epsilon=1e-8, b_max=2, kernel="rbf", lengthscale=1.0, sigma=0.0, **common),
            "dpgd": _m(algorithm="dpgd", mu=1.0, **common),
            "gd": _m(algorithm="dpgd", mu=0.0, **common),
        },
        seeds=list(range(10)),
    )


def _preset_eps_sweep(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=25, clip_B=3.0, sigma=0.05, mu=1.0, **_GP_ADAGRAD)
    return ExperimentConfig(
        name="gp_tuning_eps_sweep",
        problem=_gp_tuning_base(paper_scale),
        methods={f"eps{e}": _m(algorithm="dpgibo", epsilon=e, **common) for e in (0.3, 0.5, 5.0)},
        seeds=list(range(5)),
    )


def _preset_mu_sweep(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=25, clip_B=3.0, sigma=0.05, epsilon=0.5, **_GP_ADAGRAD)
    return ExperimentConfig(
        name="gp_tuning_mu_sweep",
        problem=_gp_tuning_base(paper_scale),
        methods={f"mu{m}": _m(algorithm="dpgibo", mu=m, **common) for m in ("0.1", "1.0", "inf")},
        seeds=list(range(5)),
    )


def _preset_sigma_sweep(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=45, clip_B=1.0, mu=0.1, epsilon=1e-8, b_max="d+1", **_GP_ADAGRAD)
    methods = {
        f"sigma{s}": {**_m(algorithm="dpgibo", **common), "problem.noise_lambda": s}
        for s in ("0.0", "0.01", "0.1")
    }
    return ExperimentConfig(
        name="gp_tuning_sigma_sweep",
        problem=_gp_tuning_base(paper_scale),
        methods=methods,
        seeds=list(range(5)),
    )


def _preset_noisy_misspec(paper_scale: bool) -> ExperimentConfig:
    # an over-stated sigma keeps the trace above epsilon, so cap the batch at d + 1
    common = dict(T=25, clip_B=3.0, mu=1.0, epsilon=0.5, b_max="d+1", **_GP_ADAGRAD)
    return ExperimentConfig(
        name="noisy_sigma_misspec",
        problem={**_gp_tuning_base(paper_scale), "noise_lambda": "0.01"},
        methods={f"sigma{s}": _m(algorithm="dpgibo", sigma=s, **common) for s in ("0.01", "1.0", "0.0001")},
        seeds=list(range(5)),
    )


def _preset_svm(paper_scale: bool) -> ExperimentConfig:
    common = dict(T=30, clip_B=1.0, epsilon=1e-8, b_max="d+1", step_rule="adagrad", eta=0.8, theta0="random", kernel="rbf", sigma=0.0)
    return ExperimentConfig(
        name="svm_surrogate",
        problem=_m(kind="svm_surrogate", d=20, n=100),
        methods={
            "dpgibo": _m(algorithm="dpgibo", mu=1.0, **common),
            "gibo": _m(algorithm="dpgibo", mu=0.0, **common),
            "random_search": _m(algorithm="random_search", budget_evals="match:dpgibo"),
        },
        seeds=list(range(5)),
        budget_mode="evaluations",
    )


def _preset_dim_scaling(paper_scale: bool) -> ExperimentConfig:
    return ExperimentConfig(
        name="dim_scaling",
        problem=_m(kind="gp_tuning", n_total=2000 if paper_scale else 600),
        methods={
            "dpgibo": _m(algorithm="dpgibo", T=25, clip_B=3.0, sigma=0.05, mu=1.0, epsilon=0.5, **_GP_ADAGRAD),
            "random_search": _m(algorithm="random_search", budget_evals="match:dpgibo"),
        },
        seeds=list(range(5)),
        budget_mode="evaluations",
        dims=[2, 5, 10, 15],
    )


PRESETS = {
    "normal_location": _preset_normal_location,
    "huber_vs_dpgd": _preset_huber,
    "gp_tuning_eps_sweep": _preset_eps_sweep,
    "gp_tuning_mu_sweep": _preset_mu_sweep,
    "gp_tuning_sigma_sweep": _preset_sigma_sweep,
    "noisy_sigma_misspec": _preset_noisy_misspec,
    "svm_surrogate": _preset_svm,
    "dim_scaling": _preset_dim_scaling,
}


def preset(name: str, paper_scale: bool = False) -> ExperimentConfig:
    """Configuration for a named experiment.  ``paper_scale`` restores full data sizes."""
    try:
        build = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None
    return build(paper_scale)
