"""The DP-GIBO main loop, its step rules and the per-run trace it produces."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .acquisition import AcquisitionConfig, select_minimal_batch
from .gp_gradient import EvaluationSet, aggregate_mean_gradient, posterior_gradient_means
from .kernels import Kernel, rbf
from .linalg import IllConditionedGramError
from .privacy import BudgetExhaustedError, PrivacyBudget, Purpose, privatize_gradient, rng_stream

if TYPE_CHECKING:
    from .problems import Problem

logger = logging.getLogger(__name__)

__all__ = [
    "StepRule",
    "OptimizerConfig",
    "RunRecord",
    "step_update",
    "dp_gibo_run",
    "gradient_descent_run",
    "read_run_csv",
]

ADAGRAD_FLOOR = 1e-8


class StepRule(str, enum.Enum):
    PLAIN = "plain"
    ADAGRAD = "adagrad"

    @classmethod
    def parse(cls, name: str | "StepRule") -> "StepRule":
        if isinstance(name, StepRule):
            return name
        key = name.strip().lower()
        if key in ("plain", "plaingd", "gd"):
            return cls.PLAIN
        if key == "adagrad":
            return cls.ADAGRAD
        raise ValueError(f"unknown step rule {name!r}; expected 'plain' or 'adagrad'")


@dataclass(frozen=True)
class OptimizerConfig:
    """Inputs of one optimization run.

    ``mu = 0`` runs without privacy noise.  ``sigma2`` is the noise variance
    assumed when conditioning the GP; ``None`` takes the problem's declared
    value.  ``acquisition`` holds the search settings; its ``epsilon`` and
    ``b_max`` are replaced by the fields of the same name here.
    """

    T: int
    eta: float
    theta0: NDArray
    step_rule: StepRule = StepRule.PLAIN
    clip_B: float = 1.0
    epsilon: float = 0.5
    sigma2: float | None = None
    mu: float = 0.0
    b_max: int | None = None
    kernel: Kernel = field(default_factory=rbf)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    seed: int = 0
    adagrad_floor: float = ADAGRAD_FLOOR
    max_design_points: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float).reshape(-1).copy())
        object.__setattr__(self, "step_rule", StepRule.parse(self.step_rule))
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ValueError("eta must be finite and nonnegative")
        if not np.all(np.isfinite(self.theta0)):
            raise ValueError("theta0 must be finite")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def acquisition_config(self) -> AcquisitionConfig:
        return replace(self.acquisition, epsilon=self.epsilon, b_max=self.b_max)

    def describe(self) -> dict:
        out = {
            "T": self.T,
            "eta": self.eta,
            "theta0": self.theta0.tolist(),
            "step_rule": self.step_rule.value,
            "clip_B": self.clip_B,
            "epsilon": self.epsilon,
            "sigma2": self.sigma2,
            "mu": self.mu,
            "b_max": self.b_max,
            "kernel": {
                "family": self.kernel.family.value,
                "lengthscales": np.atleast_1d(self.kernel.lengthscales).tolist(),
                "output_scale": self.kernel.output_scale,
            },
            "acquisition": asdict(self.acquisition),
            "seed": self.seed,
            "adagrad_floor": self.adagrad_floor,
            "max_design_points": self.max_design_points,
        }
        return out


def step_update(
    theta: ArrayLike, noisy_grad: ArrayLike, state: NDArray | None, cfg: OptimizerConfig
) -> tuple[NDArray, NDArray | None]:
    """One descent step.  AdaGrad accumulates squares of the released gradient."""
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(noisy_grad, dtype=float)
    if cfg.step_rule is StepRule.PLAIN:
        return theta - cfg.eta * g, None
    acc = (np.zeros_like(g) if state is None else state) + g * g
    return theta - cfg.eta * g / np.sqrt(acc + cfg.adagrad_floor), acc


COLUMNS_HEAD = ["t"]
COLUMNS_TAIL = [
    "loss",
    "batch_size_used",
    "cumulative_evaluations",
    "trace_achieved",
    "grad_norm",
    "noise_norm",
    "bias_norm",
    "mu_consumed_cum",
]


@dataclass
class RunRecord:
    """Iterate-by-iteration trace of one run.

    Row ``t`` holds the iterate after ``t`` updates; row 0 is the starting
    point.  The remaining columns describe the iteration that produced the
    row (the batch chosen at the previous iterate, the released gradient and
    so on).  ``bias_norm`` and ``loss`` come from diagnostic oracles and are
    never fed back into the run.
    """

    method: str
    dim: int
    rows: list[dict] = field(default_factory=list)
    failed: bool = False
    error: str = ""
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return COLUMNS_HEAD + [f"theta_{j}" for j in range(self.dim)] + COLUMNS_TAIL

    def append(self, t: int, theta: NDArray, **values: float) -> None:
        row = {"t": t}
        row.update({f"theta_{j}": float(x) for j, x in enumerate(theta)})
        for c in COLUMNS_TAIL:
            row[c] = values.get(c, math.nan)
        self.rows.append(row)

    def column(self, name: str) -> NDArray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def thetas(self) -> NDArray:
        return np.array([[r[f"theta_{j}"] for j in range(self.dim)] for r in self.rows])

    @property
    def final_theta(self) -> NDArray:
        return self.thetas[-1]

    @property
    def final_loss(self) -> float:
        return float(self.rows[-1]["loss"])

    @property
    def total_evaluations(self) -> int:
        return int(self.rows[-1]["cumulative_evaluations"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "dim": self.dim,
            "iterations_completed": max(len(self.rows) - 1, 0),
            "failed": self.failed,
            "error": self.error,
            "wall_time": self.wall_time,
            **self.meta,
        }

    def write(self, csv_path: str | Path) -> None:
        """Write the CSV and a JSON sidecar next to it (``.json`` suffix)."""
        p = Path(csv_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_csv(), encoding="utf-8")
        p.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def read_run_csv(path: str | Path) -> tuple[list[str], NDArray]:
    """Header and float matrix of a run CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))


def _true_loss(problem: "Problem", theta: NDArray) -> float:
    return float(problem.true_loss(theta)) if problem.true_loss is not None else math.nan


def _warn_outside(problem: "Problem", theta: NDArray, warned: list[bool]) -> None:
    if warned[0] or problem.box is None:
        return
    lo, hi = problem.box
    if np.any(theta < lo) or np.any(theta > hi):
        logger.warning("iterate left the domain box; continuing without projection")
        warned[0] = True


def dp_gibo_run(problem: "Problem", cfg: OptimizerConfig, method: str = "dpgibo") -> RunRecord:
    """Run the private gradient-informative loop for ``cfg.T`` iterations.

    Each iteration picks the smallest batch that brings the posterior
    gradient trace below ``cfg.epsilon``, queries every user there,
    estimates per-user gradients from the GP posterior mean, releases their
    clipped and noised average, and takes a step.  A budget or conditioning
    failure stops the run and returns the rows completed so far with
    ``failed`` set.
    """
    d = problem.dim
    if cfg.theta0.size != d:
        raise ValueError(f"theta0 has dimension {cfg.theta0.size}, problem has {d}")
    sigma2 = problem.declared_sigma**2 if cfg.sigma2 is None else cfg.sigma2
    if not math.isclose(sigma2, problem.declared_sigma**2, rel_tol=1e-12, abs_tol=0.0):
        logger.info("conditioning with sigma^2=%g while the problem declares %g", sigma2, problem.declared_sigma**2)
    acq = cfg.acquisition_config
    budget = PrivacyBudget(cfg.mu, cfg.T, cfg.clip_B, problem.n_users)
    ev = EvaluationSet(d, problem.n_users, sigma2, cfg.max_design_points)
    rec = RunRecord(method, d, meta={"config": cfg.describe(), "problem": problem.name})
    start = time.perf_counter()

    theta = cfg.theta0.copy()
    rec.append(0, theta, loss=_true_loss(problem, theta), batch_size_used=0, cumulative_evaluations=0, mu_consumed_cum=0.0)
    state = None
    evals = 0
    cap_hits = 0
    warned = [False]
    try:
        for t in range(1, cfg.T + 1):
            prop = select_minimal_batch(
                cfg.kernel, ev.points, theta, acq, sigma2, rng_stream(cfg.seed, t, Purpose.ACQUISITION),
                D_noise=ev.point_noise,
                warn=cap_hits == 0,
            )
            cap_hits += prop.hit_cap
            if prop.batch_size_used:
                Y = problem.evaluate(prop.points, rng_stream(cfg.seed, t, Purpose.EVALUATION))
                ev.add(prop.points, Y)
                evals += problem.n_users * prop.batch_size_used
            if len(ev):
                per_user = posterior_gradient_means(cfg.kernel, ev, theta)
            else:
                per_user = np.zeros((problem.n_users, d))
            bias = math.nan
            if problem.gradient is not None:
                bias = float(np.linalg.norm(aggregate_mean_gradient(per_user) - problem.gradient(theta)))
            released = privatize_gradient(per_user, budget, rng_stream(cfg.seed, t, Purpose.PRIVACY))
            del per_user  # only the released value leaves this iteration
            theta, state = step_update(theta, released.value, state, cfg)
            _warn_outside(problem, theta, warned)
            rec.append(
                t,
                theta,
                loss=_true_loss(problem, theta),
                batch_size_used=prop.batch_size_used,
                cumulative_evaluations=evals,
                trace_achieved=prop.achieved_trace,
                grad_norm=float(np.linalg.norm(released.clipped_aggregate)),
                noise_norm=float(np.linalg.norm(released.noise)),
                bias_norm=bias,
                mu_consumed_cum=budget.consumed,
            )
    except (IllConditionedGramError, BudgetExhaustedError) as exc:
        logger.error("run stopped at iteration %d: %s", len(rec.rows), exc)
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - start
    rec.meta["mu_ledger"] = list(budget.ledger)
    rec.meta["mu_consumed"] = budget.consumed
    rec.meta["design_points"] = len(ev)
    rec.meta["batch_cap_hits"] = cap_hits
    if cap_hits > 1:
        logger.warning("batch cap bound in %d of %d iterations", cap_hits, len(rec.rows) - 1)
    return rec


def gradient_descent_run(problem: "Problem", cfg: OptimizerConfig, method: str = "dpgd") -> RunRecord:
    """Clipped, noised gradient descent on the true per-user gradients.

    Shares the privatization and step code with :func:`dp_gibo_run`; each
    iteration is counted as one gradient query per user.
    """
    if problem.per_user_gradients is None:
        raise ValueError(f"problem {problem.name!r} has no per-user gradient oracle")
    d = problem.dim
    if cfg.theta0.size != d:
        raise ValueError(f"theta0 has dimension {cfg.theta0.size}, problem has {d}")
    budget = PrivacyBudget(cfg.mu, cfg.T, cfg.clip_B, problem.n_users)
    rec = RunRecord(method, d, meta={"config": cfg.describe(), "problem": problem.name})
    start = time.perf_counter()
    theta = cfg.theta0.copy()
    rec.append(0, theta, loss=_true_loss(problem, theta), batch_size_used=0, cumulative_evaluations=0, mu_consumed_cum=0.0)
    state = None
    warned = [False]
    try:
        for t in range(1, cfg.T + 1):
            released = privatize_gradient(problem.per_user_gradients(theta), budget, rng_stream(cfg.seed, t, Purpose.PRIVACY))
            theta, state = step_update(theta, released.value, state, cfg)
            _warn_outside(problem, theta, warned)
            rec.append(
                t,
                theta,
                loss=_true_loss(problem, theta),
                batch_size_used=0,
                cumulative_evaluations=t * problem.n_users,
                grad_norm=float(np.linalg.norm(released.clipped_aggregate)),
                noise_norm=float(np.linalg.norm(released.noise)),
                bias_norm=0.0,
                mu_consumed_cum=budget.consumed,
            )
    except BudgetExhaustedError as exc:
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - start
    rec.meta["mu_ledger"] = list(budget.ledger)
    rec.meta["mu_consumed"] = budget.consumed
    return rec
