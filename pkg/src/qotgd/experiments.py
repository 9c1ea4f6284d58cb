"""Config-driven reproduction of the convergence experiments.

A config is a flat text file of ``key = value`` lines (``#`` starts a
comment). Lists are comma separated. Marginals are given as generator calls
such as ``uniform(0, 1)``, ``beta(0.1, 0.2)``, ``truncnorm(0, 1, -3, 3)``,
``uniform2d(0, 1, 0, 1)``, ``dirac(0.5)`` or ``csv(path/to/measure.csv)``.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as qio
from .closed_form import CLOSED_FORM, full_support_check, solve_potentials
from .core import CONVERGED, DualPair, GdConfig, SolveTrace
from .linearized import active_sets, assemble_L, operator_norm, self_adjoint_defect
from .measures import (DiscreteMeasure, beta_grid, cost_matrix, dirac, load_csv,
                       truncated_normal_grid, uniform_grid, uniform_square_grid)
from .primal import coupling_density, marginal_residual, support_fraction, write_dense_csv, write_sparse_csv
from .sinkhorn import entropic_marginal_residual, run_sinkhorn

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent / "configs"

USAGE = """\
config keys (one 'key = value' per line, '#' comments):
  name              run label
  P, Q              marginals: uniform(lo, hi) | beta(a, b) | truncnorm(mu, sigma, lo, hi)
                    | uniform2d(ax, bx, ay, by) | dirac(x) | csv(path)
  mesh              a, b (1D) or ax, bx, ay, by (2D) quadrature mesh
  h                 mesh step
  epsilon           regularization, or a decreasing list for schedules
  eta_ratios        list of eta/epsilon values
  init              constant initial potential (default 0.5)
  tol               stop when Delta_n <= tol (default 1e-10)
  max_iters         iteration cap per solve
  tasks             any of solve, sweep, schedule, spectrum, sinkhorn, export-coupling
  schedule_ratio    eta/epsilon used along the epsilon schedule
  bisect            refine the break point (true/false)
  bisect_resolution break point resolution (default 0.01)
  stop_at_break     stop the sweep at the first non-converging ratio
  sinkhorn_max_iters, sinkhorn_tol, record_timing, threads
"""


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    P: str = "uniform(0, 1)"
    Q: str = "uniform(0.5, 1.5)"
    mesh: tuple = (-0.1, 1.6)
    h: float = 0.001
    epsilons: list = field(default_factory=lambda: [0.1])
    eta_ratios: list = field(default_factory=lambda: [0.5])
    init: float = 0.5
    tol: float = 1e-10
    max_iters: int = 100_000
    tasks: list = field(default_factory=lambda: ["solve"])
    schedule_ratio: float = 0.5
    bisect: bool = True
    bisect_resolution: float = 0.01
    stop_at_break: bool = True
    sinkhorn_max_iters: int = 10_000
    sinkhorn_tol: float = 1e-10
    record_timing: bool = False
    threads: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if any(not e > 0 for e in self.epsilons):
            raise ConfigError("epsilon values must be positive")
        if any(not r > 0 for r in self.eta_ratios) or not self.schedule_ratio > 0:
            raise ConfigError("step-size ratios must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if len(self.mesh) not in (2, 4):
            raise ConfigError("mesh needs 2 (1D) or 4 (2D) numbers")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")

    @property
    def epsilon(self) -> float:
        return self.epsilons[0]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_PARSERS = {
    "name": str,
    "P": str,
    "Q": str,
    "mesh": lambda s: tuple(_floats(s)),
    "h": float,
    "epsilon": _floats,
    "eta_ratios": _floats,
    "init": float,
    "tol": float,
    "max_iters": int,
    "tasks": lambda s: [t.strip() for t in s.split(",") if t.strip()],
    "schedule_ratio": float,
    "bisect": _bool,
    "bisect_resolution": float,
    "stop_at_break": _bool,
    "sinkhorn_max_iters": int,
    "sinkhorn_tol": float,
    "record_timing": _bool,
    "threads": int,
}


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'\n{USAGE}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}\n{USAGE}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    if not values:
        raise ConfigError(f"empty config\n{USAGE}")
    if "epsilon" in values:
        values["epsilons"] = values.pop("epsilon")
    if base_dir is not None:
        values["base_dir"] = Path(base_dir)
    return ExperimentConfig(**values)


def resolve_config_path(path) -> Path:
    """Return ``path`` if it exists, else the bundled config of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = CONFIG_DIR / p.name
    if bundled.exists():
        return bundled
    if (CONFIG_DIR / (p.name + ".cfg")).exists():
        return CONFIG_DIR / (p.name + ".cfg")
    raise ConfigError(f"config not found: {path}")


def load_config(path) -> ExperimentConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=p.parent)


_SPEC = re.compile(r"^\s*([a-z_0-9]+)\s*\((.*)\)\s*$")


def build_measure(spec: str, mesh, h: float, base_dir=None) -> DiscreteMeasure:
    m = _SPEC.match(spec)
    if not m:
        raise ConfigError(f"cannot parse marginal {spec!r}")
    kind, args = m.group(1), m.group(2)
    if kind == "csv":
        path = Path(args.strip())
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        return load_csv(path)
    nums = _floats(args)
    if kind == "dirac":
        return dirac(nums)
    if kind == "uniform2d":
        if len(mesh) != 4:
            raise ConfigError("uniform2d needs a 2D mesh")
        return uniform_square_grid(*nums, mesh=mesh, h=h)
    if len(mesh) != 2:
        raise ConfigError(f"{kind} needs a 1D mesh")
    a, b = mesh
    if kind == "uniform":
        return uniform_grid(nums[0], nums[1], a, b, h)
    if kind == "beta":
        return beta_grid(nums[0], nums[1], a, b, h)
    if kind == "truncnorm":
        return truncated_normal_grid(*nums, a, b, h)
    raise ConfigError(f"unknown marginal generator {kind!r}")


@dataclass
class Problem:
    P: DiscreteMeasure
    Q: DiscreteMeasure
    cost: np.ndarray


def build_problem(cfg: ExperimentConfig) -> Problem:
    P = build_measure(cfg.P, cfg.mesh, cfg.h, cfg.base_dir)
    Q = build_measure(cfg.Q, cfg.mesh, cfg.h, cfg.base_dir)
    return Problem(P, Q, cost_matrix(P, Q))


# ---------------------------------------------------------------------------
# Rate estimation
# ---------------------------------------------------------------------------

@dataclass
class RateEstimate:
    delta_star_hat: float
    r_squared: float
    window: tuple
    n_converged: int
    n0: Optional[int] = None


def _window_slopes(y: np.ndarray, k: int) -> np.ndarray:
    c = np.arange(k) - (k - 1) / 2
    # correlate each length-k window with the centred abscissa
    return np.convolve(y, c[::-1], mode="valid") / (c @ c)


def estimate_rate(trace, window: int = 10, stable_rel: float = 0.05) -> RateEstimate:
    """Fit ``log Delta_n`` over the last ``window`` iterations by least squares.

    ``n0`` is the first iteration from which every sliding window's slope stays
    within ``stable_rel`` of the final slope.
    """
    deltas = np.asarray(trace.delta if isinstance(trace, SolveTrace) else trace, dtype=float)
    N = deltas.size
    if N < 3:
        raise ValueError(f"trace too short for a rate estimate ({N} iterations)")
    k = min(window, N)
    tail = deltas[-k:]
    n_idx = np.arange(N - k + 1, N + 1)
    if np.any(tail <= 0):
        return RateEstimate(0.0, float("nan"), (int(n_idx[0]), int(n_idx[-1])), N)
    if not np.all(np.isfinite(tail)):
        raise ValueError("non-finite Delta_n in the fit window")
    y = np.log(tail)
    t = n_idx - n_idx.mean()
    slope = float(t @ (y - y.mean()) / (t @ t))
    resid = y - y.mean() - slope * t
    ss_tot = float((y - y.mean()) @ (y - y.mean()))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot

    n0 = None
    positive = deltas > 0
    if np.all(positive) and N >= k:
        slopes = _window_slopes(np.log(deltas), k)
        ok = np.abs(slopes - slope) <= stable_rel * abs(slope)
        # last index where the condition fails; n0 is the window start after it
        bad = np.nonzero(~ok)[0]
        n0 = int(bad[-1] + 2) if bad.size else 1
    return RateEstimate(math.exp(slope), r2, (int(n_idx[0]), int(n_idx[-1])), N, n0)


# ---------------------------------------------------------------------------
# Sweeps and schedules
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    eta_over_eps: float
    status: str
    iterations: int
    dual: DualPair
    trace: Optional[SolveTrace]
    rate: Optional[RateEstimate] = None
    op_norm: float = float("nan")
    alpha_minus: float = float("nan")
    alpha_plus: float = float("nan")
    selfadjoint_defect: float = float("nan")
    tie_count: int = -1

    @property
    def delta_star_hat(self) -> float:
        return self.rate.delta_star_hat if self.rate else float("nan")

    @property
    def r_squared(self) -> float:
        return self.rate.r_squared if self.rate else float("nan")


def _gd_config(eps, ratio, cfg: ExperimentConfig, init=None) -> GdConfig:
    import warnings
    with warnings.catch_warnings():
        # ratios above one are requested on purpose by sweeps
        warnings.simplefilter("ignore", RuntimeWarning)
        return GdConfig(eps, ratio * eps, max_iters=cfg.max_iters, tol=cfg.tol,
                        init=cfg.init if init is None else init)


def run_one(problem: Problem, eps: float, ratio: float, cfg: ExperimentConfig,
            spectrum: bool = False, init=None) -> RunRecord:
    gd = _gd_config(eps, ratio, cfg, init)
    dual, trace, status = solve_potentials(problem.P, problem.Q, gd, cost=problem.cost)
    rec = RunRecord(ratio, status, len(trace) if trace else 0, dual, trace)
    if status == CONVERGED and len(trace) >= 3:
        rec.rate = estimate_rate(trace)
    if spectrum and status in (CONVERGED, CLOSED_FORM):
        L = assemble_L(dual, problem.P, problem.Q, problem.cost, eps, ratio * eps, check_tol=None)
        rec.op_norm, rec.alpha_minus, rec.alpha_plus = operator_norm(L)
        rec.selfadjoint_defect = self_adjoint_defect(L)
        rec.tie_count = active_sets(dual, problem.cost, problem.P, problem.Q).tie_count
    return rec


def _run_many(problem, eps, ratios, cfg, spectrum):
    if cfg.threads > 1 and len(ratios) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            return list(ex.map(lambda r: run_one(problem, eps, r, cfg, spectrum), ratios))
    return [run_one(problem, eps, r, cfg, spectrum) for r in ratios]


def _ok(status: str) -> bool:
    return status in (CONVERGED, CLOSED_FORM)


@dataclass
class SweepResult:
    epsilon: float
    rows: list
    bisection: list
    break_point: Optional[float]


def sweep_eta(cfg: ExperimentConfig, problem: Optional[Problem] = None,
              epsilon: Optional[float] = None, spectrum: bool = True) -> SweepResult:
    """Solve once per step-size ratio and locate the ratio where convergence breaks.

    The break point is the smallest non-converging ratio, refined by bisection
    against the largest converging ratio below it.
    """
    problem = problem or build_problem(cfg)
    eps = cfg.epsilon if epsilon is None else epsilon
    ratios = sorted(cfg.eta_ratios)
    if cfg.stop_at_break and cfg.threads <= 1:
        rows = []
        for r in ratios:
            rec = run_one(problem, eps, r, cfg, spectrum)
            rows.append(rec)
            if not _ok(rec.status):
                break
    else:
        rows = _run_many(problem, eps, ratios, cfg, spectrum)
        if cfg.stop_at_break:
            cut = next((k for k, rec in enumerate(rows) if not _ok(rec.status)), len(rows) - 1)
            rows = rows[:cut + 1]

    failing = [rec for rec in rows if not _ok(rec.status)]
    bisection = []
    break_point = None
    if failing:
        hi = failing[0].eta_over_eps
        below = [rec.eta_over_eps for rec in rows if _ok(rec.status) and rec.eta_over_eps < hi]
        if cfg.bisect and below:
            lo = max(below)
            while hi - lo > cfg.bisect_resolution:
                mid = round((lo + hi) / 2, 10)
                rec = run_one(problem, eps, mid, cfg, spectrum=False)
                bisection.append(rec)
                if _ok(rec.status):
                    lo = mid
                else:
                    hi = mid
        break_point = hi
    return SweepResult(eps, rows, bisection, break_point)


@dataclass
class ScheduleStage:
    epsilon: float
    status: str
    dual: DualPair
    trace: Optional[SolveTrace]
    rate: Optional[RateEstimate]
    support_fraction: float

    @property
    def iterations(self) -> int:
        return len(self.trace) if self.trace else 0


def eps_schedule(cfg: ExperimentConfig, problem: Optional[Problem] = None,
                 ratio: Optional[float] = None, warm_start: bool = True) -> list[ScheduleStage]:
    """Solve along a decreasing epsilon ladder, warm-starting each stage.

    Stops early, returning the stages done so far, when a stage fails to converge.
    """
    eps_list = list(cfg.epsilons)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("epsilon ladder must be strictly decreasing")
    problem = problem or build_problem(cfg)
    ratio = cfg.schedule_ratio if ratio is None else ratio
    stages = []
    init = None
    for eps in eps_list:
        gd = _gd_config(eps, ratio, cfg, init)
        dual, trace, status = solve_potentials(problem.P, problem.Q, gd, cost=problem.cost)
        rate = estimate_rate(trace) if status == CONVERGED and len(trace) >= 3 else None
        frac = support_fraction(coupling_density(dual, problem.P, problem.Q, problem.cost, eps))
        stages.append(ScheduleStage(eps, status, dual, trace, rate, frac))
        if not _ok(status):
            logger.warning("schedule aborted at epsilon=%g (%s)", eps, status)
            break
        if warm_start:
            init = dual
    return stages


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------

TASKS = ("solve", "sweep", "schedule", "spectrum", "sinkhorn", "export-coupling")

SWEEP_HEADER = ["eta_over_eps", "status", "delta_star_hat", "r_squared", "iterations", "op_norm"]
SPECTRUM_HEADER = ["eta_over_eps", "op_norm", "alpha_minus", "alpha_plus", "selfadjoint_defect", "tie_count"]


def _tag(x: float) -> str:
    return repr(float(x)).replace("-", "m")


def _write_rate(summary, prefix, rate: Optional[RateEstimate]):
    if rate is None:
        return
    summary[f"{prefix}.delta_star_hat"] = rate.delta_star_hat
    summary[f"{prefix}.r_squared"] = rate.r_squared
    summary[f"{prefix}.n0"] = rate.n0


def task_solve(cfg, problem, out: Path, summary: dict, failures: list):
    eps, ratio = cfg.epsilon, cfg.eta_ratios[0]
    rec = run_one(problem, eps, ratio, cfg)
    summary["solve.status"] = rec.status
    summary["solve.iterations"] = rec.iterations
    summary["solve.epsilon"] = eps
    summary["solve.eta_over_eps"] = ratio
    _write_rate(summary, "solve", rec.rate)
    if rec.trace is not None:
        qio.write_trace(rec.trace, out / "trace.csv", cfg.record_timing)
    qio.write_dual(rec.dual, out / "potentials_f.csv", out / "potentials_g.csv")
    cp = coupling_density(rec.dual, problem.P, problem.Q, problem.cost, eps)
    rr, rc = marginal_residual(cp)
    summary["solve.marginal_residual_P"] = rr
    summary["solve.marginal_residual_Q"] = rc
    summary["solve.support_fraction"] = support_fraction(cp)
    if not _ok(rec.status):
        failures.append(f"solve eps={eps!r} ratio={ratio!r}: {rec.status}")


def task_sweep(cfg, problem, out: Path, summary: dict, failures: list):
    res = sweep_eta(cfg, problem)
    rows = []
    for rec in res.rows:
        rows.append([rec.eta_over_eps, rec.status, rec.delta_star_hat, rec.r_squared,
                     rec.iterations, rec.op_norm])
        if rec.trace is not None:
            qio.write_trace(rec.trace, out / "traces" / f"sweep_r{_tag(rec.eta_over_eps)}.csv",
                            cfg.record_timing)
    qio.write_table(out / "sweep.csv", SWEEP_HEADER, rows)
    qio.write_table(out / "spectrum.csv", SPECTRUM_HEADER,
                    [[rec.eta_over_eps, rec.op_norm, rec.alpha_minus, rec.alpha_plus,
                      rec.selfadjoint_defect, rec.tie_count]
                     for rec in res.rows if _ok(rec.status)])
    qio.write_table(out / "bisection.csv", ["eta_over_eps", "status", "iterations"],
                    [[r.eta_over_eps, r.status, r.iterations] for r in res.bisection])
    summary["sweep.epsilon"] = res.epsilon
    summary["sweep.break_point"] = res.break_point
    # rows above one are expected to fail; only ratios within the guaranteed range count
    for rec in res.rows:
        if rec.eta_over_eps <= 1.0 and not _ok(rec.status):
            failures.append(f"sweep ratio={rec.eta_over_eps!r}: {rec.status}")


def task_spectrum(cfg, problem, out: Path, summary: dict, failures: list):
    rows = []
    for ratio in cfg.eta_ratios:
        rec = run_one(problem, cfg.epsilon, ratio, cfg, spectrum=True)
        if not _ok(rec.status):
            failures.append(f"spectrum ratio={ratio!r}: {rec.status}")
            continue
        rows.append([ratio, rec.op_norm, rec.alpha_minus, rec.alpha_plus,
                     rec.selfadjoint_defect, rec.tie_count])
    qio.write_table(out / "spectrum.csv", SPECTRUM_HEADER, rows)


def task_schedule(cfg, problem, out: Path, summary: dict, failures: list):
    stages = eps_schedule(cfg, problem)
    rows = []
    for st in stages:
        rate = st.rate
        rows.append([st.epsilon, st.status, st.iterations,
                     rate.delta_star_hat if rate else float("nan"),
                     rate.n0 if rate else None, st.support_fraction])
        if st.trace is not None:
            qio.write_trace(st.trace, out / "traces" / f"schedule_eps{_tag(st.epsilon)}.csv",
                            cfg.record_timing)
        if not _ok(st.status):
            failures.append(f"schedule eps={st.epsilon!r}: {st.status}")
    qio.write_table(out / "schedule.csv",
                    ["epsilon", "status", "iterations", "delta_star_hat", "n0", "support_fraction"], rows)
    summary["schedule.stages_completed"] = len(stages)
    summary["schedule.total_iterations"] = sum(st.iterations for st in stages)
    if len(stages) < len(cfg.epsilons):
        failures.append("schedule aborted before the last epsilon")


def task_sinkhorn(cfg, problem, out: Path, summary: dict, failures: list):
    rows = []
    for eps in cfg.epsilons:
        res = run_sinkhorn(problem.P, problem.Q, problem.cost, eps,
                           max_iters=cfg.sinkhorn_max_iters, tol=cfg.sinkhorn_tol)
        if res.status == "converged":
            rr, rc = entropic_marginal_residual(res.dual, problem.P, problem.Q, problem.cost, eps)
        else:
            rr = rc = float("nan")
        rows.append([eps, res.status, res.iterations, rr, rc])
        qio.write_trace(res.trace, out / "traces" / f"sinkhorn_eps{_tag(eps)}.csv", cfg.record_timing)
    # numeric failure is the expected outcome at small epsilon; it is data, not a run failure
    qio.write_table(out / "sinkhorn.csv",
                    ["epsilon", "status", "iterations", "marginal_residual_P", "marginal_residual_Q"], rows)


def task_export_coupling(cfg, problem, out: Path, summary: dict, failures: list):
    eps, ratio = cfg.epsilon, cfg.eta_ratios[0]
    rec = run_one(problem, eps, ratio, cfg)
    cp = coupling_density(rec.dual, problem.P, problem.Q, problem.cost, eps)
    write_dense_csv(cp, out / "coupling_dense.csv")
    write_sparse_csv(cp, out / "coupling_sparse.csv")
    summary["coupling.support_fraction"] = support_fraction(cp)
    summary["coupling.status"] = rec.status
    if not _ok(rec.status):
        failures.append(f"export-coupling eps={eps!r}: {rec.status}")


_TASK_FUNCS = {
    "solve": task_solve,
    "sweep": task_sweep,
    "schedule": task_schedule,
    "spectrum": task_spectrum,
    "sinkhorn": task_sinkhorn,
    "export-coupling": task_export_coupling,
}


def run_experiment(config, out_dir=None, tasks=None, threads: Optional[int] = None) -> tuple[Path, list]:
    """Run the configured tasks and write all artifacts under ``out_dir``.

    Returns the output directory and a list of failure descriptions (empty on
    full success).
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if threads is not None:
        cfg.threads = threads
    out = Path(out_dir) if out_dir is not None else Path("out") / cfg.name
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    problem = build_problem(cfg)
    ok, margin = full_support_check(problem.P, problem.Q, cfg.epsilon)
    summary = {
        "name": cfg.name,
        "n_P": len(problem.P),
        "n_Q": len(problem.Q),
        "full_support": ok,
        "full_support_margin": margin,
    }
    failures: list[str] = []
    for task in (tasks or cfg.tasks):
        if task not in _TASK_FUNCS:
            raise ConfigError(f"unknown task {task!r}")
        logger.info("running %s", task)
        _TASK_FUNCS[task](cfg, problem, out, summary, failures)
    summary["failures"] = len(failures)
    qio.write_summary(out / "summary.txt", summary)
    return out, failures
