"""Experiment harness: datasets, training sweeps and their artifacts.

A sweep trains every requested algorithm on one Cucker-Smale dataset per
particle count and writes, under the output directory::

    config.json               the experiment config
    data/cs_N{N}.json|.csv    dataset header and target matrix
    runs/{alg}_N{N}.csv       per-epoch log, columns CSV_COLUMNS
    summary.json              results keyed by algorithm, then N
    plots/loss_N{N}.svg       SSE and RSSE-on-ODE against epoch

Every random draw comes from a generator seeded by ``(seed, N, purpose)``,
so a config and seed determine every number written except wall times.
"""

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, CSV_COLUMNS, TrainConfig, TrainRecord, run_training
from .cucker_smale import PARAM_NAMES, CuckerSmale
from .errors import ConfigError, OdeBcdError, SolverError, UndefinedMetricError
from .metrics import rsse
from .ode_solver import SolverConfig, TimeGrid, solve
from .vector_field import ObservationMap

log = logging.getLogger(__name__)

DEFAULT_TRUTH_RANGES = {
    "gamma": (0.1, 1.5),
    "c_a": (0.5, 2.0),
    "c_r": (0.5, 2.0),
    "l_a": (1.0, 3.0),
    "l_r": (0.3, 1.0),
}
# strengths and lengths are drawn log-uniform, gamma uniform
LOG_UNIFORM = ("c_a", "c_r", "l_a", "l_r")

_OK_STATUSES = ("ok", "converged")

# purpose tags for the per-N random streams
_DATA, _INIT = 0, 1


@dataclass
class ExperimentConfig:
    model: str = "cucker_smale"
    particle_counts: list = field(default_factory=lambda: [5, 10, 20, 50])
    grid: dict = field(default_factory=lambda: {"t0": 0.0, "h": 0.05, "N_t": 100})
    truth_params: list | None = None
    truth_ranges: dict = field(default_factory=lambda: {k: list(v) for k, v in
                                                        DEFAULT_TRUTH_RANGES.items()})
    init_perturbation: float = 0.2
    noise_std: float = 0.0
    epochs: int = 2000
    test_trajectories: int = 100
    seed: int = 0
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    out_dir: str = "runs"
    threads: int = 1
    rsse_every: int = 10
    position_range: float = 2.0
    velocity_range: float = 1.0
    min_separation: float = 1e-2
    max_retries: int = 20
    solver: dict = field(default_factory=lambda: {"method": "dopri5", "rtol": 1e-6,
                                                  "atol": 1e-8})

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model != "cucker_smale":
            raise ConfigError(f"unknown model {self.model!r}")
        if not self.particle_counts or any(int(n) < 1 for n in self.particle_counts):
            raise ConfigError("particle_counts must be a non-empty list of positive integers")
        if set(self.grid) != {"t0", "h", "N_t"}:
            raise ConfigError("grid needs exactly the keys t0, h, N_t")
        try:
            self.time_grid()
            self.solver_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.truth_params is not None and len(self.truth_params) != len(PARAM_NAMES):
            raise ConfigError(f"truth_params needs {len(PARAM_NAMES)} values")
        if set(self.truth_ranges) != set(PARAM_NAMES):
            raise ConfigError(f"truth_ranges needs exactly the keys {PARAM_NAMES}")
        for name, (lo, hi) in self.truth_ranges.items():
            if not 0 < lo <= hi:
                raise ConfigError(f"bad range for {name}: [{lo}, {hi}]")
        for name in ("epochs", "test_trajectories", "threads", "max_retries"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.rsse_every < 0:
            raise ConfigError("rsse_every must be >= 0")
        if not 0 <= self.init_perturbation < 1:
            raise ConfigError("init_perturbation must be in [0, 1)")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not (self.position_range > 0 and self.velocity_range > 0):
            raise ConfigError("position_range and velocity_range must be positive")
        if self.min_separation < 0:
            raise ConfigError("min_separation must be >= 0")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown or not self.algorithms:
            raise ConfigError(f"algorithms must be a non-empty subset of {ALGORITHMS}")

    def time_grid(self):
        return TimeGrid(float(self.grid["t0"]), float(self.grid["h"]), int(self.grid["N_t"]))

    def solver_config(self):
        return SolverConfig(**self.solver)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class Dataset:
    """One training trajectory plus the initial conditions of the test set."""

    num_particles: int
    grid: TimeGrid
    truth: np.ndarray
    x0: np.ndarray
    targets: np.ndarray
    test_x0s: np.ndarray
    seed: int


@dataclass
class TestReport:
    """Mean RSSE over the test trajectories that could be evaluated."""

    mean_rsse: float | None
    per_trajectory: list
    failures: int


@dataclass
class RunSummary:
    algorithm: str
    num_particles: int
    epochs_run: int
    mean_epoch_seconds: float | None
    total_seconds: float
    final_sse: float | None
    final_rsse: float | None
    test_mean_rsse: float | None
    test_failures: int
    status: str
    message: str = ""
    theta: list | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def ok(self):
        return self.status in _OK_STATUSES


def _rng(seed, num_particles, purpose):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(num_particles, purpose)))


def sample_truth(rng, ranges=None):
    """Draw Cucker-Smale parameters from ``ranges`` (name -> (lo, hi))."""
    ranges = ranges or DEFAULT_TRUTH_RANGES
    out = []
    for name in PARAM_NAMES:
        lo, hi = ranges[name]
        if name in LOG_UNIFORM:
            out.append(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        else:
            out.append(rng.uniform(lo, hi))
    return np.array(out)


def min_pair_distance(x, num_particles):
    pos = np.asarray(x)[:2 * num_particles].reshape(num_particles, 2)
    if num_particles < 2:
        return math.inf
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    return float(np.min(d[np.triu_indices(num_particles, 1)]))


def sample_initial_state(rng, num_particles, cfg):
    """Uniform positions and velocities, redrawn until no two particles are close."""
    for _ in range(cfg.max_retries):
        pos = rng.uniform(-cfg.position_range, cfg.position_range, 2 * num_particles)
        vel = rng.uniform(-cfg.velocity_range, cfg.velocity_range, 2 * num_particles)
        x0 = np.concatenate([pos, vel])
        if min_pair_distance(x0, num_particles) > cfg.min_separation:
            return x0
    raise OdeBcdError(f"no well-separated initial state after {cfg.max_retries} draws")


def perturbed_init(cfg, truth, num_particles):
    """``truth * (1 + u)`` with ``u`` uniform in ``[-p, p]`` per parameter."""
    rng = _rng(cfg.seed, num_particles, _INIT)
    p = cfg.init_perturbation
    return truth * (1.0 + rng.uniform(-p, p, truth.size))


def generate_dataset(cfg, num_particles):
    """Draw truth parameters and a training trajectory for ``num_particles``.

    Instances whose solve fails are redrawn, at most ``cfg.max_retries``
    times.
    """
    rng = _rng(cfg.seed, num_particles, _DATA)
    grid = cfg.time_grid()
    solver_cfg = cfg.solver_config()
    field = CuckerSmale(num_particles)
    for attempt in range(cfg.max_retries):
        if cfg.truth_params is not None:
            truth = np.array(cfg.truth_params, dtype=float)
        else:
            truth = sample_truth(rng, cfg.truth_ranges)
        x0 = sample_initial_state(rng, num_particles, cfg)
        try:
            clean = solve(field, truth, x0, grid, solver_cfg).states
        except SolverError as exc:
            log.warning("dataset draw %d for N=%d failed (%s); redrawing",
                        attempt, num_particles, exc)
            continue
        break
    else:
        raise OdeBcdError(f"no solvable dataset for N={num_particles} "
                          f"after {cfg.max_retries} draws")
    targets = clean
    if cfg.noise_std > 0:
        targets = clean + cfg.noise_std * rng.standard_normal(clean.shape)
    test_x0s = np.stack([sample_initial_state(rng, num_particles, cfg)
                         for _ in range(cfg.test_trajectories)])
    return Dataset(num_particles, grid, truth, x0, targets, test_x0s, cfg.seed)


def save_dataset(ds, stem):
    """Write ``{stem}.json`` (header) and ``{stem}.csv`` (targets, one row per time).

    The header holds the dimensions, grid, truth parameters, seed, training
    initial state and test initial states.  Floats are written with 17
    significant digits, so loading gives back the same bits.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "num_particles": ds.num_particles,
        "state_dim": int(ds.targets.shape[1]),
        "num_points": int(ds.targets.shape[0]),
        "grid": ds.grid.to_dict(),
        "truth": dict(zip(PARAM_NAMES, map(float, ds.truth))),
        "seed": ds.seed,
        "x0": [float(v) for v in ds.x0],
        "test_x0s": [[float(v) for v in row] for row in ds.test_x0s],
    }
    stem.with_suffix(".json").write_text(json.dumps(header, indent=1))
    np.savetxt(stem.with_suffix(".csv"), ds.targets, fmt="%.17g", delimiter=",")


def load_dataset(stem):
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    targets = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", ndmin=2)
    expected = (header["num_points"], header["state_dim"])
    if targets.shape != expected:
        raise ValueError(f"target matrix has shape {targets.shape}, header says {expected}")
    n = header["state_dim"]
    return Dataset(
        num_particles=header["num_particles"],
        grid=TimeGrid(**header["grid"]),
        truth=np.array([header["truth"][k] for k in PARAM_NAMES]),
        x0=np.array(header["x0"]),
        targets=targets,
        test_x0s=np.array(header["test_x0s"], dtype=float).reshape(-1, n),
        seed=header["seed"],
    )


def evaluate_test(field, theta, test_x0s, truth_params, grid, solver_cfg=None, obs=None):
    """Mean RSSE of ``solve(theta, x0)`` against ``solve(truth, x0)`` over ``test_x0s``.

    Initial conditions where either solve fails, or whose target is all
    zero, are left out and counted in ``failures``.
    """
    test_x0s = np.asarray(test_x0s, dtype=float)
    if test_x0s.ndim != 2 or len(test_x0s) == 0:
        raise ValueError("test set is empty")
    obs = obs or ObservationMap(field.state_dim)
    values = []
    failures = 0
    for x0 in test_x0s:
        try:
            target = obs.eval_batch(solve(field, truth_params, x0, grid, solver_cfg).states)
            pred = obs.eval_batch(solve(field, theta, x0, grid, solver_cfg).states)
            values.append(rsse(pred, target))
        except (SolverError, UndefinedMetricError):
            failures += 1
    mean = float(np.mean(values)) if values else None
    return TestReport(mean, values, failures)


def _fmt(v):
    return "" if v is None else repr(v)


class CsvSink:
    """Appends :class:`EpochRow` objects to a CSV file with the standard header."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)

    def __call__(self, row):
        self._writer.writerow([_fmt(v) for v in row.as_tuple()])

    def close(self):
        self._fh.close()


def read_run_csv(path):
    """Rows of a per-epoch CSV as dicts of floats (``None`` for blanks)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in rows]


def train_one(cfg, ds, algorithm, csv_path=None):
    """Train ``algorithm`` on ``ds`` from the perturbed initial guess.

    Returns ``(RunSummary, TrainRecord)``.  Failures inside training are
    reported through the summary status, never raised.
    """
    field = CuckerSmale(ds.num_particles)
    obs = ObservationMap(field.state_dim)
    solver_cfg = cfg.solver_config()
    theta0 = perturbed_init(cfg, ds.truth, ds.num_particles)
    train_cfg = TrainConfig.for_algorithm(algorithm, epochs=cfg.epochs, seed=cfg.seed,
                                          rsse_every=cfg.rsse_every)
    sink = CsvSink(csv_path) if csv_path is not None else None
    try:
        _, theta, rec = run_training(field, obs, ds.targets, ds.x0, theta0, ds.grid,
                                     solver_cfg, train_cfg, sink=sink)
    except OdeBcdError as exc:
        theta = theta0
        rec = TrainRecord(algorithm, status="error", message=f"{type(exc).__name__}: {exc}")
    finally:
        if sink is not None:
            sink.close()
    secs = [r.epoch_seconds for r in rec.rows]
    rsse_vals = [r.rsse_ode for r in rec.rows if r.rsse_ode is not None]
    test = None
    if rec.status in _OK_STATUSES and np.all(np.isfinite(theta)):
        test = evaluate_test(field, theta, ds.test_x0s, ds.truth, ds.grid, solver_cfg, obs)
    summary = RunSummary(
        algorithm=algorithm,
        num_particles=ds.num_particles,
        epochs_run=len(rec.rows),
        mean_epoch_seconds=float(np.mean(secs)) if secs else None,
        total_seconds=float(np.sum(secs)),
        final_sse=rec.rows[-1].sse if rec.rows else None,
        final_rsse=rsse_vals[-1] if rsse_vals else None,
        test_mean_rsse=None if test is None else test.mean_rsse,
        test_failures=0 if test is None else test.failures,
        status=rec.status,
        message=rec.message,
        theta=[float(t) for t in theta],
    )
    return summary, rec


def plot_losses(records, num_particles, path):
    """Write a two-panel SVG of SSE and RSSE-on-ODE against epoch (log scale)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "odebcd"
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for alg, rec in records.items():
        epochs = rec.column("epoch")
        axes[0].plot(epochs, rec.column("sse"), label=alg)
        pts = [(r.epoch, r.rsse_ode) for r in rec.rows if r.rsse_ode is not None]
        if pts:
            e, v = zip(*pts)
            axes[1].plot(e, v, label=alg)
    for ax, name in zip(axes, ("training SSE", "RSSE on ODE")):
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_title(f"{name}, N={num_particles}")
        if ax.lines:
            ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@dataclass
class BenchmarkResult:
    """Run summaries keyed by algorithm, then particle count."""

    runs: dict
    out_dir: Path | None = None

    @property
    def failures(self):
        return [s for by_n in self.runs.values() for s in by_n.values() if not s.ok]

    def to_dict(self):
        return {alg: {str(n): s.to_dict() for n, s in by_n.items()}
                for alg, by_n in self.runs.items()}


def run_benchmark(cfg, out_dir=None, plots=True):
    """Train every algorithm on every particle count and write the artifacts.

    Runs are spread over ``cfg.threads`` workers.  A failed run is recorded
    in the summary and does not stop the sweep.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    datasets = {}
    for n in cfg.particle_counts:
        datasets[n] = generate_dataset(cfg, n)
        save_dataset(datasets[n], out / "data" / f"cs_N{n}")

    jobs = [(alg, n) for n in cfg.particle_counts for alg in cfg.algorithms]

    def work(job):
        alg, n = job
        log.info("training %s on N=%d", alg, n)
        return train_one(cfg, datasets[n], alg, out / "runs" / f"{alg}_N{n}.csv")

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    runs = {alg: {} for alg in cfg.algorithms}
    records = {n: {} for n in cfg.particle_counts}
    for (alg, n), (summary, rec) in zip(jobs, results):
        runs[alg][n] = summary
        records[n][alg] = rec
    result = BenchmarkResult(runs, out)
    (out / "summary.json").write_text(json.dumps(result.to_dict(), indent=2))
    if plots:
        for n, recs in records.items():
            plot_losses(recs, n, out / "plots" / f"loss_N{n}.svg")
    return result
