import json

import numpy as np
import pytest

from odebcd.algorithms import CSV_COLUMNS
from odebcd.cucker_smale import CuckerSmale
from odebcd.errors import ConfigError
from odebcd.harness import (ExperimentConfig, evaluate_test, generate_dataset, load_dataset,
                            min_pair_distance, perturbed_init, read_run_csv, run_benchmark,
                            sample_truth, save_dataset)
from odebcd.ode_solver import solve


def small(**kw):
    base = dict(particle_counts=[3], grid={"t0": 0.0, "h": 0.05, "N_t": 10}, epochs=2,
                test_trajectories=4, algorithms=["alg1"], rsse_every=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_json_round_trip():
    cfg = small(seed=9, noise_std=1e-3)
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg


@pytest.mark.parametrize("bad", [
    {"model": "kuramoto"},
    {"particle_counts": []},
    {"grid": {"t0": 0.0, "h": 0.1}},
    {"grid": {"t0": 0.0, "h": -0.1, "N_t": 5}},
    {"truth_params": [1.0, 2.0]},
    {"epochs": 0},
    {"noise_std": -1.0},
    {"init_perturbation": 1.5},
    {"algorithms": ["alg7"]},
    {"solver": {"method": "euler"}},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        small(**bad)


def test_config_rejects_unknown_keys_and_bad_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"epochz": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("[1, 2]")


def test_sample_truth_in_ranges():
    rng = np.random.default_rng(0)
    cfg = ExperimentConfig()
    for _ in range(200):
        theta = sample_truth(rng, cfg.truth_ranges)
        for v, (lo, hi) in zip(theta, cfg.truth_ranges.values()):
            assert lo <= v <= hi


def test_dataset_is_deterministic_and_noise_free():
    cfg = small(seed=4)
    a, b = generate_dataset(cfg, 3), generate_dataset(cfg, 3)
    assert np.array_equal(a.targets, b.targets) and np.array_equal(a.test_x0s, b.test_x0s)
    clean = solve(CuckerSmale(3), a.truth, a.x0, a.grid, cfg.solver_config()).states
    assert np.array_equal(a.targets, clean)
    c = generate_dataset(cfg.replace(seed=5), 3)
    assert not np.array_equal(a.x0, c.x0)


def test_noise_is_added():
    cfg = small(noise_std=1e-2)
    ds = generate_dataset(cfg, 3)
    clean = solve(CuckerSmale(3), ds.truth, ds.x0, ds.grid, cfg.solver_config()).states
    assert 1e-3 < np.std(ds.targets - clean) < 1e-1


def test_initial_states_are_separated():
    for seed in range(40):
        cfg = small(seed=seed, test_trajectories=3, min_separation=0.05)
        ds = generate_dataset(cfg, 6)
        for x0 in (ds.x0, *ds.test_x0s):
            assert min_pair_distance(x0, 6) > 0.05
            assert np.all(np.abs(x0[:12]) <= 2.0) and np.all(np.abs(x0[12:]) <= 1.0)


def test_dataset_file_round_trip(tmp_path):
    ds = generate_dataset(small(noise_std=1e-3), 3)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    for name in ("truth", "x0", "targets", "test_x0s"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.grid == ds.grid and back.num_particles == 3


def test_perturbed_init_bounds():
    cfg = small(init_perturbation=0.2)
    truth = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    theta0 = perturbed_init(cfg, truth, 3)
    assert np.all(np.abs(theta0 / truth - 1) <= 0.2)
    assert np.array_equal(theta0, perturbed_init(cfg, truth, 3))


def test_evaluate_test():
    cfg = small()
    ds = generate_dataset(cfg, 3)
    field = CuckerSmale(3)
    with pytest.raises(ValueError):
        evaluate_test(field, ds.truth, np.zeros((0, 12)), ds.truth, ds.grid)
    exact = evaluate_test(field, ds.truth, ds.test_x0s, ds.truth, ds.grid)
    assert exact.mean_rsse <= 1e-10 and exact.failures == 0
    off = ds.truth.copy()
    off[0] *= 1.3
    assert evaluate_test(field, off, ds.test_x0s, ds.truth, ds.grid).mean_rsse > 1e-6


def test_bench_artifacts(tmp_path):
    cfg = small(epochs=1, algorithms=["alg0_direct", "alg1", "alg2", "alg3"])
    result = run_benchmark(cfg, out_dir=tmp_path)
    assert not result.failures
    assert (tmp_path / "config.json").exists()
    assert (tmp_path / "data" / "cs_N3.csv").exists()
    assert (tmp_path / "plots" / "loss_N3.svg").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    for alg in cfg.algorithms:
        path = tmp_path / "runs" / f"{alg}_N3.csv"
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        rows = read_run_csv(path)
        assert len(rows) == 1
        assert rows[-1]["sse"] == summary[alg]["3"]["final_sse"]


def test_bench_is_reproducible(tmp_path):
    cfg = small(epochs=3, algorithms=["alg1", "alg2"], particle_counts=[2, 3], threads=2)
    run_benchmark(cfg, out_dir=tmp_path / "a", plots=False)
    run_benchmark(cfg, out_dir=tmp_path / "b", plots=False)
    for alg in cfg.algorithms:
        for n in (2, 3):
            ra = read_run_csv(tmp_path / "a" / "runs" / f"{alg}_N{n}.csv")
            rb = read_run_csv(tmp_path / "b" / "runs" / f"{alg}_N{n}.csv")
            for x, y in zip(ra, rb):
                x.pop("epoch_seconds"), y.pop("epoch_seconds")
                assert x == y
