import numpy as np
import pytest

from conftest import make_dataset
from mobscope.data import Day, GpsDataset
from mobscope.evaluation import (ExperimentConfig, MiseRow, MiseTable, mise, ordering_checks,
                                 reference_bandwidths, run_experiment)
from mobscope.grid import DensityField, GridSpec


def test_reference_bandwidths_zero_spread():
    d = GpsDataset([Day(np.linspace(0.05, 0.95, 40), np.ones((40, 2)))])
    bw = reference_bandwidths(d)
    assert bw.h_x == 1e-6
    assert bw.h_t == pytest.approx(0.05 * (1 / 40) ** (1 / 3))


def test_reference_bandwidths_formula():
    d = make_dataset(3, 25, 4, even=False)
    bw = reference_bandwidths(d)
    # direct reevaluation of the rule with explicit neighbour gaps
    w, x = [], []
    for day in d.days:
        t = np.concatenate([[day.t[-1] - 1], day.t, [1 + day.t[0]]])
        w.append((t[2:] - t[:-2]) / (2 * d.n_days))
        x.append(day.xy)
    w, x = np.concatenate(w), np.vstack(x)
    mu = w @ x
    s = np.sqrt(w @ (x - mu) ** 2)
    N = d.n_obs
    assert bw.h_x == pytest.approx(0.065 * (np.hypot(*s) / N) ** (1 / 6), rel=1e-12)
    scaled = GpsDataset([Day(day.t, 3.0 * day.xy) for day in d.days])
    assert reference_bandwidths(scaled).h_x == pytest.approx(bw.h_x * 3 ** (1 / 6), rel=1e-12)


def test_reference_time_bandwidth_thirty_days():
    d = make_dataset(30, 479, 0)
    # 0.05 (30 / 14370)^(1/3)
    assert reference_bandwidths(d).h_t == pytest.approx(0.0063904, rel=1e-4)


def test_mise_examples():
    g = GridSpec(0.0, 0.0, 4, 5, 0.5, 0.5)
    a = DensityField(g, np.random.default_rng(0).uniform(size=g.shape))
    assert mise(a, a) == 0
    unit = GridSpec(0.0, 0.0, 1, 1, 1.0, 1.0)
    assert mise(DensityField(unit, np.array([[1.5]])), DensityField(unit, np.array([[1.0]]))) == pytest.approx(0.25)
    b = DensityField(g, a.values[::-1].copy())
    assert mise(a, b) == mise(b, a)
    with pytest.raises(ValueError):
        mise(a, DensityField(unit, np.array([[1.0]])))


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(estimators=("histogram",))
    with pytest.raises(ValueError):
        ExperimentConfig.preset("huge")
    assert ExperimentConfig.preset("full").n_values == (7, 30, 90)


def test_table_csv_round_trip(tmp_path):
    t = MiseTable([MiseRow(7, 159, 0.2, "even", "weighted", "full", 0.1 / 3, 1e-3, 20, 0),
                   MiseRow(7, 159, 0.2, "even", "naive", "full", 0.2, 2e-3, 20, 0)])
    p = tmp_path / "t.csv"
    t.to_csv(p)
    back = MiseTable.from_csv(p)
    assert [r for r in back] == t.rows
    assert back.get(estimator="naive").mise_mean == 0.2
    assert p.read_text().splitlines()[0] == "n,m,sigma,mode,estimator,target,mise_mean,mise_std,reps,seed"


@pytest.fixture(scope="module")
def smoke_table():
    cfg = ExperimentConfig.preset("smoke", n_mc=5_000, n_time_grid=288)
    return cfg, run_experiment(cfg)


def test_smoke_experiment(smoke_table):
    cfg, t = smoke_table
    assert len(t) == 2 * 3 * 2  # modes x estimators x targets
    assert all(r.mise_mean >= 0 and r.reps == 2 for r in t)
    checks = ordering_checks(t)
    even = [c for c in checks if c[0].startswith("even-spacing")]
    assert even and all(ok for _, ok, _ in even)


def test_run_output_csv_round_trip(smoke_table, tmp_path):
    _, t = smoke_table
    t.to_csv(tmp_path / "t.csv")
    back = MiseTable.from_csv(tmp_path / "t.csv")
    assert [(r.mise_mean, r.mise_std) for r in back] == [(r.mise_mean, r.mise_std) for r in t]


def test_experiment_reproducible_and_thread_invariant(smoke_table, monkeypatch):
    cfg, t = smoke_table
    monkeypatch.setenv("MOBSCOPE_THREADS", "3")
    again = run_experiment(cfg)
    assert again.to_csv() == t.to_csv()
