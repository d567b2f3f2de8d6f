import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hostparasite import experiments as xp
from hostparasite import meanfield as mf
from hostparasite.experiments import ExperimentConfig, run_preset
from hostparasite.params import ModelParams


def small_mutation(**kw):
    params = ModelParams(N=40, M=8, eta=0.5, b=0.5, r=2.0, g_N=50.0)
    base = dict(params=params, replicates=4, t_max=20.0, sample_dt=0.5, seed=3)
    return ExperimentConfig.default("mutation-cycle", **(base | kw))


def test_config_validation():
    with pytest.raises(ValueError, match="unknown preset"):
        ExperimentConfig.default("phase-diagram")
    with pytest.raises(ValueError):
        ExperimentConfig.default("chaos-M", replicates=0)
    with pytest.raises(ValueError):
        ExperimentConfig.default("chaos-M", seed=-1)
    with pytest.raises(ValueError, match="delta"):
        small_mutation(delta=0.2)  # u = (1/4, 1/2, 1/4) allows delta < 1/8
    small_mutation(delta=0.12)
    low_r = ModelParams(N=40, M=8, eta=0.6, b=0.5, r=0.5, g_N=50.0)
    with pytest.raises(ValueError, match="threshold"):
        ExperimentConfig.default("mutation-cycle", params=low_r)


def test_header_is_complete():
    cfg = ExperimentConfig.default("equilibrium-sweep", seed=11)
    head = cfg.header()
    assert head["seed"] == 11 and head["params"]["N"] == 1000
    res = run_preset(cfg)
    text = res.summary["texts"]["equilibrium-sweep.csv"]
    assert "# seed: 11" in text.splitlines()
    assert any(line.startswith("# params: ") for line in text.splitlines())


def test_equilibrium_sweep_rows():
    res = run_preset(ExperimentConfig.default("equilibrium-sweep"))
    lines = [l for l in res.summary["texts"]["equilibrium-sweep.csv"].splitlines() if not l.startswith("#")]
    assert lines[0] == "eta,r,u0,ueta,u1,rstar,classification"
    checked = 0
    for line in lines[1:]:
        eta, r, u0, ue, u1, rstar, cls = line.split(",")
        eta, r, rstar = float(eta), float(r), float(rstar)
        assert rstar == pytest.approx(mf.existence_threshold(eta))
        if r > rstar:
            u = mf.interior_equilibrium_raw(eta, r)
            assert [float(u0), float(ue), float(u1)] == pytest.approx(u.tolist(), abs=1e-11)
            assert "u=stable" in cls
            checked += 1
        else:
            assert u0 == "nan"
    assert checked == 13  # r* = 3.17 at eta in {0.3, 0.7}


def test_mutation_cycle_without_mutation_never_hits(tmp_path):
    cfg = small_mutation(knobs={"theta_s": [0.0]}, out_dir=tmp_path)
    res = run_preset(cfg)
    rows = [l for l in (tmp_path / "mutation-cycle-tau.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 1 + cfg.replicates
    assert all(r.endswith(",not hit") for r in rows[1:])
    assert res.summary["hit_fraction"] == [0.0]
    assert res.summary["note"] == xp.PERSISTENCE_NOTE


def test_mutation_rate_matches_theta():
    cfg = small_mutation(knobs={"theta_s": [0.5]}, replicates=6, t_max=40.0)
    res = run_preset(cfg).summary
    theta = res["theta_N"][0]
    assert theta == pytest.approx(0.5 / cfg.params.s_N)
    assert abs(res["mutation_rate"][0] - theta) < 3 * res["mutation_rate_se"][0]


def test_explicit_u_overrides_theta_knobs():
    p = ModelParams(N=40, M=8, eta=0.5, b=0.5, r=2.0, g_N=50.0, u_N=1e-4)
    res = run_preset(small_mutation(params=p)).summary
    assert res["theta_N"] == [pytest.approx(1e-4 * 40 * 8 * 50)]


def test_tree_vs_ode_small():
    cfg = ExperimentConfig.default("tree-vs-ode", knobs={"n_trees": 20_000})
    res = run_preset(cfg).summary
    assert res["all_within_4se"]


def test_byte_identical_and_manifest(tmp_path):
    cfg = dict(replicates=20, t_end=1.0, sample_dt=0.5, knobs={"M_grid": [5, 10]}, seed=9)
    a = run_preset(ExperimentConfig.default("chaos-M", out_dir=tmp_path / "a", **cfg))
    b = run_preset(ExperimentConfig.default("chaos-M", out_dir=tmp_path / "b", **cfg))
    for fa, fb in zip(a.files, b.files):
        assert fa.name == fb.name
        assert fa.read_bytes() == fb.read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 9
    for entry in man["files"]:
        data = (tmp_path / "a" / entry["file"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
        assert len(data) == entry["bytes"]


def test_thread_count_does_not_change_output():
    cfg = dict(replicates=12, t_end=1.0, sample_dt=0.5, knobs={"N_grid": [100, 200], "n_boot": 20})
    p = ModelParams(N=200, M=50, eta=0.5, b=0.5, r=2.0)
    one = run_preset(ExperimentConfig.default("convergence-N", params=p, threads=1, **cfg))
    three = run_preset(ExperimentConfig.default("convergence-N", params=p, threads=3, **cfg))
    assert one.summary["texts"] == three.summary["texts"]


def test_cleanup_on_failure(tmp_path, monkeypatch):
    def broken(cfg, out):
        out.write("partial.csv", "x\n1\n")
        raise RuntimeError("boom")

    monkeypatch.setitem(xp._RUNNERS, "equilibrium-sweep", broken)
    with pytest.raises(RuntimeError):
        run_preset(ExperimentConfig.default("equilibrium-sweep", out_dir=tmp_path))
    assert list(tmp_path.iterdir()) == []


def test_convergence_rejects_bad_init():
    cfg = ExperimentConfig.default("convergence-N", knobs={"init_counts": [1, 1, 1]}, replicates=1)
    with pytest.raises(ValueError, match="init_counts"):
        run_preset(cfg)


def test_from_file(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text("preset: mutation-cycle\nN: 40\nM: 8\neta: 0.5\nb: 0.5\nr: 2.0\na: 0.4\neps: 0.2\n"
                    "eps1: 0.1\ng_N: 50\nseed: 5\nreplicates: 3\nt_max: 10\ndelta: 0.1\ntheta_s: [0.2]\n")
    cfg = ExperimentConfig.from_file(path, seed=None, replicates=2)
    assert (cfg.preset, cfg.seed, cfg.replicates, cfg.t_max) == ("mutation-cycle", 5, 2, 10.0)
    assert cfg.knobs["theta_s"] == [0.2]
    with pytest.raises(ValueError, match="no preset"):
        bare = tmp_path / "b.yaml"
        bare.write_text("N: 40\nM: 8\neta: 0.5\nb: 0.5\nr: 2.0\na: 0.4\neps: 0.2\neps1: 0.1\n")
        ExperimentConfig.from_file(bare)


@given(v=st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 0),
       M=st.integers(1, 500))
def test_grid_counts(v, M):
    v = np.array(v) / sum(v)
    n = xp.grid_counts(v, M)
    assert sum(n) == M
    assert np.all(np.abs(np.array(n) - v * M) < 1)


def test_tv_tools():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(4), size=50)
    assert xp.tv_distance([1, 0, 0], [0, 0, 1]) == 1.0
    point, lo, hi = xp.bootstrap_tv(w, w, np.random.default_rng(1), 100)
    assert point == 0.0 and lo <= hi
    law, trans = xp.folded_law(w)
    assert law.sum() == pytest.approx(1.0) and trans == pytest.approx(w[:, 3].mean())
    perm = rng.permutation(50)
    assert np.allclose(xp.folded_law(w[perm])[0], law, rtol=1e-14)


def test_replicate_order_is_by_index():
    assert xp.run_replicates(lambda i: i * i, 20, threads=4) == [i * i for i in range(20)]
    assert not np.array_equal(xp.stream(1, 0, 1).random(4), xp.stream(1, 1, 0).random(4))
    assert math.isfinite(xp.stream(2**64 - 1, 7, 3).random())
