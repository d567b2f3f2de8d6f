from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from hostparasite.excursions import BirthDeathSpec, balance_prob_exact, balance_target
from hostparasite.params import ModelParams
from hostparasite.rng import seed_stream
from hostparasite.ssa import (Absorbed, HostStateVector, host_rates, in_box, is_absorbed, monomorphic,
                              moran_spectrum, simulate, simulate_with_stopping, step, total_rate,
                              transition_matrix)
from hostparasite.ssa import engine
from hostparasite.ssa._kernel import moran_rates
from hostparasite.trajectory import EventKind

UP = {EventKind.MoranUp, EventKind.ReinfectUp, EventKind.MutateBtoA}
DOWN = {EventKind.MoranDown, EventKind.ReinfectDown, EventKind.MutateAtoB}


def rate_table(k, N, g, s, eta, rN, u):
    """Independent builder: explicit donor sums over all hosts, self included."""
    M = len(k)
    x = [ki / N for ki in k]
    rows = []
    for i in range(M):
        moran = g * N * x[i] * (1 - x[i])
        up = moran * (1 + s * (eta - x[i])) + sum(rN / M * x[j] * (1 - x[i]) for j in range(M))
        down = moran * (1 + s * (x[i] - eta)) + sum(rN / M * (1 - x[j]) * x[i] for j in range(M))
        rep1 = sum(x[j] / M for j in range(M))
        rows.append((up, down, rep1, 1 - rep1, u * g * N * x[i], u * g * N * (1 - x[i])))
    return rows


def ns(**kw):
    base = dict(N=10, g_N=100.0, s_N=0.1, eta=0.5, r_N=10.0, u_N=0.0)
    return SimpleNamespace(**(base | kw))


def test_host_rates_worked_example():
    p = ns()
    rates = host_rates(HostStateVector([5, 10], 10), 0, p)
    assert rates.up == pytest.approx(253.75, abs=1e-12)
    assert rates.down == pytest.approx(251.25, abs=1e-12)
    assert (rates.rep1, rates.rep0) == pytest.approx((0.75, 0.25), abs=1e-15)
    assert rates.mutAB == rates.mutBA == 0.0


@given(k=st.lists(st.integers(0, 12), min_size=1, max_size=6), eta=st.floats(0.05, 0.95),
       s=st.floats(0.0, 0.9), rN=st.floats(0.0, 50.0), u=st.floats(0.0, 1e-3))
def test_host_rates_match_table(k, eta, s, rN, u):
    N = 12
    p = SimpleNamespace(N=N, g_N=7.0, s_N=s, eta=eta, r_N=rN, u_N=u)
    state = HostStateVector(k, N)
    table = rate_table(k, N, 7.0, s, eta, rN, u)
    for i in range(len(k)):
        assert np.allclose(host_rates(state, i, p), table[i], rtol=1e-12, atol=1e-12)
        assert min(host_rates(state, i, p)) >= 0


def test_boundary_and_balance_identities():
    p = ns()
    st0 = HostStateVector([0, 10, 4], 10)
    r0 = host_rates(st0, 0, p)
    assert r0.up == pytest.approx(p.r_N * st0.xbar) and r0.down == 0.0
    st_eta = HostStateVector([5, 10, 2], 10)
    r = host_rates(st_eta, 0, p)
    assert r.up - r.down == pytest.approx(p.r_N * (st_eta.xbar - 0.5))


def params(N=20, M=4, r=1.0, **kw):
    return ModelParams(N=N, M=M, eta=0.5, b=0.5, r=r, **kw)


def test_all_full_only_self_replacement():
    p = params(M=3)
    state = HostStateVector([20, 20, 20], 20)
    with pytest.raises(Absorbed):
        step(state, p, seed_stream(0))
    assert total_rate(state, p) == pytest.approx(3.0)
    for rep in range(20):
        rec, dt, new = step(state, p, seed_stream(0, rep), stop_when_absorbed=False)
        assert rec.kind is EventKind.ReplaceTo1
        assert np.array_equal(new.k, state.k)
        assert dt > 0


def test_single_empty_host_absorbed():
    p = params(M=1, r=0.0)
    state = HostStateVector([0], 20)
    assert is_absorbed(state, p)
    with pytest.raises(Absorbed):
        step(state, p, seed_stream(1))


def test_step_applies_kind():
    p = params(M=3, u_N=1e-3)
    state = HostStateVector([3, 20, 0], 20)
    rng = seed_stream(5)
    for _ in range(300):
        rec, dt, new = step(state, p, rng)
        diff = new.k - state.k
        assert np.count_nonzero(diff) <= 1
        d = int(diff[rec.host])
        if rec.kind in UP:
            assert d == 1
        elif rec.kind in DOWN:
            assert d == -1
        elif rec.kind is EventKind.ReplaceTo1:
            assert new.k[rec.host] == 20
        else:
            assert new.k[rec.host] == 0
        new.check()
        state = new


def test_step_holding_time_and_choice():
    p = params(M=2)
    state = HostStateVector([10, 20], 20)
    tot = total_rate(state, p)
    rng = seed_stream(11)
    n = 20_000
    dts = np.empty(n)
    kinds = np.zeros(8)
    for j in range(n):
        rec, dts[j], _ = step(state, p, rng)
        kinds[rec.kind] += 1
    assert abs(dts.mean() * tot - 1) < 4 / np.sqrt(n)
    table = rate_table([10, 20], 20, p.g_N, p.s_N, 0.5, p.r_N, 0.0)
    up0, down0, rep1_0, rep0_0 = table[0][:4]
    # host 1 sits at 20: only its down-reinfection and ReplaceTo0 change anything
    expect_rep0 = (rep0_0 + table[1][3]) / tot
    assert abs(kinds[EventKind.ReplaceTo0] / n - expect_rep0) < 4 * np.sqrt(expect_rep0 / n)


@given(seed=st.integers(0, 2**32), M=st.integers(1, 6), u=st.sampled_from([0.0, 1e-2]))
def test_counts_stay_in_range(seed, M, u):
    p = params(N=8, M=M, r=2.0, u_N=u, g_N=3.0)
    rng = np.random.default_rng(seed)
    state = HostStateVector(rng.integers(0, 9, size=M), 8)
    for _ in range(100):
        try:
            _, _, state = step(state, p, rng)
        except Absorbed:
            break
        state.check()


def test_simulate_absorbed_all_one_is_constant():
    p = params(M=5, r=0.0)
    tr = simulate(p, HostStateVector.from_classes(0, 0, 5, 20, 0.5), 2.0, 0.5, seed_stream(2))
    assert np.array_equal(tr.weights[:, :3], np.tile([0.0, 0.0, 1.0], (5, 1)))
    assert tr.absorbed_at is not None


def test_same_seed_same_event_log():
    p = params(N=30, M=6, r=2.0, u_N=1e-3)
    init = HostStateVector([0, 5, 15, 30, 30, 2], 30)
    a = simulate(p, init, 1.0, 0.1, seed_stream(3), log_events=True)
    b = simulate(p, init, 1.0, 0.1, seed_stream(3), log_events=True)
    assert a.events == b.events and len(a.events) > 100
    assert np.array_equal(a.weights, b.weights)
    c = simulate(p, init, 1.0, 0.1, 3)
    assert c.seed == 3 and np.array_equal(c.weights, simulate(p, init, 1.0, 0.1, seed_stream(3)).weights)


def test_sparse_path_preserves_event_log():
    p = params(N=30, M=40, r=3.0, u_N=1e-4)
    init = HostStateVector(np.r_[np.zeros(20, int), np.full(15, 30), np.full(5, 15)], 30)
    a = simulate(p, init, 0.5, 0.05, seed_stream(7), log_events=True, method="events")
    b = simulate(p, init, 0.5, 0.05, seed_stream(7), log_events=True, method="events", sparse=True)
    assert a.events == b.events and len(a.events) > 1000
    assert np.array_equal(a.terminal, b.terminal)


def test_event_log_limit(monkeypatch):
    monkeypatch.setattr(engine, "LOG_LIMIT", engine.LOG_CHUNK)
    p = params(N=100, M=20, r=2.0, g_N=1e4)
    with pytest.raises(ValueError, match="event log"):
        simulate(p, HostStateVector(np.full(20, 50), 100), 5.0, 1.0, seed_stream(0), log_events=True,
                 method="events")


def test_state_validation():
    with pytest.raises(ValueError):
        HostStateVector([0, 21], 20)
    with pytest.raises(ValueError):
        HostStateVector.from_frequencies([0.33], 20)
    with pytest.raises(ValueError):
        simulate(params(M=4), HostStateVector([0, 0], 20), 1.0, 0.5)
    with pytest.raises(ValueError):
        simulate(params(M=2), HostStateVector([0, 0], 20), 1.0, 0.5, method="tau-leap")


@pytest.mark.parametrize("N", [5, 12, 40])
def test_transition_kernel_matches_expm(N):
    g, s, eta = 3.0, N ** -0.5, 0.4
    spec = moran_spectrum(N, g, s, eta)
    birth, death = moran_rates(N, g, s, eta)
    Q = np.diag(birth[:-1], 1) + np.diag(death[1:], -1)
    Q -= np.diag(Q.sum(axis=1))
    for tau in (0.01, 0.3, 2.0):
        P = expm(Q * tau)
        for k in (0, 1, N // 2, N - 1, N):
            assert np.allclose(transition_matrix(spec, k, tau), P[k], atol=1e-10)


def test_kernel_and_event_methods_agree_in_law():
    p = params(N=40, M=20, r=2.0)
    init = HostStateVector(np.r_[np.zeros(8, int), np.full(8, 40), np.full(4, 20)], 40)
    reps = 300
    mean = {}
    for method in ("events", "kernel"):
        w = np.array([simulate(p, init, 1.0, 1.0, seed_stream(17, i), method=method).weights[-1]
                      for i in range(reps)])
        mean[method] = (w.mean(axis=0), w.std(axis=0, ddof=1) / np.sqrt(reps))
    (ma, sa), (mb, sb) = mean["events"], mean["kernel"]
    z = np.abs(ma - mb) / np.sqrt(sa ** 2 + sb ** 2 + 1e-300)
    assert np.all(z[:3] < 4)


def test_kernel_method_marks_moran_columns():
    p = params(N=40, M=5)
    tr = simulate(p, HostStateVector([0, 40, 20, 20, 3], 40), 0.5, 0.25, seed_stream(1), method="kernel")
    assert np.all(tr.event_counts[:, [EventKind.MoranUp, EventKind.MoranDown]] == -1)
    assert tr.total_counts()["MoranUp"] == -1


def test_single_host_hitting_matches_exact():
    # r = 0 and g huge: replacement (rate 1 per host) essentially never fires
    # during an excursion, so each host is an independent Moran chain from k = 1
    N, M, batches = 20, 10_000, 10
    p = ModelParams(N=N, M=M, eta=0.5, b=0.5, r=0.0, g_N=1e11)
    target = balance_target(N, 0.5)
    hits = 0
    for bi in range(batches):
        tr = simulate(p, HostStateVector(np.ones(M, int), N), 1e-7, 1e-7, seed_stream(99, bi),
                      method="events", log_events=True)
        assert np.all((tr.terminal == 0) | (tr.terminal == N))
        k = np.ones(M, int)
        top = np.ones(M, int)
        for e in tr.events:
            if e.kind is EventKind.MoranUp:
                k[e.host] += 1
                top[e.host] = max(top[e.host], k[e.host])
            elif e.kind is EventKind.MoranDown:
                k[e.host] -= 1
        hits += int(np.count_nonzero(top >= target))
    n = M * batches
    exact = balance_prob_exact(BirthDeathSpec.from_params(p), 1, target, 0)
    assert abs(hits / n - exact) < 3 * np.sqrt(exact * (1 - exact) / n)


def test_boundary_mass_is_martingale_without_reinfection():
    p = params(N=20, M=20, r=0.0)
    init = HostStateVector.from_classes(14, 0, 6, 20, 0.5)
    reps = 2000
    z1 = np.array([simulate(p, init, 2.0, 1.0, seed_stream(21, i)).z1 for i in range(reps)])
    m, se = z1.mean(axis=0), z1.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(m[1:] - 0.3) < 3 * se[1:] + 1e-12)


def test_reinfection_counts_match_compensator():
    # compare counted reinfections with the integrated reinfection rate
    p = ModelParams(N=1000, M=10, eta=0.5, b=0.5, r=1.0, g_N=1.0)
    init = HostStateVector(np.r_[np.zeros(5, int), np.full(5, 1000)], 1000)
    dt, reps = 0.005, 40
    counted = expected = 0.0
    for i in range(reps):
        tr = simulate(p, init, 2.0, dt, seed_stream(23, i), snapshots=True, method="events")
        x = tr.snapshots / p.N
        xbar = x.mean(axis=1, keepdims=True)
        rate = p.r_N * (xbar * (1 - x) + (1 - xbar) * x).sum(axis=1)
        expected += float(np.sum(0.5 * (rate[1:] + rate[:-1]) * dt))
        counted += tr.event_counts[:, [EventKind.ReinfectUp, EventKind.ReinfectDown]].sum()
    assert abs(counted - expected) < 3 * np.sqrt(expected)


def test_stopping_predicates():
    p = params(M=5, r=0.0)
    all1 = HostStateVector.from_classes(0, 0, 5, 20, 0.5)
    tr, hit = simulate_with_stopping(p, all1, monomorphic, 5.0, seed_stream(0))
    assert hit == 0.0 and len(tr.times) == 1
    tr, hit = simulate_with_stopping(p, all1, lambda w: False, 1.0, seed_stream(0), sample_dt=0.25)
    assert hit is None and tr.times[-1] == 1.0
    assert in_box((0.2, 0.5, 0.3), 0.1)((0.25, 0.45, 0.3))
    assert not in_box((0.2, 0.5, 0.3), 0.1)((0.1, 0.6, 0.3))


def test_mutation_leaves_monomorphic_state():
    # r = 2 is above the coupling threshold at eta = 1/2, so mutants can establish
    p = ModelParams(N=50, M=10, eta=0.5, b=0.5, r=2.0, g_N=100.0, u_N=2e-4)
    init = HostStateVector(np.full(10, 50), 50)
    u = (1 / 4, 1 / 2, 1 / 4)
    hits = [simulate_with_stopping(p, init, in_box(u, 0.2), 200.0, seed_stream(31, i), sample_dt=0.5)[1]
            for i in range(20)]
    assert sum(h is not None for h in hits) >= 1
    assert all(h is None or h > 0 for h in hits)
