import itertools
import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from couette import _kernels, kmc, moments
from couette.lattice import Configuration, ParameterError, Params, Velocity, init_product, total_particles
from couette.kmc import Event, EventKind

H, Z, V = 0, 1, 2


def brute_rate(cells, p: Params) -> float:
    """Sum of rates of enabled events, enumerated site by site."""
    L, W = cells.shape
    total = 0.0
    for k in range(L):
        for x in range(W):
            if k < L - 1 and cells[k, x] != cells[k + 1, x]:
                total += p.lam
            if W >= 2 and cells[k, x] == V and cells[k, (x + 1) % W] == H:
                total += p.lam1
            if k == 0 and cells[k, x] == V:
                total += p.beta
            if k == L - 1 and cells[k, x] == Z:
                total += p.beta
            if cells[k, x] != H:
                total += p.eps
    return total


def test_total_rate_all_holes_is_zero():
    p = Params(S=3, W=5, eps=1.0)
    assert kmc.total_rate(Configuration.filled(3, 5), p) == 0.0


def test_total_rate_single_column_example():
    c = Configuration(np.array([[V], [Z]]))
    p = Params(S=0, W=1, lam=1, lam1=1, beta=1, eps=1)
    assert kmc.total_rate(c, p) == 5.0


rates = st.floats(0, 10, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 4), st.integers(1, 6), st.integers(0, 2**32 - 1), rates, rates, rates, rates)
def test_total_rate_matches_enumeration_and_is_linear(S, W, seed, lam, lam1, beta, eps):
    cells = np.random.default_rng(seed).integers(0, 3, size=(S + 2, W))
    c = Configuration(cells)
    p = Params(S=S, W=W, lam=lam, lam1=lam1, beta=beta, eps=eps)
    r = kmc.total_rate(c, p)
    assert r == pytest.approx(brute_rate(cells, p), rel=1e-12, abs=1e-12)
    p2 = Params(S=S, W=W, lam=2 * lam, lam1=2 * lam1, beta=2 * beta, eps=2 * eps)
    assert kmc.total_rate(c, p2) == pytest.approx(2 * r, rel=1e-12, abs=1e-12)


def test_total_rate_shape_mismatch():
    with pytest.raises(ParameterError):
        kmc.total_rate(Configuration.filled(1, 3), Params(S=2, W=3))


def test_single_enabled_event_is_always_chosen():
    # one V on the bottom layer, beta only: only its bottom flip is enabled
    cells = np.zeros((3, 4), dtype=np.int8)
    cells[0, 2] = V
    c = Configuration(cells)
    p = Params(S=1, W=4, lam=0, lam1=0, beta=1.3, eps=0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        ev, dt = kmc.choose_event(c, p, rng)
        assert ev == Event(EventKind.BOTTOM_FLIP, 0, 2) and dt > 0


def test_step_absorbing_state_signal():
    p = Params(S=1, W=3, eps=0.5)
    with pytest.raises(kmc.AbsorbingStateError):
        kmc.step(Configuration.filled(1, 3), p, np.random.default_rng(0))


def test_event_kind_frequencies_match_rates():
    c = init_product(Params(S=3, W=6, rho=0.6), 9)
    p = Params(S=3, W=6, lam=1.0, lam1=2.0, beta=0.7, eps=0.4, rho=0.6)
    rng = np.random.default_rng(1)
    n = 100_000
    kinds = np.zeros(5)
    waits = np.empty(n)
    for i in range(n):
        ev, waits[i] = kmc.choose_event(c, p, rng)
        kinds[ev.kind] += 1
    weights = kmc.kind_rates(p) * kmc.enabled_counts(c)
    prob = weights / weights.sum()
    sigma = np.sqrt(n * prob * (1 - prob))
    assert np.all(np.abs(kinds - n * prob) <= 3 * sigma)
    mean_wait = 1 / weights.sum()
    assert abs(waits.mean() - mean_wait) <= 3 * mean_wait / np.sqrt(n)


def test_only_vertical_swaps_conserve_column_contents():
    p = Params(S=4, W=8, lam=1.0, lam1=0, beta=0, eps=0, rho=0.7)
    c = init_product(p, 2)
    sorted_cols = np.sort(c.cells, axis=0)
    rep = kmc.run(c, p, 0.0, 50.0, seed=3)
    assert set(k for k, n in rep.events.items() if n) == {"vertical_swap"}
    assert np.array_equal(np.sort(rep.final.cells, axis=0), sorted_cols)


def test_python_step_loop_conserves_particles():
    p = Params(S=2, W=5, lam=1, lam1=1, beta=1, eps=1, rho=0.5)
    c = init_product(p, 4)
    m = total_particles(c)
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(3000):
        ev, _ = kmc.step(c, p, rng)
        seen.add(ev.kind)
        assert total_particles(c) == m
    assert seen == set(EventKind)


def test_apply_event_rejects_disabled():
    c = Configuration.filled(1, 3)
    with pytest.raises(ValueError):
        kmc.apply_event(c, Event(EventKind.PERTURB, 0, 0))
    with pytest.raises(ValueError):
        kmc.apply_event(c, Event(EventKind.HORIZONTAL_FLOW, 1, 0))
    with pytest.raises(ValueError):
        kmc.apply_event(c, Event(EventKind.TOP_FLIP, 2, 0))


def test_kernel_index_sets_track_enabled_events():
    p = Params(S=3, W=7, lam=1, lam1=1.5, beta=0.8, eps=0.3, rho=0.55)
    for seed in range(5):
        c = init_product(p, seed)
        grid = c.cells.copy()
        out = _kernels.simulate(grid, kmc.kind_rates(p), np.random.default_rng(seed),
                                30.0, np.empty(0), np.empty(0), False)
        counts, violations = out[5], out[3]
        assert violations == 0
        assert counts.tolist() == kmc.enabled_counts(Configuration(grid)).tolist()
        assert total_particles(Configuration(grid)) == total_particles(c)


def test_run_zero_window_is_flagged():
    p = Params(S=2, W=4)
    rep = kmc.run(init_product(p, 0), p, 5.0, 0.0, seed=0)
    assert not rep.measured
    d = rep.to_dict()
    assert d["measured"] is False and d["profile"] == []
    with pytest.raises(ValueError):
        rep.profile


def test_run_rejects_negative_times():
    p = Params(S=1, W=2)
    with pytest.raises(ParameterError):
        kmc.run(init_product(p, 0), p, -1.0, 1.0, seed=0)


def test_run_is_deterministic_and_leaves_input_untouched():
    p = Params(S=3, W=16, eps=0.1)
    c = init_product(p, 1)
    before = c.copy()
    a = kmc.run(c, p, 10, 50, seed=[4, 2])
    b = kmc.run(c, p, 10, 50, seed=[4, 2])
    assert c == before
    assert a.to_dict() == b.to_dict()
    assert a.final == b.final


def test_profiles_are_probabilities():
    p = Params(S=3, W=16, eps=0.2)
    rep = kmc.run(init_product(p, 1), p, 5, 40, seed=1)
    assert np.allclose(rep.batches.sum(axis=2), 1.0, atol=1e-12)
    assert np.allclose(rep.profile.sum(axis=1), 1.0, atol=1e-12)


def test_time_averaged_hole_sum_is_exact():
    p = Params(S=3, W=16, eps=0.2, rho=0.4)
    c = init_product(p, 1)
    rep = kmc.run(c, p, 5, 40, seed=1)
    m = total_particles(c)
    assert rep.profile[:, 0].sum() == pytest.approx(p.n_layers - m / p.W, abs=1e-10)


def test_absorbing_state_freezes_histograms():
    p = Params(S=1, W=4, eps=1.0)
    rep = kmc.run(Configuration.filled(1, 4), p, 1.0, 10.0, seed=0)
    assert rep.absorbed
    assert np.allclose(rep.profile[:, 0], 1.0)
    assert np.allclose(rep.se, 0.0)


def test_run_no_holes_matches_linear_profile():
    p = Params(S=2, W=64, lam=1, beta=1, eps=0, rho=1.0)
    rep = kmc.run(init_product(p, 8), p, 200, 2000, seed=8)
    expected = np.array([0.2, 0.4, 0.6, 0.8])
    z = np.abs(rep.profile[:, 2] - expected) / rep.se[:, 2]
    assert np.all(z <= 3), z


def test_snapshots_at_time_zero_is_initial_state():
    p = Params(S=2, W=9, rho=0.5)
    c = init_product(p, 3)
    snaps = kmc.snapshots(c, p, [0.0, 0.0, 1.0], seed=1)
    from couette.lattice import layer_histogram
    assert np.array_equal(snaps[0], layer_histogram(c))
    assert np.array_equal(snaps[1], layer_histogram(c))
    with pytest.raises(ParameterError):
        kmc.snapshots(c, p, [2.0, 1.0], seed=1)


def test_sim_report_json_schema():
    p = Params(S=1, W=8, eps=0.1)
    rep = kmc.run_replicas(p, 2, 10, replicas=2, seed=5)
    d = json.loads(json.dumps(rep.to_dict()))
    for key in ("params", "t_burn", "t_measure", "events", "profile", "seed"):
        assert key in d
    assert set(d["events"]) == set(kmc.EVENT_NAMES.values())
    assert [row["k"] for row in d["profile"]] == [0, 1, 2]
    assert set(d["profile"][0]) == {"k", "p_hole", "p_zero", "p_v", "se_hole", "se_zero", "se_v"}
    assert d["params"]["lambda"] == 1.0


def test_replicas_are_reproducible_across_worker_counts():
    p = Params(S=2, W=16, eps=0.1)
    a = kmc.run_replicas(p, 5, 20, replicas=3, seed=7, workers=1)
    b = kmc.run_replicas(p, 5, 20, replicas=3, seed=7, workers=3)
    assert a.to_dict() == b.to_dict()
    with pytest.raises(ParameterError):
        kmc.run_replicas(p, 5, 20, replicas=0, seed=7)


def _two_sample_z(a: kmc.SimReport, b: kmc.SimReport) -> np.ndarray:
    return np.abs(a.profile - b.profile) / np.sqrt(a.se**2 + b.se**2 + 1e-300)


def test_noop_elision_gives_same_marginals():
    p = Params(S=4, W=64, eps=0.05, rho=0.6)
    a = kmc.run_replicas(p, 100, 1000, replicas=4, seed=11)
    b = kmc.run_replicas(p, 100, 1000, replicas=4, seed=11, include_noop=True)
    assert b.events["identity_swap"] > 0
    assert np.all(_two_sample_z(a, b)[:, 1:] <= 3)


def test_stationary_estimate_independent_of_initial_split():
    p = Params(S=4, W=64, eps=0.05, rho=0.6)
    a = kmc.run_replicas(p, 200, 1000, replicas=4, seed=12, split=0.5)
    b = kmc.run_replicas(p, 200, 1000, replicas=4, seed=12, split=1.0)
    assert np.all(_two_sample_z(a, b)[:, 1:] <= 3)


# --- exact two-dimensional chain on a 2x2 torus strip (S=0, W=2) ---

def _strip_generator(p: Params):
    """Dense generator of the full strip process, enumerated from the rules."""
    L, W = p.n_layers, p.W
    states = list(itertools.product(range(3), repeat=L * W))
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        g = np.array(s).reshape(L, W)

        def to(new, rate):
            j = index[tuple(new.ravel())]
            if j != i:
                Q[i, j] += rate

        for k in range(L):
            for x in range(W):
                if k < L - 1:
                    n = g.copy()
                    n[k, x], n[k + 1, x] = g[k + 1, x], g[k, x]
                    to(n, p.lam)
                if g[k, x] == V and g[k, (x + 1) % W] == H and W > 1:
                    n = g.copy()
                    n[k, x], n[k, (x + 1) % W] = H, V
                    to(n, p.lam1)
                if g[k, x] != H:
                    n = g.copy()
                    n[k, x] = 3 - g[k, x]
                    to(n, p.eps)
        for x in range(W):
            if g[0, x] == V:
                n = g.copy()
                n[0, x] = Z
                to(n, p.beta)
            if g[L - 1, x] == Z:
                n = g.copy()
                n[L - 1, x] = V
                to(n, p.beta)
    Q -= np.diag(Q.sum(axis=1))
    return states, Q


def test_ensemble_snapshots_match_exact_strip_chain():
    p = Params(S=0, W=2, lam=1.0, lam1=2.0, beta=0.8, eps=0.5, rho=0.6)
    states, Q = _strip_generator(p)
    arr = np.array(states).reshape(len(states), p.n_layers, p.W)
    site = np.array([1 - p.rho, p.rho / 2, p.rho / 2])
    pi0 = np.prod(site[arr.reshape(len(states), -1)], axis=1)
    times = [0.5, 2.0]
    mean, se = kmc.ensemble_snapshots(p, times, replicas=4000, seed=3)
    for ti, t in enumerate(times):
        pi = pi0 @ scipy.linalg.expm(Q * t)
        exact = np.array([[pi[(arr[:, k, 0] == e)].sum() for e in range(3)] for k in range(p.n_layers)])
        z = np.abs(mean[ti] - exact) / se[ti]
        assert np.all(z <= 3.5), z  # 6 cells x 2 times


def test_lambda1_does_not_change_layer_marginals_exact():
    # exact statement behind the lambda1-invariance property
    base = dict(S=0, W=2, lam=1.0, beta=0.8, eps=0.5, rho=0.6)
    out = []
    for lam1 in (0.0, 1.0, 5.0):
        p = Params(lam1=lam1, **base)
        states, Q = _strip_generator(p)
        arr = np.array(states).reshape(len(states), p.n_layers, p.W)
        site = np.array([1 - p.rho, p.rho / 2, p.rho / 2])
        pi0 = np.prod(site[arr.reshape(len(states), -1)], axis=1)
        pi = pi0 @ scipy.linalg.expm(Q * 3.0)
        out.append([pi[arr[:, k, 0] == V].sum() for k in range(2)])
    assert np.allclose(out, out[0], atol=1e-12)


@pytest.mark.slow
def test_ensemble_snapshots_match_moment_equations():
    p = Params(S=4, W=128, lam=1.0, lam1=1.0, beta=1.0, eps=0.2, rho=0.5)
    times = [1.0, 5.0, 20.0]
    mean, se = kmc.ensemble_snapshots(p, times, replicas=1000, seed=21)
    traj = moments.integrate(moments.product_profile(p), p, 20.0, dt=0.01, sample_times=times)
    by_t = {prof.t: prof for prof in traj}
    for ti, t in enumerate(times):
        prof = by_t[t]
        z = np.abs(mean[ti, :, 2] - prof.p_v) / se[ti, :, 2]
        assert np.all(z <= 3), (t, z)
