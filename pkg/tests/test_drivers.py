import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdsde.drivers import (SEED_ENV, TimeGrid, brownian_state, cumulative_m, resolve_seed, reverse_view,
                           simulate_drivers)
from bdsde.markspace import DiscreteMeasureSpace

from conftest import empty_spaces, suite_spaces


def spaces_with(**roles):
    sp = empty_spaces()
    sp.update(roles)
    return sp


def test_grid_invariants():
    g = TimeGrid.uniform(2.0, 8)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert np.all(g.steps > 0)
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 1.0]))


def test_reversal_map_is_involution():
    r = TimeGrid.uniform(1.0, 7).reversal_map()
    np.testing.assert_array_equal(r[r], np.arange(7))


def test_same_seed_bit_identical():
    a = simulate_drivers(TimeGrid.uniform(1.0, 6), suite_spaces(), 50, seed=9, scenario_size=5)
    b = simulate_drivers(TimeGrid.uniform(1.0, 6), suite_spaces(), 50, seed=9, scenario_size=5)
    for name in ("brownian", "white_noise", "jumps_n0", "jumps_n1", "jumps_m"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_thread_count_does_not_matter():
    g = TimeGrid.uniform(1.0, 6)
    a = simulate_drivers(g, suite_spaces(), 64, seed=2, scenario_size=4, workers=1)
    b = simulate_drivers(g, suite_spaces(), 64, seed=2, scenario_size=4, workers=4)
    assert np.array_equal(a.brownian, b.brownian)
    assert np.array_equal(a.white_noise, b.white_noise)
    assert np.array_equal(a.jumps_m, b.jumps_m)


def test_extending_paths_keeps_prefix():
    g = TimeGrid.uniform(1.0, 5)
    a = simulate_drivers(g, suite_spaces(), 30, seed=4)
    b = simulate_drivers(g, suite_spaces(), 45, seed=4)
    assert np.array_equal(a.brownian, b.brownian[:, :30])
    assert np.array_equal(a.white_noise, b.white_noise[:, :30])
    assert np.array_equal(a.jumps_n1, b.jumps_n1[:, :30])


def test_n1_count_mean():
    # mass 2.0, dt = 0.1: Poisson mean 0.2 per step
    u1 = DiscreteMeasureSpace.from_atoms([("u", 0.5, 2.0)])
    d = simulate_drivers(TimeGrid.uniform(1.0, 10), spaces_with(U1=u1), 20000, seed=1)
    counts = d.jumps_n1[..., 0]
    se = np.sqrt(0.2 / counts.size)
    assert abs(counts.mean() - 0.2) < 4 * se


def test_brownian_variance_band():
    d = simulate_drivers(TimeGrid.uniform(0.01, 1), empty_spaces(), 100_000, seed=3)
    var = d.brownian[0, :, 0].var()
    assert abs(var - 0.01) < 3 * np.sqrt(2 / 1e5) * 0.01


def test_white_noise_variance_per_atom():
    e = DiscreteMeasureSpace.from_atoms([("a", 0.3), ("b", 1.7)])
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), spaces_with(E=e), 20000, seed=5)
    v = d.white_noise.var(axis=1)[..., 0]
    np.testing.assert_allclose(v, np.broadcast_to(0.25 * np.array([0.3, 1.7]), v.shape), rtol=0.06)


def test_independence_audit():
    e = DiscreteMeasureSpace.from_atoms([("a", 1.0)])
    d = simulate_drivers(TimeGrid.uniform(1.0, 2), spaces_with(E=e), 10_000, seed=6)
    for k in range(2):
        c = np.corrcoef(d.brownian[k, :, 0], d.white_noise[k, :, 0, 0])[0, 1]
        assert abs(c) < 4 / np.sqrt(1e4)


def test_compensation_readiness():
    sp = suite_spaces()
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), sp, 10_000, seed=7)
    dt = 0.25
    for arr, space in ((d.jumps_n0, sp["U0"]), (d.jumps_n1, sp["U1"]), (d.jumps_m, sp["F"])):
        for a, w in enumerate(space.weights):
            centred = arr[..., a] - dt * w
            assert abs(centred.mean()) < 4 * np.sqrt(dt * w / centred.size)


def test_reverse_view_k4_slot_mapping():
    # reversed slot 0 carries the own-time increment of slot 3
    e = DiscreteMeasureSpace.from_atoms([("a", 1.0)])
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), spaces_with(E=e), 3, seed=8)
    rv = d.reversed_white_noise()
    for k in range(4):
        np.testing.assert_array_equal(rv[k], d.white_noise[3 - k])


def test_reverse_view_involution_and_sums():
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), suite_spaces(), 10, seed=8)
    r = reverse_view(d)
    assert r.orientation == "reversed"
    np.testing.assert_array_equal(r.reversed_white_noise(), d.reversed_white_noise())
    rr = reverse_view(r)
    np.testing.assert_array_equal(rr.white_noise, d.white_noise)
    np.testing.assert_allclose(r.white_noise.sum(axis=0), d.white_noise.sum(axis=0), rtol=0, atol=1e-14)


def test_mirrored_cell_lengths():
    # own-time slot j lives on a cell of length dt[K-1-j]
    g = TimeGrid(np.array([0.0, 0.1, 0.4, 1.0]))
    e = DiscreteMeasureSpace.from_atoms([("a", 1.0)])
    d = simulate_drivers(g, spaces_with(E=e), 40000, seed=10)
    v = d.reversed_white_noise()[..., 0, 0].var(axis=1)
    np.testing.assert_allclose(v, g.steps, rtol=0.05)


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "42")
    assert resolve_seed(None) == 42
    assert resolve_seed(3) == 3


def test_scenarios_share_backward_noise():
    d = simulate_drivers(TimeGrid.uniform(1.0, 3), suite_spaces(), 12, seed=1, scenario_size=4)
    wn = d.white_noise
    assert np.array_equal(wn[:, 0], wn[:, 3])
    assert not np.array_equal(wn[:, 0], wn[:, 4])
    assert not np.array_equal(d.brownian[:, 0], d.brownian[:, 1])


def test_enumeration_form_weights_and_values():
    sp = spaces_with(F=DiscreteMeasureSpace.from_atoms([("f", 1.0, 0.5)]))
    g = TimeGrid.uniform(1.0, 3)
    d = simulate_drivers(g, sp, 2, seed=0, form="enumeration")
    # 2 Brownian signs x 2 jump outcomes per step
    assert d.n_paths == 2 * 4 ** 3
    assert d.path_weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(d.brownian), np.sqrt(1 / 3), rtol=1e-15)
    assert set(np.unique(d.jumps_m)) <= {0, 1}
    mean_m = d.path_weights @ d.jumps_m[0, :, 0]
    assert mean_m == pytest.approx(0.5 / 3)


def test_csv_export(tmp_path):
    d = simulate_drivers(TimeGrid.uniform(1.0, 2), suite_spaces(), 3, seed=1)
    p = tmp_path / "d.csv"
    d.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("k,t,p,dB_0")
    assert len(lines) == 1 + 2 * 3


def test_state_helpers():
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), suite_spaces(), 5, seed=1)
    B = brownian_state(d)
    assert B.shape == (5, 5, 1) and np.all(B[0] == 0)
    np.testing.assert_allclose(B[-1], d.brownian.sum(axis=0))
    assert cumulative_m(d).shape == (5, 5, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=20), st.integers(0, 2**31 - 1))
def test_shapes_conform(K, P, seed):
    sp = suite_spaces()
    d = simulate_drivers(TimeGrid.uniform(1.0, K), sp, P, seed=seed)
    assert d.brownian.shape == (K, P, 1)
    assert d.white_noise.shape == (K, P, 1, 1)
    assert d.jumps_n0.shape == (K, P, 2) and d.jumps_m.shape == (K, P, 2)
    assert np.all(d.jumps_n0 >= 0) and d.jumps_n0.dtype.kind in "iu"


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=15))
def test_reversal_involution_property(K):
    r = TimeGrid.uniform(1.0, K).reversal_map()
    assert np.array_equal(r[r], np.arange(K))
    assert sorted(r.tolist()) == list(range(K))
