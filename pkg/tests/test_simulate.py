import numpy as np
import pytest
from scipy import stats

from casft.data import cascade_to_json
from casft.simulate import expected_event_count, interevent_gaps, simulate_hawkes_cascades


def test_poisson_when_unexcited():
    cs = simulate_hawkes_cascades(20, mu=1.0, alpha=0.0, delta=1.0, horizon=520.0, n_users=20000, seed=11)
    gaps = interevent_gaps(cs)
    assert len(gaps) >= 10_000
    assert stats.kstest(gaps, "expon", args=(0, 1.0)).pvalue > 0.01


def test_seeded_runs_are_byte_identical():
    a = [cascade_to_json(c) for c in simulate_hawkes_cascades(30, mu=(0.2, 1), alpha=(0.1, 0.8), seed=5)]
    b = [cascade_to_json(c) for c in simulate_hawkes_cascades(30, mu=(0.2, 1), alpha=(0.1, 0.8), seed=5)]
    assert a == b


def test_mean_count_matches_branching_expectation():
    cs = simulate_hawkes_cascades(1000, mu=0.5, alpha=0.8, delta=1.0, horizon=100.0, seed=0)
    mean = np.mean([len(c.events) - 1 for c in cs])
    expected = expected_event_count(0.5, 0.8, 1.0, 100.0)
    assert expected == pytest.approx(244.0, abs=1.0)
    assert abs(mean - expected) / expected < 0.05


def test_supercritical_rejected():
    with pytest.raises(ValueError, match="supercritical"):
        simulate_hawkes_cascades(1, alpha=1.0)
    with pytest.raises(ValueError, match="supercritical"):
        simulate_hawkes_cascades(1, alpha=(0.5, 1.2))


def test_cascades_are_trees():
    for c in simulate_hawkes_cascades(10, mu=0.5, alpha=0.6, horizon=30, seed=2):
        seen = {c.root_user}
        for e in c.events[1:]:
            assert e.source_user in seen and e.target_user not in seen
            seen.add(e.target_user)
        assert np.all(np.diff(c.times) >= 0) and c.times[0] == 0


def test_decaying_background_thins_late_events():
    flat = simulate_hawkes_cascades(200, mu=1.0, alpha=0.0, horizon=40, seed=3)
    decayed = simulate_hawkes_cascades(200, mu=1.0, alpha=0.0, horizon=40, mu_decay=0.1, seed=3)
    late = lambda cs: np.mean([np.sum(c.times > 20) for c in cs])
    # integral of exp(-0.1 t) over (20, 40] is 10 (e^-2 - e^-4) ~= 1.17
    assert late(flat) == pytest.approx(20, rel=0.1)
    assert late(decayed) == pytest.approx(10 * (np.exp(-2) - np.exp(-4)), rel=0.15)
