import numpy as np
import pytest

from conftest import random_distribution
from ratiodiff.errors import DomainError, NumericError
from ratiodiff.rates import uniform_rate
from ratiodiff.schedules import NoiseSchedule
from ratiodiff.spaces import StateSpace
from ratiodiff.tabular import (
    TabularDistribution,
    distribution_from_weights,
    exact_marginal,
    full_generator,
    full_transition_matrix,
    point_mass,
    reverse_rate,
    reverse_rate_table,
    reverse_transition_exact,
    uniform_distribution,
)


def setup_chain(dims=2, vocab=3, seed=0):
    space = StateSpace(dims=dims, vocab=vocab)
    rng = np.random.default_rng(seed)
    pi0 = random_distribution(space, rng)
    sched = NoiseSchedule(kind="constant", base_rate=1.0)
    rate = uniform_rate(vocab)
    return space, pi0, sched, rate


def test_distribution_validation():
    space = StateSpace(dims=2, vocab=2)
    with pytest.raises(DomainError):
        TabularDistribution(space=space, probs=np.array([0.5, 0.5, 0.5, -0.5]))
    with pytest.raises(DomainError):
        TabularDistribution(space=space, probs=np.array([0.5, 0.5, 0.5, 0.5]))


def test_exact_marginal_identity_at_zero():
    _, pi0, sched, rate = setup_chain()
    q0 = exact_marginal(pi0, 0.0, sched, rate)
    assert np.allclose(q0.probs, pi0.probs, atol=1e-15)


def test_exact_marginal_reaches_uniform():
    space, pi0, sched, rate = setup_chain()
    sched_long = NoiseSchedule(kind="constant", base_rate=30.0)
    q = exact_marginal(pi0, 1.0, sched_long, rate)
    assert np.max(np.abs(q.probs - 1.0 / space.n_states)) < 1e-6


def test_exact_marginal_matches_full_matrix():
    # independent route: dense Kronecker-power kernel times the flat vector
    _, pi0, sched, rate = setup_chain(dims=3, vocab=2, seed=4)
    t = 0.6
    q_fast = exact_marginal(pi0, t, sched, rate)
    full = full_transition_matrix(rate, sched.cumulative(0, t), 3)
    q_ref = pi0.probs @ full
    assert np.max(np.abs(q_fast.probs - q_ref)) < 1e-12


def test_kolmogorov_forward_residual():
    # d/dt q_t == q_t Q_t with the Kronecker-sum generator
    space, pi0, sched, rate = setup_chain(dims=2, vocab=3, seed=1)
    gen = full_generator(space, rate)
    t, h = 0.5, 1e-4
    q_plus = exact_marginal(pi0, t + h, sched, rate).probs
    q_minus = exact_marginal(pi0, t - h, sched, rate).probs
    q_t = exact_marginal(pi0, t, sched, rate).probs
    lhs = (q_plus - q_minus) / (2 * h)
    rhs = q_t @ (gen * sched.beta(t))
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_reverse_rate_hand_case():
    # one dimension, two values, q = (0.8, 0.2): rate from value 0 to 1 is 0.25
    space = StateSpace(dims=1, vocab=2)
    q = TabularDistribution(space=space, probs=np.array([0.8, 0.2]))
    sched = NoiseSchedule(kind="constant", base_rate=1.0)
    rate = uniform_rate(2)
    r = reverse_rate(q, rate, sched, 0.5, np.array([0]), np.array([1]))
    assert r == pytest.approx(0.25, abs=1e-12)


def test_reverse_rate_uniform_symmetry():
    space, _, sched, rate = setup_chain(dims=2, vocab=3)
    q = uniform_distribution(space)
    x = np.array([0, 1])
    for d in range(2):
        for c in range(3):
            if c == x[d]:
                continue
            y = x.copy()
            y[d] = c
            assert reverse_rate(q, rate, sched, 0.3, x, y) == pytest.approx(
                sched.beta(0.3), abs=1e-12
            )


def test_reverse_rate_multi_dim_difference_is_zero():
    space, pi0, sched, rate = setup_chain()
    q = exact_marginal(pi0, 0.4, sched, rate)
    assert reverse_rate(q, rate, sched, 0.4, np.array([0, 0]), np.array([1, 1])) == 0.0


def test_reverse_rate_singular_state():
    space = StateSpace(dims=1, vocab=2)
    q = TabularDistribution(space=space, probs=np.array([1.0, 0.0]))
    sched = NoiseSchedule()
    rate = uniform_rate(2)
    with pytest.raises(NumericError):
        reverse_rate(q, rate, sched, 0.1, np.array([1]), np.array([0]))


def test_reverse_flow_balance():
    # total reverse flow out of x equals total forward flow into x
    space, pi0, sched, rate = setup_chain(dims=2, vocab=3, seed=7)
    t = 0.35
    q = exact_marginal(pi0, t, sched, rate)
    states = space.enumerate_states()
    beta = sched.beta(t)
    for i in range(space.n_states):
        x = states[i]
        out_flow = 0.0
        in_flow = 0.0
        for d in range(space.dims):
            for c in range(space.vocab):
                if c == x[d]:
                    continue
                y = x.copy()
                y[d] = c
                out_flow += q.probs[i] * reverse_rate(q, rate, sched, t, x, y)
                in_flow += q.prob_of(y) * beta * rate.matrix[y[d], x[d]]
        assert out_flow == pytest.approx(in_flow, rel=1e-10)


def test_reverse_rate_table_matches_scalar_op():
    space, pi0, sched, rate = setup_chain(dims=2, vocab=3, seed=9)
    t = 0.25
    q = exact_marginal(pi0, t, sched, rate)
    table = reverse_rate_table(q, rate, sched, t)
    states = space.enumerate_states()
    rng = np.random.default_rng(0)
    for _ in range(40):
        i = int(rng.integers(space.n_states))
        d = int(rng.integers(space.dims))
        c = int(rng.integers(space.vocab))
        x = states[i]
        if c == x[d]:
            assert table[i, d, c] == 0.0
            continue
        y = x.copy()
        y[d] = c
        assert table[i, d, c] == pytest.approx(
            reverse_rate(q, rate, sched, t, x, y), rel=1e-12
        )


def test_reverse_transition_rows_are_distributions():
    _, pi0, sched, rate = setup_chain(dims=2, vocab=3, seed=3)
    table = reverse_transition_exact(pi0, 0.2, 0.7, sched, rate)
    sums = table.matrix[table.reachable].sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-9


def test_reverse_transition_chapman_kolmogorov():
    # composing the reverse kernel with q_t must reproduce q_s
    _, pi0, sched, rate = setup_chain(dims=2, vocab=3, seed=5)
    s, t = 0.25, 0.8
    q_s = exact_marginal(pi0, s, sched, rate)
    q_t = exact_marginal(pi0, t, sched, rate)
    table = reverse_transition_exact(pi0, s, t, sched, rate)
    recovered = q_t.probs @ table.matrix
    assert np.max(np.abs(recovered - q_s.probs)) < 1e-10


def test_reverse_transition_identity_at_equal_times():
    _, pi0, sched, rate = setup_chain(dims=2, vocab=2, seed=6)
    table = reverse_transition_exact(pi0, 0.4, 0.4, sched, rate)
    assert np.max(np.abs(table.matrix - np.eye(4))) < 1e-9


def test_reverse_transition_single_dim_bayes():
    # hand Bayes computation on a 2-state chain
    space = StateSpace(dims=1, vocab=2)
    pi0 = TabularDistribution(space=space, probs=np.array([0.9, 0.1]))
    sched = NoiseSchedule(kind="constant", base_rate=1.0)
    rate = uniform_rate(2)
    s, t = 0.0, 0.5
    from ratiodiff.rates import kernel_matrix

    k = kernel_matrix(rate, sched.cumulative(s, t))
    q_t = pi0.probs @ k
    table = reverse_transition_exact(pi0, s, t, sched, rate)
    for y in range(2):
        for x in range(2):
            bayes = pi0.probs[x] * k[x, y] / q_t[y]
            assert table.matrix[y, x] == pytest.approx(bayes, abs=1e-12)


def test_unreachable_rows_marked():
    space = StateSpace(dims=1, vocab=3)
    pi0 = point_mass(space, np.array([1]))
    sched = NoiseSchedule(kind="constant", base_rate=1.0)
    rate = uniform_rate(3)
    table = reverse_transition_exact(pi0, 0.0, 0.0, sched, rate)
    assert table.reachable.tolist() == [False, True, False]
    with pytest.raises(NumericError):
        table.row(0)


def test_binary_serialization_roundtrip(tmp_path):
    space = StateSpace(dims=3, vocab=3, ordinal=True)
    rng = np.random.default_rng(8)
    dist = random_distribution(space, rng)
    path = tmp_path / "dist.rdtb"
    dist.save_binary(path)
    back = TabularDistribution.load_binary(path)
    assert back.space == space
    assert np.array_equal(back.probs, dist.probs)


def test_binary_corruption_detected(tmp_path):
    space = StateSpace(dims=2, vocab=2)
    dist = uniform_distribution(space)
    path = tmp_path / "dist.rdtb"
    dist.save_binary(path)
    raw = bytearray(path.read_bytes())
    raw[-40] ^= 0xFF  # flip a payload byte
    path.write_bytes(bytes(raw))
    with pytest.raises(NumericError):
        TabularDistribution.load_binary(path)


def test_json_serialization_roundtrip(tmp_path):
    space = StateSpace(dims=2, vocab=4)
    rng = np.random.default_rng(10)
    dist = random_distribution(space, rng)
    path = tmp_path / "dist.json"
    dist.save_json(path)
    back = TabularDistribution.load_json(path)
    assert back.space == space
    assert np.allclose(back.probs, dist.probs, atol=1e-15)


def test_sampling_matches_probs():
    space = StateSpace(dims=2, vocab=2)
    dist = distribution_from_weights(space, np.array([4.0, 1.0, 2.0, 3.0]))
    rng = np.random.default_rng(11)
    draws = dist.sample(200_000, rng)
    idx = space.state_to_index(draws)
    freq = np.bincount(idx, minlength=4) / 200_000
    assert np.max(np.abs(freq - dist.probs)) < 0.005
