import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from monitored_ising import oracle
from monitored_ising.gaussian import (
    ImpossibleOutcome,
    WeakGate,
    apply_weak_gate,
    entanglement_entropy,
    global_parity,
    init_product_state,
    outcome_probability,
    pfaffian,
    region_modes,
    region_spectrum,
    run_circuit,
    zz_correlator,
)
from monitored_ising.lattice import Trajectory, all_plus, build_spec
from monitored_ising.sampling import sample_sequential

# Reference record: theta = 0.3 pi, 4 x 3 open chain, one flipped ZZ sign and
# one flipped X sign.  Values come from the dense state-vector oracle.
FROZEN_LOG_PROB = -12.509232386666925
FROZEN_HALF_CHAIN_ENTROPY = 0.3204632178176894


def frozen_record():
    spec = build_spec(0.3 * math.pi, 4, 3, "open")
    t = all_plus(spec)
    t.s_signs[1, 1] = -1
    t.t_signs[2, 0] = -1
    return spec, t


def sampled_state(seed, L=5, Ly=3, bc="periodic", theta=0.27 * math.pi):
    spec = build_spec(theta, L, Ly, bc)
    return spec, sample_sequential(spec, np.random.default_rng(seed))


def test_frozen_oracle_record():
    spec, t = frozen_record()
    psi, _, log_p = oracle.dense_trajectory(spec, t)
    assert log_p == pytest.approx(FROZEN_LOG_PROB, abs=1e-12)
    assert oracle.dense_entropy(psi, range(2)) == pytest.approx(FROZEN_HALF_CHAIN_ENTROPY, abs=1e-12)
    run = run_circuit(spec, t)
    assert run.log_prob == pytest.approx(FROZEN_LOG_PROB, abs=1e-10)
    assert entanglement_entropy(run.state, (0, 2)) == pytest.approx(FROZEN_HALF_CHAIN_ENTROPY, abs=1e-10)


def test_initial_states():
    plus = init_product_state(4)
    assert global_parity(plus) == pytest.approx(1.0)
    assert plus.purity_defect() < 1e-14
    up = init_product_state(4, "all_up_Z")
    assert not up.pure
    assert zz_correlator(up, 0, 3) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        init_product_state(1)


def test_flipped_site_has_odd_parity():
    g = init_product_state(3).covariance.copy()
    g[0, 1], g[1, 0] = -1.0, 1.0
    assert pfaffian(g) == pytest.approx(-1.0)


@given(st.integers(0, 2 ** 31), st.sampled_from([2, 4, 6, 8]))
def test_pfaffian_squared_is_determinant(seed, n):
    a = np.random.default_rng(seed).standard_normal((n, n))
    a = a - a.T
    assert pfaffian(a) ** 2 == pytest.approx(np.linalg.det(a), rel=1e-8, abs=1e-10)


def test_pfaffian_odd_dimension_is_zero():
    assert pfaffian(np.zeros((3, 3))) == 0.0


@given(st.integers(0, 2 ** 31), st.floats(0.0, 3.0))
def test_outcome_probabilities_sum_to_one(seed, kappa):
    _, smp = sampled_state(seed)
    for sign in (1,):
        gate = WeakGate.from_strength(1, 2, kappa, sign)
        p_plus, p_minus = outcome_probability(smp.state, gate)
        assert p_plus + p_minus == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= p_plus <= 1.0


def test_weak_gate_validation():
    with pytest.raises(ValueError):
        WeakGate(1, 1, 0.5, 0.8)
    g = WeakGate.from_strength(0, 1, math.inf)
    assert g.kappa == math.inf and g.log_weight == pytest.approx(math.log(0.5))


def test_projector_onto_impossible_outcome_raises():
    state = init_product_state(2)
    with pytest.raises(ImpossibleOutcome):
        apply_weak_gate(state, WeakGate.from_strength(0, 1, math.inf, sign=-1))


def test_record_probabilities_sum_to_one():
    for spec in (build_spec(0.3 * math.pi, 3, 2, "open"), build_spec(0.2 * math.pi, 2, 2, "periodic")):
        _, _, probs = oracle.enumerate_records(spec)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2 ** 31))
def test_entropy_of_block_equals_complement(seed):
    _, smp = sampled_state(seed, L=6, bc="open")
    for l in range(1, 6):
        left = entanglement_entropy(smp.state, (0, l))
        right = entanglement_entropy(smp.state, (l, 6 - l))
        assert left == pytest.approx(right, abs=1e-8)


@given(st.integers(0, 2 ** 31))
def test_renyi_entropies_decrease_with_order(seed):
    _, smp = sampled_state(seed, L=6)
    for l in range(1, 6):
        vals = [entanglement_entropy(smp.state, (0, l), n) for n in (1, 2, 3, 4, math.inf)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


@given(st.integers(0, 2 ** 31), st.sampled_from(["open", "periodic"]))
def test_sampled_states_are_pure(seed, bc):
    _, smp = sampled_state(seed, bc=bc)
    st_ = smp.state
    assert st_.purity_defect() < 1e-8
    nu = region_spectrum(st_.covariance, region_modes(st_.L, 0, st_.L))
    assert np.allclose(nu, 1.0, atol=1e-8)


@given(st.integers(0, 2 ** 31))
def test_parity_is_conserved_from_the_plus_state(seed):
    _, smp = sampled_state(seed, bc="open")
    assert global_parity(smp.state) == pytest.approx(1.0, abs=1e-8)


def test_random_record_matches_dense_oracle(rng):
    spec = build_spec(0.21 * math.pi, 4, 3, "periodic")
    t = Trajectory(4, 3, "periodic", np.where(rng.random((4, 3)) < 0.3, -1, 1),
                   np.where(rng.random((4, 3)) < 0.3, -1, 1))
    run = run_circuit(spec, t)
    psi, _, log_p = oracle.dense_trajectory(spec, t)
    assert run.log_prob == pytest.approx(log_p, abs=1e-8)
    assert global_parity(run.state) == pytest.approx(oracle.parity_expectation(psi), abs=1e-8)
    assert np.abs(run.state.covariance - oracle.covariance_of(psi)).max() < 1e-8


def test_projector_ends_leave_only_coin_flips():
    # theta = 0: X outcomes are certain and the ZZ gates are unbiased coins;
    # at theta = pi/2 every X outcome is a coin and only the first ZZ column is random
    spec = build_spec(0.0, 4, 3, "open")
    smp = sample_sequential(spec, np.random.default_rng(0))
    assert np.all(smp.trajectory.t_signs == 1)
    assert smp.log_born_prob == pytest.approx(-spec.n_bonds * spec.L_y * math.log(2), abs=1e-10)
    ghz = build_spec(math.pi / 2, 4, 3, "open")
    smp = sample_sequential(ghz, np.random.default_rng(0))
    assert smp.log_born_prob == pytest.approx(-(ghz.L_x * ghz.L_y + ghz.n_bonds) * math.log(2), abs=1e-10)
