import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from monitored_ising import oracle
from monitored_ising.choi_tns import (
    choi_entanglement_arc,
    choi_entropies,
    evolve_choi,
    halved_prefactor,
    nishimori_theta,
    noisy_log_weight,
    renyi2_coherent_information,
    renyi_from_weights,
    sample_noisy_ensemble,
    single_layer_entropies,
)
from monitored_ising.gaussian import entanglement_entropy, run_circuit
from monitored_ising.lattice import Trajectory, all_plus, build_spec, vertex_gauge

# theta = pi/4, 3 x 2 open chain at p_s = 0.2 with one flipped ZZ sign; dense oracle value
FROZEN_IC2 = -0.2838624783485023


def random_record(seed, L=4, Ly=3):
    rng = np.random.default_rng(seed)
    return Trajectory(L, Ly, "open", np.where(rng.random((L - 1, Ly)) < 0.3, -1, 1),
                      np.where(rng.random((L, Ly)) < 0.3, -1, 1))


def test_frozen_renyi2_coherent_information():
    spec = build_spec(0.25 * math.pi, 3, 2, "open", p_s=0.2)
    t = all_plus(spec)
    t.s_signs[0, 1] = -1
    assert oracle.renyi2_coherent_information_dense(spec, t) == pytest.approx(FROZEN_IC2, abs=1e-12)
    assert renyi2_coherent_information(spec, t, 64) == pytest.approx(FROZEN_IC2, abs=1e-8)


@pytest.mark.parametrize("theta, p_s, expected", [
    (0.5 * math.pi, 0.0, math.log(2)),  # noiseless ordered limit
    (0.5 * math.pi, 0.5, 0.0),  # logical qubit fully dephased
    (0.0, 0.0, 0.0),
])
def test_renyi2_coherent_information_limits(theta, p_s, expected):
    spec = build_spec(theta, 4, 3, "open", p_s=p_s)
    assert renyi2_coherent_information(spec, all_plus(spec)) == pytest.approx(expected, abs=1e-10)


@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.45))
def test_noiseless_choi_entropies_double_the_pure_state(seed, x):
    spec = build_spec(x * math.pi, 4, 3, "open")
    t = random_record(seed)
    try:
        state = run_circuit(spec, t).state
    except FloatingPointError:
        return
    ref = [2 * entanglement_entropy(state, (0, l)) for l in range(1, 4)]
    exact = choi_entropies(evolve_choi(spec, t, 256, cutoff=0.0))
    assert np.allclose(exact, ref, atol=1e-8)
    # the default singular-value threshold is amplified by the strong X gates
    # of small angles on improbable records, but stays far below sampling noise
    assert np.allclose(choi_entropies(evolve_choi(spec, t, 256)), ref, atol=1e-5)


@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.45))
def test_maximal_noise_isometry(seed, x):
    spec = build_spec(x * math.pi, 4, 3, "open", p_s=0.5)
    t = random_record(seed)
    mps = evolve_choi(spec, t, 256, cutoff=0.0)
    for n in (1, 2):
        assert np.allclose(choi_entropies(mps, n), single_layer_entropies(spec, t, n), atol=1e-8)


@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.5))
def test_weight_matches_dense_trace(seed, p):
    spec = build_spec(0.3 * math.pi, 3, 2, "open", p_s=p)
    t = random_record(seed, 3, 2)
    rho, div = oracle.dense_doubled_space(spec, t)
    assert noisy_log_weight(spec, t, chi_max=64) == pytest.approx(math.log(np.trace(rho)) - div, abs=1e-8)


def test_truncation_error_accumulates_monotonically():
    spec = build_spec(0.25 * math.pi, 8, 8, "open", p_s=0.2)
    t = random_record(3, 8, 8)
    mps = None
    errors = []
    with pytest.warns(Warning):
        for y in range(spec.L_y):
            mps = evolve_choi(spec, t, chi_max=4, start=mps, columns=[y], budget=math.inf) if mps else \
                evolve_choi(spec, t, chi_max=4, columns=[y], budget=math.inf)
            errors.append(mps.truncation_error)
        evolve_choi(spec, t, chi_max=4, budget=1e-12)
    assert all(b >= a for a, b in zip(errors, errors[1:]))
    assert mps.saturated


def test_doubling_chi_is_converged_at_small_size():
    spec = build_spec(0.25 * math.pi, 6, 6, "open", p_s=0.3)
    t = random_record(5, 6, 6)
    a = choi_entropies(evolve_choi(spec, t, 32, budget=math.inf))
    b = choi_entropies(evolve_choi(spec, t, 64, budget=math.inf))
    assert np.abs(a - b).max() < 0.01 * np.abs(b).max()


def test_open_canonical_records_only():
    with pytest.raises(ValueError):
        evolve_choi(build_spec(0.3, 4, 3, "periodic"), all_plus(build_spec(0.3, 4, 3, "periodic")))
    spec = build_spec(0.3, 4, 3, "open")
    with pytest.raises(ValueError):
        evolve_choi(spec, vertex_gauge(all_plus(spec), 1, 1))


def test_renyi_from_weights():
    w = np.array([0.5, 0.5])
    assert renyi_from_weights(w, 1) == pytest.approx(math.log(2))
    assert renyi_from_weights(w, 2) == pytest.approx(math.log(2))
    assert renyi_from_weights(np.array([0.9, 0.1]), math.inf) == pytest.approx(-math.log(0.9))


def test_nishimori_angle():
    assert nishimori_theta() / math.pi == pytest.approx(0.2856, abs=1e-4)


def test_noisy_chain_at_zero_noise_samples_the_born_law():
    spec = build_spec(0.3 * math.pi, 2, 2, "open")
    s_all, t_all, probs = oracle.enumerate_records(spec)
    law = {s.astype(np.int8).tobytes() + t.astype(np.int8).tobytes(): p for s, t, p in zip(s_all, t_all, probs)}
    recs, weights, acc = sample_noisy_ensemble(spec, np.random.default_rng(4), 1500)
    counts = Counter(r.s_signs.tobytes() + r.t_signs.tobytes() for r in recs)
    tv = 0.5 * sum(abs(counts[k] / len(recs) - p) for k, p in law.items())
    assert 0 < acc < 1 and tv < 0.08
    for r, w in zip(recs[:5], weights[:5]):
        assert w == pytest.approx(math.log(law[r.s_signs.tobytes() + r.t_signs.tobytes()]), abs=1e-8)


def test_choi_arc_and_halving():
    spec = build_spec(0.3 * math.pi, 6, 6, "open", p_s=0.5)
    recs = [random_record(k, 6, 6) for k in range(3)]
    arc = choi_entanglement_arc(spec, recs, chi_max=64, n_orders=(1, 2))
    assert arc.samples == 3 and arc.mean.shape == (2, 5) and not arc.meta["saturated"]

    class Fit:
        estimate, stderr = 0.8, 0.02

    assert halved_prefactor(Fit) == (0.4, 0.01)
