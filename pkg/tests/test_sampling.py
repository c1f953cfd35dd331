import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from monitored_ising import oracle
from monitored_ising.lattice import Trajectory, build_spec, vortices_of
from monitored_ising.sampling import (
    GaussianChain,
    SamplerConfig,
    allowed_moves,
    bond_flip_probability,
    deformation_log_weight,
    expected_densities,
    metropolis_sweep,
    sample_ensemble,
    sample_marginal_m,
    sample_sequential,
    shannon_entropy,
    stream,
    vortex_density,
)


def record_key(t):
    return t.s_signs.tobytes() + t.t_signs.tobytes()


def enumerated_law(spec):
    s_all, t_all, probs = oracle.enumerate_records(spec)
    return {s.astype(np.int8).tobytes() + t.astype(np.int8).tobytes(): p for s, t, p in zip(s_all, t_all, probs)}


def all_records(spec):
    s_all, t_all, probs = oracle.enumerate_records(spec)
    return [Trajectory(spec.L_x, spec.L_y, spec.bc, s, t) for s, t in zip(s_all, t_all)], probs


def test_sequential_sampler_matches_enumeration():
    spec = build_spec(0.3 * math.pi, 3, 2, "open")
    law = enumerated_law(spec)
    rng = np.random.default_rng(11)
    n = 20000
    counts = Counter(record_key(sample_sequential(spec, rng).trajectory) for _ in range(n))
    keys = sorted(law, key=law.get)
    # pool the rarest records so every bin expects at least five draws
    obs, exp, acc_o, acc_e = [], [], 0, 0.0
    for k in keys:
        acc_o += counts.get(k, 0)
        acc_e += law[k] * n
        if acc_e >= 5:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o, acc_e = 0, 0.0
    exp[-1] += acc_e
    obs[-1] += acc_o
    assert sum(counts.values()) == n and set(counts) <= set(law)
    assert chisquare(obs, np.array(exp) * n / sum(exp)).pvalue > 0.01


def test_sampled_log_probability_is_exact(rng):
    spec = build_spec(0.22 * math.pi, 3, 2, "open")
    law = enumerated_law(spec)
    for _ in range(20):
        smp = sample_sequential(spec, rng)
        assert smp.log_born_prob == pytest.approx(math.log(law[record_key(smp.trajectory)]), abs=1e-10)


def test_sector_conditioning():
    spec = build_spec(0.25 * math.pi, 4, 6, "periodic")
    ens = sample_ensemble(spec, SamplerConfig(n_samples=20, seed=3, sector=-1), keep_states=False)
    assert all(s.trajectory.sector_W == -1 for s in ens)


def test_marginal_m_sampler_agrees_with_sequential_sampler():
    spec = build_spec(0.3 * math.pi, 3, 3, "open")
    n = 100_000
    rng = np.random.default_rng(5)
    seq = Counter(vortices_of(sample_sequential(spec, rng).trajectory).m.tobytes() for _ in range(n))
    iid = Counter(vortices_of(sample_marginal_m(spec, rng)).m.tobytes() for _ in range(n))
    tv = 0.5 * sum(abs(seq[k] - iid[k]) for k in set(seq) | set(iid)) / n
    assert tv < 0.02


def test_bond_flip_probability():
    assert bond_flip_probability(0.0) == 0.5
    assert bond_flip_probability(math.inf) == 0.0
    b = 0.7
    assert bond_flip_probability(b) == pytest.approx(math.exp(-b) / (2 * math.cosh(b)))


def transition_matrix(spec, records, log_target):
    """Exact single-flip Metropolis kernel built from the chain's own proposals."""
    index = {record_key(t): i for i, t in enumerate(records)}
    kinds = allowed_moves(spec)
    sizes = {"s": spec.n_bonds * spec.L_y, "t": spec.L_x * spec.L_y}
    total = sum(sizes[k] for k in kinds)
    T = np.zeros((len(records), len(records)))
    for i, t in enumerate(records):
        chain = GaussianChain(spec, t)
        here = chain.log_prob + log_target(t)
        for kind in kinds:
            for r in range(sizes[kind]):
                j, y = divmod(r, spec.L_y)
                prop = chain.try_flip(kind, j, y)
                if prop is None:
                    continue
                there = float(prop[2].sum()) + log_target(prop[0])
                k = index[record_key(prop[0])]
                T[i, k] += min(1.0, math.exp(there - here)) / total
        T[i, i] += 1.0 - T[i].sum()
    return T


@pytest.mark.parametrize("p_eta", [0.0, 0.2])
def test_detailed_balance_on_two_by_two(p_eta):
    spec = build_spec(0.3 * math.pi, 2, 2, "open", p_eta=p_eta)
    base = build_spec(0.3 * math.pi, 2, 2, "open")
    records, probs = all_records(base)
    extra = lambda t: deformation_log_weight(spec, t)
    pi = probs * np.exp([extra(t) for t in records])
    pi /= pi.sum()
    T = transition_matrix(spec, records, extra)
    flow = pi[:, None] * T
    assert np.abs(flow - flow.T).max() < 1e-12
    assert np.abs(pi @ T - pi).max() < 1e-12


def test_metropolis_chain_reaches_the_born_law():
    spec = build_spec(0.3 * math.pi, 2, 2, "open")
    records, probs = all_records(spec)
    law = {record_key(t): p for t, p in zip(records, probs)}
    rng = np.random.default_rng(9)
    chain = GaussianChain(spec, records[int(np.argmax(probs))])
    counts = Counter()
    for _ in range(3000):
        metropolis_sweep(chain, rng, ("s", "t"))
        counts[record_key(chain.traj)] += 1
    tv = 0.5 * sum(abs(counts[k] / 3000 - p) for k, p in law.items())
    assert tv < 0.06


def test_same_seed_same_stream():
    spec = build_spec(0.27 * math.pi, 4, 4, "periodic")
    a = sample_ensemble(spec, SamplerConfig(n_samples=5, seed=42), keep_states=False)
    b = sample_ensemble(spec, SamplerConfig(n_samples=3, seed=42), keep_states=False)
    for x, y in zip(a, b):
        assert record_key(x.trajectory) == record_key(y.trajectory)
    c = sample_ensemble(spec, SamplerConfig(n_samples=3, seed=43), keep_states=False)
    assert any(record_key(x.trajectory) != record_key(y.trajectory) for x, y in zip(a, c))
    assert stream(1, 2).random() == stream(1, 2).random()


def test_thinned_chains_are_reproducible_and_labelled():
    spec = build_spec(0.3 * math.pi, 4, 4, "open", p_eta=0.3)
    cfg = SamplerConfig(mode="metropolis_reweighted", n_samples=6, burn_in_sweeps=2, thin=1, n_chains=3, seed=1)
    a = sample_ensemble(spec, cfg, keep_states=False)
    b = sample_ensemble(spec, cfg, keep_states=False)
    assert [s.extras["chain"] for s in a] == [0, 0, 1, 1, 2, 2]
    assert [record_key(s.trajectory) for s in a] == [record_key(s.trajectory) for s in b]


@pytest.mark.parametrize("kwargs", [
    dict(mode="gibbs"),
    dict(n_samples=0),
    dict(thin=-1),
    dict(n_chains=0),
    dict(thin=2),  # thinning needs a Metropolis mode
    dict(sector=2),
])
def test_sampler_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_infinite_e_mass_moves_only_s_signs():
    assert allowed_moves(build_spec(0.36 * math.pi, 4, 4, "open", p_eta=0.5)) == ["s"]
    assert allowed_moves(build_spec(0.36 * math.pi, 4, 4, "open", p_gamma=0.5)) == []
    spec = build_spec(0.36 * math.pi, 4, 4, "open", p_eta=0.5)
    ens = sample_ensemble(spec, SamplerConfig(mode="metropolis_reweighted", n_samples=3, n_sweeps=2,
                                              burn_in_sweeps=1), keep_states=False)
    assert all(vortices_of(s.trajectory).n_e == 0 for s in ens)


def test_vortex_densities_near_closed_form():
    th = 0.3 * math.pi
    spec = build_spec(th, 8, 8, "periodic")
    ens = sample_ensemble(spec, SamplerConfig(n_samples=150, seed=2), keep_states=False)
    vd = vortex_density(ens)
    e, m = expected_densities(th)
    assert abs(vd.e - e) < 4 * vd.e_err + 1e-3
    assert abs(vd.m - m) < 4 * vd.m_err + 1e-3


@given(st.floats(0.0, 0.5 * math.pi))
def test_closed_form_densities_are_dual(theta):
    e, m = expected_densities(theta)
    e2, m2 = expected_densities(0.5 * math.pi - theta)
    assert e == pytest.approx(m2, abs=1e-12) and m == pytest.approx(e2, abs=1e-12)


def test_shannon_entropy_counts_coins_at_theta_zero():
    spec = build_spec(0.0, 4, 6, "periodic")
    ens = sample_ensemble(spec, SamplerConfig(n_samples=4, seed=0), keep_states=False)
    est = shannon_entropy(ens, margin=1)
    assert est.total == pytest.approx(spec.n_bonds * spec.L_y * math.log(2), abs=1e-9)
    assert est.density == pytest.approx(math.log(2), abs=1e-9)
