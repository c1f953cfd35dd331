import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from monitored_ising.lattice import (
    SpecError,
    Trajectory,
    all_plus,
    build_spec,
    couplings,
    gauge_orbit_canonicalize,
    plaquette_gauge,
    random_gauge,
    sector_split,
    theta_from_beta,
    twisted,
    vertex_gauge,
    vortices_of,
)

angles = st.floats(min_value=0.01, max_value=0.49).map(lambda x: x * math.pi)


def random_record(rng, L, Ly, bc, flip=0.3):
    nb = L if bc == "periodic" else L - 1
    sgn = lambda shape: np.where(rng.random(shape) < flip, -1, 1)
    return Trajectory(L, Ly, bc, sgn((nb, Ly)), sgn((L, Ly)))


records = st.builds(
    lambda seed, L, Ly, bc: random_record(np.random.default_rng(seed), L, Ly, bc),
    st.integers(0, 2 ** 31), st.integers(2, 6), st.integers(2, 6), st.sampled_from(["open", "periodic"]),
)


def test_self_dual_couplings():
    spec = build_spec(math.pi / 4, 8, 8)
    assert spec.beta == pytest.approx(math.log(1 + math.sqrt(2)), abs=1e-14)
    assert spec.beta_prime == pytest.approx(0.881374, abs=1e-6)


def test_projector_endpoints():
    ghz = build_spec(math.pi / 2, 4, 2)
    assert math.isinf(ghz.beta) and ghz.beta_prime == pytest.approx(0.0, abs=1e-15)
    assert ghz.zz_projector
    assert build_spec(0.0, 4, 2).x_projector


@pytest.mark.parametrize("kwargs", [
    dict(theta=-0.1, L_x=4, L_y=2),
    dict(theta=2.0, L_x=4, L_y=2),
    dict(theta=0.3, L_x=1, L_y=2),
    dict(theta=0.3, L_x=4, L_y=0),
    dict(theta=0.3, L_x=4, L_y=2, bc="mobius"),
    dict(theta=0.3, L_x=4, L_y=2, p_s=0.1, p_eta=0.1),
    dict(theta=0.3, L_x=4, L_y=2, p_s=0.6),
])
def test_build_spec_rejects(kwargs):
    with pytest.raises(SpecError):
        build_spec(**kwargs)


@given(angles)
def test_coupling_relations(theta):
    b, bp = couplings(theta)
    assert math.tanh(b) == pytest.approx(math.sin(theta), abs=1e-14)
    assert math.tanh(bp) == pytest.approx(math.cos(theta), abs=1e-14)
    # Kramers-Wannier partner of the half-strength X coupling
    assert math.tanh(bp / 2) == pytest.approx(math.exp(-b), rel=1e-12)


@given(st.floats(min_value=0.01, max_value=8.0))
def test_beta_theta_round_trip(beta):
    theta = theta_from_beta(beta)
    assert couplings(theta)[0] == pytest.approx(beta, rel=1e-12, abs=1e-12)


def test_no_vortices_for_all_plus():
    v = vortices_of(all_plus(build_spec(0.3, 5, 4)))
    assert v.n_m == 0 and v.n_e == 0


def test_single_bulk_flip_makes_a_pair():
    spec = build_spec(0.3, 5, 5, "periodic")
    t = all_plus(spec)
    t.s_signs[2, 2] = -1
    v = vortices_of(t)
    assert v.n_m == 2 and v.m[2, 1] == 1 and v.m[2, 2] == 1


def test_vortices_match_brute_force_products(rng):
    t = random_record(rng, 4, 4, "periodic", 0.5)
    v = vortices_of(t)
    for j in range(4):
        for y in range(3):
            prod = t.s_signs[j, y] * t.s_signs[j, y + 1]
            assert v.m[j, y] == (prod < 0)
        for y in range(4):
            prod = t.t_signs[j, y] * (t.t_signs[j, y - 1] if y else 1)
            assert v.e[j, y] == (prod < 0)


@given(records, st.integers(0, 2 ** 31))
def test_gauge_invariance(traj, seed):
    rng = np.random.default_rng(seed)
    before = vortices_of(traj)
    moved = random_gauge(traj, rng)
    assert vortices_of(moved) == before
    assert moved.sector_W == traj.sector_W or not traj.periodic


@given(records)
def test_canonicalization_keeps_vortices(traj):
    rng = np.random.default_rng(traj.L_x)
    moved = random_gauge(traj, rng)
    canon = gauge_orbit_canonicalize(moved)
    assert canon.is_canonical
    assert vortices_of(canon) == vortices_of(traj)


@given(records)
def test_vortex_pair_parity_without_boundaries(traj):
    # interior flips on a periodic record with the first and last columns clean
    if not traj.periodic or traj.L_y < 3:
        return
    t = traj.copy()
    t.s_signs[:, 0] = t.s_signs[:, -1] = 1
    v = vortices_of(t)
    assert v.n_m % 2 == 0


def test_single_gauge_moves_commute_with_vortices(rng):
    t = random_record(rng, 4, 4, "open")
    v = vortices_of(t)
    assert vortices_of(vertex_gauge(t, 1, 2)) == v
    assert vortices_of(plaquette_gauge(t, 0, 1)) == v


def test_sector_split_and_twist():
    spec = build_spec(0.25 * math.pi, 4, 3)
    base = all_plus(spec)
    flipped = twisted(base)
    parts = sector_split([base, flipped, base])
    assert len(parts[1]) == 2 and len(parts[-1]) == 1
    with pytest.warns(RuntimeWarning):
        sector_split([base])


@given(records)
def test_serialization_round_trip(traj):
    assert np.array_equal(Trajectory.from_json(traj.to_json()).s_signs, traj.s_signs)
    back = Trajectory.from_bytes(traj.to_bytes())
    assert np.array_equal(back.s_signs, traj.s_signs) and np.array_equal(back.t_signs, traj.t_signs)
    assert back.bc == traj.bc


def test_binary_form_rejects_non_canonical(rng):
    t = random_gauge(random_record(rng, 3, 3, "open"), rng, density=1.0)
    with pytest.raises(ValueError):
        t.to_bytes()
