import math

import numpy as np
import pytest

from monitored_ising import oracle, verify
from monitored_ising.gaussian import init_product_state
from monitored_ising.lattice import build_spec


def test_majoranas_anticommute():
    g = oracle.majorana_matrices(3)
    for a in range(6):
        for b in range(6):
            ac = g[a] @ g[b] + g[b] @ g[a]
            assert np.allclose(ac, 2 * np.eye(8) * (a == b))


def test_plus_state_covariance():
    psi = oracle.initial_vector(3)
    assert np.allclose(oracle.covariance_of(psi), init_product_state(3).covariance)
    assert oracle.parity_expectation(psi) == pytest.approx(1.0)


def test_renyi_entropy_of_maximally_mixed_qubit():
    assert oracle.renyi_entropy(np.eye(2) / 2, 1) == pytest.approx(math.log(2))
    assert oracle.renyi_entropy(np.eye(2) / 2, 2) == pytest.approx(math.log(2))


def test_vortex_distribution_is_normalized():
    spec = build_spec(0.3 * math.pi, 2, 2, "open")
    for which in ("em", "m"):
        assert sum(oracle.vortex_distribution(spec, which).values()) == pytest.approx(1.0)


@pytest.mark.parametrize("check", verify.ALL_CHECKS, ids=lambda f: f.__name__)
def test_engine_matches_oracle(check):
    c = check()
    print(c.line())
    assert c.ok, c.line()
