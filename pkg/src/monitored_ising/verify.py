"""Engine-versus-oracle equivalence checks at tiny sizes.

Each check returns a Check with the worst discrepancy found and its
tolerance.  ``run_all`` is what ``monitored-ising verify-oracle`` and the
acceptance suite execute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import oracle
from .choi_tns import (
    choi_entropies,
    evolve_choi,
    noisy_log_weight,
    renyi2_coherent_information,
    single_layer_entropies,
)
from .gaussian import entanglement_entropy, global_parity, run_circuit, zz_correlator
from .lattice import Trajectory, build_spec, random_gauge
from .observables import conditional_mutual_information, trajectory_coherent_information
from .sampling import bond_flip_probability, sample_sequential
from .transfer import log_partition


@dataclass
class Check:
    name: str
    max_error: float
    tolerance: float
    cases: int
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def line(self) -> str:
        return (f"{'PASS' if self.ok else 'FAIL'} {self.name}: max error {self.max_error:.2e} "
                f"(tol {self.tolerance:.0e}, {self.cases} cases, {self.seconds:.1f}s)")


def _random_record(rng, L, Ly, bc, flip=0.3, insertions=False) -> Trajectory:
    nb = L if bc == "periodic" else L - 1
    sgn = lambda shape: np.where(rng.random(shape) < flip, -1, 1).astype(np.int8)
    t = Trajectory(L, Ly, bc, sgn((nb, Ly)), sgn((L, Ly)))
    if insertions:
        t = random_gauge(t, rng)
    return t


def _angle(rng) -> float:
    return float(rng.uniform(0.05, 0.45) * math.pi)


def check_gaussian_vs_dense(n_cases: int = 24, seed: int = 1) -> Check:
    """Born probability, norm, covariance, parity, entropies and ZZ correlators."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_cases):
        L = int(rng.integers(2, 7))
        bc = "periodic" if k % 2 else "open"
        spec = build_spec(_angle(rng), L, int(rng.integers(1, 4)), bc)
        traj = _random_record(rng, L, spec.L_y, bc, insertions=bool(k % 3))
        run = run_circuit(spec, traj)
        psi, log_norm, log_p = oracle.dense_trajectory(spec, traj)
        errs = [abs(run.log_prob - log_p), abs(run.state.log_norm - log_norm),
                np.abs(run.state.covariance - oracle.covariance_of(psi)).max(),
                abs(global_parity(run.state) - oracle.parity_expectation(psi))]
        for l in range(1, L):
            for n in (1, 2):
                errs.append(abs(entanglement_entropy(run.state, (0, l), n) - oracle.dense_entropy(psi, range(l), n)))
            errs.append(abs(zz_correlator(run.state, 0, l) - oracle.zz_expectation(psi, 0, l)))
        worst = max(worst, max(errs))
    return Check("gaussian vs dense state vector", worst, 1e-8, n_cases)


def check_born_probabilities(n_cases: int = 40, seed: int = 2) -> Check:
    """Sequentially sampled records carry their exact enumerated probability."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    spec = build_spec(0.3 * math.pi, 3, 2, "open")
    s_all, t_all, probs = oracle.enumerate_records(spec)
    table = {(s.tobytes(), t.tobytes()): p for s, t, p in zip(s_all, t_all, probs)}
    worst = abs(probs.sum() - 1.0)
    for _ in range(n_cases):
        smp = sample_sequential(spec, rng)
        t = smp.trajectory
        p = table[(t.s_signs.tobytes(), t.t_signs.tobytes())]
        worst = max(worst, abs(smp.log_born_prob - math.log(p)))
    return Check("sequential Born probabilities vs enumeration", worst, 1e-8, n_cases)


def check_coherent_information(n_cases: int = 12, seed: int = 3) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        L = int(rng.integers(2, 6))
        spec = build_spec(_angle(rng), L, int(rng.integers(1, 4)), "open")
        smp = sample_sequential(spec, rng, pinning="all_up_Z")
        ref, log_p = oracle.reference_coherent_information(spec, smp.trajectory)
        worst = max(worst, abs(trajectory_coherent_information(smp.state) - ref), abs(smp.log_born_prob - log_p))
    return Check("coherent information vs explicit reference qubit", worst, 1e-8, n_cases)


def check_partition(n_cases: int = 16, seed: int = 4) -> Check:
    """ln Z from the Gaussian norm against the glued spin sum (relative to ln Z)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_cases):
        L = int(rng.integers(2, 5))
        Ly = int(rng.integers(1, 16 // L + 1))
        bc = "periodic" if k % 2 else "open"
        spec = build_spec(_angle(rng), L, Ly, bc)
        traj = _random_record(rng, L, Ly, bc, insertions=bool(k % 3))
        z2 = oracle.exhaustive_partition(spec, traj)
        if z2 <= 0:
            worst = max(worst, math.inf)
            continue
        worst = max(worst, abs(2 * log_partition(spec, traj) - math.log(z2)))
    return Check("transfer ln Z vs exhaustive spin sum", worst, 1e-8, n_cases)


def check_marginal_m(seed: int = 5) -> Check:
    """Exact law of the i.i.d.-sign m sampler against the enumerated Born marginal."""
    from .lattice import vortices_of

    worst = 0.0
    cases = 0
    for th, L, Ly, bc in ((0.3 * math.pi, 3, 2, "open"), (0.22 * math.pi, 2, 3, "periodic")):
        spec = build_spec(th, L, Ly, bc)
        target = oracle.vortex_distribution(spec, "m")
        q = bond_flip_probability(spec.beta)
        nb = spec.n_bonds
        n_sp, n_tm = nb * Ly, L * (Ly - 1)
        law: dict = {}
        for bits in range(2 ** (n_sp + n_tm)):
            b = np.array([(bits >> i) & 1 for i in range(n_sp + n_tm)])
            p = float(np.prod(np.where(b == 1, q, 1 - q)))
            s = np.where(b[:n_sp] == 1, -1, 1).reshape(nb, Ly)
            st = np.ones((L, Ly), dtype=np.int8)
            st[:, : Ly - 1] = np.where(b[n_sp:] == 1, -1, 1).reshape(L, Ly - 1)
            t = Trajectory(L, Ly, bc, s, np.ones((L, Ly)), s_temporal=st)
            key = vortices_of(t).m.tobytes()
            law[key] = law.get(key, 0.0) + p
        for key in set(law) | set(target):
            worst = max(worst, abs(law.get(key, 0.0) - target.get(key, 0.0)))
        cases += 1
    return Check("i.i.d. sign m-marginal vs enumerated Born marginal", worst, 1e-10, cases)


def check_choi_vs_doubled(n_cases: int = 9, seed: int = 6) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_cases):
        L = int(rng.integers(2, 5))
        p = (0.0, float(rng.uniform(0.01, 0.49)), 0.5)[k % 3]
        spec = build_spec(_angle(rng), L, int(rng.integers(1, 4)), "open", p_s=p)
        traj = _random_record(rng, L, spec.L_y, "open")
        rho, div = oracle.dense_doubled_space(spec, traj)
        v = oracle.choi_vector(rho)
        mps = evolve_choi(spec, traj, chi_max=4 ** L)
        errs = [np.abs(mps.to_dense() - v).max() / np.abs(v).max(),
                abs(noisy_log_weight(spec, traj, mps) - (math.log(np.trace(rho)) - div)),
                abs(renyi2_coherent_information(spec, traj, 4 ** L)
                    - oracle.renyi2_coherent_information_dense(spec, traj))]
        S = choi_entropies(mps)
        errs += [abs(S[l - 1] - oracle.choi_entropy(rho, range(l))) for l in range(1, L)]
        worst = max(worst, max(errs))
    return Check("Choi MPS vs doubled-space density matrix", worst, 1e-6, n_cases)


def check_maximal_noise_isometry(n_cases: int = 8, seed: int = 7) -> Check:
    """Choi entropies at p_s = 1/2 equal single-layer doubled-coupling entropies."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        L = int(rng.integers(2, 5))
        spec = build_spec(_angle(rng), L, int(rng.integers(1, 5)), "open", p_s=0.5)
        traj = _random_record(rng, L, spec.L_y, "open")
        mps = evolve_choi(spec, traj, chi_max=4 ** L)
        for n in (1, 2):
            worst = max(worst, np.abs(choi_entropies(mps, n) - single_layer_entropies(spec, traj, n)).max())
    return Check("maximal-noise Choi entropies vs single layer at doubled coupling", worst, 1e-8, n_cases)


def check_cmi(n_cases: int = 4, seed: int = 8) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        spec = build_spec(_angle(rng), 6, 4, "periodic")
        smp = sample_sequential(spec, rng)
        psi, _, _ = oracle.dense_trajectory(spec, smp.trajectory)
        for a, l in ((1, 2), (1, 3), (2, 3)):
            S = lambda sites: oracle.dense_entropy(psi, [x % 6 for x in sites])
            ref = S(range(0, l)) + S(range(a, a + l)) - S(range(a, l)) - S(range(0, l + a))
            got, _ = conditional_mutual_information(spec, a, l, [smp], average_positions=False)
            worst = max(worst, abs(got - ref))
    return Check("conditional mutual information vs dense", worst, 1e-8, n_cases)


ALL_CHECKS = (
    check_gaussian_vs_dense,
    check_born_probabilities,
    check_coherent_information,
    check_partition,
    check_marginal_m,
    check_choi_vs_doubled,
    check_maximal_noise_isometry,
    check_cmi,
)


def run_all(report=print) -> list[Check]:
    out = []
    for fn in ALL_CHECKS:
        t0 = time.time()
        c = fn()
        c.seconds = time.time() - t0
        if report:
            report(c.line())
        out.append(c)
    return out
