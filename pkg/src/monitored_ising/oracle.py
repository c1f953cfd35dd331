"""Brute-force references for tiny systems.

Everything here works in the full 2^L (or 4^L) Hilbert space, or sums over
all classical spin configurations, and shares no code with the Gaussian,
transfer or tensor-network engines beyond the trajectory container.

Basis convention: bit j of a basis index is site j, bit 0 means Z = +1.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .lattice import CircuitSpec, Trajectory

MAX_DENSE_SITES = 6
MAX_DOUBLED_SITES = 4
MAX_SPINS = 16


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def z_diagonal(L: int, j: int) -> np.ndarray:
    idx = np.arange(2 ** L)
    return 1.0 - 2.0 * ((idx >> j) & 1)


def zz_diagonal(L: int, i: int, j: int) -> np.ndarray:
    return z_diagonal(L, i) * z_diagonal(L, j)


def flip_index(L: int, j: int) -> np.ndarray:
    return np.arange(2 ** L) ^ (1 << j)


def _half_angle(tanh_k: float, sech_k: float) -> tuple[float, float]:
    """(cosh(k/2), sinh(k/2)) in the Boltzmann form, or (1/2, 1/2) for a projector."""
    if sech_k == 0.0:
        return 0.5, 0.5
    cosh_k = 1.0 / sech_k
    return math.sqrt((cosh_k + 1) / 2), math.sqrt(max(cosh_k - 1, 0.0) / 2)


def _gate_strengths(spec: CircuitSpec):
    zz = _half_angle(spec.zz_tanh, spec.zz_sech)
    xb = _half_angle(spec.x_tanh, spec.x_sech)
    xf = _half_angle(spec.x_half_tanh, spec.x_half_sech)
    return zz, xb, xf


def _log_divisor(tanh_k: float, sech_k: float) -> float:
    """ln of sum_s ||K_s psi||^2 / ||psi||^2, i.e. ln(2 cosh k), 0 for a projector."""
    if sech_k == 0.0:
        return 0.0
    return math.log(2.0 / sech_k)


def initial_vector(L: int, pinning: str = "all_plus_X") -> np.ndarray:
    if pinning == "all_plus_X":
        return np.full(2 ** L, 2.0 ** (-L / 2))
    if pinning == "all_up_Z":
        v = np.zeros(2 ** L)
        v[0] = 1.0
        return v
    raise ValueError(pinning)


def bond_sites(spec: CircuitSpec, j: int) -> tuple[int, int]:
    return j, (j + 1) % spec.L_x


def dense_trajectory(spec: CircuitSpec, traj: Trajectory, pinning: str = "all_plus_X", psi0=None):
    """Apply every gate as an explicit matrix.

    Returns (normalized state, ln ||unnormalized state||, ln Born probability).
    Works on the last axis, so ``psi0`` may carry extra leading (reference)
    indices.
    """
    L = spec.L_x
    _check(L <= MAX_DENSE_SITES, f"dense oracle limited to {MAX_DENSE_SITES} sites")
    psi = initial_vector(L, pinning) if psi0 is None else np.array(psi0, dtype=float)
    (zc, zs), (xc, xs), (fc, fs) = _gate_strengths(spec)
    log_div = 0.0
    for y in range(spec.L_y):
        for j in range(spec.n_bonds):
            d = zz_diagonal(L, *bond_sites(spec, j))
            psi = psi * (zc + traj.s_signs[j, y] * zs * d)
            log_div += _log_divisor(spec.zz_tanh, spec.zz_sech)
        for j in np.flatnonzero(traj.t_spatial[:, y] < 0):
            psi = psi * zz_diagonal(L, *bond_sites(spec, int(j)))
        final = y == spec.L_y - 1
        c, s = (fc, fs) if final else (xc, xs)
        tk, sk = (spec.x_half_tanh, spec.x_half_sech) if final else (spec.x_tanh, spec.x_sech)
        for j in range(L):
            psi = c * psi + traj.t_signs[j, y] * s * psi[..., flip_index(L, j)]
            log_div += _log_divisor(tk, sk)
        for j in np.flatnonzero(traj.s_temporal[:, y] < 0):
            psi = psi[..., flip_index(L, int(j))]
    for j in np.flatnonzero(traj.frame_x):
        psi = psi[..., flip_index(L, int(j))]
    for j in np.flatnonzero(traj.frame_zz):
        psi = psi * zz_diagonal(L, *bond_sites(spec, int(j)))
    norm = float(np.sqrt(np.sum(psi ** 2)))
    log_norm = math.log(norm) if norm > 0 else -math.inf
    log_p = 2 * log_norm - log_div
    return (psi / norm if norm > 0 else psi), log_norm, log_p


def majorana_matrices(L: int) -> list[np.ndarray]:
    """Dense Jordan-Wigner Majoranas g_{2j} = (prod_{k<j} X_k) Z_j, g_{2j+1} = (prod X) Y_j."""
    X = np.array([[0, 1], [1, 0]], dtype=complex)
    Y = np.array([[0, -1j], [1j, 0]])
    Z = np.diag([1.0, -1.0]).astype(complex)
    I = np.eye(2, dtype=complex)
    out = []
    for j in range(L):
        for op in (Z, Y):
            mats = [X] * j + [op] + [I] * (L - j - 1)
            # site j is bit j, so the Kronecker product runs from the last site down
            m = np.array([[1.0]], dtype=complex)
            for k in reversed(range(L)):
                m = np.kron(m, mats[k])
            out.append(m)
    return out


def covariance_of(psi: np.ndarray) -> np.ndarray:
    """Gamma_ab = <i g_a g_b> (a != b) of a dense pure state."""
    L = int(round(math.log2(psi.shape[-1])))
    g = majorana_matrices(L)
    n = 2 * L
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            val = np.vdot(psi, 1j * g[a] @ (g[b] @ psi))
            out[a, b] = val.real
            out[b, a] = -val.real
    return out


def covariance_of_density(rho: np.ndarray) -> np.ndarray:
    L = int(round(math.log2(rho.shape[0])))
    g = majorana_matrices(L)
    n = 2 * L
    tr = np.trace(rho).real
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            val = np.trace(rho @ (1j * g[a] @ g[b])).real / tr
            out[a, b] = val
            out[b, a] = -val
    return out


def parity_expectation(psi: np.ndarray) -> float:
    L = int(round(math.log2(psi.shape[-1])))
    idx = np.arange(2 ** L)
    return float(np.dot(psi, psi[idx ^ (2 ** L - 1)]))


def zz_expectation(psi: np.ndarray, i: int, j: int) -> float:
    L = int(round(math.log2(psi.shape[-1])))
    return float(np.dot(psi * zz_diagonal(L, i, j), psi))


def reduced_density(psi: np.ndarray, sites) -> np.ndarray:
    L = int(round(math.log2(psi.shape[-1])))
    sites = list(sites)
    rest = [k for k in range(L) if k not in sites]
    # reshape with axis k <-> bit k: numpy's C order puts the highest bit first
    t = psi.reshape([2] * L)
    axes = [L - 1 - k for k in sites] + [L - 1 - k for k in rest]
    m = np.transpose(t, axes).reshape(2 ** len(sites), -1)
    return m @ m.conj().T


def renyi_entropy(rho: np.ndarray, n: float = 1) -> float:
    w = np.linalg.eigvalsh(rho)
    w = w[w > 1e-15] / w.sum()
    if n == 1:
        return float(-(w * np.log(w)).sum())
    if math.isinf(n):
        return float(-np.log(w.max()))
    return float(np.log((w ** n).sum()) / (1 - n))


def dense_entropy(psi: np.ndarray, sites, n: float = 1) -> float:
    return renyi_entropy(reduced_density(psi, sites), n)


def reference_coherent_information(spec: CircuitSpec, traj: Trajectory) -> tuple[float, float]:
    """S(rho_R) with an explicit reference qubit, and the trajectory's ln Born probability.

    Initial state (|up...up>|0>_R + |down...down>|1>_R)/sqrt(2).
    """
    L = spec.L_x
    psi0 = np.zeros((2, 2 ** L))
    psi0[0, 0] = psi0[1, -1] = 1 / math.sqrt(2)
    psi, _, log_p = dense_trajectory(spec, traj, psi0=psi0)
    rho_r = psi @ psi.T
    return renyi_entropy(rho_r, 1), log_p


# ---------------------------------------------------------------- enumeration

def enumerate_records(spec: CircuitSpec, pinning: str = "all_plus_X"):
    """All canonical records with their Born probabilities.

    Branches a batch of dense state vectors at every gate.  Returns
    (s_signs [B, n_bonds, L_y], t_signs [B, L_x, L_y], probabilities [B]).
    """
    L = spec.L_x
    n_gates = (spec.n_bonds + L) * spec.L_y
    _check(L <= MAX_DENSE_SITES and n_gates <= 22, "record enumeration limited to 22 gates")
    (zc, zs), (xc, xs), (fc, fs) = _gate_strengths(spec)
    psi = initial_vector(L, pinning)[None, :]
    logw = np.zeros(1)
    record = np.zeros((1, 0), dtype=np.int8)
    div = 0.0
    for y in range(spec.L_y):
        for j in range(spec.n_bonds):
            d = zz_diagonal(L, *bond_sites(spec, j))
            plus = psi * (zc + zs * d)
            minus = psi * (zc - zs * d)
            psi = np.concatenate([plus, minus])
            record = np.concatenate([
                np.hstack([record, np.ones((len(record), 1), np.int8)]),
                np.hstack([record, -np.ones((len(record), 1), np.int8)]),
            ])
            div += _log_divisor(spec.zz_tanh, spec.zz_sech)
        final = y == spec.L_y - 1
        c, s = (fc, fs) if final else (xc, xs)
        tk, sk = (spec.x_half_tanh, spec.x_half_sech) if final else (spec.x_tanh, spec.x_sech)
        for j in range(L):
            flipped = psi[:, flip_index(L, j)]
            psi = np.concatenate([c * psi + s * flipped, c * psi - s * flipped])
            record = np.concatenate([
                np.hstack([record, np.ones((len(record), 1), np.int8)]),
                np.hstack([record, -np.ones((len(record), 1), np.int8)]),
            ])
            div += _log_divisor(tk, sk)
    probs = np.sum(psi ** 2, axis=1) * math.exp(-div)
    # unpack the interleaved record back into (space, time) tables
    B = len(record)
    s_all = np.zeros((B, spec.n_bonds, spec.L_y), np.int8)
    t_all = np.zeros((B, L, spec.L_y), np.int8)
    k = 0
    for y in range(spec.L_y):
        s_all[:, :, y] = record[:, k:k + spec.n_bonds]
        k += spec.n_bonds
        t_all[:, :, y] = record[:, k:k + L]
        k += L
    return s_all, t_all, probs


def vortex_key(spec: CircuitSpec, s: np.ndarray, t: np.ndarray) -> bytes:
    from .lattice import vortices_of

    v = vortices_of(Trajectory(spec.L_x, spec.L_y, spec.bc, s, t))
    return v.m.tobytes() + b"|" + v.e.tobytes()


def vortex_distribution(spec: CircuitSpec, which: str = "em") -> dict:
    """P over vortex configurations ('em', 'm' or 'e'), keyed by the packed field."""
    from .lattice import vortices_of

    s_all, t_all, probs = enumerate_records(spec)
    out: dict = {}
    for s, t, p in zip(s_all, t_all, probs):
        v = vortices_of(Trajectory(spec.L_x, spec.L_y, spec.bc, s, t))
        key = {"em": v.m.tobytes() + b"|" + v.e.tobytes(), "m": v.m.tobytes(), "e": v.e.tobytes()}[which]
        out[key] = out.get(key, 0.0) + p
    return out


# ---------------------------------------------------------------- spin sums

def _spin_configs(n: int) -> np.ndarray:
    return 1 - 2 * ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1)


def exhaustive_partition(spec: CircuitSpec, traj: Trajectory) -> float:
    """Z(em)^2 from explicit spin sums, with ket and bra glued at the boundary.

    One layer carries Ising coupling beta/2 on every spatial and temporal
    bond, sign s on the coupling and a (sigma sigma')^((1-t)/2) insertion.
    Spatial bonds carry (s_signs, t_spatial); temporal bonds y -> y+1 carry
    (s_temporal, t_signs).  Each layer gives boundary amplitudes A(sigma_f);
    the two half bonds of the final column join into one full bond between
    the ket and bra boundary spins.  Requires finite couplings.
    """
    L, Ly = spec.L_x, spec.L_y
    n = L * Ly
    _check(n <= MAX_SPINS, f"spin sum limited to {MAX_SPINS} spins")
    _check(math.isfinite(spec.beta) and spec.beta > 0, "finite nonzero beta required")
    half = spec.beta / 2
    sig = _spin_configs(n).reshape(-1, Ly, L)  # [config, y, j]
    logw = np.zeros(len(sig))
    sign = np.ones(len(sig))
    for y in range(Ly):
        for j in range(spec.n_bonds):
            prod = sig[:, y, j] * sig[:, y, (j + 1) % L]
            logw += half * traj.s_signs[j, y] * prod
            if traj.t_spatial[j, y] < 0:
                sign *= prod
        if y < Ly - 1:
            for j in range(L):
                prod = sig[:, y, j] * sig[:, y + 1, j]
                logw += half * traj.s_temporal[j, y] * prod
                if traj.t_signs[j, y] < 0:
                    sign *= prod
    weights = sign * np.exp(logw - logw.max())
    shift = logw.max()
    final_idx = ((1 - sig[:, Ly - 1, :]) // 2) @ (1 << np.arange(L))
    amp = np.bincount(final_idx, weights=weights, minlength=2 ** L)
    fin = _spin_configs(L)
    glue_log = np.zeros((2 ** L, 2 ** L))
    glue_sign = np.ones((2 ** L, 2 ** L))
    for j in range(L):
        prod = np.outer(fin[:, j], fin[:, j])
        glue_log += half * prod
        if traj.t_signs[j, Ly - 1] < 0:
            glue_sign *= prod
    glue = glue_sign * np.exp(glue_log)
    z2 = float(amp @ glue @ amp)
    return z2 * math.exp(2 * shift)


def partition_constant(spec: CircuitSpec) -> float:
    """ln Z(em) - ln ||psi(em)|| for the Boltzmann gate convention.

    The |+> start contributes 2^(-L/2) per layer and every full temporal
    bond cosh(beta'/2) e^(-beta/2) relative to its spin-sum weight.
    """
    L, Ly = spec.L_x, spec.L_y
    n_full = 2 * L * (Ly - 1) + L
    return 0.5 * (L * math.log(2) + n_full * (spec.beta / 2 - math.log(math.cosh(spec.beta_prime / 2))))


# ---------------------------------------------------------------- doubled space

def _kron_sites(ops_by_site: list[np.ndarray]) -> np.ndarray:
    m = np.array([[1.0]])
    for op in reversed(ops_by_site):
        m = np.kron(m, op)
    return m


def dense_doubled_space(spec: CircuitSpec, traj: Trajectory, p_s: float | None = None,
                        initial: np.ndarray | None = None, pinning: str = "all_plus_X") -> tuple[np.ndarray, float]:
    """Exact unnormalized density matrix under the noisy circuit.

    Site dephasing (1-p) rho + p Z rho Z acts at every spacetime vertex,
    between the ZZ layer and the X layer of the same column.  Returns
    (rho, ln of the Kraus divisor) so that the Born weight of the record is
    tr(rho) * exp(-divisor).  The Choi vector is ``rho.reshape(-1)``.
    """
    L = spec.L_x
    _check(L <= MAX_DOUBLED_SITES, f"doubled-space oracle limited to {MAX_DOUBLED_SITES} sites")
    p = spec.p_s if p_s is None else p_s
    if initial is None:
        v = initial_vector(L, pinning)
        rho = np.outer(v, v)
    else:
        rho = np.array(initial, dtype=float)
    (zc, zs), (xc, xs), (fc, fs) = _gate_strengths(spec)
    div = 0.0
    for y in range(spec.L_y):
        for j in range(spec.n_bonds):
            d = zc + traj.s_signs[j, y] * zs * zz_diagonal(L, *bond_sites(spec, j))
            rho = d[:, None] * rho * d[None, :]
            div += _log_divisor(spec.zz_tanh, spec.zz_sech)
        for j in range(L):
            zd = z_diagonal(L, j)
            rho = (1 - p) * rho + p * (zd[:, None] * rho * zd[None, :])
        final = y == spec.L_y - 1
        c, s = (fc, fs) if final else (xc, xs)
        tk, sk = (spec.x_half_tanh, spec.x_half_sech) if final else (spec.x_tanh, spec.x_sech)
        for j in range(L):
            x = np.array([[c, traj.t_signs[j, y] * s], [traj.t_signs[j, y] * s, c]])
            K = _kron_sites([x if k == j else np.eye(2) for k in range(L)])
            rho = K @ rho @ K.T
            div += _log_divisor(tk, sk)
    return rho, div


def choi_vector(rho: np.ndarray) -> np.ndarray:
    """|rho>> with site j carrying the (ket bit j, bra bit j) pair as a 4-level index 2*ket+bra."""
    L = int(round(math.log2(rho.shape[0])))
    t = rho.reshape([2] * (2 * L))  # ket bits L-1..0, then bra bits L-1..0
    # reorder to (ket_{L-1}, bra_{L-1}, ..., ket_0, bra_0)
    axes = []
    for k in range(L):
        axes += [k, L + k]
    return np.transpose(t, axes).reshape(-1)


def choi_entropy(rho: np.ndarray, sites, n: float = 1) -> float:
    """Entropy of a block of sites in the normalized Choi state."""
    L = int(round(math.log2(rho.shape[0])))
    v = choi_vector(rho)
    v = v / np.linalg.norm(v)
    t = v.reshape([4] * L)
    sites = list(sites)
    rest = [k for k in range(L) if k not in sites]
    axes = [L - 1 - k for k in sites] + [L - 1 - k for k in rest]
    m = np.transpose(t, axes).reshape(4 ** len(sites), -1)
    return renyi_entropy(m @ m.T, n)


def parity_operator(L: int) -> np.ndarray:
    idx = np.arange(2 ** L)
    P = np.zeros((2 ** L, 2 ** L))
    P[idx ^ (2 ** L - 1), idx] = 1.0
    return P


def renyi2_coherent_information_dense(spec: CircuitSpec, traj: Trajectory, p_s: float | None = None) -> float:
    """ln[tr rho_QR^2 / tr rho_Q^2] with an explicit reference qubit in the doubled space."""
    L = spec.L_x
    up = np.zeros(2 ** L)
    up[0] = 1.0
    down = np.zeros(2 ** L)
    down[-1] = 1.0
    blocks = {}
    for a, va in enumerate((up, down)):
        for b, vb in enumerate((up, down)):
            blocks[a, b], _ = dense_doubled_space(spec, traj, p_s, initial=np.outer(va, vb))
    rho_qr = np.block([[blocks[0, 0], blocks[0, 1]], [blocks[1, 0], blocks[1, 1]]]) / 2
    rho_q = (blocks[0, 0] + blocks[1, 1]) / 2
    return float(np.log(np.trace(rho_qr @ rho_qr) / np.trace(rho_q @ rho_q)))


def all_trajectories(spec: CircuitSpec):
    """Iterate over every canonical sign table (tiny systems only)."""
    nb, L, Ly = spec.n_bonds, spec.L_x, spec.L_y
    n = (nb + L) * Ly
    _check(n <= 20, "too many gates to iterate")
    for bits in itertools.product((1, -1), repeat=n):
        arr = np.array(bits, dtype=np.int8)
        yield Trajectory(L, Ly, spec.bc, arr[: nb * Ly].reshape(nb, Ly), arr[nb * Ly:].reshape(L, Ly))
