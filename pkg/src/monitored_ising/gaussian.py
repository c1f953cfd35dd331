"""Fermionic Gaussian states on 2L Majorana modes under imaginary-time gates.

Jordan-Wigner convention (0-based):  X_j = i g_{2j} g_{2j+1} and
Z_j Z_{j+1} = i g_{2j+1} g_{2j+2}.  The periodic bond is
Z_{L-1} Z_0 = -P * i g_{2L-1} g_0 with P the global X parity.

The covariance is Gamma_ab = <i g_a g_b> for a != b.  A gate
K = exp(kappa * s * i g_a g_b / 2) is stored through tanh(kappa) and
sech(kappa) so the projector endpoint (tanh = 1, sech = 0) stays finite.

``log_norm`` accumulates ln ||K psi|| with K in the Boltzmann form above, so
a gate of strength zero adds nothing.  The Born probability of one outcome is
``||K psi||^2 / (2 cosh kappa)``; for a projector the divisor is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .lattice import CircuitSpec, Trajectory

PROBABILITY_FLOOR = 1e-14


class ImpossibleOutcome(FloatingPointError):
    """A gate outcome with Born probability below the floor was requested."""


@dataclass
class GaussianState:
    covariance: np.ndarray
    log_norm: float = 0.0
    pure: bool = True

    @property
    def n_modes(self) -> int:
        return self.covariance.shape[0]

    @property
    def L(self) -> int:
        return self.covariance.shape[0] // 2

    def copy(self) -> "GaussianState":
        return GaussianState(self.covariance.copy(), self.log_norm, self.pure)

    def purity_defect(self) -> float:
        g = self.covariance
        return float(np.abs(g @ g + np.eye(g.shape[0])).max())

    def to_csv(self, path) -> None:
        np.savetxt(path, self.covariance, delimiter=",")


# Kept for readability where the pure case is what matters.
GaussianPureState = GaussianState


@dataclass(frozen=True)
class WeakGate:
    """exp(kappa * sign * orient * i g_a g_b / 2), held through tanh/sech of kappa.

    ``orient`` absorbs the Jordan-Wigner sign of the periodic bond so that
    ``sign`` is always the physical measurement outcome.
    """

    a: int
    b: int
    tanh_k: float
    sech_k: float
    sign: int = 1
    orient: int = 1

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("gate needs two distinct modes")
        if self.tanh_k < 0 or self.tanh_k > 1:
            raise ValueError("strength must be nonnegative")

    @classmethod
    def from_strength(cls, a: int, b: int, kappa: float, sign: int = 1, orient: int = 1) -> "WeakGate":
        if math.isinf(kappa):
            return cls(a, b, 1.0, 0.0, sign, orient)
        return cls(a, b, math.tanh(kappa), 1.0 / math.cosh(kappa), sign, orient)

    @property
    def kappa(self) -> float:
        return math.inf if self.tanh_k >= 1.0 else math.atanh(self.tanh_k)

    @property
    def log_weight(self) -> float:
        """ln cosh(kappa), or ln(1/2) for a projector."""
        return _log_weight(self.tanh_k, self.sech_k)


def _log_weight(tanh_k: float, sech_k: float) -> float:
    if sech_k == 0.0:
        return math.log(0.5)
    return -math.log(sech_k)


def init_product_state(L: int, pinning: str = "all_plus_X") -> GaussianState:
    """Product initial state.

    ``all_plus_X`` is pure.  ``all_up_Z`` is not Gaussian as a pure state
    (it mixes both parities); the returned covariance describes its
    parity-dephased version, which is exactly the system marginal of the
    up/down branch pair entangled with a reference qubit.
    """
    if L < 2:
        raise ValueError("need at least two sites")
    n = 2 * L
    g = np.zeros((n, n))
    if pinning == "all_plus_X":
        for j in range(L):
            g[2 * j, 2 * j + 1] = 1.0
        pure = True
    elif pinning == "all_up_Z":
        for j in range(L - 1):
            g[2 * j + 1, 2 * j + 2] = 1.0
        pure = False
    else:
        raise ValueError(f"unknown pinning {pinning!r}")
    return GaussianState(g - g.T, 0.0, pure)


def outcome_probability(state: GaussianState, gate: WeakGate) -> tuple[float, float]:
    gab = state.covariance[gate.a, gate.b]
    if abs(gab) > 1 + 1e-8:
        raise FloatingPointError(f"|Gamma_ab| = {abs(gab)} exceeds 1")
    x = gate.orient * gate.tanh_k * gab
    return 0.5 * (1.0 + x), 0.5 * (1.0 - x)


@njit(cache=True)
def _gate_sequence(G, a_idx, b_idx, tanh_k, sech_k, log_w, orient, signs, uniforms, sample, floor):
    """Apply gates in order, in place.

    Returns (delta log_norm, delta log_prob, summed binary entropy of the
    outcome distributions, index of a failing gate or -1).  When ``sample``
    is set the outcome of gate g is +1 iff uniforms[g] < p(+) and is written
    into ``signs``.
    """
    n = G.shape[0]
    u = np.empty(n)
    v = np.empty(n)
    dnorm = 0.0
    dprob = 0.0
    dent = 0.0
    for g in range(a_idx.shape[0]):
        a = a_idx[g]
        b = b_idx[g]
        gab = G[a, b]
        th = tanh_k[g] * orient[g]
        pp = 0.5 * (1.0 + th * gab)
        if pp > 0.0 and pp < 1.0:
            dent -= pp * math.log(pp) + (1.0 - pp) * math.log(1.0 - pp)
        if sample:
            s = 1 if uniforms[g] < 0.5 * (1.0 + th * gab) else -1
            signs[g] = s
        else:
            s = signs[g]
        t = s * th
        D = 1.0 + t * gab
        if 0.5 * D < floor:
            return dnorm, dprob, dent, g
        dprob += math.log(0.5 * D)
        dnorm += 0.5 * (log_w[g] + math.log(D))
        if t == 0.0:
            continue
        for i in range(n):
            u[i] = G[i, a]
            v[i] = G[i, b]
        c = t / D
        # full rank-2 update in row order; it is antisymmetric by construction
        for i in range(n):
            cu = c * v[i]
            cv = c * u[i]
            if cu == 0.0 and cv == 0.0:
                continue
            for j in range(n):
                G[i, j] += cu * u[j] - cv * v[j]
        sd = sech_k[g] / D
        for d in range(n):
            if d != a and d != b:
                G[a, d] = -u[d] * sd
                G[d, a] = u[d] * sd
                G[b, d] = -v[d] * sd
                G[d, b] = v[d] * sd
        pab = (gab + t) / D
        G[a, b] = pab
        G[b, a] = -pab
    return dnorm, dprob, dent, -1


@dataclass
class GateList:
    """Struct-of-arrays form of a layer, fed to the compiled kernel."""

    a: np.ndarray
    b: np.ndarray
    tanh_k: np.ndarray
    sech_k: np.ndarray
    orient: np.ndarray

    def __post_init__(self):
        self.log_w = np.array([_log_weight(t, s) for t, s in zip(self.tanh_k, self.sech_k)])

    def __len__(self):
        return len(self.a)

    @classmethod
    def build(cls, a, b, tanh_k, sech_k, orient) -> "GateList":
        a = np.asarray(a, dtype=np.int64)
        n = len(a)
        return cls(
            a,
            np.asarray(b, dtype=np.int64),
            np.broadcast_to(np.asarray(tanh_k, dtype=np.float64), (n,)).copy(),
            np.broadcast_to(np.asarray(sech_k, dtype=np.float64), (n,)).copy(),
            np.broadcast_to(np.asarray(orient, dtype=np.int64), (n,)).copy(),
        )


_EMPTY = np.zeros(0)


def apply_gates(state: GaussianState, gates: GateList, signs: np.ndarray, uniforms: np.ndarray | None = None,
                entropy_out: list | None = None) -> float:
    """Apply a gate list in place; returns the summed ln p of the outcomes.

    With ``uniforms`` given the outcomes are drawn and written into ``signs``.
    The summed conditional Shannon entropy of the gates is appended to
    ``entropy_out`` when given.
    """
    sample = uniforms is not None
    s = np.ascontiguousarray(signs, dtype=np.int64)
    dnorm, dprob, dent, bad = _gate_sequence(
        state.covariance, gates.a, gates.b, gates.tanh_k, gates.sech_k, gates.log_w,
        gates.orient, s, uniforms if sample else _EMPTY, sample, PROBABILITY_FLOOR,
    )
    if bad >= 0:
        raise ImpossibleOutcome(
            f"outcome {s[bad]:+d} on modes ({gates.a[bad]}, {gates.b[bad]}) has probability below {PROBABILITY_FLOOR}"
        )
    state.log_norm += dnorm
    if entropy_out is not None:
        entropy_out.append(dent)
    if sample:
        signs[...] = s
    return dprob


def apply_weak_gate(state: GaussianState, gate: WeakGate) -> GaussianState:
    out = state.copy()
    gl = GateList.build([gate.a], [gate.b], [gate.tanh_k], [gate.sech_k], [gate.orient])
    apply_gates(out, gl, np.array([gate.sign]))
    return out


def apply_pauli_pair(state: GaussianState, a: int, b: int) -> None:
    """Conjugate by the Pauli i g_a g_b (in place): flips entries with one index in {a, b}."""
    g = state.covariance
    g[[a, b], :] *= -1
    g[:, [a, b]] *= -1


def purify(state: GaussianState) -> None:
    """Pull a nearly pure covariance back onto Gamma^2 = -1."""
    g = state.covariance
    g = 1.5 * g + 0.5 * (g @ g @ g)
    state.covariance[...] = 0.5 * (g - g.T)


# ---------------------------------------------------------------- circuit layers

def zz_layer(spec: CircuitSpec, parity: int = 1) -> GateList:
    L = spec.L_x
    a = [2 * j + 1 for j in range(spec.n_bonds)]
    b = [(2 * j + 2) % (2 * L) for j in range(spec.n_bonds)]
    orient = [1] * spec.n_bonds
    if spec.periodic:
        orient[-1] = -parity
    return GateList.build(a, b, spec.zz_tanh, spec.zz_sech, orient)


def x_layer(spec: CircuitSpec, final: bool = False) -> GateList:
    L = spec.L_x
    a = [2 * j for j in range(L)]
    b = [2 * j + 1 for j in range(L)]
    if final:
        return GateList.build(a, b, spec.x_half_tanh, spec.x_half_sech, 1)
    return GateList.build(a, b, spec.x_tanh, spec.x_sech, 1)


@lru_cache(maxsize=64)
def circuit_layers(spec: CircuitSpec) -> tuple[GateList, GateList, GateList]:
    """(ZZ layer, X layer, final half-strength X layer); gate lists are read-only."""
    return zz_layer(spec, parity=1), x_layer(spec), x_layer(spec, final=True)


def zz_modes(L: int, bond: int) -> tuple[int, int]:
    return 2 * bond + 1, (2 * bond + 2) % (2 * L)


def x_modes(site: int) -> tuple[int, int]:
    return 2 * site, 2 * site + 1


@dataclass
class CircuitRun:
    state: GaussianState
    log_prob: float
    column_log_prob: np.ndarray
    column_entropy: np.ndarray


def run_circuit(
    spec: CircuitSpec,
    traj: Trajectory,
    *,
    rng: np.random.Generator | None = None,
    state: GaussianState | None = None,
    pinning: str = "all_plus_X",
    columns: range | None = None,
    purify_every: int = 1,
    apply_frames: bool = True,
    states_out: list | None = None,
) -> CircuitRun:
    """Evolve through the columns of ``traj``.

    With ``rng`` the outcomes are Born-sampled and written into ``traj``
    (canonical records only); otherwise the stored signs are evaluated.
    ``states_out`` collects a copy of the state entering each column.
    """
    if state is None:
        state = init_product_state(spec.L_x, pinning)
    if spec.periodic and not state.pure:
        raise ValueError("periodic chains need a parity-definite initial state")
    if columns is None:
        columns = range(spec.L_y)
    zz, xb, xf = circuit_layers(spec)
    sampling = rng is not None
    if sampling and not traj.is_canonical:
        raise ValueError("sampling writes canonical records only")
    col_lp = np.zeros(spec.L_y)
    col_h = np.zeros(spec.L_y)
    total = 0.0
    L = spec.L_x
    for k, y in enumerate(columns):
        ent: list = []
        if states_out is not None:
            states_out.append(state.copy())
        if sampling:
            u = rng.random(spec.n_bonds)
            s = traj.s_signs[:, y].copy()
            lp = apply_gates(state, zz, s, u, ent)
            traj.s_signs[:, y] = s
        else:
            lp = apply_gates(state, zz, traj.s_signs[:, y], entropy_out=ent)
        for j in np.flatnonzero(traj.t_spatial[:, y] < 0):
            apply_pauli_pair(state, *zz_modes(L, int(j)))
        layer = xf if y == spec.L_y - 1 else xb
        if sampling:
            u = rng.random(L)
            t = traj.t_signs[:, y].copy()
            lp += apply_gates(state, layer, t, u, ent)
            traj.t_signs[:, y] = t
        else:
            lp += apply_gates(state, layer, traj.t_signs[:, y], entropy_out=ent)
        for j in np.flatnonzero(traj.s_temporal[:, y] < 0):
            apply_pauli_pair(state, *x_modes(int(j)))
        if state.pure and purify_every and (k + 1) % purify_every == 0:
            purify(state)
        col_lp[y] = lp
        col_h[y] = sum(ent)
        total += lp
    if apply_frames and columns.stop == spec.L_y:
        apply_frame(state, traj)
    return CircuitRun(state, total, col_lp, col_h)


def apply_frame(state: GaussianState, traj: Trajectory) -> None:
    for j in np.flatnonzero(traj.frame_x):
        apply_pauli_pair(state, *x_modes(int(j)))
    for j in np.flatnonzero(traj.frame_zz):
        apply_pauli_pair(state, *zz_modes(traj.L_x, int(j)))


# ---------------------------------------------------------------- Pfaffian

def _householder(x: np.ndarray):
    sigma = float(x[1:] @ x[1:])
    if sigma == 0.0:
        return None, x[0]
    norm = math.sqrt(x[0] * x[0] + sigma)
    v = x.copy()
    if x[0] <= 0:
        v[0] -= norm
        alpha = norm
    else:
        v[0] += norm
        alpha = -norm
    v /= np.linalg.norm(v)
    return v, alpha


def pfaffian(A: np.ndarray) -> float:
    """Pfaffian of a real antisymmetric matrix by Householder tridiagonalization."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("square matrix required")
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    pf = 1.0
    for i in range(n - 2):
        v, alpha = _householder(A[i + 1:, i])
        if v is not None:
            sub = A[i + 1:, i + 1:]
            w = 2.0 * (sub @ v)
            sub += np.outer(v, w) - np.outer(w, v)
            pf = -pf
        A[i + 1, i] = alpha
        A[i, i + 1] = -alpha
        A[i + 2:, i] = 0.0
        A[i, i + 2:] = 0.0
        if i % 2 == 0:
            pf *= -alpha
    return pf * A[n - 2, n - 1]


def global_parity(state: GaussianState) -> float:
    """<prod_j X_j>; +1 for the all-plus state."""
    return pfaffian(state.covariance)


def zz_correlator(state: GaussianState, i: int, j: int) -> float:
    """<Z_i Z_j> for i < j along the open Jordan-Wigner string."""
    if i == j:
        return 1.0
    i, j = min(i, j), max(i, j)
    idx = np.arange(2 * i + 1, 2 * j + 1)
    return pfaffian(state.covariance[np.ix_(idx, idx)])


# ---------------------------------------------------------------- entropies

def region_modes(L: int, start: int, length: int) -> np.ndarray:
    sites = (start + np.arange(length)) % L
    return np.sort(np.concatenate([2 * sites, 2 * sites + 1]))


def region_spectrum(covariance: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """Nonnegative values nu_k of the restricted covariance (one per pair)."""
    sub = covariance[np.ix_(modes, modes)]
    ev = np.linalg.eigvalsh(1j * sub)
    nu = ev[len(ev) // 2:]
    if nu.size and nu.max() > 1 + 1e-8:
        raise FloatingPointError(f"covariance eigenvalue {nu.max()} outside [-1, 1]")
    return np.clip(nu, 0.0, 1.0)


def entropy_from_spectrum(nu: np.ndarray, n: float = 1) -> float:
    p = 0.5 * (1.0 + np.asarray(nu))
    q = 1.0 - p
    if n == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(q > 0, q * np.log(q), 0.0))
        return float(h.sum())
    if math.isinf(n):
        return float(-np.log(p).sum())
    return float((np.log(p ** n + q ** n) / (1.0 - n)).sum())


def entanglement_entropy(state: GaussianState, region, n: float = 1) -> float:
    """Entropy of a contiguous block of sites, given as (start, length) or a site list."""
    L = state.L
    if isinstance(region, tuple):
        start, length = region
    else:
        sites = sorted(int(s) % L for s in region)
        start, length = sites[0], len(sites)
        if sites != [(start + k) % L for k in range(length)]:
            # wrapped block: take its first site after the gap
            gaps = [k for k in range(1, length) if sites[k] != sites[k - 1] + 1]
            start = sites[gaps[0]]
    if length <= 0 or length >= L:
        if state.pure:
            return 0.0
        length = min(max(length, 0), L)
    if start + length > L:
        if not state.pure:
            raise ValueError("wrapped regions need a parity-definite state")
        # the block's complement does not cross the string boundary
        start, length = (start + length) % L, L - length
    return entropy_from_spectrum(region_spectrum(state.covariance, region_modes(L, start, length)), n)


def entropy_profile(state: GaussianState, n_orders=(1,), starts=(0,)) -> np.ndarray:
    """S^(n)(l) for l = 1..L-1 averaged over block start positions.

    Returns an array of shape (len(n_orders), L-1).
    """
    L = state.L
    out = np.zeros((len(n_orders), L - 1))
    for start in starts:
        for l in range(1, L):
            s0, ln = start, l
            if s0 + ln > L:
                s0, ln = (s0 + ln) % L, L - ln
            nu = region_spectrum(state.covariance, region_modes(L, s0, ln))
            for k, n in enumerate(n_orders):
                out[k, l - 1] += entropy_from_spectrum(nu, n)
    return out / len(starts)
