"""Noisy records as matrix-product Choi states.

Each site of |rho>> carries the pair (ket bit, bra bit) as one index
2*ket + bra, so a single-site operator O acts as O (x) O and readout
dephasing (1-p) rho + p Z rho Z as the diagonal (1-p) + p z_ket z_bra.
The chain is open; ZZ layers are applied as a left-to-right sweep of
diagonal two-site gates with SVD truncation, the orthogonality centre
riding along.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gaussian import entanglement_entropy, run_circuit
from .lattice import CircuitSpec, Trajectory, all_plus, build_spec
from .observables import ArcTable

Z_OF_BIT = np.array([1.0, -1.0])
# Z of the ket and bra bit of a 4-level site index
Z_KET = np.repeat(Z_OF_BIT, 2)
Z_BRA = np.tile(Z_OF_BIT, 2)
BELL_SITE = np.array([1.0, 0.0, 0.0, 1.0])
SITE_FLIP = np.array([3, 2, 1, 0])  # X on ket and bra

SITE_VECTORS = {
    "all_plus_X": np.full(4, 0.5),
    "up_up": np.array([1.0, 0.0, 0.0, 0.0]),
    "up_down": np.array([0.0, 1.0, 0.0, 0.0]),
}


class TruncationBudgetExceeded(RuntimeWarning):
    pass


@dataclass
class ChoiMps:
    tensors: list  # (left, 4, right) arrays
    log_norm: float = 0.0
    truncation_error: float = 0.0
    chi_max: int = 64
    cutoff: float = 1e-14
    max_bond_seen: int = 1
    saturated: bool = False
    history: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self) -> "ChoiMps":
        return ChoiMps([t.copy() for t in self.tensors], self.log_norm, self.truncation_error, self.chi_max,
                       self.cutoff, self.max_bond_seen, self.saturated, list(self.history))

    def to_dense(self) -> np.ndarray:
        """Full 4^L vector including the norm, site 0 as the fastest index."""
        v = self.tensors[0][0]
        for t in self.tensors[1:]:
            v = np.einsum("...a,asb->...sb", v, t)
        v = v[..., 0]
        # axes are (site0, ..., site L-1); make site 0 the last (fastest) axis
        v = np.transpose(v, list(range(self.L))[::-1])
        return v.reshape(-1) * math.exp(self.log_norm)


def product_mps(site_vector: np.ndarray, L: int, chi_max: int = 64, cutoff: float = 1e-14) -> ChoiMps:
    v = np.asarray(site_vector, dtype=float)
    n = float(np.linalg.norm(v))
    tensors = [(v / n).reshape(1, 4, 1).copy() for _ in range(L)]
    return ChoiMps(tensors, L * math.log(n), chi_max=chi_max, cutoff=cutoff)


def right_canonicalize(mps: ChoiMps) -> None:
    """Right-orthonormalize sites L-1..1 and fold the norm into log_norm."""
    T = mps.tensors
    for j in range(mps.L - 1, 0, -1):
        Dl, d, Dr = T[j].shape
        q, r = np.linalg.qr(T[j].reshape(Dl, d * Dr).T)
        T[j] = q.T.reshape(-1, d, Dr)
        T[j - 1] = np.einsum("asb,bc->asc", T[j - 1], r.T)
    n = float(np.linalg.norm(T[0]))
    if n == 0.0 or not math.isfinite(n):
        raise FloatingPointError("Choi state vanished")
    T[0] /= n
    mps.log_norm += math.log(n)


def _split(theta: np.ndarray, mps: ChoiMps):
    Dl, d1, d2, Dr = theta.shape
    m = theta.reshape(Dl * d1, d2 * Dr)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        import scipy.linalg

        u, s, vt = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    w = s ** 2
    total = w.sum()
    if total == 0.0:
        raise FloatingPointError("Choi state vanished")
    tail = np.cumsum(w[::-1])[::-1] / total  # weight discarded when keeping the first k
    keep = int(np.sum(tail > mps.cutoff))
    keep = max(1, min(keep, mps.chi_max))
    if keep == mps.chi_max and keep < len(s):
        mps.saturated = True
    mps.truncation_error += float(w[keep:].sum() / total)
    mps.max_bond_seen = max(mps.max_bond_seen, keep)
    u, s, vt = u[:, :keep], s[:keep], vt[:keep]
    return u.reshape(Dl, d1, keep), (s[:, None] * vt).reshape(keep, d2, Dr)


def apply_bond_diagonals(mps: ChoiMps, factors: list) -> None:
    """Multiply bond j by the 4x4 elementwise factor ``factors[j]`` (None skips).

    Expects a right-canonical state; leaves the centre on the last site.
    """
    T = mps.tensors
    for j in range(mps.L - 1):
        f = factors[j]
        if f is None:
            Dl, d, Dr = T[j].shape
            q, r = np.linalg.qr(T[j].reshape(Dl * d, Dr))
            T[j] = q.reshape(Dl, d, -1)
            T[j + 1] = np.einsum("ab,bsc->asc", r, T[j + 1])
            continue
        theta = np.einsum("asb,btc->astc", T[j], T[j + 1]) * f[None, :, :, None]
        T[j], T[j + 1] = _split(theta, mps)
    n = float(np.linalg.norm(T[-1]))
    if n == 0.0:
        raise FloatingPointError("Choi state vanished")
    T[-1] /= n
    mps.log_norm += math.log(n)


def apply_site_operators(mps: ChoiMps, ops: list) -> None:
    for j, op in enumerate(ops):
        if op is not None:
            mps.tensors[j] = np.einsum("st,atb->asb", op, mps.tensors[j])


# ---------------------------------------------------------------- circuit pieces

def _boltzmann_pair(tanh_k: float, sech_k: float) -> tuple[float, float]:
    """(cosh(k/2), sinh(k/2)); (1/2, 1/2) for a projector."""
    if sech_k == 0.0:
        return 0.5, 0.5
    ch = 1.0 / sech_k
    return math.sqrt((ch + 1) / 2), math.sqrt(max(ch - 1, 0.0) / 2)


def _divisor(tanh_k: float, sech_k: float) -> float:
    return 0.0 if sech_k == 0.0 else math.log(2.0 / sech_k)


def zz_bond_factor(spec: CircuitSpec, sign: int) -> np.ndarray:
    c, s = _boltzmann_pair(spec.zz_tanh, spec.zz_sech)
    zz_ket = np.outer(Z_KET, Z_KET)
    zz_bra = np.outer(Z_BRA, Z_BRA)
    return (c + sign * s * zz_ket) * (c + sign * s * zz_bra)


def x_site_operator(c: float, s: float, sign: int) -> np.ndarray:
    k = np.array([[c, sign * s], [sign * s, c]])
    return np.kron(k, k)


def dephasing_operator(p: float) -> np.ndarray:
    return np.diag((1 - p) + p * Z_KET * Z_BRA)


def column_divisor(spec: CircuitSpec, y: int) -> float:
    final = y == spec.L_y - 1
    xt, xs = (spec.x_half_tanh, spec.x_half_sech) if final else (spec.x_tanh, spec.x_sech)
    return spec.n_bonds * _divisor(spec.zz_tanh, spec.zz_sech) + spec.L_x * _divisor(xt, xs)


def evolve_column(mps: ChoiMps, spec: CircuitSpec, traj: Trajectory, y: int, p_s: float) -> None:
    right_canonicalize(mps)
    apply_bond_diagonals(mps, [zz_bond_factor(spec, int(traj.s_signs[j, y])) for j in range(spec.L_x - 1)])
    final = y == spec.L_y - 1
    xt, xs = (spec.x_half_tanh, spec.x_half_sech) if final else (spec.x_tanh, spec.x_sech)
    c, s = _boltzmann_pair(xt, xs)
    deph = dephasing_operator(p_s) if p_s else None
    ops = []
    for j in range(spec.L_x):
        op = x_site_operator(c, s, int(traj.t_signs[j, y]))
        ops.append(op @ deph if deph is not None else op)
    apply_site_operators(mps, ops)


def _check_record(spec: CircuitSpec, traj: Trajectory) -> None:
    if spec.periodic:
        raise ValueError("the Choi network runs on open chains")
    if np.any(traj.s_temporal < 0) or np.any(traj.t_spatial < 0):
        raise ValueError("records with string insertions must be canonicalized first")


def evolve_choi(spec: CircuitSpec, traj: Trajectory, chi_max: int = 64, initial: str = "all_plus_X",
                p_s: float | None = None, cutoff: float = 1e-14, budget: float = 1e-6,
                start: ChoiMps | None = None, columns=None) -> ChoiMps:
    """Boundary Choi state after the record's columns, normalized with log_norm tracked.

    Output frames are omitted: Pauli frames do not change entropies, weights
    or the second Renyi coherent information.
    """
    _check_record(spec, traj)
    p = spec.p_s if p_s is None else p_s
    mps = start.copy() if start is not None else product_mps(SITE_VECTORS[initial], spec.L_x, chi_max, cutoff)
    for y in (range(spec.L_y) if columns is None else columns):
        evolve_column(mps, spec, traj, y, p)
    right_canonicalize(mps)
    if mps.truncation_error > budget:
        warnings.warn(f"truncation error {mps.truncation_error:.2e} exceeds budget {budget:.0e}",
                      TruncationBudgetExceeded)
    return mps


# ---------------------------------------------------------------- contractions

def overlap(a: ChoiMps, b: ChoiMps, site_perm: np.ndarray | None = None) -> tuple[float, float]:
    """<<a|P|b>> as (sign, log|.|) with P a product of site permutations."""
    E = np.ones((1, 1))
    for A, B in zip(a.tensors, b.tensors):
        if site_perm is not None:
            B = B[:, site_perm, :]
        E = np.einsum("xy,xsr,ysq->rq", E, A, B)
    v = float(E[0, 0])
    if v == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, v), math.log(abs(v)) + a.log_norm + b.log_norm


def bell_overlap(mps: ChoiMps) -> tuple[float, float]:
    """tr rho = <<Bell|rho>> as (sign, log|.|)."""
    E = np.ones(1)
    for A in mps.tensors:
        E = E @ np.einsum("asb,s->ab", A, BELL_SITE)
    v = float(E[0])
    if v == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, v), math.log(abs(v)) + mps.log_norm


def noisy_log_weight(spec: CircuitSpec, traj: Trajectory, mps: ChoiMps | None = None, **kw) -> float:
    """ln P~(record) = ln tr rho - sum of gate divisors."""
    if mps is None:
        mps = evolve_choi(spec, traj, **kw)
    sign, lt = bell_overlap(mps)
    if sign <= 0:
        return -math.inf
    return lt - sum(column_divisor(spec, y) for y in range(spec.L_y))


def schmidt_spectra(mps: ChoiMps) -> list[np.ndarray]:
    """Normalized Schmidt weights across every bond (no truncation)."""
    m = mps.copy()
    right_canonicalize(m)
    T = m.tensors
    out = []
    for j in range(m.L - 1):
        Dl, d, Dr = T[j].shape
        u, s, vt = np.linalg.svd(T[j].reshape(Dl * d, Dr), full_matrices=False)
        T[j] = u.reshape(Dl, d, -1)
        T[j + 1] = np.einsum("ab,bsc->asc", s[:, None] * vt, T[j + 1])
        w = s ** 2
        out.append(w / w.sum())
    return out


def renyi_from_weights(w: np.ndarray, n: float = 1) -> float:
    w = w[w > 0]
    if n == 1:
        return float(-(w * np.log(w)).sum())
    if math.isinf(n):
        return float(-math.log(w.max()))
    return float(math.log((w ** n).sum()) / (1 - n))


def choi_entropies(mps: ChoiMps, n: float = 1) -> np.ndarray:
    """S(l) of the left block of l sites, l = 1..L-1."""
    return np.array([renyi_from_weights(w, n) for w in schmidt_spectra(mps)])


def renyi2_coherent_information(spec: CircuitSpec, traj: Trajectory, chi_max: int = 64, **kw) -> float:
    """ln[tr rho_QR^2 / tr rho_Q^2] for the logical qubit stored in the up/down branches.

    With rho_ab the image of |a...a><b...b| and rho_11 = X rho_00 X,
    this is ln[(<<00|00>> + <<01|01>>) / (<<00|00>> + <<00|XX|00>>)].
    """
    m00 = evolve_choi(spec, traj, chi_max, "up_up", **kw)
    _, n00 = overlap(m00, m00)
    try:
        m01 = evolve_choi(spec, traj, chi_max, "up_down", **kw)
        s01, n01 = overlap(m01, m01)
    except FloatingPointError:
        # full dephasing removes the off-diagonal block exactly
        s01, n01 = 0.0, -math.inf
    sx, x00 = overlap(m00, m00, SITE_FLIP)
    num = 1.0 + (math.exp(n01 - n00) if s01 > 0 else 0.0)
    den = 1.0 + sx * math.exp(x00 - n00)
    if den <= 0:
        raise FloatingPointError("non-normalizable reference state")
    return math.log(num / den)


# ---------------------------------------------------------------- noisy ensemble

class ChoiChain:
    """Single-sign-flip Metropolis over records weighted by P~, with cached prefixes."""

    def __init__(self, spec: CircuitSpec, traj: Trajectory, chi_max: int = 32, initial: str = "all_plus_X"):
        _check_record(spec, traj)
        self.spec = spec
        self.traj = traj.copy()
        self.chi_max = chi_max
        self.initial = initial
        self.prefix = [product_mps(SITE_VECTORS[initial], spec.L_x, chi_max)]
        self.prefix, self.final = self._evaluate(self.traj, 0)
        self.log_weight = self._weight(self.final)

    def _evaluate(self, traj, y0):
        states = list(self.prefix[: y0 + 1])
        mps = states[y0].copy()
        for y in range(y0, self.spec.L_y):
            evolve_column(mps, self.spec, traj, y, self.spec.p_s)
            if y < self.spec.L_y - 1:
                states.append(mps.copy())
        right_canonicalize(mps)
        return states, mps

    def _weight(self, mps):
        return noisy_log_weight(self.spec, self.traj, mps)

    def step(self, rng: np.random.Generator, kinds=("s", "t")) -> bool:
        spec = self.spec
        sizes = {"s": spec.n_bonds * spec.L_y, "t": spec.L_x * spec.L_y}
        total = sum(sizes[k] for k in kinds)
        r = int(rng.integers(total))
        for kind in kinds:
            if r < sizes[kind]:
                break
            r -= sizes[kind]
        j, y = divmod(r, spec.L_y)
        u = rng.random()
        trial = self.traj.copy()
        (trial.s_signs if kind == "s" else trial.t_signs)[j, y] *= -1
        states, final = self._evaluate(trial, y)
        sign, lt = bell_overlap(final)
        if sign <= 0:
            return False
        lw = lt - sum(column_divisor(spec, yy) for yy in range(spec.L_y))
        delta = lw - self.log_weight
        if delta >= 0 or u < math.exp(delta):
            self.traj, self.prefix, self.final, self.log_weight = trial, states, final, lw
            return True
        return False

    def sweep(self, rng, kinds=("s", "t")) -> int:
        n = sum({"s": self.spec.n_bonds * self.spec.L_y, "t": self.spec.L_x * self.spec.L_y}[k] for k in kinds)
        return sum(self.step(rng, kinds) for _ in range(n))


def sample_noisy_ensemble(spec: CircuitSpec, rng: np.random.Generator, sweeps: int, chi_max: int = 32,
                          start: Trajectory | None = None, record_every: int = 1, initial: str = "all_plus_X"):
    """Chain of records distributed as P~(em); returns (records, log weights, acceptance)."""
    if not 0.0 <= spec.p_s <= 0.5:
        raise ValueError("p_s outside [0, 1/2]")
    chain = ChoiChain(spec, start if start is not None else all_plus(spec), chi_max, initial)
    out, weights, acc = [], [], 0
    for k in range(sweeps):
        acc += chain.sweep(rng)
        if (k + 1) % record_every == 0:
            t = chain.traj.copy()
            t.log_born_prob = chain.log_weight
            out.append(t)
            weights.append(chain.log_weight)
    n_prop = sweeps * (spec.n_bonds + spec.L_x) * spec.L_y
    return out, np.array(weights), acc / max(n_prop, 1)


# ---------------------------------------------------------------- maximal noise

NISHIMORI_DISORDER = 0.1092  # critical flip probability of the square-lattice +-J model on the Nishimori line


def nishimori_theta() -> float:
    """Angle whose i.i.d. bond-flip probability e^-b/(2 cosh b) sits at the Nishimori point."""
    q = NISHIMORI_DISORDER
    beta = 0.5 * math.log((1 - q) / q)
    return math.asin(math.tanh(beta))


def single_layer_spec(spec: CircuitSpec) -> CircuitSpec:
    """Clean-layer spec at doubled ZZ coupling: tanh(2 beta) = sin(theta~)."""
    th = math.pi / 2 if math.isinf(spec.beta) else math.asin(math.tanh(2 * spec.beta))
    return build_spec(th, spec.L_x, spec.L_y, spec.bc)


def single_layer_state(spec: CircuitSpec, traj: Trajectory):
    """Gaussian boundary state of the locked layer: same s signs, all t = +1."""
    sl = single_layer_spec(spec)
    t = all_plus(sl)
    t.s_signs[:] = traj.s_signs
    return run_circuit(sl, t).state


def single_layer_entropies(spec: CircuitSpec, traj: Trajectory, n: float = 1) -> np.ndarray:
    st = single_layer_state(spec, traj)
    return np.array([entanglement_entropy(st, (0, l), n) for l in range(1, spec.L_x)])


# ---------------------------------------------------------------- arcs

def choi_entanglement_arc(spec: CircuitSpec, ensemble, chi_max: int = 64, n_orders=(1,),
                          p_s: float | None = None) -> ArcTable:
    """Born-averaged left-block Choi entropies S(l), l = 1..L_x-1 (open chain)."""
    per = []
    saturated = False
    for t in ensemble:
        t = getattr(t, "trajectory", t)
        mps = evolve_choi(spec, t, chi_max, p_s=p_s, budget=math.inf)
        saturated |= mps.saturated
        w = schmidt_spectra(mps)
        per.append([[renyi_from_weights(x, n) for x in w] for n in n_orders])
    if saturated:
        warnings.warn(f"bond dimension saturated at chi_max={chi_max}", TruncationBudgetExceeded)
    per = np.array(per)
    k = len(per)
    err = per.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(per.shape[1:])
    return ArcTable(spec.L_x, tuple(n_orders), np.arange(1, spec.L_x), per.mean(axis=0), err, k,
                    {"chi_max": chi_max, "saturated": saturated, "p_s": spec.p_s if p_s is None else p_s})


def halved_prefactor(fit) -> tuple[float, float]:
    """c~/2 from an open-chain arc fit of the Choi entropies."""
    return fit.estimate / 2, fit.stderr / 2


