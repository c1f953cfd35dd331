"""Single-particle transfer matrices, Lyapunov spectra and many-body levels.

A gate exp(kappa * sigma * i g_a g_b / 2) conjugates the Majoranas linearly.
Multiplying the odd modes by i makes that action a real symmetric boost

    X-type pair (a even, b = a+1):   [[cosh k, -sigma sinh k], [-sigma sinh k, cosh k]]
    ZZ-type pair (a odd, b even):    [[cosh k, +sigma sinh k], [+sigma sinh k, cosh k]]

so a column is a real 2L x 2L matrix whose singular values pair up as
exp(+-eps).  The many-body transfer operator of the same column has levels
exp(1/2 sum_n nu_n eps_n), which is where E = -1/2 sum eps comes from.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gaussian import run_circuit
from .lattice import CircuitSpec, Trajectory, gauge_orbit_canonicalize, twisted


class StabilizationError(FloatingPointError):
    """QR diagonal underflowed; re-orthogonalize more often."""


def _require_finite(spec: CircuitSpec) -> None:
    if spec.zz_projector or spec.x_projector:
        raise ValueError("transfer matrices need finite couplings (0 < theta < pi/2)")


def _boost_params(tanh_k: float) -> tuple[float, float]:
    c = 1.0 / math.sqrt(1.0 - tanh_k * tanh_k)
    return c, c * tanh_k


def column_gates(spec: CircuitSpec, traj: Trajectory, y: int):
    """Gate list (a, b, cosh, signed sinh) for sqrt(X_y) M_Z(y) sqrt(X_{y-1}).

    Listed in application order.  The final column's X layer is already the
    half layer, so it enters whole.
    """
    _require_finite(spec)
    L = spec.L_x
    half_x = spec.x_half_tanh  # tanh(beta'/2): strength of a half X gate
    quarter = math.tanh(0.5 * math.atanh(half_x))  # half of the final half layer
    rows = []
    if y > 0:
        k = half_x if y - 1 < spec.L_y - 1 else quarter
        c, sh = _boost_params(k)
        for j in range(L):
            rows.append((2 * j, 2 * j + 1, c, -traj.t_signs[j, y - 1] * sh))
    c, sh = _boost_params(spec.zz_tanh)
    for j in range(spec.n_bonds):
        a, b = 2 * j + 1, (2 * j + 2) % (2 * L)
        orient = -1 if (spec.periodic and j == L - 1) else 1
        rows.append((a, b, c, orient * traj.s_signs[j, y] * sh))
    k = half_x if y < spec.L_y - 1 else spec.x_half_tanh
    c, sh = _boost_params(k)
    for j in range(L):
        rows.append((2 * j, 2 * j + 1, c, -traj.t_signs[j, y] * sh))
    arr = np.array(rows, dtype=np.float64)
    return arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2].copy(), arr[:, 3].copy()


def column_transfer(spec: CircuitSpec, traj: Trajectory, y: int) -> np.ndarray:
    """Dense 2L x 2L single-particle map of one symmetric column."""
    n = 2 * spec.L_x
    M = np.eye(n)
    a, b, c, sh = column_gates(spec, traj, y)
    _apply_rows(M, a, b, c, sh)
    return M


@njit(cache=True)
def _apply_rows(M, a_idx, b_idx, cosh_k, sinh_k):
    """Left-multiply M by each 2x2 boost in turn (in place)."""
    m = M.shape[1]
    for g in range(a_idx.shape[0]):
        a = a_idx[g]
        b = b_idx[g]
        c = cosh_k[g]
        s = sinh_k[g]
        for k in range(m):
            xa = M[a, k]
            xb = M[b, k]
            M[a, k] = c * xa + s * xb
            M[b, k] = s * xa + c * xb


@dataclass
class TransferSpectrum:
    """Typical Lyapunov levels eps_1 >= ... >= eps_L >= 0 per column."""

    epsilons: np.ndarray
    stderr: np.ndarray
    sample_count: int
    L_x: int
    sector_W: int | None = None
    per_sample: np.ndarray | None = field(default=None, repr=False)

    @property
    def ground_energy(self) -> float:
        return -0.5 * float(self.epsilons.sum())

    def to_rows(self) -> list[dict]:
        return [
            {"L_x": self.L_x, "sector_W": self.sector_W, "n": n + 1, "epsilon": float(e),
             "stderr": float(s), "samples": self.sample_count}
            for n, (e, s) in enumerate(zip(self.epsilons, self.stderr))
        ]


def trajectory_exponents(spec: CircuitSpec, traj: Trajectory, burn_in: int = 0, qr_every: int = 1) -> np.ndarray:
    """Per-column growth rates of the L leading directions for one record.

    Columns before ``burn_in`` evolve the frame but are not averaged.
    Non-canonical records are canonicalized first; the leftover output frame
    is orthogonal and leaves the growth rates alone.
    """
    if not traj.is_canonical:
        traj = gauge_orbit_canonicalize(traj)
    L = spec.L_x
    if burn_in >= spec.L_y:
        raise ValueError("burn-in consumes every column")
    rng = np.random.default_rng(12345)
    Q, _ = np.linalg.qr(rng.standard_normal((2 * L, L)))
    Q = np.ascontiguousarray(Q)
    acc = np.zeros(L)
    counted = 0
    pending = 0
    for y in range(spec.L_y):
        a, b, c, sh = column_gates(spec, traj, y)
        _apply_rows(Q, a, b, c, sh)
        pending += 1
        if pending == qr_every or y == spec.L_y - 1:
            Q, R = np.linalg.qr(Q)
            Q = np.ascontiguousarray(Q)
            d = np.abs(np.diag(R))
            if d.min() < 1e-300:
                raise StabilizationError("R diagonal underflow")
            if y >= burn_in:
                acc += np.log(d)
                counted += pending if y - pending + 1 >= burn_in else (y - burn_in + 1)
            pending = 0
    return np.sort(acc / max(counted, 1))[::-1]


def lyapunov_spectrum(
    spec: CircuitSpec,
    trajectories,
    burn_in: int | None = None,
    qr_every: int = 1,
    sector_W: int | None = None,
) -> TransferSpectrum:
    """Average per-record exponents over an iterable of trajectories."""
    if burn_in is None:
        burn_in = min(10 * spec.L_x, spec.L_y // 2)
    rows = [trajectory_exponents(spec, t, burn_in, qr_every) for t in trajectories]
    if not rows:
        raise ValueError("no trajectories")
    arr = np.array(rows)
    mean = arr.mean(axis=0)
    err = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.zeros_like(mean)
    return TransferSpectrum(mean, err, len(arr), spec.L_x, sector_W, per_sample=arr)


def many_body_levels(spectrum: TransferSpectrum | np.ndarray, parity: int | None = None, max_modes: int = 12) -> np.ndarray:
    """Sorted E = 1/2 sum nu_n eps_n.

    ``parity`` +1 keeps an even number of excited modes (nu = +1) relative to
    the filled sea, -1 an odd number, None keeps both.  Only the lowest
    ``max_modes`` modes are excited to keep the enumeration finite.
    """
    eps = np.sort(np.asarray(getattr(spectrum, "epsilons", spectrum)))
    base = -0.5 * eps.sum()
    low = eps[:max_modes]
    levels = []
    for k in range(len(low) + 1):
        if parity is not None and (k % 2 == 0) != (parity > 0):
            continue
        for combo in itertools.combinations(range(len(low)), k):
            levels.append(base + float(low[list(combo)].sum()))
    return np.sort(np.array(levels))


def partition_constant(spec: CircuitSpec) -> float:
    """ln Z(em) - ln ||psi(em)|| under the Boltzmann gate convention."""
    _require_finite(spec)
    L, Ly = spec.L_x, spec.L_y
    n_full = 2 * L * (Ly - 1) + L
    return 0.5 * (L * math.log(2.0) + n_full * (0.5 * spec.beta - math.log(math.cosh(0.5 * spec.beta_prime))))


def log_partition(spec: CircuitSpec, traj: Trajectory) -> float:
    """ln Z(em), with Z^2 the ket-bra glued spin sum of the record."""
    run = run_circuit(spec, traj)
    return run.state.log_norm + partition_constant(spec)


def log_born_weight(spec: CircuitSpec, traj: Trajectory) -> float:
    """ln P(record); equals 2 ln Z(em) up to a record-independent constant."""
    return run_circuit(spec, traj).log_prob


@dataclass
class GapEstimate:
    value: float
    stderr: float
    samples: int
    sector_counts: dict


def twist_gap(spec: CircuitSpec, samples, burn_in: int | None = None, n_boot: int = 200, seed: int = 0) -> GapEstimate:
    """(E_0(twisted) - E_0) L / 2 pi over records with W = +1.

    Each record is paired with its twisted partner: the same bulk with one
    extra m flux through the cylinder (one ZZ row flipped at all times).
    """
    if not spec.periodic:
        raise ValueError("the twist needs a periodic chain")
    samples = list(samples)
    counts = {+1: sum(t.sector_W == 1 for t in samples), -1: sum(t.sector_W == -1 for t in samples)}
    vacuum = [t for t in samples if t.sector_W == 1]
    if not vacuum:
        raise ValueError("no W=+1 records")
    if burn_in is None:
        burn_in = min(10 * spec.L_x, spec.L_y // 2)
    diffs = []
    for t in vacuum:
        e0 = trajectory_exponents(spec, t, burn_in)
        e1 = trajectory_exponents(spec, twisted(t), burn_in)
        diffs.append(-0.5 * (e1.sum() - e0.sum()))
    d = np.array(diffs) * spec.L_x / (2 * math.pi)
    rng = np.random.default_rng(seed)
    boots = [d[rng.integers(0, len(d), len(d))].mean() for _ in range(n_boot)] if len(d) > 1 else [d.mean()]
    return GapEstimate(float(d.mean()), float(np.std(boots)), len(d), counts)


def fermion_gap(spectrum: TransferSpectrum) -> float:
    """Smallest single-particle level in units of 2 pi / L."""
    return float(spectrum.epsilons.min() * spectrum.L_x / (2 * math.pi))


def clean_spectrum(spec: CircuitSpec, twist: bool = False, burn_in: int | None = None) -> TransferSpectrum:
    """Lyapunov spectrum of the all-plus record (optionally with the flux twist)."""
    from .lattice import all_plus

    t = all_plus(spec)
    if twist:
        t = twisted(t)
    return lyapunov_spectrum(spec, [t], burn_in=burn_in)
