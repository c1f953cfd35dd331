"""Physics outputs from trajectory states: coherent information, arcs, CMI, EA correlator."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gaussian import GaussianState, entanglement_entropy, entropy_profile, global_parity, zz_correlator
from .lattice import BC_OPEN, CircuitSpec, build_spec
from .sampling import SamplerConfig, sample_ensemble

LN2 = math.log(2.0)


def _sem(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0


def _ensemble_sem(values, ensemble) -> float:
    """Standard error; samples from shared Metropolis chains are averaged per chain first."""
    chains = [getattr(s, "extras", {}).get("chain") for s in ensemble]
    if any(c is None for c in chains):
        return _sem(values)
    labels = sorted(set(chains))
    if len(labels) < 2:
        warnings.warn("one Metropolis chain: the error ignores autocorrelation", RuntimeWarning)
        return _sem(values)
    values = np.asarray(values, dtype=float)
    chains = np.asarray(chains)
    return _sem([values[chains == c].mean() for c in labels])


def _states(ensemble) -> list[GaussianState]:
    out = []
    for s in ensemble:
        st = getattr(s, "state", s)
        if st is None:
            raise ValueError("ensemble entries carry no state")
        out.append(st)
    return out


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


def branch_overlap(state: GaussianState) -> float:
    """q = |<prod X>| of an up-pinned record; the reference spectrum is (1 +- q)/2."""
    q = abs(global_parity(state))
    if q > 1 + 1e-8:
        raise FloatingPointError(f"branch overlap {q} exceeds 1")
    return min(q, 1.0)


def trajectory_coherent_information(state: GaussianState) -> float:
    return binary_entropy(0.5 * (1.0 + branch_overlap(state)))


def coherent_information(spec: CircuitSpec, ensemble) -> tuple[float, float]:
    """Born-averaged I_c in nats over records drawn from the up-pinned branch."""
    if spec.p_s:
        raise ValueError("noisy ensembles go through the Choi network")
    ensemble = list(ensemble)
    vals = [trajectory_coherent_information(st) for st in _states(ensemble)]
    return float(np.mean(vals)), _ensemble_sem(vals, ensemble)


# ---------------------------------------------------------------- I_c scan

@dataclass
class CrossingTable:
    rows: list[dict]
    crossings: list[dict]
    theta_c: float | None
    theta_c_err: float | None

    def curve(self, L: int):
        r = sorted((x for x in self.rows if x["L_x"] == L), key=lambda x: x["theta"])
        return (np.array([x["theta"] for x in r]), np.array([x["I_c"] for x in r]), np.array([x["stderr"] for x in r]))

    @property
    def sizes(self) -> list[int]:
        return sorted({r["L_x"] for r in self.rows})


def pairwise_crossing(theta, y1, e1, y2, e2):
    """Linear-interpolated root of y2 - y1; returns (theta*, err, bracketed)."""
    d = np.asarray(y2) - np.asarray(y1)
    ed = np.sqrt(np.asarray(e1) ** 2 + np.asarray(e2) ** 2)
    idx = [k for k in range(len(d) - 1) if d[k] == 0 or d[k] * d[k + 1] < 0]
    if not idx:
        k = int(np.argmin(np.abs(d)))
        return float(theta[k]), float("nan"), False
    k = idx[len(idx) // 2]
    t0, t1 = theta[k], theta[k + 1]
    slope = (d[k + 1] - d[k]) / (t1 - t0)
    tc = t0 - d[k] / slope if slope != 0 else 0.5 * (t0 + t1)
    err = abs(max(ed[k], ed[k + 1]) / slope) if slope != 0 else float("nan")
    return float(tc), float(err), True


def ic_crossing_scan(
    theta_grid,
    L_list,
    n_samples: int = 200,
    seed: int = 0,
    depth_factor: float = 1.0,
    p_eta: float = 0.0,
    p_gamma: float = 0.0,
    sampler: SamplerConfig | None = None,
    progress=None,
) -> CrossingTable:
    """I_c(theta, L) on open chains of depth ``depth_factor * L``, plus pairwise crossings.

    Deformed ensembles use the reweighted Metropolis sampler with the
    up-pinned weight.
    """
    rows = []
    for L in L_list:
        for k, th in enumerate(theta_grid):
            spec = build_spec(float(th), L, max(1, int(round(depth_factor * L))), BC_OPEN, p_eta=p_eta, p_gamma=p_gamma)
            if spec.undeformed:
                cfg = SamplerConfig(n_samples=n_samples, seed=seed + 7919 * k + L, pinning="all_up_Z")
            else:
                base = sampler or SamplerConfig(mode="metropolis_reweighted")
                cfg = SamplerConfig(mode="metropolis_reweighted", n_samples=n_samples, n_sweeps=base.n_sweeps,
                                    burn_in_sweeps=base.burn_in_sweeps, seed=seed + 7919 * k + L, pinning="all_up_Z",
                                    thin=base.thin, n_chains=base.n_chains)
            ens = sample_ensemble(spec, cfg)
            ic, err = coherent_information(spec, ens)
            rows.append({"L_x": L, "L_y": spec.L_y, "theta": float(th), "I_c": ic, "stderr": err, "samples": n_samples})
            if progress:
                progress(rows[-1])
    return crossing_from_rows(rows)


def crossing_from_rows(rows) -> CrossingTable:
    tab = CrossingTable(list(rows), [], None, None)
    sizes = tab.sizes
    for L1, L2 in zip(sizes[:-1], sizes[1:]):
        th, y1, e1 = tab.curve(L1)
        _, y2, e2 = tab.curve(L2)
        tc, err, ok = pairwise_crossing(th, y1, e1, y2, e2)
        if not ok:
            warnings.warn(f"I_c curves for L={L1},{L2} do not cross on the grid", RuntimeWarning)
        tab.crossings.append({"L1": L1, "L2": L2, "theta_c": tc, "stderr": err, "bracketed": ok})
    good = [c for c in tab.crossings if c["bracketed"]]
    if good:
        vals = np.array([c["theta_c"] for c in good])
        errs = np.array([c["stderr"] if np.isfinite(c["stderr"]) and c["stderr"] > 0 else np.inf for c in good])
        if np.all(np.isinf(errs)):
            tab.theta_c, tab.theta_c_err = float(vals.mean()), float(vals.std())
        else:
            w = 1 / errs ** 2
            tab.theta_c = float((w * vals).sum() / w.sum())
            tab.theta_c_err = float(max(1 / math.sqrt(w.sum()), vals.std()))
    return tab


# ---------------------------------------------------------------- arcs

@dataclass
class ArcTable:
    L_x: int
    n_orders: tuple
    lengths: np.ndarray
    mean: np.ndarray  # (len(n_orders), L_x - 1)
    stderr: np.ndarray
    samples: int
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for k, n in enumerate(self.n_orders):
            for i, l in enumerate(self.lengths):
                out.append({"L_x": self.L_x, "l": int(l), "S": float(self.mean[k, i]),
                            "stderr": float(self.stderr[k, i]), "renyi": n, "samples": self.samples})
        return out

    def order(self, n) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = list(self.n_orders).index(n)
        return self.lengths, self.mean[k], self.stderr[k]


def entanglement_arc(spec: CircuitSpec, ensemble, n_orders=(1,), n_starts: int | None = None) -> ArcTable:
    """Born-averaged S^(n)(l), l = 1..L_x-1, averaged over block positions per record."""
    if not spec.periodic:
        raise ValueError("arcs are taken on periodic chains")
    L = spec.L_x
    starts = range(L) if n_starts is None else np.linspace(0, L, n_starts, endpoint=False).astype(int)
    per = np.array([entropy_profile(st, tuple(n_orders), tuple(starts)) for st in _states(ensemble)])
    n = len(per)
    err = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(per.shape[1:])
    return ArcTable(L, tuple(n_orders), np.arange(1, L), per.mean(axis=0), err, n)


def conditional_mutual_information(spec: CircuitSpec, a: int, l: int, ensemble, average_positions: bool = True):
    """Born average of S_AD + S_BD - S_D - S_ABD with A, D, B, E laid out in order.

    |A| = |B| = a and |D| = l - a, so A and B have centres l apart.
    """
    L = spec.L_x
    if a < 1 or l <= a or l + a > L:
        raise ValueError("need 1 <= a < l and l + a <= L_x")
    starts = range(L) if (average_positions and spec.periodic) else [0]
    vals = []
    for st in _states(ensemble):
        acc = 0.0
        for x in starts:
            ad = entanglement_entropy(st, [(x + k) % L for k in range(l)])
            bd = entanglement_entropy(st, [(x + a + k) % L for k in range(l)])
            d = entanglement_entropy(st, [(x + a + k) % L for k in range(l - a)])
            abd = entanglement_entropy(st, [(x + k) % L for k in range(l + a)])
            acc += ad + bd - d - abd
        vals.append(acc / len(starts))
    return float(np.mean(vals)), _sem(vals)


def cmi_prediction(c_ent: float, a: int, l: int, L: int) -> float:
    """Log-law CMI, (c/3) ln[sin^2(pi l/L) / (sin(pi(l-a)/L) sin(pi(l+a)/L))]."""
    s = lambda x: math.sin(math.pi * x / L)
    return c_ent / 3.0 * math.log(s(l) ** 2 / (s(l - a) * s(l + a)))


def edwards_anderson(spec: CircuitSpec, ensemble, i: int, j: int) -> dict:
    """E|<Z_i Z_j>| and the plain average E<Z_i Z_j>."""
    c = np.array([zz_correlator(st, i, j) for st in _states(ensemble)])
    return {"ea": float(np.abs(c).mean()), "ea_err": _sem(np.abs(c)), "plain": float(c.mean()), "plain_err": _sem(c)}
