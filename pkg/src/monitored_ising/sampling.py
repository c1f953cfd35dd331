"""Trajectory ensembles: exact Born sampling, marginal m draws and Metropolis chains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussian import (
    CircuitRun,
    GaussianState,
    ImpossibleOutcome,
    apply_frame,
    init_product_state,
    run_circuit,
)
from .lattice import (
    CircuitSpec,
    Trajectory,
    all_plus,
    bulk_window,
    gauge_orbit_canonicalize,
    vortices_of,
)

MODES = ("sequential_born", "marginal_m_plus_metropolis_e", "metropolis_reweighted")
E_FREE_START_BELOW = 0.2 * math.pi


@dataclass
class SamplerConfig:
    mode: str = "sequential_born"
    n_samples: int = 100
    n_sweeps: int = 100
    burn_in_sweeps: int = 20
    seed: int = 0
    sector: int | None = None
    pinning: str = "all_plus_X"
    e_free_start: bool | None = None
    thin: int = 0  # > 0: long chains recording every ``thin`` sweeps instead of one chain per sample
    n_chains: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.thin < 0 or self.n_chains < 1:
            raise ValueError("thin must be >= 0 and n_chains >= 1")
        if self.thin and self.mode == "sequential_born":
            raise ValueError("thinning applies to Metropolis modes only")
        if self.sector not in (None, 1, -1):
            raise ValueError("sector must be None, +1 or -1")


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index``; does not depend on worker layout."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


@dataclass
class Sample:
    trajectory: Trajectory
    state: GaussianState | None
    column_log_prob: np.ndarray
    column_entropy: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def log_born_prob(self) -> float:
        return self.trajectory.log_born_prob


def _new_record(spec: CircuitSpec, seed: int | None = None) -> Trajectory:
    t = all_plus(spec)
    t.seed = seed
    return t


def sample_sequential(
    spec: CircuitSpec,
    rng: np.random.Generator,
    *,
    pinning: str = "all_plus_X",
    sector: int | None = None,
    max_tries: int = 10_000,
) -> Sample:
    """Draw one record gate by gate from the Born rule.

    ``sector`` conditions on the first-column flux W by redrawing that column;
    later columns are then sampled from the exact conditional law.
    In ``postselect_plus`` mode the all-plus record is evaluated instead.
    """
    if not spec.undeformed:
        raise ValueError("sequential sampling covers the undeformed ensemble only")
    traj = _new_record(spec)
    if spec.mode == "postselect_plus":
        run = run_circuit(spec, traj, pinning=pinning)
        traj.log_born_prob = run.log_prob
        return Sample(traj, run.state, run.column_log_prob, run.column_entropy)
    start = init_product_state(spec.L_x, pinning)
    if sector is None or spec.L_y == 0:
        run = run_circuit(spec, traj, rng=rng, state=start)
    else:
        for _ in range(max_tries):
            state = start.copy()
            first = run_circuit(spec, traj, rng=rng, state=state, columns=range(1))
            if traj.sector_W == sector:
                break
        else:
            raise RuntimeError(f"sector W={sector} not reached in {max_tries} draws")
        rest = run_circuit(spec, traj, rng=rng, state=first.state, columns=range(1, spec.L_y))
        run = CircuitRun(
            rest.state,
            first.log_prob + rest.log_prob,
            first.column_log_prob + rest.column_log_prob,
            first.column_entropy + rest.column_entropy,
        )
    traj.log_born_prob = run.log_prob
    traj.theta = spec.theta
    return Sample(traj, run.state, run.column_log_prob, run.column_entropy)


def sample_ensemble(spec: CircuitSpec, config: SamplerConfig, keep_states: bool = True, callback=None) -> list[Sample]:
    """Independent samples keyed by (seed, index).

    With ``config.thin`` the samples come from ``config.n_chains`` long
    chains instead; each carries its chain index in ``extras["chain"]``.
    """
    if config.thin:
        return _thinned_ensemble(spec, config, keep_states, callback)
    out = []
    for i in range(config.n_samples):
        rng = stream(config.seed, i)
        if config.mode == "sequential_born":
            s = sample_sequential(spec, rng, pinning=config.pinning, sector=config.sector)
        else:
            s = run_chain(spec, config, rng)
        s.trajectory.seed = config.seed
        s.extras["index"] = i
        if not keep_states:
            s.state = None
        if callback is not None:
            callback(s)
        out.append(s)
    return out


# ---------------------------------------------------------------- marginal m

def bond_flip_probability(beta: float) -> float:
    """P(s = -1) = e^-beta / (2 cosh beta)."""
    if math.isinf(beta):
        return 0.0
    return 1.0 / (1.0 + math.exp(2.0 * beta))


def sample_marginal_m(spec: CircuitSpec, rng: np.random.Generator) -> Trajectory:
    """A record whose m content follows the exact Born marginal.

    Independent signs with P(-1) = e^-beta/(2 cosh beta) on every spatial and
    temporal bond, reduced to the canonical gauge.  The e content is set to
    zero (all t = +1); only m and W are meaningful.
    """
    q = bond_flip_probability(spec.beta)
    nb, L, Ly = spec.n_bonds, spec.L_x, spec.L_y
    s = np.where(rng.random((nb, Ly)) < q, -1, 1).astype(np.int8)
    s_t = np.ones((L, Ly), dtype=np.int8)
    s_t[:, : Ly - 1] = np.where(rng.random((L, Ly - 1)) < q, -1, 1)
    raw = Trajectory(L, Ly, spec.bc, s, np.ones((L, Ly), dtype=np.int8), s_temporal=s_t, theta=spec.theta)
    c = gauge_orbit_canonicalize(raw)
    c.frame_x[:] = False
    return c


# ---------------------------------------------------------------- Metropolis

class GaussianChain:
    """Record plus cached prefix states, for single-sign-flip Metropolis.

    ``prefix[y]`` is the state before column y.  A flip at column y is
    re-evaluated exactly from ``prefix[y]`` to the end.
    """

    def __init__(self, spec: CircuitSpec, traj: Trajectory, pinning: str = "all_plus_X"):
        if not traj.is_canonical:
            raise ValueError("chains run on canonical records")
        self.spec = spec
        self.traj = traj.copy()
        self.pinning = pinning
        self.prefix: list[GaussianState] = [init_product_state(spec.L_x, pinning)]
        self.col_lp = np.zeros(spec.L_y)
        self.col_h = np.zeros(spec.L_y)
        self.final: GaussianState | None = None
        self._rebuild(0)

    def _evaluate_from(self, traj: Trajectory, y0: int):
        states: list = []
        state = self.prefix[y0].copy()
        r = run_circuit(self.spec, traj, state=state, columns=range(y0, self.spec.L_y),
                        apply_frames=False, states_out=states)
        return states, r.column_log_prob, r.column_entropy, state

    def _rebuild(self, y0: int) -> None:
        states, lp, h, final = self._evaluate_from(self.traj, y0)
        self.prefix = self.prefix[:y0] + states
        self.col_lp[y0:] = lp[y0:]
        self.col_h[y0:] = h[y0:]
        self.final = final

    @property
    def log_prob(self) -> float:
        return float(self.col_lp.sum())

    def try_flip(self, kind: str, j: int, y: int):
        """Log-probability and cache of the record with one sign flipped (None if impossible)."""
        trial = self.traj.copy()
        if kind == "s":
            trial.s_signs[j, y] *= -1
        else:
            trial.t_signs[j, y] *= -1
        try:
            states, lp, h, final = self._evaluate_from(trial, y)
        except ImpossibleOutcome:
            return None
        new_lp = lp.copy()
        new_lp[:y] = self.col_lp[:y]
        return trial, states, new_lp, h, final

    def commit(self, proposal, y: int) -> None:
        trial, states, lp, h, final = proposal
        self.traj = trial
        self.prefix = self.prefix[:y] + states
        self.col_lp = lp
        self.col_h[y:] = h[y:]
        self.final = final

    def final_state(self) -> GaussianState:
        s = self.final.copy()
        apply_frame(s, self.traj)
        return s


def deformation_log_weight(spec: CircuitSpec, traj: Trajectory) -> float:
    v = vortices_of(traj)
    if spec.p_eta > 0:
        eta = spec.eta
        return -math.inf if (math.isinf(eta) and v.n_e) else (0.0 if math.isinf(eta) else -eta * v.n_e)
    if spec.p_gamma > 0:
        g = spec.gamma
        n = v.n_e + v.n_m
        return -math.inf if (math.isinf(g) and n) else (0.0 if math.isinf(g) else -g * n)
    return 0.0


def allowed_moves(spec: CircuitSpec) -> list[str]:
    """Sign families a chain may flip for this ensemble."""
    if spec.p_eta > 0 and math.isinf(spec.eta):
        return ["s"]
    if spec.p_gamma > 0 and math.isinf(spec.gamma):
        return []
    return ["s", "t"]


def metropolis_sweep(chain: GaussianChain, rng: np.random.Generator, kinds=("t",), log_extra=None) -> tuple[int, int]:
    """One sweep = as many single-flip proposals as there are flippable signs.

    Acceptance min(1, exp(delta log-weight)) with log-weight = ln P(record)
    plus ``log_extra(traj)``; the proposal picks a sign uniformly, so it is
    symmetric.  Returns (accepted, proposed).
    """
    spec = chain.spec
    sizes = {"s": spec.n_bonds * spec.L_y, "t": spec.L_x * spec.L_y}
    kinds = [k for k in kinds]
    if not kinds:
        return 0, 0
    total = sum(sizes[k] for k in kinds)
    extra_now = log_extra(chain.traj) if log_extra else 0.0
    accepted = 0
    for _ in range(total):
        r = rng.integers(total)
        for kind in kinds:
            if r < sizes[kind]:
                break
            r -= sizes[kind]
        j, y = divmod(int(r), spec.L_y)
        u = rng.random()
        prop = chain.try_flip(kind, j, y)
        if prop is None:
            continue
        extra_new = log_extra(prop[0]) if log_extra else 0.0
        if extra_new == -math.inf:
            continue
        delta = float(prop[2].sum()) - chain.log_prob + extra_new - extra_now
        if delta >= 0 or u < math.exp(delta):
            chain.commit(prop, y)
            extra_now = extra_new
            accepted += 1
    return accepted, total


def metropolis_e_given_m(spec: CircuitSpec, m_record: Trajectory, rng: np.random.Generator, sweeps: int,
                         pinning: str = "all_plus_X", record_every: int = 1, e_free_start: bool | None = None):
    """Chain over t signs at fixed s (fixed m); yields a record every ``record_every`` sweeps."""
    start = m_record.copy()
    if e_free_start is None:
        e_free_start = spec.theta < E_FREE_START_BELOW
    if not e_free_start:
        start.t_signs = np.where(rng.random(start.t_signs.shape) < 0.5, -1, 1).astype(np.int8)
        try:
            GaussianChain(spec, start, pinning)
        except ImpossibleOutcome:
            start.t_signs[:] = 1
    chain = GaussianChain(spec, start, pinning)
    extra = (lambda t: deformation_log_weight(spec, t)) if not spec.undeformed else None
    out = []
    for sweep in range(sweeps):
        metropolis_sweep(chain, rng, ("t",), extra)
        if (sweep + 1) % record_every == 0:
            t = chain.traj.copy()
            t.log_born_prob = chain.log_prob
            out.append(t)
    return out, chain


def _start_chain(spec: CircuitSpec, config: SamplerConfig, rng: np.random.Generator):
    """Initial chain, allowed move kinds and extra log-weight for a Metropolis mode."""
    pinning = config.pinning
    if config.mode == "marginal_m_plus_metropolis_e":
        m_rec = sample_marginal_m(spec, rng)
        if config.sector is not None:
            for _ in range(10_000):
                if m_rec.sector_W == config.sector:
                    break
                m_rec = sample_marginal_m(spec, rng)
        _, chain = metropolis_e_given_m(spec, m_rec, rng, 0, pinning, e_free_start=config.e_free_start)
        extra = (lambda t: deformation_log_weight(spec, t)) if not spec.undeformed else None
        return chain, ["t"], extra
    e_free = config.e_free_start
    if e_free is None:
        e_free = spec.theta < E_FREE_START_BELOW or (spec.p_eta > 0 and math.isinf(spec.eta))
    start = sample_marginal_m(spec, rng) if e_free else sample_sequential(
        CircuitSpec(**{**spec.to_dict(), "p_eta": 0.0, "p_gamma": 0.0, "p_s": 0.0}), rng, pinning=pinning
    ).trajectory
    if spec.p_gamma > 0 and math.isinf(spec.gamma):
        start = all_plus(spec)
    chain = GaussianChain(spec, start, pinning)
    kinds = allowed_moves(spec)
    # s flips never change the e content, so an infinite e mass needs no extra weight
    extra = None if (spec.undeformed or kinds == ["s"]) else (lambda t: deformation_log_weight(spec, t))
    if config.sector is not None:
        # first-column s flips that change W are rejected
        base = extra

        def extra(t, base=base):
            if t.sector_W != config.sector:
                return -math.inf
            return base(t) if base else 0.0
    return chain, kinds, extra


def _chain_sample(chain: GaussianChain) -> Sample:
    traj = chain.traj.copy()
    traj.log_born_prob = chain.log_prob
    return Sample(traj, chain.final_state(), chain.col_lp.copy(), chain.col_h.copy())


def run_chain(spec: CircuitSpec, config: SamplerConfig, rng: np.random.Generator) -> Sample:
    """One decorrelated sample from a fresh chain (burn-in plus n_sweeps)."""
    chain, kinds, extra = _start_chain(spec, config, rng)
    for _ in range(config.burn_in_sweeps + config.n_sweeps):
        metropolis_sweep(chain, rng, kinds, extra)
    return _chain_sample(chain)


def _thinned_ensemble(spec: CircuitSpec, config: SamplerConfig, keep_states: bool, callback) -> list[Sample]:
    per_chain = -(-config.n_samples // config.n_chains)
    out = []
    for c in range(config.n_chains):
        rng = stream(config.seed, c)
        chain, kinds, extra = _start_chain(spec, config, rng)
        for _ in range(config.burn_in_sweeps):
            metropolis_sweep(chain, rng, kinds, extra)
        for i in range(min(per_chain, config.n_samples - len(out))):
            for _ in range(config.thin):
                metropolis_sweep(chain, rng, kinds, extra)
            smp = _chain_sample(chain)
            smp.trajectory.seed = config.seed
            smp.extras.update(index=len(out), chain=c)
            if not keep_states:
                smp.state = None
            if callback is not None:
                callback(smp)
            out.append(smp)
    return out


# ---------------------------------------------------------------- ensemble statistics

@dataclass
class VortexDensity:
    e: float
    m: float
    e_err: float
    m_err: float
    samples: int


def interior_vertex_mask(traj: Trajectory) -> np.ndarray:
    """Vertices with four bonds: not in the first or last column, not on an open edge."""
    mask = np.zeros((traj.L_x, traj.L_y), dtype=bool)
    mask[:, 1: traj.L_y - 1] = True
    if not traj.periodic:
        mask[0, :] = mask[-1, :] = False
    return mask


def vortex_density(ensemble, n_boot: int = 0, seed: int = 0) -> VortexDensity:
    """Per-record densities of e (interior vertices) and m (all plaquettes), averaged."""
    trajs = [getattr(s, "trajectory", s) for s in ensemble]
    if len(trajs) < 2:
        raise ValueError("need at least two records")
    e_vals, m_vals = [], []
    for t in trajs:
        v = vortices_of(t)
        mask = interior_vertex_mask(t)
        e_vals.append(v.e[mask].mean() if mask.any() else np.nan)
        m_vals.append(v.m.mean() if v.m.size else np.nan)
    e_arr, m_arr = np.array(e_vals), np.array(m_vals)
    n = len(trajs)
    if n_boot:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, (n_boot, n))
        e_err = float(np.nanstd(np.nanmean(e_arr[idx], axis=1)))
        m_err = float(np.nanstd(np.nanmean(m_arr[idx], axis=1)))
    else:
        e_err = float(np.nanstd(e_arr, ddof=1) / math.sqrt(n))
        m_err = float(np.nanstd(m_arr, ddof=1) / math.sqrt(n))
    return VortexDensity(float(np.nanmean(e_arr)), float(np.nanmean(m_arr)), e_err, m_err, n)


def expected_densities(theta: float) -> tuple[float, float]:
    """Closed-form (<e>, <m>) in the bulk."""
    return (1 - math.cos(theta) ** 4) / 2, (1 - math.sin(theta) ** 4) / 2


@dataclass
class EntropyEstimate:
    total: float
    stderr: float
    density: float
    density_err: float
    samples: int


def shannon_entropy(samples, margin: int | None = None, L_x: int | None = None) -> EntropyEstimate:
    """F = E[-ln P] and its bulk density per site and column.

    Uses the summed conditional entropies of the gates, whose expectation
    equals E[-ln P] and whose variance is much smaller.  The density keeps
    columns outside ``margin`` at both ends.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty ensemble")
    Ly = len(samples[0].column_entropy)
    L = L_x if L_x is not None else samples[0].trajectory.L_x
    if margin is None:
        margin = min(L, (Ly - 1) // 2)
    win = bulk_window(Ly, margin)
    tot = np.array([s.column_entropy.sum() for s in samples])
    dens = np.array([s.column_entropy[win].mean() / L for s in samples])
    n = len(samples)
    se = lambda a: float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EntropyEstimate(float(tot.mean()), se(tot), float(dens.mean()), se(dens), n)


def postselected_free_energy_density(spec: CircuitSpec, margin: int | None = None) -> float:
    """Bulk -ln Z per site and column of the all-plus record (single layer: -1/2 ln P)."""
    s = sample_sequential(CircuitSpec(**{**spec.to_dict(), "mode": "postselect_plus"}), np.random.default_rng(0))
    if margin is None:
        margin = min(spec.L_x, (spec.L_y - 1) // 2)
    win = bulk_window(spec.L_y, margin)
    return float(-0.5 * s.column_log_prob[win].mean() / spec.L_x)
