"""Circuit geometry, sign records, gauge moves and vortex bookkeeping.

Spins sit on an ``L_x x L_y`` grid: ``j`` runs along the chain, ``y`` along
the (fictitious) time direction.  Two kinds of bonds exist:

* spatial bonds ``(j, y)-(j+1, y)``: one ``ZZ`` gate each, sign ``s_signs[j, y]``;
* temporal bonds ``(j, y)-(j, y+1)``: one ``X`` gate each, sign
  ``t_signs[j, y]``.  The last column ``y = L_y-1`` is the half-strength
  layer that feeds the physical boundary legs.

A general record also allows ``s`` signs on temporal bonds (``s_temporal``)
and ``t`` signs on spatial bonds (``t_spatial``).  These are what raw bulk
measurement outcomes look like before strings are pushed to the final time;
:func:`gauge_orbit_canonicalize` removes them and leaves a Pauli frame on the
output legs.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

BC_PERIODIC = "periodic"
BC_OPEN = "open"
MODES = ("born", "postselect_plus")


class SpecError(ValueError):
    """Invalid circuit specification."""


def _deformation_strength(p: float) -> float:
    if p <= 0.0:
        return 0.0
    if p >= 0.5:
        return math.inf
    return math.log((1.0 + 2.0 * p) / (1.0 - 2.0 * p))


@dataclass(frozen=True)
class CircuitSpec:
    L_x: int
    L_y: int
    bc: str
    theta: float
    beta: float
    beta_prime: float
    p_s: float = 0.0
    p_eta: float = 0.0
    p_gamma: float = 0.0
    mode: str = "born"

    @property
    def n_bonds(self) -> int:
        return self.L_x if self.bc == BC_PERIODIC else self.L_x - 1

    @property
    def periodic(self) -> bool:
        return self.bc == BC_PERIODIC

    # Gate strengths are stored through tanh/sech, which stay finite at the
    # projector endpoints theta = 0 and theta = pi/2.
    @property
    def zz_tanh(self) -> float:
        return math.sin(self.theta)

    @property
    def zz_sech(self) -> float:
        return math.cos(self.theta)

    @property
    def x_tanh(self) -> float:
        return math.cos(self.theta)

    @property
    def x_sech(self) -> float:
        return math.sin(self.theta)

    @property
    def x_half_tanh(self) -> float:
        # tanh(beta'/2) = exp(-beta) = tan(pi/4 - theta/2)
        return math.tan(math.pi / 4 - self.theta / 2)

    @property
    def x_half_sech(self) -> float:
        t = self.x_half_tanh
        return math.sqrt(max(0.0, 1.0 - t * t))

    @property
    def zz_projector(self) -> bool:
        return math.isinf(self.beta)

    @property
    def x_projector(self) -> bool:
        return math.isinf(self.beta_prime)

    @property
    def eta(self) -> float:
        return _deformation_strength(self.p_eta)

    @property
    def gamma(self) -> float:
        return _deformation_strength(self.p_gamma)

    @property
    def beta_p(self) -> float:
        """Interlayer coupling of the noisy bilayer, exp(-2 beta_p) = 1 - 2 p_s."""
        if self.p_s >= 0.5:
            return math.inf
        return -0.5 * math.log1p(-2.0 * self.p_s)

    @property
    def undeformed(self) -> bool:
        return self.p_s == 0.0 and self.p_eta == 0.0 and self.p_gamma == 0.0

    def with_size(self, L_x: int | None = None, L_y: int | None = None) -> "CircuitSpec":
        return build_spec(
            self.theta,
            self.L_x if L_x is None else L_x,
            self.L_y if L_y is None else L_y,
            self.bc,
            p_s=self.p_s,
            p_eta=self.p_eta,
            p_gamma=self.p_gamma,
            mode=self.mode,
        )

    def to_dict(self) -> dict:
        return {
            "L_x": self.L_x,
            "L_y": self.L_y,
            "bc": self.bc,
            "theta": self.theta,
            "beta": self.beta,
            "beta_prime": self.beta_prime,
            "p_s": self.p_s,
            "p_eta": self.p_eta,
            "p_gamma": self.p_gamma,
            "mode": self.mode,
        }


def couplings(theta: float) -> tuple[float, float]:
    """Return (beta, beta') with tanh(beta) = sin(theta), tanh(beta') = cos(theta)."""
    # sinh(beta) = tan(theta) keeps full precision near the projector ends
    if theta >= math.pi / 2:
        beta = math.inf
    else:
        beta = math.asinh(math.tan(theta))
    if theta <= 0.0:
        beta_prime = math.inf
    else:
        beta_prime = math.asinh(1.0 / math.tan(theta))
    return beta, beta_prime


def theta_from_beta(beta: float) -> float:
    if math.isinf(beta):
        return math.pi / 2
    return math.atan(math.sinh(min(beta, 700.0)))


def build_spec(
    theta: float,
    L_x: int,
    L_y: int,
    bc: str = BC_PERIODIC,
    *,
    p_s: float = 0.0,
    p_eta: float = 0.0,
    p_gamma: float = 0.0,
    mode: str = "born",
) -> CircuitSpec:
    """Validate inputs and derive the couplings."""
    if not (0.0 <= theta <= math.pi / 2 + 1e-15):
        raise SpecError(f"theta={theta} outside [0, pi/2]")
    theta = min(float(theta), math.pi / 2)
    if int(L_x) != L_x or L_x < 2:
        raise SpecError(f"L_x must be an integer >= 2, got {L_x}")
    if int(L_y) != L_y or L_y < 1:
        raise SpecError(f"L_y must be an integer >= 1, got {L_y}")
    if bc not in (BC_PERIODIC, BC_OPEN):
        raise SpecError(f"unknown boundary condition {bc!r}")
    if mode not in MODES:
        raise SpecError(f"unknown mode {mode!r}")
    if not 0.0 <= p_s <= 0.5:
        raise SpecError(f"p_s={p_s} outside [0, 1/2]")
    for name, p in (("p_eta", p_eta), ("p_gamma", p_gamma)):
        if not 0.0 <= p <= 0.5:
            raise SpecError(f"{name}={p} outside [0, 1/2]")
    if sum(1 for p in (p_s, p_eta, p_gamma) if p != 0.0) > 1:
        raise SpecError("at most one of p_s, p_eta, p_gamma may be nonzero")
    beta, beta_prime = couplings(theta)
    return CircuitSpec(
        L_x=int(L_x),
        L_y=int(L_y),
        bc=bc,
        theta=theta,
        beta=beta,
        beta_prime=beta_prime,
        p_s=float(p_s),
        p_eta=float(p_eta),
        p_gamma=float(p_gamma),
        mode=mode,
    )


def _ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=np.int8)


@dataclass
class Trajectory:
    """One measurement record.

    ``s_signs`` has shape (n_bonds, L_y) and ``t_signs`` shape (L_x, L_y).
    ``frame_x`` / ``frame_zz`` flag Pauli operators left on the output legs
    by canonicalization; they change the state by a unitary and never the
    probabilities.
    """

    L_x: int
    L_y: int
    bc: str
    s_signs: np.ndarray
    t_signs: np.ndarray
    s_temporal: np.ndarray | None = None
    t_spatial: np.ndarray | None = None
    frame_x: np.ndarray | None = None
    frame_zz: np.ndarray | None = None
    log_born_prob: float = 0.0
    seed: int | None = None
    theta: float | None = None
    column_log_prob: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        nb = self.L_x if self.bc == BC_PERIODIC else self.L_x - 1
        self.s_signs = np.asarray(self.s_signs, dtype=np.int8)
        self.t_signs = np.asarray(self.t_signs, dtype=np.int8)
        if self.s_signs.shape != (nb, self.L_y):
            raise ValueError(f"s_signs shape {self.s_signs.shape} != {(nb, self.L_y)}")
        if self.t_signs.shape != (self.L_x, self.L_y):
            raise ValueError(f"t_signs shape {self.t_signs.shape} != {(self.L_x, self.L_y)}")
        if self.s_temporal is None:
            self.s_temporal = _ones((self.L_x, self.L_y))
        if self.t_spatial is None:
            self.t_spatial = _ones((nb, self.L_y))
        if self.frame_x is None:
            self.frame_x = np.zeros(self.L_x, dtype=bool)
        if self.frame_zz is None:
            self.frame_zz = np.zeros(nb, dtype=bool)
        self.s_temporal = np.asarray(self.s_temporal, dtype=np.int8)
        self.t_spatial = np.asarray(self.t_spatial, dtype=np.int8)
        for arr in (self.s_signs, self.t_signs, self.s_temporal, self.t_spatial):
            if not np.all(np.abs(arr) == 1):
                raise ValueError("signs must be +1 or -1")

    @property
    def n_bonds(self) -> int:
        return self.s_signs.shape[0]

    @property
    def periodic(self) -> bool:
        return self.bc == BC_PERIODIC

    @property
    def sector_W(self) -> int:
        """Product of the first-column ZZ signs (the flux through the cylinder)."""
        return int(np.prod(self.s_signs[:, 0], dtype=np.int64))

    @property
    def is_canonical(self) -> bool:
        return bool(np.all(self.s_temporal == 1) and np.all(self.t_spatial == 1))

    def copy(self) -> "Trajectory":
        return replace(
            self,
            s_signs=self.s_signs.copy(),
            t_signs=self.t_signs.copy(),
            s_temporal=self.s_temporal.copy(),
            t_spatial=self.t_spatial.copy(),
            frame_x=self.frame_x.copy(),
            frame_zz=self.frame_zz.copy(),
            column_log_prob=None if self.column_log_prob is None else self.column_log_prob.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "L_x": self.L_x,
            "L_y": self.L_y,
            "bc": self.bc,
            "theta": self.theta,
            "seed": self.seed,
            "log_born_prob": self.log_born_prob,
            "s_signs": self.s_signs.ravel().tolist(),
            "t_signs": self.t_signs.ravel().tolist(),
            "s_temporal": self.s_temporal.ravel().tolist(),
            "t_spatial": self.t_spatial.ravel().tolist(),
            "frame_x": self.frame_x.astype(int).tolist(),
            "frame_zz": self.frame_zz.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        L_x, L_y, bc = int(d["L_x"]), int(d["L_y"]), d["bc"]
        nb = L_x if bc == BC_PERIODIC else L_x - 1

        def arr(key, shape):
            if key not in d:
                return None
            return np.asarray(d[key], dtype=np.int8).reshape(shape)

        return cls(
            L_x=L_x,
            L_y=L_y,
            bc=bc,
            s_signs=arr("s_signs", (nb, L_y)),
            t_signs=arr("t_signs", (L_x, L_y)),
            s_temporal=arr("s_temporal", (L_x, L_y)),
            t_spatial=arr("t_spatial", (nb, L_y)),
            frame_x=None if "frame_x" not in d else np.asarray(d["frame_x"], dtype=bool),
            frame_zz=None if "frame_zz" not in d else np.asarray(d["frame_zz"], dtype=bool),
            log_born_prob=float(d.get("log_born_prob", 0.0)),
            seed=d.get("seed"),
            theta=d.get("theta"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))

    # Binary layout (little endian): magic b"TRJ1", int32 L_x, int32 L_y,
    # uint8 periodic flag, float64 theta (NaN if unknown), int64 seed (-1 if
    # unknown), float64 log_born_prob, then s_signs and t_signs as int8 in
    # row-major (space, time) order.  Canonical records only.
    def to_bytes(self) -> bytes:
        if not self.is_canonical or self.frame_x.any() or self.frame_zz.any():
            raise ValueError("binary form stores canonical, frame-free records only")
        header = np.zeros(1, dtype=[
            ("magic", "S4"), ("L_x", "<i4"), ("L_y", "<i4"), ("periodic", "u1"),
            ("theta", "<f8"), ("seed", "<i8"), ("logp", "<f8"),
        ])
        header["magic"] = b"TRJ1"
        header["L_x"] = self.L_x
        header["L_y"] = self.L_y
        header["periodic"] = int(self.periodic)
        header["theta"] = np.nan if self.theta is None else self.theta
        header["seed"] = -1 if self.seed is None else self.seed
        header["logp"] = self.log_born_prob
        return header.tobytes() + self.s_signs.astype("<i1").tobytes() + self.t_signs.astype("<i1").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Trajectory":
        dt = np.dtype([
            ("magic", "S4"), ("L_x", "<i4"), ("L_y", "<i4"), ("periodic", "u1"),
            ("theta", "<f8"), ("seed", "<i8"), ("logp", "<f8"),
        ])
        h = np.frombuffer(buf[: dt.itemsize], dtype=dt)[0]
        if h["magic"] != b"TRJ1":
            raise ValueError("not a trajectory record")
        L_x, L_y = int(h["L_x"]), int(h["L_y"])
        bc = BC_PERIODIC if h["periodic"] else BC_OPEN
        nb = L_x if bc == BC_PERIODIC else L_x - 1
        off = dt.itemsize
        s = np.frombuffer(buf[off: off + nb * L_y], dtype="<i1").reshape(nb, L_y)
        off += nb * L_y
        t = np.frombuffer(buf[off: off + L_x * L_y], dtype="<i1").reshape(L_x, L_y)
        theta = None if np.isnan(h["theta"]) else float(h["theta"])
        seed = None if h["seed"] < 0 else int(h["seed"])
        return cls(L_x, L_y, bc, s.copy(), t.copy(), log_born_prob=float(h["logp"]), seed=seed, theta=theta)


def all_plus(spec: CircuitSpec) -> Trajectory:
    return Trajectory(
        spec.L_x, spec.L_y, spec.bc,
        _ones((spec.n_bonds, spec.L_y)), _ones((spec.L_x, spec.L_y)),
        theta=spec.theta,
    )


def twisted(traj: Trajectory, bond: int | None = None) -> Trajectory:
    """Flip one ZZ row for all times: threads a flux without adding bulk vortices."""
    out = traj.copy()
    b = out.n_bonds - 1 if bond is None else bond
    out.s_signs[b, :] *= -1
    return out


@dataclass(frozen=True)
class VortexField:
    """Binary vortex occupations.

    ``m`` lives on bulk plaquettes, shape (n_bonds, L_y-1); ``e`` on
    vertices, shape (L_x, L_y).
    """

    m: np.ndarray
    e: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, VortexField):
            return NotImplemented
        return np.array_equal(self.m, other.m) and np.array_equal(self.e, other.e)

    def __hash__(self):
        return hash((self.m.tobytes(), self.e.tobytes()))

    @property
    def n_m(self) -> int:
        return int(self.m.sum())

    @property
    def n_e(self) -> int:
        return int(self.e.sum())


def vortices_of(traj: Trajectory) -> VortexField:
    L_x, L_y = traj.L_x, traj.L_y
    nb = traj.n_bonds
    s, t = traj.s_signs.astype(np.int64), traj.t_signs.astype(np.int64)
    sT, tS = traj.s_temporal.astype(np.int64), traj.t_spatial.astype(np.int64)

    # plaquette (j, y): spatial bonds j at y and y+1, temporal bonds j and j+1 at y
    right = (np.arange(nb) + 1) % L_x
    prod_m = s[:, :-1] * s[:, 1:] * sT[:nb, :-1] * sT[right, :-1]
    m = (prod_m < 0).astype(np.int8)

    # vertex (j, y): spatial bonds j-1 and j, temporal bonds into and out of y
    prod_e = t.copy()
    prod_e[:, 1:] *= t[:, :-1]
    for j in range(L_x):
        if j < nb:
            prod_e[j] *= tS[j]
        left = j - 1 if j > 0 else (L_x - 1 if traj.periodic else None)
        if left is not None:
            prod_e[j] *= tS[left]
    e = (prod_e < 0).astype(np.int8)
    return VortexField(m=m, e=e)


def vertex_gauge(traj: Trajectory, j: int, y: int) -> Trajectory:
    """sigma_{j,y} -> -sigma_{j,y}: flip s on the four bonds touching the vertex."""
    out = traj.copy()
    _vertex_gauge_inplace(out, j, y)
    return out


def _vertex_gauge_inplace(traj: Trajectory, j: int, y: int) -> None:
    L_x, nb = traj.L_x, traj.n_bonds
    if j < nb:
        traj.s_signs[j, y] *= -1
    left = j - 1 if j > 0 else (L_x - 1 if traj.periodic else None)
    if left is not None:
        traj.s_signs[left, y] *= -1
    traj.s_temporal[j, y] *= -1
    if y > 0:
        traj.s_temporal[j, y - 1] *= -1


def plaquette_gauge(traj: Trajectory, j: int, y: int) -> Trajectory:
    """Flip t on the four bonds around plaquette (j, y); requires y < L_y-1."""
    out = traj.copy()
    _plaquette_gauge_inplace(out, j, y)
    return out


def _plaquette_gauge_inplace(traj: Trajectory, j: int, y: int) -> None:
    if not 0 <= y < traj.L_y - 1:
        raise IndexError("plaquette row out of range")
    if not 0 <= j < traj.n_bonds:
        raise IndexError("plaquette column out of range")
    traj.t_spatial[j, y] *= -1
    traj.t_spatial[j, y + 1] *= -1
    traj.t_signs[j, y] *= -1
    traj.t_signs[(j + 1) % traj.L_x, y] *= -1


def random_gauge(traj: Trajectory, rng: np.random.Generator, density: float = 0.5) -> Trajectory:
    """Apply vertex and plaquette gauge moves at random positions."""
    out = traj.copy()
    for y in range(out.L_y):
        for j in range(out.L_x):
            if rng.random() < density:
                _vertex_gauge_inplace(out, j, y)
    for y in range(out.L_y - 1):
        for j in range(out.n_bonds):
            if rng.random() < density:
                _plaquette_gauge_inplace(out, j, y)
    return out


def gauge_orbit_canonicalize(traj: Trajectory) -> Trajectory:
    """Push every string toward the final time along straight columns.

    Temporal ``s`` defects are removed by vertex moves marching forward in
    time, spatial ``t`` defects by plaquette moves.  What is left on the
    final column becomes the output Pauli frame.
    """
    out = traj.copy()
    L_y = out.L_y
    for y in range(L_y - 1):
        for j in np.flatnonzero(out.s_temporal[:, y] < 0):
            _vertex_gauge_inplace(out, int(j), y + 1)
        for j in np.flatnonzero(out.t_spatial[:, y] < 0):
            _plaquette_gauge_inplace(out, int(j), y)
    # Final column: an X on the half bond, or a ZZ insertion, commutes past
    # the last layer up to flipping that layer's X-gate signs.
    out.frame_x ^= out.s_temporal[:, L_y - 1] < 0
    out.s_temporal[:, L_y - 1] = 1
    last = np.flatnonzero(out.t_spatial[:, L_y - 1] < 0)
    for j in last:
        out.t_signs[j, L_y - 1] *= -1
        out.t_signs[(j + 1) % out.L_x, L_y - 1] *= -1
        out.frame_zz[j] ^= True
    out.t_spatial[:, L_y - 1] = 1
    return out


def sector_split(ensemble: Sequence[Trajectory]) -> dict[int, list[Trajectory]]:
    out: dict[int, list[Trajectory]] = {+1: [], -1: []}
    for traj in ensemble:
        out[traj.sector_W].append(traj)
    for w, members in out.items():
        if not members:
            warnings.warn(f"sector W={w:+d} received no samples", RuntimeWarning, stacklevel=2)
    return out


def bulk_window(L_y: int, margin: int) -> slice:
    """Columns kept for bulk averages after dropping ``margin`` at both ends."""
    if 2 * margin >= L_y:
        raise ValueError(f"margin {margin} leaves no bulk columns in L_y={L_y}")
    return slice(margin, L_y - margin)


def iter_sites(traj: Trajectory) -> Iterable[tuple[int, int]]:
    for y in range(traj.L_y):
        for j in range(traj.L_x):
            yield j, y
