"""Fits: log-law arcs, Casimir term, data collapse, Renyi family, bootstrap."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize


class FitError(ValueError):
    pass


@dataclass
class FitReport:
    estimate: float
    stderr: float
    chi2_dof: float
    window: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    inputs_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


def _hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def weighted_linear_fit(X: np.ndarray, y: np.ndarray, err: np.ndarray | None):
    """Least squares y ~ X b with 1/err^2 weights; returns (b, cov, chi2_dof).

    Without errors (or with zero errors) the fit is unweighted and the
    covariance is scaled by the residual variance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k - 1:
        raise FitError("fewer points than parameters")
    use_w = err is not None and np.all(np.asarray(err) > 0)
    w = 1.0 / np.asarray(err, dtype=float) ** 2 if use_w else np.ones(n)
    A = X * np.sqrt(w)[:, None]
    bvec = y * np.sqrt(w)
    if np.linalg.cond(A) > 1e12:
        raise FitError("ill-conditioned fit")
    coef, *_ = np.linalg.lstsq(A, bvec, rcond=None)
    resid = bvec - A @ coef
    dof = max(n - k, 1)
    chi2 = float(resid @ resid) / dof
    cov = np.linalg.inv(A.T @ A)
    if not use_w:
        cov = cov * chi2
    return coef, cov, chi2


# ---------------------------------------------------------------- arcs

def chord_log(l, L) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    return np.log(L / math.pi * np.sin(math.pi * l / L))


def fit_arc(arcs, n=1, l_min: int = 4, l_max_offset: int = 4, subtract_half: bool = False,
            periodic: bool = True, correction_exponent: float | None = None) -> FitReport:
    """Prefactor c of S(l) = (c/3) ln[(L/pi) sin(pi l/L)] + const (c/6 on open chains).

    Accepts one ArcTable or several; several widths share the constant.
    ``subtract_half`` fits S(l) - S(L/2) with no constant instead.
    ``correction_exponent`` w adds a term b * chord^(-w); Renyi entropies of
    critical chains carry such corrections with w = 2/n.
    Cut lengths l < l_min and l > L - l_max_offset are excluded.
    """
    if not isinstance(arcs, (list, tuple)):
        arcs = [arcs]
    pref = 3.0 if periodic else 6.0
    xs, ys, es = [], [], []
    for arc in arcs:
        lengths, S, err = arc.order(n)
        L = arc.L_x
        keep = (lengths >= l_min) & (lengths <= L - l_max_offset)
        if subtract_half:
            half = int(np.argmin(np.abs(lengths - L / 2)))
            S = S - S[half]
            err = np.sqrt(err ** 2 + err[half] ** 2)
            x = np.log(np.sin(math.pi * lengths / L))
            keep &= lengths != lengths[half]
        else:
            x = chord_log(lengths, L)
        xs.append(x[keep]); ys.append(S[keep]); es.append(err[keep])
    x, y, e = np.concatenate(xs), np.concatenate(ys), np.concatenate(es)
    if len(x) < 3:
        raise FitError("too few cut lengths in the window")
    if subtract_half:
        X = x[:, None] / pref
    else:
        X = np.column_stack([x / pref, np.ones_like(x)])
    if correction_exponent is not None:
        if subtract_half:
            raise FitError("the correction term needs the unsubtracted form")
        X = np.column_stack([X, np.exp(-correction_exponent * x)])
    coef, cov, chi2 = weighted_linear_fit(X, y, e)
    return FitReport(float(coef[0]), float(math.sqrt(cov[0, 0])), chi2,
                     {"l_min": l_min, "l_max_offset": l_max_offset, "L_x": [a.L_x for a in arcs],
                      "subtract_half": subtract_half, "renyi": str(n),
                      "correction_exponent": correction_exponent},
                     {"const": float(coef[1]) if not subtract_half else 0.0}, _hash(x, y, e))


# ---------------------------------------------------------------- Casimir

def fit_casimir(widths, densities, errors=None, quartic: bool = False) -> FitReport:
    """c from f(L) = f_inf - (pi c / 6) / L^2, with f the bulk free energy per site and column.

    ``quartic`` adds the leading irrelevant-operator correction b / L^4.
    """
    L = np.asarray(widths, dtype=float)
    if len(L) < 4 + int(quartic):
        raise FitError("need at least four widths (five with the quartic term)")
    f = np.asarray(densities, dtype=float)
    X = np.column_stack([np.ones_like(L), 1.0 / L ** 2] + ([1.0 / L ** 4] if quartic else []))
    coef, cov, chi2 = weighted_linear_fit(X, f, errors)
    c = -6.0 * coef[1] / math.pi
    err = 6.0 * math.sqrt(cov[1, 1]) / math.pi
    return FitReport(float(c), float(err), chi2, {"L_x": [int(v) for v in L], "quartic": quartic},
                     {"f_inf": float(coef[0]), "quartic": float(coef[2]) if quartic else 0.0},
                     _hash(L, f, errors if errors is not None else []))


# ---------------------------------------------------------------- collapse

def collapse_quality(params, theta, L, y, dy) -> float:
    """Houdayer-Hartmann quality of I_c against x = (theta - theta_c) L^(1/nu).

    Each point is compared with the linear interpolation of every other
    size's curve at the same x, normalized by the combined variance.
    """
    tc, nu = params
    if nu <= 0.05:
        return 1e10
    x = (theta - tc) * L ** (1.0 / nu)
    sizes = np.unique(L)
    total, count = 0.0, 0
    curves = {}
    for s in sizes:
        m = L == s
        order = np.argsort(x[m])
        curves[s] = (x[m][order], y[m][order], dy[m][order])
    for s in sizes:
        xs, ys, es = curves[s]
        for xi, yi, ei in zip(xs, ys, es):
            for s2 in sizes:
                if s2 == s:
                    continue
                x2, y2, e2 = curves[s2]
                if xi < x2[0] or xi > x2[-1]:
                    continue
                k = min(max(np.searchsorted(x2, xi) - 1, 0), len(x2) - 2)
                t = (xi - x2[k]) / (x2[k + 1] - x2[k]) if x2[k + 1] > x2[k] else 0.0
                Y = (1 - t) * y2[k] + t * y2[k + 1]
                dY2 = ((1 - t) * e2[k]) ** 2 + (t * e2[k + 1]) ** 2
                total += (yi - Y) ** 2 / (ei ** 2 + dY2)
                count += 1
    if count < 3:
        return 1e10
    return total / count


def _collapse_once(theta, L, y, dy, tc0, nu0, window):
    best = None
    for t0 in np.linspace(window[0], window[1], 7):
        for n0 in (nu0 * 0.6, nu0, nu0 * 1.5):
            r = minimize(collapse_quality, [t0, n0], args=(theta, L, y, dy), method="Nelder-Mead",
                         options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000})
            if best is None or r.fun < best.fun:
                best = r
    return best


def collapse_nu(theta, L, y, dy, window=(0.2 * math.pi, 0.3 * math.pi), nu0: float = 1.5,
                n_boot: int = 20, seed: int = 0) -> FitReport:
    """(theta_c, nu) minimizing the collapse quality; bootstrap spreads as errors."""
    theta, L, y, dy = (np.asarray(a, dtype=float) for a in (theta, L, y, dy))
    if len(np.unique(L)) < 3 or len(np.unique(theta)) < 7:
        raise FitError("collapse needs >= 3 sizes and >= 7 angles")
    dy = np.where(dy > 0, dy, max(float(dy[dy > 0].min()) if np.any(dy > 0) else 1e-3, 1e-6))
    best = _collapse_once(theta, L, y, dy, None, nu0, window)
    tc, nu = best.x
    if not (window[0] - 0.05 <= tc <= window[1] + 0.05) or nu > 20:
        warnings.warn("collapse optimum at the edge of the search region", RuntimeWarning)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        yb = y + rng.standard_normal(len(y)) * dy
        r = minimize(collapse_quality, best.x, args=(theta, L, yb, dy), method="Nelder-Mead",
                     options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000})
        boots.append(r.x)
    boots = np.array(boots) if boots else np.zeros((1, 2))
    return FitReport(float(nu), float(boots[:, 1].std()), float(best.fun),
                     {"theta_window": list(window), "L": sorted(int(v) for v in np.unique(L))},
                     {"theta_c": float(tc), "theta_c_err": float(boots[:, 0].std())}, _hash(theta, L, y, dy))


# ---------------------------------------------------------------- Renyi family

def renyi_family_fit(orders, c_values, errors=None) -> FitReport:
    """c_n = (c_vN - c_inf)/n + c_inf, linear in 1/n; ``orders`` may contain inf.

    The estimate is c_vN; ``extra`` holds c_inf and the gap c_inf - c_vN/2
    that vanishes for the unitary form c (1 + n) / (2n).
    """
    inv = np.array([0.0 if math.isinf(float(n)) else 1.0 / float(n) for n in orders])
    if len(inv) < 4:
        raise FitError("need at least four Renyi orders")
    c = np.asarray(c_values, dtype=float)
    X = np.column_stack([inv, 1.0 - inv])  # c_n = c_vN/n + c_inf (1 - 1/n)
    coef, cov, chi2 = weighted_linear_fit(X, c, errors)
    c_vn, c_inf = coef
    return FitReport(float(c_vn), float(math.sqrt(cov[0, 0])), chi2, {"orders": [str(o) for o in orders]},
                     {"c_inf": float(c_inf), "c_inf_err": float(math.sqrt(cov[1, 1])),
                      "unitary_deviation": float(c_inf - c_vn / 2)}, _hash(inv, c))


def unitary_renyi(c: float, n: float) -> float:
    return c / 2 if math.isinf(n) else c * (1 + n) / (2 * n)


# ---------------------------------------------------------------- bootstrap

def bootstrap(values, statistic=np.mean, n_boot: int = 500, seed: int = 0) -> tuple[float, float]:
    """Statistic of the sample and its bootstrap standard error."""
    v = np.asarray(values)
    rng = np.random.default_rng(seed)
    stats = [statistic(v[rng.integers(0, len(v), len(v))]) for _ in range(n_boot)]
    return float(statistic(v)), float(np.std(stats))
