import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from monitored_ising.fss import (
    FitError,
    bootstrap,
    chord_log,
    collapse_nu,
    fit_arc,
    fit_casimir,
    renyi_family_fit,
    unitary_renyi,
)
from monitored_ising.observables import ArcTable


def synthetic_arc(L, c, const=0.3, noise=0.0, rng=None, periodic=True, orders=(1,)):
    l = np.arange(1, L)
    pref = 3.0 if periodic else 6.0
    rows = []
    for n in orders:
        S = unitary_renyi(c, n) / pref * chord_log(l, L) + const
        if noise:
            S = S + rng.standard_normal(len(l)) * noise
        rows.append(S)
    err = np.full((len(orders), L - 1), noise if noise else 0.0)
    return ArcTable(L, tuple(orders), l, np.array(rows), err, 1)


def test_exact_arc_law_is_recovered():
    fit = fit_arc([synthetic_arc(32, 0.5), synthetic_arc(64, 0.5)], 1)
    assert fit.estimate == pytest.approx(0.5, abs=1e-10)
    assert json.loads(fit.to_json())["window"]["l_min"] == 4


def test_open_chain_arc_and_subtracted_form():
    assert fit_arc(synthetic_arc(48, 0.41, periodic=False), 1, periodic=False).estimate == pytest.approx(0.41)
    assert fit_arc(synthetic_arc(48, 0.795), 1, subtract_half=True).estimate == pytest.approx(0.795)


def test_renyi_arc_with_correction_term():
    L = 128
    l = np.arange(1, L)
    x = chord_log(l, L)
    S = unitary_renyi(0.5, 2) / 3 * x + 0.1 + 0.2 * np.exp(-1.0 * x)
    arc = ArcTable(L, (2,), l, S[None, :], np.zeros((1, L - 1)), 1)
    fit = fit_arc(arc, 2, correction_exponent=1.0)
    assert fit.estimate == pytest.approx(0.375, abs=1e-9)
    assert abs(fit_arc(arc, 2).estimate - 0.375) > 1e-3
    with pytest.raises(FitError):
        fit_arc(arc, 2, correction_exponent=1.0, subtract_half=True)


def test_arc_fit_needs_cut_lengths():
    with pytest.raises(FitError):
        fit_arc(synthetic_arc(8, 0.5), 1, l_min=4)


@pytest.mark.parametrize("quartic", [False, True])
def test_casimir_synthetic_law(quartic):
    L = np.array([6, 8, 10, 12, 16, 20, 24])
    f = 1.2 - math.pi * 0.447 / 6 / L ** 2 + (0.3 / L ** 4 if quartic else 0.0)
    fit = fit_casimir(L, f, quartic=quartic)
    assert fit.estimate == pytest.approx(0.447, abs=1e-9)
    assert fit.extra["f_inf"] == pytest.approx(1.2)


def test_casimir_needs_enough_widths():
    with pytest.raises(FitError):
        fit_casimir([6, 8, 10], [1, 1, 1])
    with pytest.raises(FitError):
        fit_casimir([6, 8, 10, 12], [1, 1, 1, 1], quartic=True)


def unbiased_and_covered(truth, estimates, errors):
    estimates, errors = np.array(estimates), np.array(errors)
    bias_ok = abs(estimates.mean() - truth) < errors.mean()
    coverage = np.mean(np.abs(estimates - truth) <= 1.96 * errors)
    return bias_ok, coverage


def test_arc_fit_is_unbiased_with_honest_errors():
    rng = np.random.default_rng(0)
    fits = [fit_arc(synthetic_arc(64, 0.795, noise=0.01, rng=rng), 1) for _ in range(200)]
    ok, cover = unbiased_and_covered(0.795, [f.estimate for f in fits], [f.stderr for f in fits])
    assert ok and cover >= 0.9


def test_casimir_fit_is_unbiased_with_honest_errors():
    rng = np.random.default_rng(1)
    L = np.array([6, 8, 10, 12, 16, 20, 24], dtype=float)
    err = 1e-5 * np.ones_like(L)
    est, se = [], []
    for _ in range(200):
        f = 0.9 - math.pi * 0.45 / 6 / L ** 2 + 0.2 / L ** 4 + rng.standard_normal(len(L)) * err
        fit = fit_casimir(L, f, err, quartic=True)
        est.append(fit.estimate)
        se.append(fit.stderr)
    ok, cover = unbiased_and_covered(0.45, est, se)
    assert ok and cover >= 0.9


def test_bootstrap_intervals_cover_the_mean():
    rng = np.random.default_rng(2)
    hits = 0
    for k in range(200):
        m, se = bootstrap(rng.standard_normal(50) + 3.0, n_boot=200, seed=k)
        hits += abs(m - 3.0) <= 1.96 * se
    assert hits / 200 >= 0.9


def synthetic_collapse(nu, tc, noise, rng):
    th, L, y = [], [], []
    for size in (8, 12, 16, 24):
        for t in np.linspace(0.6, 1.0, 11):
            th.append(t)
            L.append(size)
            y.append(0.35 + 0.3 * math.tanh((t - tc) * size ** (1 / nu)) + rng.standard_normal() * noise)
    return np.array(th), np.array(L), np.array(y), noise * np.ones(len(y))


def test_collapse_recovers_exponent():
    rng = np.random.default_rng(3)
    th, L, y, dy = synthetic_collapse(1.72, 0.8, 0.003, rng)
    rep = collapse_nu(th, L, y, dy, window=(0.7, 0.9), nu0=1.5, n_boot=10)
    assert abs(rep.estimate - 1.72) < max(3 * rep.stderr, 0.1)
    assert rep.extra["theta_c"] == pytest.approx(0.8, abs=0.01)


def test_collapse_needs_sizes_and_angles():
    with pytest.raises(FitError):
        collapse_nu([0.1, 0.2], [8, 12], [0.1, 0.2], [0.01, 0.01])


@given(st.floats(0.2, 1.5), st.floats(0.05, 0.8))
def test_renyi_family_round_trip(c_vn, c_inf):
    orders = [1, 2, 3, 4, math.inf]
    cn = [c_inf if math.isinf(n) else (c_vn - c_inf) / n + c_inf for n in orders]
    rep = renyi_family_fit(orders, cn)
    assert rep.estimate == pytest.approx(c_vn, abs=1e-9)
    assert rep.extra["c_inf"] == pytest.approx(c_inf, abs=1e-9)


def test_unitary_family_has_no_deviation():
    orders = [1, 2, 3, 4, math.inf]
    rep = renyi_family_fit(orders, [unitary_renyi(0.5, n) for n in orders])
    assert rep.extra["c_inf"] == pytest.approx(0.25)
    assert rep.extra["unitary_deviation"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(FitError):
        renyi_family_fit([1, 2, 3], [1, 1, 1])
