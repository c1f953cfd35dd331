"""Command-line runner: config + flags in, CSV/JSON tables and a manifest out.

A config file is plain ``key = value`` text (an optional ``[run]`` header is
allowed); flags given on the command line override it.  Angles accept a
``pi`` suffix, lists are comma separated and ``a:b:n`` expands to n evenly
spaced values.  Outputs never overwrite: a rerun gets a numbered suffix.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .gaussian import ImpossibleOutcome
from .lattice import SpecError, build_spec, sector_split
from .transfer import StabilizationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GATE = 0, 2, 3, 4

COMMANDS = (
    "sample-trajectories", "ic-scan", "arc", "bulk-entropy", "lyapunov", "twist-gap",
    "choi-ic2", "choi-arc", "deform-scan", "fit", "verify-oracle",
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- parsing

def parse_number(text: str) -> float:
    t = str(text).strip().lower().replace(" ", "")
    if t in ("inf", "+inf"):
        return math.inf
    if t.endswith("pi"):
        head = t[:-2].rstrip("*")
        return (float(head) if head else 1.0) * math.pi
    return float(t)


def parse_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    t = str(text).strip()
    if ":" in t:
        parts = t.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range {t!r} must read start:stop:count")
        a, b, n = parse_number(parts[0]), parse_number(parts[1]), int(parts[2])
        return list(np.linspace(a, b, n))
    return [parse_number(x) for x in t.split(",") if x.strip()]


def read_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    out = {}
    for section in cp.sections():
        for k, v in cp[section].items():
            out[k.replace("-", "_")] = v
    return out


KNOWN_KEYS = {
    "theta", "lx", "ly", "bc", "samples", "sweeps", "seed", "sector", "renyi", "chi_max", "p_s", "p_eta",
    "p_gamma", "out", "format", "mode", "burn_in", "depth_factor", "kind", "input", "n_boot", "window",
    "l_min", "sampler", "margin", "thin", "chains",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monitored-ising", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", nargs="?", help="key = value config file")
        s.add_argument("--theta", help="angle(s) in radians; '0.25pi' and 'a:b:n' accepted")
        s.add_argument("--lx", help="width(s)")
        s.add_argument("--ly", help="depth; default depends on the command")
        s.add_argument("--bc", choices=("periodic", "open"))
        s.add_argument("--samples", type=int)
        s.add_argument("--sweeps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--sector", choices=("none", "+1", "-1", "1"))
        s.add_argument("--renyi", help="Renyi orders, e.g. 1,2,inf")
        s.add_argument("--chi-max", type=int)
        s.add_argument("--p-s", type=float)
        s.add_argument("--p-eta", type=float)
        s.add_argument("--p-gamma", type=float)
        s.add_argument("--mode", choices=("born", "postselect_plus"))
        s.add_argument("--out", help="output directory")
        s.add_argument("--format", choices=("csv", "json"))
        s.add_argument("--bits", action="store_true", help="report entropies in bits")
        if name == "fit":
            s.add_argument("kind", choices=("arc", "casimir", "collapse", "renyi"))
            s.add_argument("--input", required=True, help="CSV produced by another subcommand")
        if name == "deform-scan":
            s.add_argument("--axis", choices=("p_eta", "p_gamma"))
    return p


def merged_settings(args: argparse.Namespace) -> dict:
    cfg = read_config(args.config)
    unknown = set(cfg) - KNOWN_KEYS - {"axis", "bits"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        if k == "bits" and not v:
            continue
        cfg[k] = v
    return cfg


class Settings:
    """Typed view of the merged config."""

    def __init__(self, raw: dict, command: str):
        self.raw = raw
        self.command = command
        try:
            self.thetas = parse_list(raw.get("theta", "0.25pi"))
            self.widths = [int(x) for x in parse_list(raw.get("lx", "8"))]
            self.ly = raw.get("ly")
            self.bc = raw.get("bc", "periodic")
            self.samples = int(raw.get("samples", 50))
            self.sweeps = int(raw.get("sweeps", 50))
            self.seed = int(raw.get("seed", 0))
            sec = str(raw.get("sector", "none"))
            self.sector = None if sec == "none" else (1 if sec in ("1", "+1") else -1)
            self.renyi = parse_list(raw.get("renyi", "1"))
            self.chi_max = int(raw.get("chi_max", 64))
            self.p_s = float(raw.get("p_s", 0.0))
            self.p_eta = float(raw.get("p_eta", 0.0))
            self.p_gamma = float(raw.get("p_gamma", 0.0))
            self.mode = raw.get("mode", "born")
            self.out = Path(raw.get("out", "results"))
            self.format = raw.get("format", "csv")
            self.bits = bool(raw.get("bits", False))
            self.depth_factor = float(raw.get("depth_factor", 1.0))
            self.l_min = int(raw.get("l_min", 4))
            self.n_boot = int(raw.get("n_boot", 20))
            self.burn_in = int(raw.get("burn_in", 20))
            self.thin = int(raw.get("thin", 2))
            self.chains = int(raw.get("chains", 4))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")

    def depth(self, L: int, default_factor: float) -> int:
        if self.ly is None:
            return max(1, int(round(default_factor * L)))
        t = str(self.ly)
        if t.endswith("L"):
            return max(1, int(round(float(t[:-1] or 1) * L)))
        return int(t)

    def spec(self, theta: float, L: int, Ly: int, bc: str | None = None):
        return build_spec(theta, L, Ly, bc or self.bc, p_s=self.p_s, p_eta=self.p_eta, p_gamma=self.p_gamma,
                          mode=self.mode)


# ---------------------------------------------------------------- output

class Output:
    """Append-only result files plus a manifest for one run."""

    def __init__(self, settings: Settings, command: str):
        self.settings = settings
        self.command = command
        blob = json.dumps({"command": command, **{k: str(v) for k, v in sorted(settings.raw.items())}},
                          sort_keys=True)
        self.run_id = hashlib.sha256(blob.encode()).hexdigest()[:10]
        settings.out.mkdir(parents=True, exist_ok=True)
        self.stem = self._free_stem(f"{command}-{self.run_id}")
        self.files: list[str] = []

    def _free_stem(self, base: str) -> str:
        stem, k = base, 1
        while any(self.settings.out.glob(stem + ".*")) or any(self.settings.out.glob(stem + "-*.*")):
            stem = f"{base}.{k}"
            k += 1
        return stem

    def table(self, rows: list[dict], name: str = "table") -> Path:
        fmt = self.settings.format
        path = self.settings.out / f"{self.stem}-{name}.{fmt}"
        if fmt == "json":
            path.write_text(json.dumps(rows, indent=1, default=_jsonable))
        else:
            buf = io.StringIO()
            keys = list(dict.fromkeys(k for r in rows for k in r))
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(r.get(k, "")) for k in keys})
            path.write_text(buf.getvalue())
        self.files.append(path.name)
        return path

    def report(self, obj, name: str) -> Path:
        path = self.settings.out / f"{self.stem}-{name}.json"
        path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))
        self.files.append(path.name)
        return path

    def manifest(self, extra: dict | None = None) -> Path:
        m = {
            "command": self.command,
            "run_id": self.run_id,
            "config": {k: str(v) for k, v in sorted(self.settings.raw.items())},
            "seed": self.settings.seed,
            "samples": self.settings.samples,
            "files": self.files,
            "code_version": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            **(extra or {}),
        }
        path = self.settings.out / f"{self.stem}-manifest.json"
        path.write_text(json.dumps(m, indent=1, sort_keys=True, default=_jsonable))
        return path


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dict__"):
        return {k: v for k, v in vars(o).items() if not k.startswith("_")}
    return str(o)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _unit(bits: bool) -> float:
    return 1 / math.log(2) if bits else 1.0


# ---------------------------------------------------------------- commands

def cmd_sample_trajectories(st: Settings, out: Output) -> int:
    from .lattice import vortices_of
    from .sampling import SamplerConfig, sample_ensemble

    rows = []
    for L in st.widths:
        for th in st.thetas:
            spec = st.spec(th, L, st.depth(L, 2.0))
            mode = "sequential_born" if spec.undeformed else "metropolis_reweighted"
            cfg = SamplerConfig(mode=mode, n_samples=st.samples, n_sweeps=st.sweeps, seed=st.seed, sector=st.sector)
            for s in sample_ensemble(spec, cfg, keep_states=False):
                v = vortices_of(s.trajectory)
                rows.append({"L_x": L, "L_y": spec.L_y, "theta": th, "index": s.extras["index"], "seed": st.seed,
                             "sector_W": s.trajectory.sector_W, "log_born_prob": s.log_born_prob,
                             "n_e": v.n_e, "n_m": v.n_m, "record": s.trajectory.to_bytes().hex()})
    out.table(rows, "ensemble")
    return EXIT_OK


def _ic_rows(st: Settings, p_eta=0.0, p_gamma=0.0, progress=None):
    from .observables import ic_crossing_scan
    from .sampling import SamplerConfig

    tab = ic_crossing_scan(st.thetas, st.widths, st.samples, st.seed, st.depth_factor, p_eta=p_eta,
                           p_gamma=p_gamma, progress=progress,
                           sampler=SamplerConfig(mode="metropolis_reweighted", n_sweeps=st.sweeps,
                                                 burn_in_sweeps=st.burn_in, thin=st.thin, n_chains=st.chains))
    return tab


def _collapse_report(tab):
    from .fss import FitError, collapse_nu

    th = [r["theta"] for r in tab.rows]
    try:
        lo, hi = min(th), max(th)
        rep = collapse_nu(th, [r["L_x"] for r in tab.rows], [r["I_c"] for r in tab.rows],
                          [r["stderr"] for r in tab.rows], window=(lo, hi), n_boot=10)
        return json.loads(rep.to_json())
    except FitError as exc:
        return {"skipped": str(exc)}


def cmd_ic_scan(st: Settings, out: Output) -> int:
    tab = _ic_rows(st)
    u = _unit(st.bits)
    out.table([{**r, "I_c": r["I_c"] * u, "stderr": r["stderr"] * u} for r in tab.rows], "ic")
    out.report({"crossings": tab.crossings, "theta_c": tab.theta_c, "theta_c_err": tab.theta_c_err,
                "collapse": _collapse_report(tab)}, "crossing")
    return EXIT_OK


def cmd_deform_scan(st: Settings, out: Output) -> int:
    axis = st.raw.get("axis") or ("p_gamma" if st.p_gamma else "p_eta")
    val = st.p_gamma if axis == "p_gamma" else st.p_eta
    if val == 0.0:
        raise ConfigError("deform-scan needs a nonzero --p-eta or --p-gamma")
    tab = _ic_rows(st, p_eta=val if axis == "p_eta" else 0.0, p_gamma=val if axis == "p_gamma" else 0.0)
    out.table([{**r, axis: val} for r in tab.rows], "ic")
    out.report({"axis": axis, "value": val, "crossings": tab.crossings, "theta_c": tab.theta_c,
                "theta_c_err": tab.theta_c_err, "collapse": _collapse_report(tab)}, "crossing")
    return EXIT_OK


def cmd_arc(st: Settings, out: Output) -> int:
    from .fss import FitError, fit_arc
    from .observables import entanglement_arc
    from .sampling import SamplerConfig, sample_ensemble

    rows, fits, arcs = [], [], []
    u = _unit(st.bits)
    for L in st.widths:
        spec = st.spec(st.thetas[0], L, st.depth(L, 2.0), "periodic")
        mode = "sequential_born" if spec.undeformed else "metropolis_reweighted"
        ens = sample_ensemble(spec, SamplerConfig(mode=mode, n_samples=st.samples, n_sweeps=st.sweeps,
                                                  seed=st.seed, sector=st.sector))
        arc = entanglement_arc(spec, ens, tuple(st.renyi))
        arcs.append(arc)
        rows += [{**r, "S": r["S"] * u, "stderr": r["stderr"] * u, "theta": spec.theta} for r in arc.rows()]
    for n in st.renyi:
        try:
            fits.append({"renyi": n, **json.loads(fit_arc(arcs, n, l_min=st.l_min).to_json())})
        except FitError as exc:
            fits.append({"renyi": n, "skipped": str(exc)})
    out.table(rows, "arc")
    out.report(fits, "fit")
    return EXIT_OK


def cmd_bulk_entropy(st: Settings, out: Output) -> int:
    from .fss import FitError, fit_casimir
    from .sampling import postselected_free_energy_density, sample_ensemble, shannon_entropy, SamplerConfig

    rows = []
    for L in st.widths:
        spec = st.spec(st.thetas[0], L, st.depth(L, 100.0), "periodic")
        if spec.mode == "postselect_plus":
            rows.append({"L_x": L, "L_y": spec.L_y, "density": postselected_free_energy_density(spec),
                         "stderr": 0.0, "samples": 1})
            continue
        ens = sample_ensemble(spec, SamplerConfig(n_samples=st.samples, seed=st.seed, sector=1), keep_states=False)
        est = shannon_entropy(ens)
        rows.append({"L_x": L, "L_y": spec.L_y, "density": est.density, "stderr": est.density_err,
                     "samples": est.samples})
    out.table(rows, "density")
    try:
        errs = [r["stderr"] for r in rows] if all(r["stderr"] > 0 for r in rows) else None
        rep = json.loads(fit_casimir([r["L_x"] for r in rows], [r["density"] for r in rows], errs).to_json())
    except FitError as exc:
        rep = {"skipped": str(exc)}
    out.report(rep, "casimir")
    return EXIT_OK


def _records(st: Settings, spec):
    from .lattice import all_plus
    from .sampling import SamplerConfig, sample_ensemble

    if spec.mode == "postselect_plus":
        return [all_plus(spec)]
    cfg = SamplerConfig(n_samples=st.samples, seed=st.seed, sector=st.sector)
    return [s.trajectory for s in sample_ensemble(spec, cfg, keep_states=False)]


def cmd_lyapunov(st: Settings, out: Output) -> int:
    from .transfer import lyapunov_spectrum

    rows = []
    for L in st.widths:
        spec = st.spec(st.thetas[0], L, st.depth(L, 20.0))
        recs = _records(st, spec)
        groups = sector_split(recs) if spec.periodic and spec.mode == "born" else {None: recs}
        for W, group in groups.items():
            if not group:
                continue
            sp = lyapunov_spectrum(spec, group, sector_W=W)
            rows += [{**r, "theta": spec.theta, "ground_energy": sp.ground_energy} for r in sp.to_rows()]
    out.table(rows, "spectrum")
    return EXIT_OK


def cmd_twist_gap(st: Settings, out: Output) -> int:
    from .transfer import twist_gap

    rows = []
    for L in st.widths:
        spec = st.spec(st.thetas[0], L, st.depth(L, 20.0), "periodic")
        g = twist_gap(spec, _records(st, spec))
        rows.append({"L_x": L, "L_y": spec.L_y, "theta": spec.theta, "delta_m": g.value, "stderr": g.stderr,
                     "samples": g.samples, "W_plus": g.sector_counts[1], "W_minus": g.sector_counts[-1]})
    out.table(rows, "twist")
    return EXIT_OK


def _noisy_records(st: Settings, spec, rng):
    from .choi_tns import sample_noisy_ensemble
    from .sampling import sample_marginal_m

    if spec.p_s == 0.5:
        # at full dephasing the weight depends on m only; the i.i.d. sampler is exact
        return [sample_marginal_m(spec, rng) for _ in range(st.samples)]
    recs = []
    for i in range(st.samples):
        from .sampling import stream

        chain, _, _ = sample_noisy_ensemble(spec, stream(st.seed, i), st.sweeps, chi_max=min(st.chi_max, 32),
                                            record_every=st.sweeps)
        recs.append(chain[-1])
    return recs


def cmd_choi_ic2(st: Settings, out: Output) -> int:
    from .choi_tns import renyi2_coherent_information
    from .sampling import stream

    rows = []
    for L in st.widths:
        for th in st.thetas:
            spec = st.spec(th, L, st.depth(L, 1.0), "open")
            vals = [renyi2_coherent_information(spec, t, st.chi_max)
                    for t in _noisy_records(st, spec, stream(st.seed, 10 ** 6))]
            rows.append({"L_x": L, "L_y": spec.L_y, "theta": th, "p_s": spec.p_s, "I_c2": float(np.mean(vals)),
                         "stderr": float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                         "samples": len(vals), "chi_max": st.chi_max})
    out.table(rows, "ic2")
    return EXIT_OK


def cmd_choi_arc(st: Settings, out: Output) -> int:
    from .choi_tns import choi_entanglement_arc, halved_prefactor
    from .fss import FitError, fit_arc
    from .sampling import stream

    rows, arcs = [], []
    for L in st.widths:
        spec = st.spec(st.thetas[0], L, st.depth(L, 2.0), "open")
        arc = choi_entanglement_arc(spec, _noisy_records(st, spec, stream(st.seed, 10 ** 6)), st.chi_max,
                                    tuple(st.renyi))
        arcs.append(arc)
        rows += [{**r, "p_s": spec.p_s, "chi_max": st.chi_max, "saturated": arc.meta["saturated"]}
                 for r in arc.rows()]
    out.table(rows, "choi_arc")
    fits = []
    for n in st.renyi:
        try:
            f = fit_arc(arcs, n, l_min=min(st.l_min, 2), periodic=False)
            half, err = halved_prefactor(f)
            fits.append({"renyi": n, "c_tilde_half": half, "stderr": err, "chi2_dof": f.chi2_dof})
        except FitError as exc:
            fits.append({"renyi": n, "skipped": str(exc)})
    out.report(fits, "fit")
    return EXIT_OK


def _read_rows(path: str) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such input {path}")
    if p.suffix == ".json":
        return json.loads(p.read_text())
    with p.open() as fh:
        return [{k: _num(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


def cmd_fit(st: Settings, out: Output) -> int:
    from .fss import collapse_nu, fit_arc, fit_casimir, renyi_family_fit
    from .observables import ArcTable

    rows = _read_rows(st.raw["input"])
    kind = st.raw["kind"]
    if kind == "arc":
        arcs = []
        for L in sorted({int(r["L_x"]) for r in rows}):
            sub = sorted((r for r in rows if int(r["L_x"]) == L and str(r.get("renyi", 1.0)) in ("1", "1.0")),
                         key=lambda r: r["l"])
            arcs.append(ArcTable(L, (1,), np.array([r["l"] for r in sub]), np.array([[r["S"] for r in sub]]),
                                 np.array([[r["stderr"] for r in sub]]), int(sub[0].get("samples", 1))))
        rep = fit_arc(arcs, 1, l_min=st.l_min)
    elif kind == "casimir":
        errs = [r["stderr"] for r in rows]
        rep = fit_casimir([r["L_x"] for r in rows], [r["density"] for r in rows],
                          errs if all(e > 0 for e in errs) else None)
    elif kind == "collapse":
        rep = collapse_nu([r["theta"] for r in rows], [r["L_x"] for r in rows], [r["I_c"] for r in rows],
                          [r["stderr"] for r in rows], window=(min(r["theta"] for r in rows),
                                                               max(r["theta"] for r in rows)), n_boot=st.n_boot)
    else:
        rep = renyi_family_fit([r["renyi"] for r in rows], [r["c"] for r in rows],
                               [r["stderr"] for r in rows] if "stderr" in rows[0] else None)
    out.report(json.loads(rep.to_json()), f"fit-{kind}")
    return EXIT_OK


def cmd_verify_oracle(st: Settings, out: Output) -> int:
    from .verify import run_all

    checks = run_all(report=print)
    out.table([{"check": c.name, "max_error": c.max_error, "tolerance": c.tolerance, "ok": c.ok,
                "cases": c.cases} for c in checks], "oracle")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_GATE


HANDLERS = {
    "sample-trajectories": cmd_sample_trajectories,
    "ic-scan": cmd_ic_scan,
    "arc": cmd_arc,
    "bulk-entropy": cmd_bulk_entropy,
    "lyapunov": cmd_lyapunov,
    "twist-gap": cmd_twist_gap,
    "choi-ic2": cmd_choi_ic2,
    "choi-arc": cmd_choi_arc,
    "deform-scan": cmd_deform_scan,
    "fit": cmd_fit,
    "verify-oracle": cmd_verify_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = merged_settings(args)
        st = Settings(raw, args.command)
        out = Output(st, args.command)
        code = HANDLERS[args.command](st, out)
        out.manifest({"exit_code": code})
        return code
    except (FloatingPointError, ImpossibleOutcome, StabilizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SpecError, configparser.Error, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
