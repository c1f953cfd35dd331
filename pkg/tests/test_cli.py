import hashlib
import json
import math

import pytest

from monitored_ising import cli_runner, verify
from monitored_ising.cli_runner import (
    EXIT_CONFIG,
    EXIT_GATE,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    main,
    parse_list,
    parse_number,
)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tables(out):
    return sorted(p for p in out.iterdir() if not p.name.endswith("manifest.json"))


def test_number_and_list_parsing():
    assert parse_number("0.25pi") == pytest.approx(math.pi / 4)
    assert parse_number("pi") == pytest.approx(math.pi)
    assert parse_number("inf") == math.inf
    assert parse_list("0.1pi:0.3pi:3") == pytest.approx([0.1 * math.pi, 0.2 * math.pi, 0.3 * math.pi])
    assert parse_list("8,12") == [8.0, 12.0]
    with pytest.raises(ConfigError):
        parse_list("1:2")


def test_sample_trajectories_writes_table_and_manifest(tmp_path):
    code = main(["sample-trajectories", "--theta", "0.25pi", "--lx", "4", "--ly", "4", "--samples", "3",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    manifest = json.loads(next(tmp_path.glob("*manifest.json")).read_text())
    assert manifest["exit_code"] == 0 and manifest["samples"] == 3
    assert len(next(tmp_path.glob("*ensemble.csv")).read_text().splitlines()) == 4


def test_reruns_are_append_only_and_reproducible(tmp_path):
    args = ["ic-scan", "--theta", "0.2pi:0.3pi:3", "--lx", "4,6", "--samples", "10", "--seed", "3",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    first = {p.name: digest(p) for p in tables(tmp_path)}
    assert main(args) == EXIT_OK
    after = {p.name: digest(p) for p in tables(tmp_path)}
    assert all(after[name] == h for name, h in first.items())  # nothing overwritten
    new = sorted(set(after) - set(first))
    assert len(new) == len(first)
    for name in first:
        twin = next(n for n in new if n.replace(".1-", "-") == name)
        assert after[twin] == first[name]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("theta = 0.25pi\nlx = 4\nly = 8\nsamples = 2\nbc = periodic\nseed = 1\n")
    out = tmp_path / "res"
    assert main(["lyapunov", str(cfg), "--out", str(out), "--lx", "6"]) == EXIT_OK
    rows = next(out.glob("*spectrum.csv")).read_text().splitlines()
    assert rows[1].startswith("6,")


@pytest.mark.parametrize("argv", [
    ["arc", "--theta", "0.7pi", "--lx", "8"],
    ["ic-scan", "--lx", "4", "--samples", "0"],
    ["deform-scan", "--theta", "0.3pi", "--lx", "4"],
    ["fit", "casimir", "--input", "missing.csv"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_config_key_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("theta = 0.25pi\nflux_capacitor = 1\n")
    assert main(["arc", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_flag_value_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["arc", "--bc", "mobius"])
    assert exc.value.code == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(st, out):
        raise FloatingPointError("covariance left the pure manifold")

    monkeypatch.setitem(cli_runner.HANDLERS, "lyapunov", boom)
    assert main(["lyapunov", "--lx", "4", "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_verify_oracle_gate(tmp_path, monkeypatch):
    fast = [verify.check_born_probabilities]
    monkeypatch.setattr(verify, "ALL_CHECKS", fast)
    assert main(["verify-oracle", "--out", str(tmp_path / "ok")]) == EXIT_OK
    monkeypatch.setattr(verify, "ALL_CHECKS", [lambda: verify.Check("broken", 1.0, 1e-8, 1)])
    assert main(["verify-oracle", "--out", str(tmp_path / "bad")]) == EXIT_GATE


def test_fit_on_produced_table(tmp_path):
    assert main(["bulk-entropy", "--theta", "0.25pi", "--lx", "4,6,8,10", "--ly", "12", "--mode",
                 "postselect_plus", "--out", str(tmp_path)]) == EXIT_OK
    table = next(tmp_path.glob("*density.csv"))
    assert main(["fit", "casimir", "--input", str(table), "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads(next(tmp_path.glob("*fit-casimir.json")).read_text())
    assert 0.3 < rep["estimate"] < 0.7


def test_choi_commands_at_full_dephasing(tmp_path):
    base = ["--theta", "0.2856pi", "--lx", "4", "--ly", "4", "--samples", "3", "--p-s", "0.5",
            "--chi-max", "16", "--out", str(tmp_path)]
    assert main(["choi-ic2"] + base) == EXIT_OK
    assert main(["choi-arc"] + base) == EXIT_OK


def test_deform_scan_with_thinned_chains(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("thin = 1\nchains = 2\nburn_in = 1\n")
    assert main(["deform-scan", str(cfg), "--theta", "0.3pi:0.4pi:2", "--lx", "4", "--samples", "4",
                 "--p-eta", "0.5", "--out", str(tmp_path)]) == EXIT_OK
    assert next(tmp_path.glob("*ic.csv")).read_text().count("\n") == 3


def test_bits_conversion(tmp_path):
    cfg = tmp_path / "arc.cfg"
    cfg.write_text("l_min = 1\n")
    args = ["arc", str(cfg), "--theta", "0.25pi", "--lx", "8", "--ly", "4", "--samples", "2"]
    assert main(args + ["--out", str(tmp_path / "n")]) == EXIT_OK
    assert main(args + ["--bits", "--out", str(tmp_path / "b")]) == EXIT_OK
    nats = next((tmp_path / "n").glob("*arc.csv")).read_text().splitlines()[1].split(",")
    bits = next((tmp_path / "b").glob("*arc.csv")).read_text().splitlines()[1].split(",")
    assert float(bits[2]) == pytest.approx(float(nats[2]) / math.log(2))
