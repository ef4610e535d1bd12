import json
import os
from pathlib import Path

import pytest

from asepshuffle.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main, oracle_report
from asepshuffle.harness import (
    MANIFEST,
    OUTPUT_ENV,
    RESULTS,
    ConfigError,
    RunManifest,
    SchemaError,
    parse_config,
    read_rows,
    replay,
    run_experiment,
    summarize,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MIXING = """\
[experiment]
tag = mixing-scaling
reps = 6
master_seed = 7
parallelism = 1

[params]
N = 4, 8
p = 0.75
"""

DRIFT = """\
[experiment]
tag = drift
reps = 30
master_seed = 3
parallelism = 1

[params]
p = 0.75
t = 40
"""

EXCLUSION = """\
[experiment]
tag = exact-crosscheck
reps = 0
master_seed = 1

[params]
chain = exclusion
N = 3
k = 1
p = 2/3
"""


def test_minimal_config_parses():
    cfg = parse_config(MIXING)
    assert cfg.tag == "mixing-scaling" and cfg.reps == 6
    assert cfg.params["N"] == [4, 8] and cfg.params["p"] == [0.75]
    assert cfg.thresholds["ratio_lo"] == 1.5


def test_fraction_and_range_values():
    cfg = parse_config(EXCLUSION)
    assert cfg.params["p"] == [pytest.approx(2 / 3)]
    cfg = parse_config(MIXING.replace("N = 4, 8", "N = 4..6"))
    assert cfg.params["N"] == [4, 5, 6]


def test_range_error_names_key():
    with pytest.raises(ConfigError) as err:
        parse_config(MIXING.replace("p = 0.75", "p = 1.5"))
    assert err.value.errors == ["line 9: key 'p': value 1.5 out of range (0, 1)"]


def test_duplicate_key_lists_both_lines():
    with pytest.raises(ConfigError) as err:
        parse_config(MIXING + "N = 16\n")
    msg = " ".join(err.value.errors)
    assert "duplicate key 'N' in [params] at lines 8 and 10" in msg


def test_all_errors_collected():
    text = MIXING.replace("p = 0.75", "p = 1.5").replace("reps = 6", "reps = -1") + "bogus = 1\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert len(err.value.errors) >= 3


def test_missing_required_field():
    with pytest.raises(ConfigError) as err:
        parse_config(DRIFT.replace("t = 40\n", ""))
    assert any("t" in e for e in err.value.errors)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    parse_config(path.read_text())


def test_run_is_reproducible(tmp_path):
    cfg = parse_config(MIXING)
    m1, s1 = run_experiment(cfg, tmp_path / "a")
    m2, s2 = run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / RESULTS).read_bytes() == (tmp_path / "b" / RESULTS).read_bytes()
    assert m1.config_hash == m2.config_hash and m1.seeds == m2.seeds
    assert s1 == s2
    assert RunManifest.load(tmp_path / "a" / MANIFEST).rows == 12


def test_zero_reps(tmp_path):
    cfg = parse_config(MIXING.replace("reps = 6", "reps = 0"))
    man, summary = run_experiment(cfg, tmp_path)
    assert man.rows == 0 and man.seeds == []
    tag, rows = read_rows(tmp_path / RESULTS)
    assert tag == "mixing-scaling" and rows == []
    assert json.loads((tmp_path / MANIFEST).read_text())["rows"] == 0


def test_exclusion_crosscheck_values(tmp_path):
    _, summary = run_experiment(parse_config(EXCLUSION), tmp_path)
    assert all(r.verdict in ("pass", "info") for r in summary)
    rep = oracle_report("exclusion", {"N": "3", "k": "1", "p": "2/3"})
    pi = dict(zip(rep["states"], rep["stationary"]))
    assert pi["100"] == pytest.approx(4 / 7, abs=1e-10)
    assert pi["010"] == pytest.approx(2 / 7, abs=1e-10)
    assert pi["001"] == pytest.approx(1 / 7, abs=1e-10)


def test_summarize_empty_dir(tmp_path, capsys):
    assert summarize(tmp_path) == []
    assert main(["summarize", str(tmp_path)]) == EXIT_PASS


def test_summarize_drift(tmp_path):
    run_experiment(parse_config(DRIFT), tmp_path / "drift")
    (tmp_path / "partial").mkdir()
    (tmp_path / "partial" / RESULTS).write_text("garbage")
    rows = summarize(tmp_path)
    mean = [r for r in rows if r.quantity == "mean_over_t"]
    assert len(mean) == 1 and "-0.25" in mean[0].threshold


def test_corrupted_row_reports_line(tmp_path):
    run_experiment(parse_config(DRIFT), tmp_path)
    lines = (tmp_path / RESULTS).read_text().splitlines()
    lines[5] = "not,a,row"
    (tmp_path / RESULTS).write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="line 6"):
        summarize(tmp_path)
    assert main(["summarize", str(tmp_path)]) == EXIT_USAGE


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    cfg = parse_config(EXCLUSION)
    assert str(cfg.output_dir()).startswith(str(tmp_path))
    run_experiment(cfg)
    assert list(tmp_path.rglob(MANIFEST))


def test_replay(tmp_path):
    run_experiment(parse_config(MIXING), tmp_path / "a")
    replay(tmp_path / "a" / MANIFEST, tmp_path / "b")
    assert (tmp_path / "a" / RESULTS).read_bytes() == (tmp_path / "b" / RESULTS).read_bytes()


def test_cli_exit_codes(tmp_path):
    good = tmp_path / "ex.cfg"
    good.write_text(EXCLUSION)
    assert main(["run", str(good), "--out", str(tmp_path / "ok")]) == EXIT_PASS
    failing = tmp_path / "fail.cfg"
    failing.write_text(DRIFT + "\n[thresholds]\nabs_tol = 0\nse_mult = 0\n")
    assert main(["run", str(failing), "--out", str(tmp_path / "bad")]) == EXIT_FAIL
    bad = tmp_path / "bad.cfg"
    bad.write_text(MIXING.replace("p = 0.75", "p = 1.5"))
    assert main(["run", str(bad)]) == EXIT_USAGE
    assert main(["oracle", "nonsense", "p=0.5"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_cli_oracle_output(capsys):
    assert main(["oracle", "z_hitting", "p=0.75", "start=I_1"]) == EXIT_PASS
    out = json.loads(capsys.readouterr().out)
    assert out["expected_hitting"] == pytest.approx(3.14124937, abs=1e-6)
