import json
from pathlib import Path

import pytest

from wavegcc.cli import list_experiments, main, validate
from wavegcc.config import from_dict, load
from wavegcc.errors import ConfigError

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.toml"))

WHOLE_KOFT = """
experiment = "kofT-scan"
[manifold]
kind = "flat_torus"
[region]
whole = true
[solver]
nx = 4
na = 8
[params]
T = [0.5, 1.0]
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_list(capsys):
    assert len(list_experiments()) == 11
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "kofT-scan" in out and "damped-beam" in out


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", str(path)]) == 0
    assert capsys.readouterr().out.rstrip().endswith("ok")


def test_validate_warns_on_large_dense_gramian():
    cfg = from_dict({"experiment": "lower-bound", "manifold": {"kind": "flat_torus"},
                     "region": {"whole": True}, "solver": {"K_max": 512}})
    levels = [lvl for lvl, msg in validate(cfg) if "memory budget" in msg]
    assert levels == ["warning"]
    small = from_dict({"experiment": "lower-bound", "manifold": {"kind": "flat_torus"},
                       "region": {"whole": True}, "solver": {"K_max": 8}})
    assert all(lvl == "info" for lvl, _ in validate(small))


def test_unknown_key_diagnostic(tmp_path, capsys):
    p = write(tmp_path, WHOLE_KOFT.replace("nx = 4", "nx = 4\nfoo = 1"))
    assert main(["validate", str(p)]) == 2
    assert "solver.foo" in capsys.readouterr().err


def test_toml_syntax_error_has_line(tmp_path):
    p = write(tmp_path, 'experiment = "tgcc"\n[manifold\n')
    with pytest.raises(ConfigError, match="line 2"):
        load(p)


def test_unknown_experiment_and_bad_params():
    with pytest.raises(ConfigError):
        from_dict({"experiment": "nope", "manifold": {"kind": "flat_torus"}, "region": {"whole": True}})
    with pytest.raises(ConfigError, match="params.T"):
        from_dict({"experiment": "kofT-scan", "manifold": {"kind": "flat_torus"},
                   "region": {"whole": True}, "params": {"T": "soon"}})


def test_spectral_experiment_needs_flat_torus(tmp_path, capsys):
    text = WHOLE_KOFT.replace('experiment = "kofT-scan"', 'experiment = "hum"').replace(
        'kind = "flat_torus"', 'kind = "round_sphere"').replace("T = [0.5, 1.0]", "T = 1.0")
    text = text.replace("nx = 4\nna = 8\n", "")
    assert main(["validate", str(write(tmp_path, text))]) == 2
    assert "flat_torus" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, WHOLE_KOFT)), "--out", str(out), "--no-figures"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "pass" and man["tables"] == {"kofT": "kofT.csv"}
    assert (out / "plot.py").exists() and (out / "timing.json").exists()
    rows = (out / "kofT.csv").read_text().splitlines()
    assert rows[0].startswith("T,K_of_T")
    assert float(rows[2].split(",")[1]) == pytest.approx(1.0, abs=1e-9)
    assert "PASS" in capsys.readouterr().out


def test_strip_tgcc_reports_inf(tmp_path):
    out = tmp_path / "strip"
    cfg = Path(__file__).resolve().parent.parent / "configs" / "strip_tgcc.toml"
    assert main(["run", str(cfg), "--out", str(out), "--no-figures"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["T_GCC"] == "+inf"
    assert man["summary"]["certificate"] == "analytic"
    assert (out / "tgcc.csv").read_text().splitlines()[1].startswith("inf,analytic")


def test_failed_assertion_exit_code(tmp_path):
    # a wrong expected value makes the run fail with exit code 1
    text = """
experiment = "tgcc"
[manifold]
kind = "flat_torus"
[region]
whole = true
[solver]
nx = 4
na = 8
[params]
expected = 0.7
"""
    assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o"), "--no-figures"]) == 1


def test_repeated_runs_byte_identical(tmp_path):
    cfg = write(tmp_path, WHOLE_KOFT)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["run", str(cfg), "--out", str(d), "--seed", "3"]) == 0
    names = sorted(p.name for p in dirs[0].iterdir() if p.name != "timing.json")
    assert "manifest.json" in names and "kofT.csv" in names
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n


def test_bad_seed_and_threads(tmp_path):
    cfg = str(write(tmp_path, WHOLE_KOFT))
    assert main(["run", cfg, "--seed", "-1", "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["--threads", "0", "list"])
