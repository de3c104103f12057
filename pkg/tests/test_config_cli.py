import json
from pathlib import Path

import pytest

from horizontal_diffusion.cli import OUT_ENV, main
from horizontal_diffusion.config import load_config, parse_config, validate_config
from horizontal_diffusion.errors import SchemaError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = "manifold: {name: euclidean}\nmc: {seed: 3}\n"


# -- schema ------------------------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.seed == 3
    assert cfg.manifolds[0].name == "euclidean"
    assert cfg.generator.kind == "zero"
    assert cfg.grid.n_steps > 0
    assert cfg.mc.threads == 1


def test_seed_is_required():
    with pytest.raises(SchemaError) as err:
        parse_config("manifold: {name: euclidean}\n")
    assert any(path == "mc.seed" and "required" in msg for path, msg in err.value.violations)
    with pytest.raises(SchemaError):
        parse_config("manifold: {name: euclidean}\nmc: {n_paths: 5}\n")


def test_unknown_manifold_names_the_field():
    with pytest.raises(SchemaError) as err:
        parse_config("manifold: {name: torus}\nmc: {seed: 1}\n")
    (path, msg), = err.value.violations
    assert path.startswith("manifold")
    assert "name" in path and "torus" in msg


def test_all_violations_are_reported():
    text = "manifold: {name: torus}\ngrid: {t_end: -1, n_steps: 0}\nbogus: 1\n"
    with pytest.raises(SchemaError) as err:
        parse_config(text)
    paths = {p for p, _ in err.value.violations}
    assert len(err.value.violations) >= 5
    assert {"mc.seed", "bogus"} <= paths
    assert any(p.startswith("grid.") for p in paths)


def test_alpha_above_u0_warns():
    text = MINIMAL + "family: {u0: 0.1, alpha: 0.5}\n"
    with pytest.warns(UserWarning, match="alpha exceeds"):
        cfg = parse_config(text)
    assert cfg.family.alpha == 0.5


def test_manifold_list_and_digest():
    a = parse_config("manifold: [{name: sphere}, {name: euclidean}]\nmc: {seed: 1}\n")
    assert [m.name for m in a.manifolds] == ["sphere", "euclidean"]
    b = parse_config("mc: {seed: 1}\nmanifold: [{name: sphere}, {name: euclidean}]\n")
    assert a.digest() == b.digest()
    assert validate_config(a.canonical()).digest() == a.digest()
    assert parse_config("manifold: [{name: sphere}]\nmc: {seed: 2}\n").digest() != a.digest()


def test_bad_yaml_is_a_schema_error():
    with pytest.raises(SchemaError):
        parse_config("manifold: [unclosed\n")
    with pytest.raises(SchemaError):
        parse_config("- just\n- a list\n")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.seed is not None
    header = [ln for ln in path.read_text().splitlines() if ln.startswith("#")]
    # each shipped config documents its one-line invocation
    assert sum(ln.startswith("# hdiff ") for ln in header) == 1


# -- command line -------------------------------------------------------------------------


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_dir(out: Path) -> Path:
    (d,) = [p for p in out.iterdir() if p.is_dir()]
    return d


FAMILY = """
manifold: {name: euclidean}
grid: {t_end: 0.2, n_steps: 20}
family: {u0: 0.2, alpha: 0.1, du: 0.05, u_grid_size: 2, curve: {kind: line, direction: [1.0, 0.0]}}
mc: {n_paths: 4, seed: 1}
checks: {derivative_rel_tol: 1.0e-9}
"""


def test_family_run_writes_manifest_and_outputs(tmp_path, capsys):
    cfg = write(tmp_path, FAMILY)
    out = tmp_path / "out"
    assert main(["family", "--config", str(cfg), "--out", str(out)]) == 0
    d = run_dir(out)
    assert d.name.startswith("family-") and d.name.endswith("-seed1")
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["status"] == "passed"
    assert manifest["seed"] == 1
    assert manifest["config_hash"] == load_config(cfg).digest()
    names = [f["name"] for f in manifest["files"]]
    assert "summary.json" in names
    for f in manifest["files"]:
        assert len(f["sha256"]) == 64 and (d / f["name"]).exists()
    summary = json.loads((d / "summary.json").read_text())
    assert summary["verdict"] == "PASS"
    assert all(c["value"] <= 1e-9 for c in summary["checks"])
    assert "PASS" in capsys.readouterr().out


def test_replay_reproduces_hashes(tmp_path, capsys):
    cfg = write(tmp_path, FAMILY)
    out = tmp_path / "out"
    main(["family", "--config", str(cfg), "--out", str(out), "--quiet"])
    manifest = run_dir(out) / "manifest.json"
    assert main(["--replay", str(manifest), "--out", str(tmp_path / "again")]) == 0
    text = capsys.readouterr().out
    assert "replay identical" in text and "DIFFERENT" not in text


def test_seed_override_and_env_output(tmp_path, monkeypatch):
    cfg = write(tmp_path, FAMILY)
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["family", "--config", str(cfg), "--seed", "9", "--quiet"]) == 0
    d = run_dir(tmp_path / "env")
    assert d.name.endswith("-seed9")
    assert json.loads((d / "manifest.json").read_text())["config"]["mc"]["seed"] == 9


def test_runs_never_overwrite(tmp_path):
    cfg = write(tmp_path, FAMILY)
    out = tmp_path / "out"
    for _ in range(2):
        assert main(["family", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert len(dirs) == 2 and dirs[1].endswith("-2")


def test_failed_check_exits_1(tmp_path):
    text = FAMILY.replace("manifold: {name: euclidean}", "manifold: {name: sphere}").replace(
        "curve: {kind: line, direction: [1.0, 0.0]}", "curve: {kind: geodesic}")
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["family", "--config", str(cfg), "--out", str(out), "--quiet"]) == 1
    manifest = json.loads((run_dir(out) / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["verdict"] == "FAIL"


def test_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["family"]) == 2
    bad = write(tmp_path, "manifold: {name: torus}\n")
    assert main(["family", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "mc.seed" in err and "torus" in err
    assert main(["family", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_runtime_error_is_reported_in_manifest(tmp_path):
    text = "manifold: {name: sphere}\nstart: [0.0, 0.0]\ngrid: {t_end: 0.1, n_steps: 10}\nmc: {n_paths: 2, seed: 1}\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 2
    manifest = json.loads((run_dir(out) / "manifest.json").read_text())
    assert manifest["status"] == "error"
    assert manifest["error"]["type"] == "InvalidStart"


SMALL = {
    "simulate": "manifold: {name: sphere}\ngrid: {t_end: 0.1, n_steps: 10}\nmc: {n_paths: 5, seed: 2}\n"
                "checks: {max_stop_fraction: 0.5}\n",
    "transport": "manifold: [{name: sphere}, {name: euclidean}]\ngrid: {t_end: 0.1, n_steps: 50}\n"
                 "mc: {n_paths: 20, seed: 2}\nchecks: {w_norm_rel_tol: 0.01, flat_tol: 1.0e-12}\n",
    "coupling": "manifold: {name: sphere}\nstart: [1.5707963, -0.25]\ngrid: {t_end: 0.1, n_steps: 50}\n"
                "coupling: {separation: 0.5, direction: [0.0, 1.0]}\nmc: {n_paths: 50, seed: 2, threads: 2}\n"
                "checks: {max_rate: 0.05}\n",
    "ot-contract": "manifold: {name: euclidean}\ngrid: {t_end: 0.1, n_steps: 20}\n"
                   "family: {alpha: 0.1}\n"
                   "ot: {N: 4, p: 2, profiles: [power_1, power_2], report_times: [0.05, 0.1],"
                   " mu: {center: [0.0, 0.0], spread: 0.2}, nu_offset: [0.3, 0.0]}\n"
                   "mc: {n_paths: 1, seed: 2, n_seeds: 2}\nchecks: {rigidity_tol: 1.0e-9, monotone_tol: 0.02}\n",
}


@pytest.mark.parametrize("sub", sorted(SMALL))
def test_subcommands_end_to_end(sub, tmp_path):
    cfg = write(tmp_path, SMALL[sub])
    out = tmp_path / "out"
    assert main([sub, "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    d = run_dir(out)
    files = {f["name"] for f in json.loads((d / "manifest.json").read_text())["files"]}
    assert any(n.endswith(".csv") for n in files)
    assert json.loads((d / "summary.json").read_text())["verdict"] == "PASS"


def test_csv_output_can_be_disabled(tmp_path):
    cfg = write(tmp_path, FAMILY + "output: {formats: [json]}\n")
    out = tmp_path / "out"
    assert main(["family", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert [p.name for p in run_dir(out).iterdir() if p.suffix == ".csv"] == []


def test_selftest_without_config(tmp_path):
    out = tmp_path / "out"
    assert main(["selftest", "--out", str(out), "--quiet"]) == 0
    summary = json.loads((run_dir(out) / "summary.json").read_text())
    names = {c["name"] for c in summary["checks"]}
    assert any("exact" in n for n in names) and any("holonomy" in n for n in names)
