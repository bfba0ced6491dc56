import json

import pytest

from vmkit import config as C
from vmkit.cli import main

MAXW = {"profile": {"kind": "maxwellian", "params": {"sigma": 1.0}, "dv": 1},
        "grid": {"dv": 1, "M": 20.0, "Nx": 32, "Nv": 64}}
SMALL_VM = {"scheme": {"dt": 0.05, "horizon": 2.0}, "grid": {"Nx": 16},
            "experiment": {"eps": [0.04], "probes": [0.5, 1.5]}}


def _write(tmp_path, body, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return str(p)


def test_defaults_validate():
    cfg = C.parse_config(None, None, "penrose")
    assert cfg["profile"]["kind"] == "double_bump"
    assert cfg["experiment"]["p"] == 2


def test_serialize_round_trip():
    cfg = C.parse_config(None, {"experiment": {"eps": [0.1, 0.05]}})
    text = C.serialize(cfg)
    assert json.loads(text)["schema_version"] == C.SCHEMA_VERSION
    assert C.loads(text) == cfg
    assert C.serialize(C.loads(text)) == text


@pytest.mark.parametrize("over, field", [
    ({"grid": {"Nx": 24}}, "grid.Nx"),
    ({"grid": {"dv": 1}}, "grid.dv"),
    ({"scheme": {"dt": -0.1}}, "scheme.dt"),
    ({"experiment": {"eps": []}}, "experiment.eps"),
    ({"experiment": {"N": 7}}, "experiment.N"),
    ({"profile": {"kind": "lorentzian"}}, "profile.kind"),
    ({"bogus": 1}, "bogus"),
])
def test_validation_names_field(over, field):
    with pytest.raises(C.ConfigError) as ei:
        C.parse_config(None, over)
    assert ei.value.field == field


def test_vm_commands_need_positive_eps():
    C.parse_config(None, {"experiment": {"eps": [0.0]}}, "classical-limit")
    with pytest.raises(C.ConfigError, match="eps > 0"):
        C.parse_config(None, {"experiment": {"eps": [0.0]}}, "simulate-vm")


def test_penrose_on_maxwellian(tmp_path):
    cfg = _write(tmp_path, MAXW)
    assert main(["penrose", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "penrose.json").read_text())
    assert res["schema_version"] == C.SCHEMA_VERSION
    assert res["config"]["profile"]["kind"] == "maxwellian"
    assert res["result"]["sharp_pass"] is False
    assert all(w["count"] == 0 for w in res["result"]["winding"])


def test_mode_on_maxwellian_not_found(tmp_path):
    cfg = _write(tmp_path, MAXW)
    assert main(["mode", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_exit_codes(tmp_path, monkeypatch):
    out = str(tmp_path / "o")
    assert main(["penrose", "--config", str(tmp_path / "missing.json"), "--out", out]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["penrose", "--config", str(bad), "--out", out]) == 2
    assert main(["simulate-vm", "--eps", "-0.1", "--out", out]) == 2
    assert main(["penrose", "--jobs", "0", "--out", out]) == 2
    with pytest.raises(SystemExit) as ei:
        main(["explode"])
    assert ei.value.code == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("VMKIT_OUT", str(tmp_path / "env"))
    assert main(["penrose", "--config", _write(tmp_path, MAXW)]) == 0
    assert (tmp_path / "env" / "penrose.json").exists()
    assert (tmp_path / "env" / "penrose.config.json").exists()


def test_simulate_vm_csv_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL_VM)
    texts = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate-vm", "--config", cfg, "--out", str(out)]) == 0
        texts.append((out / "simulate-vm.csv").read_text())
    assert texts[0] == texts[1]
    lines = texts[0].splitlines()
    assert lines[0] == f"# schema_version={C.SCHEMA_VERSION}"
    assert lines[1].startswith("# config=")
    assert lines[2].split(",")[0] == "s"
    assert len(lines) > 4


def test_hierarchy_command(tmp_path):
    cfg = _write(tmp_path, SMALL_VM)
    out = tmp_path / "h"
    assert main(["hierarchy", "--config", cfg, "--N", "2", "--out", str(out)]) == 0
    assert (out / "hierarchy.config.json").exists()
    body = json.loads((out / "hierarchy.config.json").read_text())
    assert body["experiment"]["N"] == 2
