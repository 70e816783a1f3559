import csv
import json

import pytest

from efimov.cli import main
from efimov.config import parse_config
from efimov.errors import ConfigError


def run(tmp_path, cfg, *extra, name="cfg.json", out="out"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main([cfg["command"], "--config", str(path), "--out", str(tmp_path / out), "-q", *extra])


def read_csv(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_minimal_config_accepted():
    cfg = parse_config('{"command": "classify"}')
    assert cfg.params.l1 == 1.0 and cfg.params.n == 1
    assert cfg.params.v0.is_zero and cfg.params.v1(([0.0, 0.0, 0.0])) == 1.0


def test_config_names_the_field():
    with pytest.raises(ConfigError) as exc:
        parse_config('{"command": "classify", "params": {"l1": -1}}')
    assert any("params/l1" in p for p in exc.value.problems)


def test_config_reports_every_violation():
    with pytest.raises(ConfigError) as exc:
        parse_config('{"command": "count", "params": {"l1": -1, "n": 0}, "bogus": 1}')
    assert len(exc.value.problems) == 3


def test_config_rejects_false_parity():
    doc = {"command": "classify", "params": {"v1": {
        "terms": [{"axis": 1, "harmonic": 1, "kind": "sin", "coef": 1.0}], "parity": ["even", "even", "even"]}}}
    with pytest.raises(ConfigError) as exc:
        parse_config(json.dumps(doc))
    assert exc.value.exit_code == 2


def test_config_rejects_mixed_parity_v1():
    doc = {"command": "classify", "params": {"v1": {
        "constant": 1.0, "terms": [{"axis": 2, "harmonic": 1, "kind": "sin", "coef": 1.0}]}}}
    with pytest.raises(ConfigError):
        parse_config(json.dumps(doc))


def test_oracle_check_passes(tmp_path, small_configs):
    assert run(tmp_path, small_configs["oracle-check"]) == 0
    text = (tmp_path / "out" / "oracle-check.csv").read_text()
    assert "# status=PASS" in text
    rows = read_csv(tmp_path / "out" / "oracle-check.csv")
    assert len(rows) == 3 and all(r["equal"] == "True" for r in rows)


def test_u_coefficient_csv(tmp_path, small_configs):
    assert run(tmp_path, small_configs["u-coefficient"]) == 0
    rows = read_csv(tmp_path / "out" / "u-coefficient.csv")
    vals = [float(r["U"]) for r in rows]
    assert len(vals) == 3 and vals == sorted(vals, reverse=True)


def test_efimov_verify_regular_point(tmp_path):
    cfg = {"command": "efimov-verify", "coupling": {"scale": 0.5}, "grid": {"N": 8, "refine_depth": 2}}
    assert run(tmp_path, cfg) == 3
    doc = json.loads((tmp_path / "out" / "efimov-verify.json").read_text())
    assert doc["status"] == "FAIL-PRECONDITION"
    assert "not resonance-class" in doc["results"]["reason"]


def test_count_csv_columns(tmp_path, small_configs):
    assert run(tmp_path, small_configs["count"]) == 0
    rows = read_csv(tmp_path / "out" / "count.csv")
    assert list(rows[0]) == ["K1", "K2", "K3", "z", "N", "grid_id", "method"]
    assert len(rows) == len(small_configs["count"]["z_list"])


def test_digest_in_every_output(tmp_path, small_configs):
    cfg = small_configs["classify"]
    assert run(tmp_path, cfg) == 0
    doc = json.loads((tmp_path / "out" / "classify.json").read_text())
    assert doc["config_digest"] == parse_config(json.dumps(cfg)).digest


def test_svg_on_non_plottable_command(tmp_path, small_configs, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_configs["oracle-check"]))
    assert main(["oracle-check", "--config", str(path), "--out", str(tmp_path / "o"), "--svg"]) == 0
    assert "nothing to plot" in capsys.readouterr().err
    assert not list((tmp_path / "o").glob("*.svg"))


def test_svg_written_and_reproducible(tmp_path, small_configs):
    cfg = small_configs["u-coefficient"]
    assert run(tmp_path, cfg, "--svg", out="a") == 0
    assert run(tmp_path, cfg, "--svg", out="b") == 0
    a = (tmp_path / "a" / "u-coefficient.svg").read_bytes()
    assert a == (tmp_path / "b" / "u-coefficient.svg").read_bytes()
    assert a.startswith(b"<?xml")


def test_exit_codes(tmp_path, small_configs):
    assert run(tmp_path, {"command": "classify", "params": {"l1": -1}}) == 2
    assert main(["classify", "--config", str(tmp_path / "missing.json")]) == 5
    # command on the line disagrees with the file
    p = tmp_path / "x.json"
    p.write_text(json.dumps(small_configs["u-coefficient"]))
    assert main(["classify", "--config", str(p), "--out", str(tmp_path), "-q"]) == 2
    # numerical guard: z inside the spectrum of a supercritical model
    cfg = {"command": "count", "params": {"v1": {"constant": 3.0}}, "grid": {"N": 8, "refine_depth": 0},
           "z_list": [-0.001]}
    assert run(tmp_path, cfg) == 3
    # refinement patches too small for the base grid
    cfg = {"command": "count", "grid": {"N": 4, "refine_depth": 1}, "z_list": [-0.1]}
    assert run(tmp_path, cfg) == 2
    # dimension guard of the direct model
    cfg = {"command": "oracle-check", "grid": {"N": 8}, "z_list": [-1.0]}
    assert run(tmp_path, cfg) == 4


def test_unwritable_output(tmp_path, small_configs):
    blocker = tmp_path / "file"
    blocker.write_text("")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(small_configs["u-coefficient"]))
    assert main(["u-coefficient", "--config", str(p), "--out", str(blocker / "sub"), "-q"]) == 5


def test_json_format_for_table(tmp_path, small_configs):
    cfg = dict(small_configs["u-coefficient"], output={"format": "json"})
    assert run(tmp_path, cfg) == 0
    doc = json.loads((tmp_path / "out" / "u-coefficient.json").read_text())
    assert [r["gamma"] for r in doc["rows"]] == [0.5, 1.0, 2.0]


def test_threads_do_not_change_results(tmp_path, small_configs, monkeypatch):
    cfg = small_configs["count"]
    assert run(tmp_path, cfg, out="one") == 0
    monkeypatch.setenv("EFIMOV_THREADS", "3")
    assert run(tmp_path, cfg, out="three") == 0
    assert (tmp_path / "one" / "count.csv").read_bytes() == (tmp_path / "three" / "count.csv").read_bytes()
