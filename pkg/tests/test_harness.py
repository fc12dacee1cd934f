import json
from pathlib import Path

import pytest

import vcache
from vcache.harness import SimulationError, Workload, load_workload, simulate, simulate_file
from vcache.miniscript import parse_script, static_fraction
from vcache.registry import FragmentConfig

DEMO = Path(vcache.__file__).parent / "demo"
WORKLOAD = DEMO / "workload.json"


def write_workload(tmp_path, script, requests, **extra):
    (tmp_path / "page.ms").write_text(script)
    data = {"script": "page.ms", "requests": requests, **extra}
    path = tmp_path / "w.json"
    path.write_text(json.dumps(data))
    return path


def test_cold_start_single_request(tmp_path):
    path = write_workload(tmp_path, 'print "hello "; print name;', [{"name": "a"}])
    report = simulate_file(path)
    (row,) = report.rows
    assert row.templates_fetched == 1 and row.cache_hits == 0
    assert row.template_bytes_fetched > 0
    assert report.doc == "page"


def test_repeat_request_fetches_nothing(tmp_path):
    path = write_workload(tmp_path, 'print "hello "; print name;', [{"name": "a"}] * 2)
    second = simulate_file(path).rows[1]
    assert second.template_bytes_fetched == 0
    assert second.templates_fetched == 0
    assert second.cache_hits == 1


def test_env_file_requests(tmp_path):
    (tmp_path / "e.json").write_text('{"name": "file"}')
    path = write_workload(tmp_path, "print name;", ["e.json"])
    assert simulate_file(path).rows[0].baseline_bytes == 4


def test_header_bytes_accounting(tmp_path):
    path = write_workload(tmp_path, "print name;", [{"name": "a"}], header_bytes=100)
    row = simulate_file(path).rows[0]
    assert row.baseline_bytes == 101
    assert row.vcache_bytes == row.binding_bytes + row.template_bytes_fetched + 200


def test_simulation_error_carries_index(tmp_path):
    path = write_workload(tmp_path, "print name;", [{"name": "a"}, {}])
    with pytest.raises(SimulationError) as info:
        simulate_file(path)
    assert info.value.index == 1


def test_workload_validation():
    with pytest.raises(ValueError):
        Workload(script="x.ms", requests=[])
    with pytest.raises(ValueError):
        Workload(script="x.ms", requests=[{}], mode="fast")


def test_demo_is_mostly_static():
    workload, base = load_workload(WORKLOAD)
    program = parse_script((base / workload.script).read_text())
    fractions = [static_fraction(program, env) for env in workload.requests]
    assert min(fractions) >= 0.7


@pytest.mark.parametrize("mode", ["brute", "specialized", "pruned"])
def test_demo_all_modes_reconstruct(mode):
    report = simulate_file(WORKLOAD, mode=mode)
    assert report.requests == 100
    assert report.vcache_total < report.baseline_total


def test_demo_steady_state():
    report = simulate_file(WORKLOAD)
    assert report.steady_state_ratio <= 0.5
    assert report.specialized_templates >= 1
    assert sum(r.template_bytes_fetched for r in report.rows[50:]) < sum(
        r.template_bytes_fetched for r in report.rows[:50]
    )


def test_demo_identical_requests_fetch_nothing(tmp_path):
    workload, base = load_workload(WORKLOAD)
    repeated = workload.model_copy(update={"requests": [workload.requests[0]] * 5})
    report = simulate(repeated, base)
    assert all(r.template_bytes_fetched == 0 for r in report.rows[1:])


def test_disabling_templates_is_no_better():
    default = simulate_file(WORKLOAD)
    nothing_cached = simulate_file(WORKLOAD, config=FragmentConfig(min_template_bytes=10**18))
    assert nothing_cached.steady_state_ratio >= default.steady_state_ratio


def test_rows_csv():
    report = simulate_file(WORKLOAD)
    lines = report.rows_csv().splitlines()
    assert lines[0].split(",") == [
        "index", "baseline_bytes", "binding_bytes", "template_bytes_fetched",
        "templates_fetched", "cache_hits", "vcache_bytes",
    ]
    assert len(lines) == 101
