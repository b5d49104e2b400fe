"""Session fixtures: benchmark artifacts produced through the CLI interface."""

import json
import subprocess
import sys

import pytest


def run_bench_cli(*args):
    """Invoke the benchmark harness CLI in a subprocess."""
    cmd = [sys.executable, "-m", "actdet.cli", *args]
    return subprocess.run(cmd, capture_output=True, text=True)


def _base_config(tmp, n_devices=60, pilot_len=10, n_antennas=24):
    cfg = {
        "system": {
            "n_devices": n_devices, "pilot_len": pilot_len,
            "n_antennas": n_antennas, "noise_power": 1.0, "tx_power_dbm": 0.0,
            "d_inner": 1.0, "d_outer": 2.0, "pathloss_exp": 2.5,
            "wavelength": 12.566370614359172,
            "activity": {"variant": "iid", "p": 0.1},
        },
    }
    return cfg


@pytest.fixture(scope="session")
def bench_artifacts(tmp_path_factory):
    """Sweep CSVs (L, M, group size, iteration budget) plus a trace file."""
    tmp = tmp_path_factory.mktemp("bench")
    out = {}

    def run(name, grid, extra=()):
        cfg = _base_config(tmp)
        cfg["grid"] = grid
        cfg_path = tmp / f"{name}.json"
        cfg_path.write_text(json.dumps(cfg))
        csv_path = tmp / f"{name}.csv"
        res = run_bench_cli("run", "--config", str(cfg_path),
                            "--out", str(csv_path), *extra)
        assert res.returncode == 0, res.stderr
        return csv_path

    common = {"n_val": 8, "n_test": 16, "seeds": [0]}
    out["l_sweep"] = run("l_sweep", {
        "methods": ["psca-ml-k", "psca-map-k", "bcd-ml-k"],
        "sweep_name": "L", "sweep_values": [8, 12],
        "iterations": {"psca-ml-k": 10, "psca-map-k": 10, "bcd-ml-k": 3},
        **common})
    out["m_sweep"] = run("m_sweep", {
        "methods": ["psca-ml-k", "psca-ml-ud"],
        "sweep_name": "M", "sweep_values": [16, 32],
        "iterations": {"psca-ml-k": 10, "psca-ml-ud": 10}, **common})
    out["group_sweep"] = run("group_sweep", {
        "methods": ["psca-ml-k", "psca-map-k"],
        "sweep_name": "group_size", "sweep_values": [2, 4],
        "iterations": {"psca-ml-k": 10, "psca-map-k": 10}, **common})
    out["tradeoff"] = run("tradeoff", {
        "methods": ["psca-ml-k", "pg-ml-k"],
        "sweep_name": "iterations", "sweep_values": [2, 5, 10, 20],
        "n_val": 10, "n_test": 30, "seeds": [0]})
    traces = tmp / "traces.jsonl"
    cfg = _base_config(tmp)
    cfg["grid"] = {"methods": ["psca-ml-k", "psca-ml-ud", "bcd-ml-k"],
                   "sweep_name": "L", "sweep_values": [10],
                   "iterations": {"psca-ml-k": 12, "psca-ml-ud": 12,
                                  "bcd-ml-k": 4},
                   "n_val": 6, "n_test": 8, "seeds": [1]}
    cfg_path = tmp / "traces.json"
    cfg_path.write_text(json.dumps(cfg))
    res = run_bench_cli("run", "--config", str(cfg_path),
                        "--out", str(tmp / "traces_run.csv"),
                        "--dump-traces", str(traces))
    assert res.returncode == 0, res.stderr
    out["traces"] = traces
    return out
