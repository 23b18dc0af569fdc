"""Smoke test for the pymeshopt extension.

Builds the extension with cargo unless PYMESHOPT_LIB points at an already
built shared object, then exercises formulas, a short run and the oracle.
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "crates" / "core" / "scenarios"


def load_extension():
    lib = os.environ.get("PYMESHOPT_LIB")
    if lib is None:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "meshopt-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
        name = {"darwin": "libpymeshopt.dylib", "win32": "pymeshopt.dll"}.get(sys.platform, "libpymeshopt.so")
        lib = ROOT / "target" / "release" / name
    suffix = ".pyd" if sys.platform == "win32" else ".so"
    dest = Path(tempfile.mkdtemp()) / ("pymeshopt" + suffix)
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("pymeshopt", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    m = load_extension()

    # 12 dBm transmit, 40 dB reference loss, exponent 3: 10 m gives -58 dBm.
    assert math.isclose(m.rssi((0, 0), (10, 0)), -58.0)
    assert m.rssi((0, 0), (1000, 0), 3.0) == -100.0
    assert m.overlap(1, 1) == 1.0 and m.overlap(1, 6) == 0.0
    assert m.link_rate(-40.0) > m.link_rate(-95.0) > 0

    small = m.Scenario.load(str(SCENARIOS / "small.toml"))
    oracle = small.brute_force(0)
    assert oracle["feasible"] > 0

    run = small.run("icalo", 0, 60)
    assert len(run["objective_mbps"]) == 60
    assert max(run["objective_mbps"]) <= oracle["objective_mbps"] * (1 + 1e-9)
    assert run["kb"] is not None

    try:
        small.run("greedy", 0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown scheme accepted")

    print(f"ok: oracle {oracle['objective_mbps']:.2f} Mbps, icalo steady {run['steady_state_mbps']:.2f} Mbps")


if __name__ == "__main__":
    main()
