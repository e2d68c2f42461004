"""End-to-end acceptance run.

``seqdm repro --all`` is executed twice in fresh subprocesses.  Each
criterion gets its own test that prints one PASS/FAIL line; the last one
compares both runs byte for byte.
"""
import re
import subprocess
import sys

import pytest

from seqdm.scenarios import SCENARIOS

# seconds allowed per scenario on a laptop
TIME_LIMITS = {
    "newton-gain": 1, "shift-register-fragility": 1, "lqg-fragility": 1, "duality": 5, "ce-curvature": 5,
    "model-error": 30, "tabular-oracle": 30, "etc-bound": 60, "successive-elimination": 60,
    "ucb-sublinear": 60, "mpc-bound": 60, "estimator-checks": 30, "sample-complexity": 120,
}

LINE = re.compile(r"^\[\s*(\d+)\] ([a-z-]+): (PASS|FAIL) \((.*)\)$")
TIMING = re.compile(r"^([a-z-]+): ([0-9.]+)s$")


def _repro(outdir):
    proc = subprocess.run([sys.executable, "-m", "seqdm", "repro", "--all", "--output-dir", str(outdir)],
                          capture_output=True, text=True, timeout=900)
    results = {}
    for line in proc.stdout.splitlines():
        m = LINE.match(line)
        if m:
            results[m.group(2)] = (int(m.group(1)), m.group(3) == "PASS", line)
    timings = {m.group(1): float(m.group(2)) for m in map(TIMING.match, proc.stderr.splitlines()) if m}
    files = {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}
    return proc, results, timings, files


def report(capsys, line):
    # shown even without -s so the log carries one line per criterion
    with capsys.disabled():
        print("\n" + line)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return _repro(tmp_path_factory.mktemp("run1")), _repro(tmp_path_factory.mktemp("run2"))


def test_every_scenario_reported(runs):
    (proc, results, _, _), _ = runs
    assert [results[n][0] for n in SCENARIOS if n in results] == list(range(1, 15)), proc.stderr
    assert proc.returncode == (0 if all(ok for _, ok, _ in results.values()) else 1)


@pytest.mark.parametrize("name", [n for n in SCENARIOS if n != "determinism"])
def test_criterion(runs, name, capsys):
    (_, results, timings, _), _ = runs
    number, passed, line = results[name]
    elapsed = timings[name]
    within = elapsed < TIME_LIMITS[name]
    report(capsys, f"criterion {number:2d} {name}: {'PASS' if passed and within else 'FAIL'} "
                  f"({elapsed:.2f}s of {TIME_LIMITS[name]}s) {line}")
    assert passed, line
    assert within, f"{name} took {elapsed:.2f}s"


def test_determinism(runs, capsys):
    (p1, r1, _, f1), (p2, _, _, f2) = runs
    identical = p1.stdout == p2.stdout and f1 == f2
    number, passed, line = r1["determinism"]
    report(capsys, f"criterion {number:2d} determinism: {'PASS' if identical and passed else 'FAIL'} "
                  f"(stdout identical={p1.stdout == p2.stdout}, {len(f1)} files identical={f1 == f2}) {line}")
    assert identical
    assert passed, line
