import runpy
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs_and_backends_agree(capsys):
    mod = runpy.run_path(str(BENCH))
    mod["main"](["--repeat", "1"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split()[0] == "case"
    assert all(line.endswith("True") for line in lines[1:])
