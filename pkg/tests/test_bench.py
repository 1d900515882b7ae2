import pytest

from acecert.ace import CertificationConfig
from acecert.bench import BenchConfig, run_bench
from acecert.errors import ConfigError


@pytest.fixture(scope="module")
def result(template_setup):
    gen, model = template_setup
    ace = CertificationConfig(N=20, M=40, N0=10, radius=0.5, seed=1, workers=1)
    return run_bench(model, gen, BenchConfig(ace, repetitions=2, naive_M=1000, t_values=(1e-2, 1e-6)))


def test_every_method_and_repetition(result):
    assert {(r.method, r.repetition) for r in result.runs} == {(m, k) for m in ("ace", "amls", "naive_mc") for k in (0, 1)}


def test_budgets_match_ace(result):
    for rep in (0, 1):
        ace = next(r for r in result.runs if r.method == "ace" and r.repetition == rep)
        naive = next(r for r in result.runs if r.method == "naive_mc" and r.repetition == rep)
        split = next(r for r in result.runs if r.method == "amls" and r.repetition == rep)
        assert naive.forward_passes <= ace.forward_passes
        assert naive.N == ace.forward_passes // 1001
        # splitting stops after the nominal that crosses the budget
        assert split.forward_passes >= ace.forward_passes


def test_naive_degenerate_below_resolution(result):
    assert all(v is None for v in result.values("naive_mc", 1e-6))
    assert all(v is not None for v in result.values("naive_mc", 1e-2))
    assert result.summary("naive_mc", 1e-6) == (None, None)


def test_repetitions_differ(result):
    a, b = result.values("ace", 1e-2)
    assert a != b


def test_table(result):
    rows = result.table_csv().strip().splitlines()
    assert rows[0] == "method,N,N0,runtime_s,forward_passes,mean_t=0.01,sd_t=0.01,mean_t=1e-06,sd_t=1e-06"
    naive = next(r for r in rows if r.startswith("naive_mc"))
    assert naive.endswith(",,")


def test_config_validation():
    ace = CertificationConfig(N=20, M=40, N0=10, radius=0.5)
    with pytest.raises(ConfigError):
        BenchConfig(ace, methods=("exact",))
    with pytest.raises(ConfigError):
        BenchConfig(ace, methods=("amls",))
    with pytest.raises(ConfigError):
        BenchConfig(ace, repetitions=0)
