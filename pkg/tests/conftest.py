import numpy as np
import pytest

from caflow.catalog import get_measure, get_rule

_LINES: list[str] = []


def record_criterion(number: int, ok: bool, title: str, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] criterion {number}: {title}"
    if detail:
        line += f" | {detail}"
    print(line)
    _LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numpy", "compiled"])
def backend(request, monkeypatch):
    from caflow import _kernels_py, kernels

    if request.param == "compiled":
        try:
            from caflow import _ckernels as mod
        except ImportError:
            pytest.skip("compiled kernels not built")
    else:
        mod = _kernels_py
    for name in ("build_columns", "weight_step", "alive_step", "back_step", "count_back_step"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    from caflow import dp, partitions

    dp._columns_cached.cache_clear()
    partitions._exact_class.cache_clear()
    yield request.param
    dp._columns_cached.cache_clear()
    partitions._exact_class.cache_clear()


@pytest.fixture(scope="session")
def prod2():
    return get_rule("prod2")


@pytest.fixture(scope="session")
def uu():
    return get_measure("uniform_x_uniform")
