import pytest

from acecert.synthetic import template_generator, toy_mlp

ACCEPTANCE_LINES = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)


@pytest.fixture(scope="session")
def template_setup():
    gen = template_generator()
    return gen, toy_mlp(gen)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
