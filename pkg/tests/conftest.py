import pytest

from housing_abm.scenario import generate_synthetic_scenario

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_scenario():
    """Six areas, two years, about 4,500 agents."""
    return generate_synthetic_scenario(3, 6, 24, scale=400.0)


@pytest.fixture(scope="session")
def tiny_scenario():
    """Three areas, eight months, under 1,000 agents; for CLI and search tests."""
    return generate_synthetic_scenario(5, 3, 8, scale=2000.0, equilibration=6)
