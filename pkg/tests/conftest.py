import numpy as np
import pytest

from hdpriv.density import KdeEstimate, silverman_bandwidth
from hdpriv.hdloss import McLossContext


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_context(seed: int, n: int = 1000, mu: float = 5.0, sigma: float = 2.0, r: int | None = None):
    """Clean normal data, its Silverman KDE and frozen Monte-Carlo draws."""
    g = np.random.default_rng(seed)
    x = g.normal(mu, sigma, size=n)
    kde = KdeEstimate(x, silverman_bandwidth(x))
    return McLossContext.draw(kde, g, r=r)


@pytest.fixture(scope="session")
def clean_ctx():
    return make_context(2024)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
