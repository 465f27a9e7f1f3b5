import numpy as np
import pytest

from edgeworth_euler import builtin_model


@pytest.fixture(scope="session")
def gbm():
    return builtin_model("GBM", (0.0, 0.2, 1.0))


@pytest.fixture(scope="session")
def linear():
    return builtin_model("LinearSDE", (0.1, -0.3, 0.2, 0.4, 1.0))


@pytest.fixture
def rs():
    return np.random.default_rng(20240601)


def _sinh_model(sigma=0.5, x0=0.3):
    """dX = ½σ²X dt + σ√(1+X²) dW, X = sinh(asinh x0 + σW): exact, with b'' ≠ 0"""
    from edgeworth_euler.model import DiffusionModel, _const, _zero

    def b(x):
        return sigma * np.sqrt(1 + np.asarray(x, float) ** 2)

    def b1(x):
        x = np.asarray(x, float)
        return sigma * x / np.sqrt(1 + x * x)

    def b2(x):
        x = np.asarray(x, float)
        return sigma * (1 + x * x) ** -1.5

    def b3(x):
        x = np.asarray(x, float)
        return -3 * sigma * x * (1 + x * x) ** -2.5

    return DiffusionModel(
        name="sinh", params=(sigma, x0), a=lambda x: 0.5 * sigma ** 2 * np.asarray(x, float),
        a1=_const(0.5 * sigma ** 2), a2=_zero, b=b, b1=b1, b2=b2, b3=b3, x0=x0,
        exact_solution=lambda t, W: np.sinh(np.arcsinh(x0) + sigma * W),
        pointwise_exact=True)


@pytest.fixture(scope="session")
def sinh_model():
    return _sinh_model()


# one line per acceptance criterion, printed at the end of the run
CRITERIA = []


@pytest.fixture
def criterion(capsys):
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA):
            terminalreporter.write_line(line)
