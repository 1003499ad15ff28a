import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def year_frame():
    from netload.synthgen import SynthConfig, generate_series
    return generate_series(SynthConfig(n_years=1, seed=0))


@pytest.fixture(scope="session")
def small_frame(year_frame):
    """About five weeks of hourly synthetic rows."""
    return year_frame.iloc[:840]


def flat_frame(hours: int = 600):
    """Near-constant, noise-free grid data with a small exact daily ripple.

    The ripple keeps every column non-constant so min-max scaling and R^2
    stay defined.
    """
    import pandas as pd
    from netload.dataset import VALUE_COLUMNS

    idx = pd.date_range("2022-01-01", periods=hours, freq="h", name="timestamp")
    t = np.arange(hours, dtype=np.float64)
    day = np.sin(2 * np.pi * t / 24)
    cols = (40000 + 200 * day, 10000 + 50 * np.cos(2 * np.pi * t / 24), 30000 + 0.01 * t,
            2000 + 100 * day, 9000 + 0.01 * t, 20 + day, 8 + 0.1 * day, 500 + 10 * day)
    return pd.DataFrame(dict(zip(VALUE_COLUMNS, cols)), index=idx)


@pytest.fixture(scope="session")
def flat():
    return flat_frame()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in mod.TITLES.items():
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n} "
                                        f"({title}): {detail}")
        else:
            terminalreporter.write_line(f"[NOT RUN] criterion {n} ({title})")
