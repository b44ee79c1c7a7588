import numpy as np
import pytest

from claimsampling import simulator as sim

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Record the outcome line of an acceptance criterion."""

    def _record(number, name, ok, detail):
        ACCEPTANCE[number] = (name, bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d} {name}: {detail}")


def small_config(**overrides):
    """A two-covariate ZINB portfolio that simulates in well under a second."""
    base = dict(
        n_policies=600,
        horizon=30,
        covariate_low=(0.0, 0.0),
        covariate_high=(1.0, 1.0),
        exposure_range=(0.5, 1.5),
        contract_length=12.0,
        frequency=sim.FrequencySpec(mode="zinb", theta_coef=(0.0, 0.5, -0.3),
                                    zero_coef=(-1.0, 0.5, 0.0, 0.3), dispersion=2.0),
        severity=sim.SeveritySpec(beta=(7.0, 0.5, 0.2), sigma=1.0),
        delay=sim.DelaySpec(bin_edges=(0.0, 0.5, 2.0, 6.0), rates=(0.4, 0.3, 0.15, 0.05),
                            beta=(0.3, -0.2), gamma=0.15),
        rng_seed=0,
    )
    base.update(overrides)
    return sim.SimConfig(**base)


@pytest.fixture
def config():
    return small_config()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
