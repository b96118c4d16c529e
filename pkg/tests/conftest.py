import numpy as np
import pytest

from ucrl.instances import FIVE_UNIT_BUS_SHARE, five_unit_grid, synthetic_loads
from ucrl.io import data_path, read_grid, read_loads
from ucrl.model import GridSpec, LoadScenario, UnitSpec


def make_unit(id=0, bus=0, p_max=200.0, p_min=50.0, a=100.0, b=10.0, c=0.01,
              stairs=(150.0, 300.0), cd=50.0, ru=100.0, rd=100.0, su=None, sd=None,
              ut=1, dt=1, init_status=1, init_duration=5, init_power=None):
    return UnitSpec(id=id, bus=bus, p_max=p_max, p_min=p_min, a=a, b=b, c=c,
                    startup_stairs=tuple(stairs), shutdown_cost=cd, ramp_up=ru, ramp_down=rd,
                    startup_ramp=p_max if su is None else su,
                    shutdown_ramp=p_max if sd is None else sd,
                    min_up=ut, min_down=dt, init_status=init_status,
                    init_duration=init_duration, init_power=init_power)


def single_bus(units, reserve_fraction=0.0):
    return GridSpec(n_buses=1, units=list(units), lines=[], reserve_fraction=reserve_fraction)


def loads_of(total, n_buses=1):
    d = np.atleast_1d(np.asarray(total, dtype=float))
    return LoadScenario(np.repeat(d[:, None] / n_buses, n_buses, axis=1))


@pytest.fixture(scope="session")
def grid5():
    return read_grid(data_path("five_unit.json"))


@pytest.fixture(scope="session")
def loads5():
    return read_loads(data_path("five_unit_loads.csv"))


def ramp_pair(su_b=60.0, ru_b=30.0):
    """A cheap unit that is on and a dearer one that is off with a slow start."""
    cheap = make_unit(id=0, p_max=100, p_min=10, a=10, b=10, c=0.0, ru=100, rd=100,
                      init_status=1, init_duration=5, init_power=80)
    dear = make_unit(id=1, p_max=100, p_min=20, a=50, b=30, c=0.0, ru=ru_b, rd=100, su=su_b,
                     stairs=(100,), cd=0, init_status=0, init_duration=5)
    return single_bus([cheap, dear])


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
