import numpy as np
import pytest

from selmopf.case_io import Branch, Bus, CaseData, Gen, load_case, parse_case

TWO_BUS = """
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	20	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0	0.1	0	100	100	100	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	40	0;
];
"""


@pytest.fixture(scope="session")
def case3():
    return load_case("case3")


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def two_bus():
    return parse_case(TWO_BUS, "two_bus")


@pytest.fixture(params=["case3", "case9", "case14"])
def any_case(request):
    return load_case(request.param)


def make_case(buses, branches, gens, base=100.0, name="synthetic"):
    return CaseData(base, tuple(buses), tuple(branches), tuple(gens), name)


def single_bus_case(pd=0.5, cost=(0.0, 40.0, 0.0), bs=0.0):
    return make_case([Bus(1, "slack", pd, 0.0, 0.9, 1.1, 0.0, bs)], [],
                     [Gen(0, 0.0, 2.0, -1.0, 1.0, cost)])


def random_state(case, rng, spread=0.2):
    v = rng.uniform(0.9, 1.1, case.n_bus)
    th = rng.uniform(-spread, spread, case.n_bus)
    th[case.slack] = 0.0
    return v, th


@pytest.fixture(scope="session")
def case3_data(case3):
    """2000 labelled scenarios of the 3-bus case with +-30 % load swings."""
    from selmopf.scenario import UncertaintyConfig, build_dataset

    return build_dataset(case3, UncertaintyConfig(load_fluctuation=0.3, seed=5), 2000)


@pytest.fixture(scope="session")
def case3_split(case3_data):
    return case3_data.split_by_scenario(1600)


# -- acceptance verdicts --------------------------------------------------------

VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Record ``(criterion, passed, detail)``; echoed live and in the summary."""
    store = request.config.stash.setdefault(VERDICTS, [])

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        store.append(line)
        with capsys.disabled():
            print("\n  " + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
