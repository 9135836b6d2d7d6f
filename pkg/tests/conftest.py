import pytest

from gridgate.config import Settings
from gridgate.etl.case_study import build_case_study
from gridgate.models import ComplexPU, Line, Node, NodeKind, Transformer, VoltageLevel
from gridgate.services.hosting import HostingStudy
from gridgate.services.profiles import builtin_load_curve, builtin_pv_curve

from oracles import CABLE_16, CABLE_240, ORIGIN, star_grid, tree_grid


@pytest.fixture(scope="module")
def case_grid():
    return build_case_study()


@pytest.fixture(scope="module")
def case_study(case_grid):
    """Hosting study of the reference network, shared by a test module."""
    return HostingStudy(case_grid, Settings())


@pytest.fixture
def load_curve():
    return builtin_load_curve()


@pytest.fixture
def pv_curve():
    return builtin_pv_curve()


@pytest.fixture
def two_node_grid():
    """Slack and one load node joined by 100 m of 4x240 cable."""
    return tree_grid([0], [100.0], [10.0])


@pytest.fixture
def triangle_grid():
    """Two-line chain closed back to the slack by a third line."""
    chain = tree_grid([0, 1], [100.0, 100.0], [5.0, 5.0])
    closing = Line(id="L3", from_node="N2", to_node="N0", length=0.2, kind=CABLE_240.name)
    return chain.model_copy(update={"lines": chain.lines + (closing,)})


@pytest.fixture
def substation_grid():
    """20 kV slack, transformer and a 3-node LV feeder."""
    feeder = tree_grid([0, 1, 2], [80.0, 120.0, 120.0], [0.0, 15.0, 15.0])
    mv = Node(id="MV", kind=NodeKind.SUBSTATION, gps=ORIGIN, voltage_level=VoltageLevel.MV, base_voltage=20.0)
    return feeder.model_copy(
        update={
            "nodes": (mv,) + feeder.nodes,
            "transformer": Transformer(
                rated_s=250.0,
                short_circuit_impedance=ComplexPU(re=0.01, im=0.04),
                hv_node="MV",
                lv_node="N0",
            ),
            "slack_node": "MV",
        }
    )


# Hosting toys: independent feeders from a stiff slack, so the grid rows
# of one candidate do not involve the others.

TOY_SETTINGS = Settings().with_overrides(grid={"slack_voltage_pu": 1.05})


@pytest.fixture
def toy_one():
    """One candidate at the end of a long thin cable; voltage rise binds."""
    return HostingStudy(star_grid([750.0], [10.0], [CABLE_16]), TOY_SETTINGS)


@pytest.fixture
def toy_two():
    """A voltage-bound candidate and one on a short strong cable."""
    return HostingStudy(star_grid([750.0, 100.0], [10.0, 8.0], [CABLE_16, CABLE_240]), TOY_SETTINGS)


@pytest.fixture
def toy_three():
    return HostingStudy(
        star_grid([1400.0, 100.0, 200.0], [4.0, 3.0, 2.0], [CABLE_16, CABLE_240, CABLE_240]),
        TOY_SETTINGS,
    )


@pytest.fixture
def toy_equal():
    """Two equal candidates on strong cables; no grid row binds."""
    return HostingStudy(star_grid([100.0, 100.0], [10.0, 10.0], [CABLE_240, CABLE_240]), TOY_SETTINGS)