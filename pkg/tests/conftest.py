import pytest

from ricci_lab import flow, geometry


@pytest.fixture(scope="session")
def round_grid():
    return geometry.make_grid("cp1_conformal", 65)


@pytest.fixture(scope="session")
def round_state(round_grid):
    return geometry.initial_metric(round_grid)


@pytest.fixture(scope="session")
def perturbed_state(round_grid):
    return geometry.perturb_metric(geometry.initial_metric(round_grid), 0.3, 2)


@pytest.fixture(scope="session")
def f1_grid():
    return geometry.make_grid("f1_momentum", 65)


@pytest.fixture(scope="session")
def f1_state(f1_grid):
    return geometry.initial_metric(f1_grid)


@pytest.fixture(scope="session")
def perturbed_trace():
    """Workhorse run: perturbed sphere to t = 20 with a spectrum per sample."""
    config = flow.FlowConfig(
        backend="cp1_conformal",
        n_nodes=65,
        perturbation=(0.3, 2),
        c=0.0,
        t_end=20.0,
        stepper=flow.Stepper.SEMI_IMPLICIT,
        sample_stride=10,
        spectrum_stride=1,
        m_max=3,
    )
    trace = flow.run_flow(config)
    assert trace.status == "completed"
    return trace


@pytest.fixture(scope="session")
def modified_trace():
    """Field-modified run on the sphere: drifts along the symmetry orbit forever."""
    config = flow.FlowConfig(
        backend="cp1_conformal",
        n_nodes=65,
        perturbation=(0.2, 2),
        c=0.1,
        t_end=20.0,
        stepper=flow.Stepper.SEMI_IMPLICIT,
        sample_stride=10,
    )
    trace = flow.run_flow(config)
    assert trace.status == "completed"
    return trace
