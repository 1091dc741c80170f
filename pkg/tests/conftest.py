import hypothesis
import numpy as np
import pytest

from mazfo.problem import generate_quadratic, solve_reference
from mazfo.topology import build_topology

hypothesis.settings.register_profile("default", deadline=None, max_examples=60)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")

np.seterr(all="raise", under="ignore")


@pytest.fixture(scope="session")
def small_instance():
    """n=4, d=8, m=2 quadratic with its reference solution; cheap to run."""
    inst, spec = generate_quadratic(3, n=4, dims=8, m=2)
    ref = solve_reference(inst, 1e-9)
    inst.constants.C = ref.suggested_C()
    return inst, spec, ref


@pytest.fixture(scope="session")
def small_ring():
    return build_topology("ring", 4)
