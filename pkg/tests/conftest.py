import numpy as np
import pytest

from ultraweak.mesh import build_entities, build_unit_square_mesh
from ultraweak.solvers import Discretization

# criterion id -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=str):
        title, passed, detail = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(
            f"criterion {key} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        )


@pytest.fixture(scope="session")
def mesh4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def perturbed_mesh():
    """Unstructured-looking mesh: interior vertices jittered, cells shuffled."""
    base = build_unit_square_mesh(6)
    rng = np.random.default_rng(7)
    v = base.vertices.copy()
    interior = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[interior] += rng.uniform(-0.05, 0.05, (interior.sum(), 2))
    cells = base.cells[rng.permutation(base.num_cells)]
    # random local rotations and reflections of the vertex order
    for c in range(len(cells)):
        cells[c] = np.roll(cells[c], rng.integers(3))
        if rng.random() < 0.5:
            cells[c] = cells[c][[0, 2, 1]]
    return build_entities(v, cells)


_DISC_CACHE: dict = {}


@pytest.fixture(scope="session")
def disc_factory():
    """Cached ``Discretization.build`` keyed by (n, k, bc, gamma, dt)."""

    def make(n, k, bc="ss", gamma=1.0, dt=np.inf):
        key = (n, k, bc, gamma, dt)
        if key not in _DISC_CACHE:
            _DISC_CACHE[key] = Discretization.build(build_unit_square_mesh(n), k, bc, gamma, dt)
        return _DISC_CACHE[key]

    return make
