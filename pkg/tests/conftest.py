import numpy as np
import pytest

from handtraj.camera import Intrinsics


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def random_rotation(g):
    q = g.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture
def K():
    return Intrinsics(800.0, 320.0, 240.0, 640.0, 480.0)


def awkward_floats(g, n):
    """Floats that stress decimal round trips: huge, tiny, subnormal, signed zero."""
    kind = g.integers(0, 6, n)
    x = g.normal(size=n)
    x = np.where(kind == 1, x * 1e300, x)
    x = np.where(kind == 2, x * 1e-300, x)
    x = np.where(kind == 3, x * 5e-324 * 1e3, x)
    x = np.where(kind == 4, -0.0, x)
    return np.where(kind == 5, g.uniform(-1, 1, n) / 3.0, x)


def random_records(g, n, *, roots=True, keypoints=True):
    from handtraj.io import TrajectoryRecord

    frames = np.cumsum(g.integers(1, 4, n)) - 1
    out = []
    for k in range(n):
        use_root = roots if isinstance(roots, bool) else bool(g.integers(2))
        out.append(TrajectoryRecord(
            frame=int(frames[k]),
            pose=awkward_floats(g, 48),
            shape=awkward_floats(g, 10),
            cam=tuple(awkward_floats(g, 3)),
            delta_d=float(awkward_floats(g, 1)[0]),
            root=awkward_floats(g, 3) if use_root else None,
            keypoints2d=awkward_floats(g, 42) if keypoints else None,
        ))
    return out


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """``record(ok, detail)`` logs the criterion named by the test (``test_criterion_NN_...``)."""
    number = int(request.node.name.split("_")[2])
    seen = []

    def record(ok, detail=""):
        seen.append(ok)
        request.config.stash[_ACCEPTANCE].append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    yield record
    if not seen:
        request.config.stash[_ACCEPTANCE].append((number, False, "raised before reporting"))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
