from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dsr.voxel import GridSpec, InstanceMaskVolume, trilinear_weights

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

SMALL = GridSpec((12, 10, 8), 0.01, (-0.06, -0.05, 0.0))


@pytest.fixture
def small_spec():
    return SMALL


def random_masks(rng, spec=SMALL, k=5, sparsity=0.0) -> InstanceMaskVolume:
    """Random simplex-valued mask volume; ``sparsity`` zeroes that fraction of object mass."""
    p = rng.random((k, *spec.dims)) + 1e-3
    if sparsity:
        drop = rng.random(spec.dims) < sparsity
        p[:-1, drop] = 0.0
    p /= p.sum(axis=0, keepdims=True)
    return InstanceMaskVolume(spec, p)


def random_labels(rng, spec=SMALL, k=5, p_obj=0.3) -> np.ndarray:
    lab = rng.integers(0, k - 1, size=spec.dims)
    bg = rng.random(spec.dims) > p_obj
    lab[bg] = k - 1
    return lab


def splat_oracle(S, F, M):
    """Per-voxel loop over sources with the reference trilinear kernel."""
    spec = S.spec
    num = defaultdict(lambda: np.zeros(S.k))
    den = defaultdict(float)
    m = M.object_mass()
    for idx in np.ndindex(*spec.dims):
        if m[idx] <= 0:
            continue
        pos = np.asarray(idx) + F.values[idx] / spec.voxel_size
        for tgt, w in trilinear_weights(pos, spec):
            num[tgt] += m[idx] * w * S.probs[(slice(None), *idx)]
            den[tgt] += m[idx] * w
    out = np.zeros_like(S.probs)
    out[-1] = 1.0
    for tgt, d in den.items():
        if d > 1e-12:
            out[(slice(None), *tgt)] = num[tgt] / d
    return out


@pytest.fixture(scope="session")
def small_episode():
    """A short random episode on the full grid, shared across tests."""
    from dsr.sim.episode import EpisodeConfig, generate_episode

    return generate_episode(3, EpisodeConfig(n_objects=3, n_steps=3))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
