import numpy as np
import pytest

from navkit import liegroups as lg
from navkit.states import Side, group_state

ALL_KINDS = list(lg.GroupKind)
BOTH_SIDES = [Side.RIGHT, Side.LEFT]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_tangent(kind, rng, scale=0.5):
    """Tangent coords with the rotation block kept away from the pi branch."""
    v = rng.normal(scale=scale, size=kind.dof)
    n_rot = 1 if kind in (lg.GroupKind.SO2, lg.GroupKind.SE2) else 3
    rot = v[:n_rot]
    norm = np.linalg.norm(rot)
    if norm >= np.pi - 1e-2:
        v[:n_rot] = rot / norm * (np.pi / 2)
    return v


def random_element(kind, rng, scale=0.5):
    return lg.exp_map(lg.TangentVector(kind, random_tangent(kind, rng, scale)))


def random_group_state(kind, rng, side=Side.RIGHT, scale=0.5, stamp=0.0):
    return group_state(random_element(kind, rng, scale), side=side, stamp=stamp)
