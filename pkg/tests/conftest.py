from functools import lru_cache

import numpy as np
import pytest

from nestfield.fields import Field, dof_count
from nestfield.mesh import HorizontalMesh, Orography, VerticalGrid, build_nested_pair
from nestfield.remap import Remapper


@lru_cache(maxsize=None)
def make_remapper(nx=8, r=2, Nk=3, orography="flat", L=8000.0, z_top=3000.0):
    h = HorizontalMesh(nx, nx, L, L)
    v = VerticalGrid.uniform(Nk, z_top)
    if orography == "bump":
        oro = Orography.bump(h, (nx // 2 + 1, nx // 2 + 1), 0.3 * z_top / Nk)
    elif orography == "hills":
        oro = Orography.from_function(
            h, lambda x, y: 0.1 * z_top * np.sin(np.pi * x / L) ** 2 * np.sin(np.pi * y / L) ** 2)
    else:
        oro = None
    return Remapper(build_nested_pair(h, v, r, oro))


def rand(rng, space, mesh, lo=-1.0, hi=1.0):
    return Field(space, mesh, rng.uniform(lo, hi, dof_count(space, mesh)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["flat", "bump", "hills"])
def any_remap(request):
    return make_remapper(orography=request.param)


@pytest.fixture
def flat_remap():
    return make_remapper()


@pytest.fixture
def bump_remap():
    return make_remapper(orography="bump")
