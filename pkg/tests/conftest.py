import numpy as np
import pytest
from hypothesis import settings

from gpcross.grid import GridFunction
from gpcross.models import BrownianBridge, Wiener0b

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def tent_values(t, peak=0.5, height=1.0, lo=0.0, hi=1.0):
    t = np.asarray(t, dtype=float)
    return np.where(t <= peak, height * (t - lo) / (peak - lo), height * (hi - t) / (hi - peak))


@pytest.fixture
def wiener():
    return Wiener0b()


@pytest.fixture
def bridge():
    return BrownianBridge()


@pytest.fixture
def tent_on(request):
    def make(model, n=33):
        g = model.grid(n)
        return GridFunction(g, tent_values(g.nodes))

    return make
