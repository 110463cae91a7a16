import os

import numpy as np
import pytest
from hypothesis import settings

from fluctua.material import MaterialResponse, PermittivityChannel

settings.register_profile("default", max_examples=25, deadline=None)
settings.register_profile("ci", max_examples=10, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

W = 1e15  # reference angular frequency, rad/s


@pytest.fixture
def lorentz_medium():
    ch = PermittivityChannel("lorentz", 1.0, 1.2e15, 5e13, 1.5e15)
    return MaterialResponse((ch,), 2.0, name="lorentz")


@pytest.fixture
def drude_metal():
    ch = PermittivityChannel("drude", 1.0, 0.0, 1e13, 1.4e16)
    return MaterialResponse((ch,), 1.0, name="drude")


def exact_channels(im_parts, omega=W, damping=1e14):
    """Lorentz channels at resonance whose Im eps equals the given numbers.

    At w = w0 a Lorentz channel is i f wp^2 / (gamma w0), so wp^2 = gamma w0
    makes Im eps = f exactly.
    """
    wp = np.sqrt(damping * omega)
    return tuple(PermittivityChannel("lorentz", f, omega, damping, wp) for f in im_parts)
