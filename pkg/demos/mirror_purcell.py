# %% [markdown]
# # An emitter above a near-perfect mirror
#
# A dipole in front of a mirror interferes with its own reflection. For a
# perfect conductor the answer is the classic image-dipole formula, so this
# is a clean end-to-end check of the layered Green function machinery.
# We model the mirror as a dielectric with a huge permittivity.

# %%
import numpy as np

from fluctua.constants import c
from fluctua.layered import LayerStack
from fluctua.material import constant
from fluctua.observables import Emitter, purcell_factor

W0 = 1e15
mirror = LayerStack.half_space(constant(1e20))

# %% [markdown]
# Sweep the height in units of the reduced wavelength and compare both dipole
# orientations with the image result.

# %%
def image(x):
    s, co = np.sin(x), np.cos(x)
    perp = 1 + 3 * (s - x * co) / x**3
    par = 1 - 1.5 * (s / x + co / x**2 - s / x**3)
    return perp, par


print(f"{'2kz':>8} {'perp':>12} {'image':>12} {'par':>12} {'image':>12}")
for x in [0.05, 0.5, 2.0, 5.0, 20.0]:
    z = x * c / (2 * W0)
    perp = purcell_factor(mirror, Emitter((0, 0, z), W0, (0, 0, 1e-29))).value
    par = purcell_factor(mirror, Emitter((0, 0, z), W0, (1e-29, 0, 0))).value
    ip, ia = image(x)
    print(f"{x:8.2f} {perp:12.6f} {ip:12.6f} {par:12.6f} {ia:12.6f}")

# %% [markdown]
# Close to the mirror the perpendicular dipole doubles its rate and the
# parallel one is silenced. Far away both oscillate around one.
