# %% [markdown]
# # Quantum friction and its velocity threshold
#
# Two Drude plates slide past each other at speed v across a 10 nm gap.
# At low speed the drag grows as v cubed. Above a threshold the Doppler
# shifted surface modes of the two plates can pump each other and the
# linear theory predicts growing modes, so the force is no longer defined.
#
# Locating the threshold takes about a minute.

# %%
import time

from fluctua.material import MaterialResponse, PermittivityChannel
from fluctua.numerics import QuadratureSpec
from fluctua.observables import friction_threshold, quantum_friction_force

drude = MaterialResponse((PermittivityChannel("drude", 1.0, 0.0, 1e13, 1.4e16),), 1.0)
GAP = 1e-8
fast = QuadratureSpec(rel_tol=1e-3)

# %% [markdown]
# Low-velocity scaling first.

# %%
for v in [1e4, 2e4, 4e4]:
    f = quantum_friction_force(drude, drude, GAP, v, check_stability=False, spec=fast).value
    print(f"v = {v:8.0e} m/s   F = {f: .4e} N/m^2   F/v^3 = {f / v**3: .4e}")

# %% [markdown]
# Now bracket the onset of growing modes.

# %%
t = time.time()
lo, hi = friction_threshold(drude, drude, GAP, 1e7)
print(f"threshold in ({lo:.6g}, {hi:.6g}) m/s, found in {time.time() - t:.0f} s")

# %% [markdown]
# Asking for the force above the threshold raises `InstabilityError`
# carrying the same bracket, unless `allow_unstable=True` is passed.
