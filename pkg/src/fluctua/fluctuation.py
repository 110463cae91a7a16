"""Noise-current and field correlators, with normal and antinormal orderings.

Correlators are densities per unit volume and per unit angular frequency,
taken in the vacuum state of the reservoirs. Loss channels feed the
antinormal ordering, inverted channels the normal one; distinct channels are
treated as independent reservoirs, so no cross terms appear.
"""

from dataclasses import dataclass, field

import numpy as np

from .constants import c, epsilon_0, hbar, mu_0
from .layered import im_green, volume_route, SOMMERFELD_SPEC
from .material import split_loss_gain

ORDERINGS = ("normal", "antinormal", "symmetrized")


@dataclass
class CorrelatorSample:
    """A 3x3 second moment at a pair of points and one frequency.

    ``value`` is in (A/m^2)^2 s for currents (coefficient of the volume delta)
    and (V/m)^2 s for fields.
    """

    ordering: str
    value: np.ndarray
    r: tuple
    r_prime: tuple
    omega: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        self.value = np.asarray(self.value, dtype=complex)

    @property
    def is_hermitian(self):
        v = self.value
        return np.allclose(v, v.conj().T, rtol=1e-9, atol=1e-12 * np.abs(v).max(initial=0))

    def eigenvalues(self):
        return np.linalg.eigvalsh(0.5 * (self.value + self.value.conj().T))


def _check_ordering(ordering):
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")


def noise_current_coefficients(m, omega):
    """(antinormal, normal) current-noise coefficients in (A/m^2)^2 s."""
    if not omega > 0:
        raise ValueError("omega must be > 0")
    loss, gain = split_loss_gain(m, omega)
    pref = hbar / (np.pi * mu_0) * (omega / c) ** 2
    return pref * loss, pref * abs(gain)


def noise_current_correlator(m, omega, ordering="antinormal"):
    """Local current correlator of one material; multiply by delta(r - r')."""
    _check_ordering(ordering)
    anti, norm = noise_current_coefficients(m, omega)
    coef = {"antinormal": anti, "normal": norm, "symmetrized": 0.5 * (anti + norm)}[ordering]
    return CorrelatorSample(ordering, coef * np.eye(3), (), (), float(omega),
                            {"antinormal": anti, "normal": norm})


def _tuple(r):
    return tuple(float(x) for x in r)


def field_correlator(stack, r, r_prime, omega, ordering="antinormal", route="auto",
                     spec=SOMMERFELD_SPEC):
    """Electric-field correlator in the top layer of ``stack``.

    Parameters
    ----------
    route : {'auto', 'imag', 'volume'}
        'imag' uses the passive identity <EE> = hbar/(pi eps0) Im Gbar and is
        refused for active stacks; 'volume' integrates Gbar w Gbar^dagger over
        all sources; 'auto' picks 'imag' for passive stacks.
    """
    _check_ordering(ordering)
    if any(m.velocity or m.drift_bias for m in stack.materials):
        raise NotImplementedError("moving or biased layers are handled by the force routines")
    if route == "auto":
        route = "volume" if stack.has_gain else "imag"
    pref = hbar / (np.pi * epsilon_0)
    diag = {"route": route}
    if route == "imag":
        if stack.has_gain:
            raise ValueError("the Im Gbar shortcut is invalid when gain is present")
        anti = pref * im_green(stack, r, r_prime, omega, spec=spec)
        norm = np.zeros((3, 3))
    elif route == "volume":
        res = volume_route(stack, r, r_prime, omega, spec)
        anti = pref * res["antinormal"]
        norm = pref * res["normal"]
        diag["abs_error"] = float(pref * res["error"])
    else:
        raise ValueError("route must be 'auto', 'imag' or 'volume'")
    value = {"antinormal": anti, "normal": norm, "symmetrized": 0.5 * (anti + norm)}[ordering]
    return CorrelatorSample(ordering, value, _tuple(r), _tuple(r_prime), float(omega), diag)


def commutator_kernel(stack, r, r_prime, omega, spec=SOMMERFELD_SPEC):
    """Volume integral of Gbar (eps''_> + eps''_<) Gbar^dagger plus escape.

    Equals Im Gbar(r, r', w) for any split of eps'' into loss and gain.
    This is a per-frequency identity; the normalization of the
    frequency-integrated field commutator is not fixed here.
    """
    return volume_route(stack, r, r_prime, omega, spec)["kernel"]
