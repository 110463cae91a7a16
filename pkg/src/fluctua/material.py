"""Channel-decomposed dielectric response.

A material is a background constant plus a sum of channels, each one a
Lorentz oscillator, a Drude term or a (Hall) conductivity.  A channel with
negative oscillator strength is an inverted (gain) channel: its imaginary
part is negative for all positive frequencies while its damping, and hence
its pole positions, stay in the lower half plane.

Time dependence is exp(-i w t), so a passive channel has Im eps > 0 for w > 0.
Frequencies may be complex (imaginary-axis and stability work).
"""

from dataclasses import dataclass, field

import numpy as np

from .constants import epsilon_0

KINDS = ("lorentz", "drude", "conductivity")


class SingularFrequencyError(ValueError):
    """Raised when a conductivity channel is evaluated at w = 0."""


@dataclass(frozen=True)
class PermittivityChannel:
    """One physically distinct contribution to the permittivity.

    Parameters
    ----------
    kind : {'lorentz', 'drude', 'conductivity'}
    strength : float
        Oscillator strength f. Negative values mark an inverted (gain) channel.
    resonance : float
        Resonance frequency w0 in rad/s (Lorentz only).
    damping : float
        Damping rate gamma in rad/s, strictly positive.
    plasma : float
        Plasma frequency wp in rad/s (Lorentz and Drude).
    sigma : 2x2 nested tuple
        dc conductivity tensor in S/m (conductivity only). The antisymmetric
        part is the Hall conductivity sigma_xy.
    """

    kind: str
    strength: float = 1.0
    resonance: float = 0.0
    damping: float = 1.0
    plasma: float = 0.0
    sigma: tuple = ((0.0, 0.0), (0.0, 0.0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not self.damping > 0:
            raise ValueError("channel damping must be > 0")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != (2, 2):
            raise ValueError("sigma must be a 2x2 tensor")
        object.__setattr__(self, "sigma", tuple(map(tuple, sig.tolist())))

    @property
    def is_gain(self):
        return self.strength < 0

    @property
    def sigma_xx(self):
        return self.sigma[0][0]

    @property
    def sigma_yy(self):
        return self.sigma[1][1]

    @property
    def sigma_xy(self):
        """Hall (antisymmetric) part of the dc tensor."""
        return 0.5 * (self.sigma[0][1] - self.sigma[1][0])

    def conductivity(self, omega, component=(0, 0)):
        """Frequency-dependent conductivity sigma_ij(w) = sigma_ij * g / (g - i w)."""
        omega = np.asarray(omega, dtype=complex)
        s = self.strength * self.sigma[component[0]][component[1]]
        return s * self.damping / (self.damping - 1j * omega)

    def _scalar(self, w):
        f, g = self.strength, self.damping
        if self.kind == "lorentz":
            return f * self.plasma**2 / (self.resonance**2 - w * w - 1j * g * w)
        if self.kind == "drude":
            return -f * self.plasma**2 / (w * (w + 1j * g))
        if w == 0:
            raise SingularFrequencyError("conductivity channel has a 1/w pole at w = 0")
        return 1j * (f * self.sigma[0][0] * g / (g - 1j * w)) / (epsilon_0 * w)

    def __call__(self, omega):
        """Channel permittivity at (possibly complex) angular frequency."""
        omega = np.asarray(omega, dtype=complex)
        f, g = self.strength, self.damping
        if self.kind == "lorentz":
            w0, wp = self.resonance, self.plasma
            return f * wp**2 / (w0**2 - omega**2 - 1j * g * omega)
        if self.kind == "drude":
            wp = self.plasma
            return -f * wp**2 / (omega * (omega + 1j * g))
        if np.any(omega == 0):
            raise SingularFrequencyError(
                "conductivity channel has a 1/w pole at w = 0")
        # isotropic longitudinal part; the tensor lives in biased_conductivity
        return 1j * self.conductivity(omega) / (epsilon_0 * omega)


@dataclass(frozen=True)
class MaterialResponse:
    """Background plus channels, with optional rigid velocity and drift bias.

    ``velocity`` (m/s) moves the whole body along x. ``drift_bias`` (m/s) is
    the carrier drift of the conductivity channels along the bias axis x.
    """

    channels: tuple = ()
    background: float = 1.0
    velocity: float = 0.0
    drift_bias: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.background < 1:
            raise ValueError("background permittivity must be >= 1")
        if abs(self.velocity) >= 299792458.0:
            raise ValueError("|velocity| must be below c")

    @property
    def has_gain(self):
        return any(ch.is_gain for ch in self.channels)

    @property
    def is_active(self):
        """True when the medium can supply energy (gain, motion or bias)."""
        return self.has_gain or self.velocity != 0 or self.drift_bias != 0

    def at_rest(self):
        return MaterialResponse(self.channels, self.background, 0.0, 0.0, self.name)

    def __call__(self, omega):
        return eval_epsilon(self, omega)


def constant(eps, name=""):
    """Dispersionless real medium (e.g. vacuum, or eps = 1e8 as a near-ideal mirror)."""
    return MaterialResponse((), float(eps), name=name)


VACUUM = constant(1.0, "vacuum")


def eval_epsilon(m, omega):
    """Rest-frame permittivity background + sum of channels.

    Raises SingularFrequencyError at w = 0 when a conductivity channel is present.
    """
    if isinstance(omega, (int, float, complex, np.number)):
        w = complex(omega)
        eps = complex(m.background)
        for ch in m.channels:
            eps += ch._scalar(w)
        return eps
    omega = np.asarray(omega, dtype=complex)
    eps = np.full(omega.shape, m.background, dtype=complex)
    for ch in m.channels:
        eps = eps + ch(omega)
    return eps if eps.ndim else complex(eps)


def channel_imag_parts(m, omega):
    """Im eps_l(w) for every channel, stacked along axis 0."""
    omega = np.asarray(omega, dtype=float)
    if not m.channels:
        return np.zeros((0,) + omega.shape)
    return np.array([np.imag(ch(omega)) for ch in m.channels])


def split_loss_gain(m, omega):
    """Split Im eps into its loss (>= 0) and gain (<= 0) parts.

    Channels are sorted by the sign of their own imaginary part, so a channel
    with Im eps_l = 0 enters neither sum. The two parts add up to
    Im eval_epsilon(m, w).
    """
    parts = channel_imag_parts(m, omega)
    if parts.shape[0] == 0:
        z = np.zeros(np.shape(omega))
        return (z, z) if z.ndim else (0.0, 0.0)
    loss = np.where(parts > 0, parts, 0.0).sum(axis=0)
    gain = np.where(parts < 0, parts, 0.0).sum(axis=0)
    if np.ndim(loss) == 0:
        return float(loss), float(gain)
    return loss, gain


def doppler_shift(m, omega, k_parallel):
    """Lab-frame permittivity of a body moving with ``m.velocity`` along x.

    ``k_parallel`` is either the x component of the in-plane wavevector or a
    2-vector. The rest-frame response is sampled at w - k.v, which has a
    negative imaginary part on 0 < w < k.v for a passive-at-rest body.
    """
    kx = np.asarray(k_parallel, dtype=float)
    if kx.ndim and kx.shape[-1] == 2:
        kx = kx[..., 0]
    return eval_epsilon(m.at_rest(), np.asarray(omega) - kx * m.velocity)


def drift_velocity(m):
    """Carrier drift velocity 2-vector of the biased conductivity channels.

    The bias drives carriers along x; a Hall conductivity deflects the
    current by the Hall angle, so the drift acquires a transverse component
    v_d * sigma_yx / sigma_xx.
    """
    vd = m.drift_bias
    sxx = sum(ch.strength * ch.sigma_xx for ch in m.channels if ch.kind == "conductivity")
    sxy = sum(ch.strength * ch.sigma_xy for ch in m.channels if ch.kind == "conductivity")
    if vd == 0 or sxx == 0:
        return np.array([vd, 0.0])
    return np.array([vd, -vd * sxy / sxx])


def biased_conductivity(m, omega, k_parallel):
    """Effective 2x2 conductivity of the drifting carriers at (w, k).

    The longitudinal (symmetric) part is the carrier response rigidly
    shifted to w' = w - k.v_drift, expressed as a lab-frame conductivity
    sigma(w') w / w'. The Hall part is kept at the lab frequency.
    """
    k = np.asarray(k_parallel, dtype=float)
    if k.shape != (2,):
        raise ValueError("k_parallel must be an in-plane 2-vector")
    chans = [ch for ch in m.channels if ch.kind == "conductivity"]
    if not chans:
        raise ValueError("material has no conductivity channel")
    omega = complex(omega)
    shifted = omega - float(k @ drift_velocity(m))
    if omega == 0 or shifted == 0:
        raise SingularFrequencyError("drift-shifted frequency hits the 1/w pole")
    out = np.zeros((2, 2), dtype=complex)
    for ch in chans:
        scale = omega / shifted
        out[0, 0] += ch.conductivity(shifted, (0, 0)) * scale
        out[1, 1] += ch.conductivity(shifted, (1, 1)) * scale
        hall = ch.strength * ch.sigma_xy * ch.damping / (ch.damping - 1j * omega)
        out[0, 1] += hall
        out[1, 0] -= hall
    return out


def effective_epsilon(m, omega, k_parallel):
    """Lab-frame scalar permittivity seen by a longitudinal wave along k.

    Combines rigid motion (everything shifted by k_x v) with the drift of the
    conductivity channels (shifted by k.v_drift). Only the projection
    khat.sigma.khat enters, so the Hall part itself drops out and acts
    through the tilted drift. Works on arrays of w and k (shape (..., 2)).
    """
    omega = np.asarray(omega, dtype=complex)
    k = np.asarray(k_parallel, dtype=float)
    kx, ky = k[..., 0], k[..., 1]
    w = omega - kx * m.velocity
    eps = np.full(np.broadcast(w, ky).shape, m.background, dtype=complex)
    vdr = drift_velocity(m)
    knorm = np.hypot(kx, ky)
    safe = np.where(knorm > 0, knorm, 1.0)
    cx = np.where(knorm > 0, kx / safe, 1.0)
    cy = np.where(knorm > 0, ky / safe, 0.0)
    for ch in m.channels:
        if ch.kind != "conductivity":
            eps = eps + ch(w)
            continue
        wd = w - (kx * vdr[0] + ky * vdr[1])
        sl = (ch.conductivity(wd, (0, 0)) * cx**2
              + ch.conductivity(wd, (1, 1)) * cy**2
              + ch.strength * 0.5 * (ch.sigma[0][1] + ch.sigma[1][0])
              * ch.damping / (ch.damping - 1j * wd) * 2 * cx * cy)
        eps = eps + 1j * sl / (epsilon_0 * wd)
    return eps if eps.ndim else complex(eps)
