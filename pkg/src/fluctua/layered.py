"""Dyadic Green tensor of vacuum and planar multilayers.

Geometry
--------
Layers are listed bottom to top. The first and last entries are
semi-infinite; the topmost interface sits at z = 0 and observers/emitters
live in the top layer (z > 0). Everything returned is the scaled tensor
Gbar = (w/c)^2 G.

Polarisation bookkeeping
------------------------
s waves are tracked through E_y, p waves through the H amplitude; with
q = kz (s) or kz/eps (p) both obey continuity of u and q (a - b), where a
(b) is the up (down) going amplitude. In-plane unit vectors: khat along k,
shat = zhat x khat, and the p field direction of an H-amplitude wave is
e_pm = (-/+ kz khat + k zhat) / eps (upper sign for upgoing).
"""

import cmath
from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import special

from .constants import c
from .material import MaterialResponse, VACUUM, eval_epsilon, split_loss_gain
from .numerics import QuadratureSpec, adaptive_integrate

BRANCH_TOL = 1e-9


class DivergenceError(ValueError):
    """The real part of the Green tensor diverges at coincident points."""


@dataclass(frozen=True)
class LayerStack:
    """Ordered (bottom to top) list of (MaterialResponse, thickness) pairs."""

    layers: tuple

    def __post_init__(self):
        layers = tuple((m, float(d)) for m, d in self.layers)
        if len(layers) < 2:
            raise ValueError("a stack needs at least two half-spaces")
        if not (np.isinf(layers[0][1]) and np.isinf(layers[-1][1])):
            raise ValueError("first and last layers must be semi-infinite")
        for m, d in layers[1:-1]:
            if not (np.isfinite(d) and d > 0):
                raise ValueError("interior layer thicknesses must be finite and > 0")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def vacuum(cls):
        return cls(((VACUUM, np.inf), (VACUUM, np.inf)))

    @classmethod
    def half_space(cls, material, top=VACUUM):
        return cls(((material, np.inf), (top, np.inf)))

    @classmethod
    def slab(cls, material, thickness, substrate=VACUUM, top=VACUUM):
        return cls(((substrate, np.inf), (material, thickness), (top, np.inf)))

    @property
    def materials(self):
        return [m for m, _ in self.layers]

    @property
    def thicknesses(self):
        return [d for _, d in self.layers]

    @property
    def interfaces(self):
        """Interface heights, strictly increasing, the last one at z = 0."""
        z = [0.0]
        for d in reversed(self.thicknesses[1:-1]):
            z.append(z[-1] - d)
        return np.array(z[::-1])

    @property
    def top(self):
        return self.layers[-1][0]

    @property
    def has_gain(self):
        return any(m.has_gain for m in self.materials)

    @property
    def is_uniform(self):
        """Every layer is the top material, so nothing scatters."""
        return all(m == self.top for m in self.materials)

    @property
    def is_active(self):
        return any(m.is_active for m in self.materials)

    def epsilons(self, omega):
        return [eval_epsilon(m, omega) for m in self.materials]


def kz(eps, k0, k):
    """Normal wavenumber sqrt(eps k0^2 - k^2) on the branch Im >= 0 (Re >= 0 on ties)."""
    root = np.sqrt(np.asarray(eps * k0**2 - np.asarray(k) ** 2, dtype=complex))
    flip = (root.imag < 0) | ((root.imag == 0) & (root.real < 0))
    return np.where(flip, -root, root)


def _normal_wavenumbers(stack, omega, k, nonretarded):
    k0 = omega / c
    eps = stack.epsilons(omega)
    if nonretarded:
        kzs = [1j * np.asarray(k, dtype=complex) + 0 * e for e in eps]
    else:
        kzs = [kz(e, k0, k) for e in eps]
    return k0, eps, kzs


def _recursion(stack, omega, k, pol, nonretarded=False):
    """Up/down amplitudes in every layer for a unit downgoing wave at z = 0.

    Returns a dict with, per layer j: kz, q, gamma (up/down ratio at the
    bottom of layer j), d_top, d_bot (downgoing amplitude at the top and
    bottom of the layer). ``refl`` is the top reflection coefficient.
    All quantities broadcast over array-valued ``omega``/``k``.
    """
    k0, eps, kzs = _normal_wavenumbers(stack, omega, k, nonretarded)
    n = len(eps)
    if pol == "s":
        qs = kzs
    elif pol == "p":
        qs = [kk / e for kk, e in zip(kzs, eps)]
    else:
        raise ValueError("pol must be 's' or 'p'")
    ds = stack.thicknesses
    phase = [None] + [np.exp(1j * kzs[j] * ds[j]) for j in range(1, n - 1)] + [None]

    gamma = [np.zeros_like(qs[0])]
    for j in range(1, n):
        below = gamma[j - 1] * phase[j - 1] ** 2 if 0 < j - 1 < n - 1 else gamma[j - 1]
        den = qs[j] + qs[j - 1]
        r = (qs[j] - qs[j - 1]) / np.where(den == 0, 1.0, den)
        r = np.where(den == 0, np.where(qs[j] == 0, -1.0, 0.0), r)
        gamma.append((r + below) / (1 + r * below))

    d_top = [None] * n
    d_bot = [None] * n
    d_bot[n - 1] = np.ones_like(gamma[-1])
    for j in range(n - 2, -1, -1):
        g_top = gamma[j] * phase[j] ** 2 if 0 < j < n - 1 else gamma[j]
        d_top[j] = d_bot[j + 1] * (1 + gamma[j + 1]) / (1 + g_top)
        d_bot[j] = d_top[j] * phase[j] if 0 < j < n - 1 else d_top[j]
    return dict(k0=k0, eps=eps, kz=kzs, q=qs, gamma=gamma, d_top=d_top,
                d_bot=d_bot, refl=gamma[-1], phase=phase)


def fresnel_coefficients(stack, k, omega, nonretarded=False):
    """Reflection and transmission of a wave incident from the top layer.

    r_s, r_p are referenced at z = 0; t_s, t_p are field (E) amplitudes in
    the bottom half-space, referenced at its interface. The p convention
    gives r_p -> +1 and r_s -> -1 for a perfect mirror. With
    ``nonretarded=True`` every kz is replaced by i k (electrostatic limit).

    Returns
    -------
    (r_s, r_p, t_s, t_p)
    """
    if len(stack.layers) == 2 and np.ndim(k) == 0 and np.ndim(omega) == 0:
        return _single_interface(stack, k, omega, nonretarded)
    out = []
    for pol in ("s", "p"):
        rec = _recursion(stack, omega, k, pol, nonretarded)
        out.append((rec["refl"], rec["d_top"][0]))
    (rs, ts), (rp, tp_h) = out
    eps = stack.epsilons(omega)
    tp = tp_h * np.sqrt(eps[-1] + 0j) / np.sqrt(eps[0] + 0j)
    return rs, rp, ts, tp


def _csqrt_up(x):
    r = cmath.sqrt(x)
    if r.imag < 0 or (r.imag == 0 and r.real < 0):
        r = -r
    return r


def _single_interface(stack, k, omega, nonretarded):
    # scalar fast path, same conventions as the recursion
    eb, et = (complex(e) for e in stack.epsilons(omega))
    if nonretarded:
        kb = kt = 1j * k
    else:
        k0 = omega / c
        kb = _csqrt_up(eb * k0 * k0 - k * k)
        kt = _csqrt_up(et * k0 * k0 - k * k)
    out = []
    for qb, qt in ((kb, kt), (kb / eb, kt / et)):
        den = qt + qb
        if den == 0:
            r = -1.0 if qt == 0 else 0.0
        else:
            r = (qt - qb) / den
        out.append((complex(r), complex(1 + r)))
    (rs, ts), (rp, tp_h) = out
    tp = tp_h * cmath.sqrt(et) / cmath.sqrt(eb)
    return rs, rp, ts, tp


def modal_denominator(stack, omega, k, pol):
    """Denominator whose zeros are the guided/leaky modes of the stack.

    Built from the layer characteristic matrices, which are even in each
    finite layer's kz, so it is analytic in the upper half w plane apart
    from material poles (which passive and inverted channels keep below the
    real axis). Vectorised over ``omega``.
    """
    omega = np.asarray(omega, dtype=complex)
    k0 = omega / c
    eps = stack.epsilons(omega)
    ds = stack.thicknesses
    n = len(eps)

    def q_of(e, kk):
        return kk if pol == "s" else kk / e

    kb = kz(eps[0], k0, k)
    u = np.ones_like(kb)
    w = -q_of(eps[0], kb)
    for j in range(1, n - 1):
        kk2 = eps[j] * k0**2 - k**2
        kk = np.sqrt(kk2 + 0j)
        cosx = np.cos(kk * ds[j])
        sinc = ds[j] * np.sinc(kk * ds[j] / np.pi)      # sin(kz d) / kz
        ksin = kk2 * sinc                                # kz sin(kz d)
        if pol == "s":
            u, w = u * cosx + 1j * w * sinc, w * cosx + 1j * u * ksin
        else:
            u, w = u * cosx + 1j * w * sinc * eps[j], w * cosx + 1j * u * ksin / eps[j]
    kt = kz(eps[-1], k0, k)
    return q_of(eps[-1], kt) * u - w


# --------------------------------------------------------------------------
# free space


def free_space_green(r, r_prime, omega, eps=1.0):
    """Analytic homogeneous-medium Gbar(r, r', w) = (w/c)^2 G.

    Raises DivergenceError at r = r' (use free_space_im_green there).
    """
    R = np.asarray(r, float) - np.asarray(r_prime, float)
    dist = np.linalg.norm(R)
    if dist == 0:
        raise DivergenceError("Re Gbar diverges at coincident points")
    k0 = omega / c
    k = np.sqrt(eps + 0j) * k0
    x = k * dist
    rr = np.outer(R, R) / dist**2
    pref = np.exp(1j * x) / (4 * np.pi * dist)
    g = pref * ((1 + 1j / x - 1 / x**2) * np.eye(3) + (-1 - 3j / x + 3 / x**2) * rr)
    return k0**2 * g


def free_space_im_green(r, r_prime, omega, eps=1.0):
    """Im Gbar in a lossless homogeneous medium; finite at r = r'.

    At coincidence it equals sqrt(eps) w^3 / (6 pi c^3) I.
    """
    R = np.asarray(r, float) - np.asarray(r_prime, float)
    dist = np.linalg.norm(R)
    k0 = omega / c
    k = np.sqrt(eps) * k0
    x = k * dist
    if x < 1e-6:
        a = 2.0 / 3.0 - 2.0 * x**2 / 15.0
        b = x**2 / 15.0
    else:
        j0 = special.spherical_jn(0, x)
        j1 = special.spherical_jn(1, x)
        a = j0 - j1 / x
        b = 3 * j1 / x - j0
    rr = np.outer(R, R) / dist**2 if dist > 0 else np.zeros((3, 3))
    return k0**2 * k / (4 * np.pi) * (a * np.eye(3) + b * rr)


# --------------------------------------------------------------------------
# spectral (k-resolved) tensor


@dataclass
class SpectralGreen:
    k: np.ndarray
    omega: float
    kz: list
    r_s: complex
    r_p: complex
    t_s: complex
    t_p: complex
    tensor: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _basis(kvec):
    kvec = np.asarray(kvec, float)
    kmag = float(np.hypot(*kvec))
    khat = np.array([1.0, 0.0]) if kmag == 0 else kvec / kmag
    kh = np.array([khat[0], khat[1], 0.0])
    sh = np.array([-khat[1], khat[0], 0.0])
    return kmag, kh, sh


def layered_green(stack, z, z_prime, k_parallel, omega, part="total"):
    """k-resolved Gbar for z, z' in the top layer.

    The position-space tensor is the 2-D Fourier integral
    Gbar(r, r') = int d^2k/(2 pi)^2 tensor(k) exp(i k.(rho - rho')).
    ``part='scattered'`` drops the direct (free) term; the delta-function
    part of the direct term is never included.
    """
    if z <= 0 or z_prime <= 0:
        raise ValueError("z and z' must lie in the top layer (z > 0)")
    kmag, kh, sh = _basis(k_parallel)
    diag = {}
    k0 = omega / c
    eps_t = eval_epsilon(stack.top, omega)
    kt = kz(eps_t, k0, kmag)
    if abs(kt) < BRANCH_TOL * abs(k0):
        nudge = BRANCH_TOL * abs(k0) * 10
        warnings.warn("k_parallel at a branch point; evaluating at a nudged value")
        diag["nudge"] = nudge
        kmag += nudge
        kt = kz(eps_t, k0, kmag)
    rs, rp, ts, tp = fresnel_coefficients(stack, kmag, omega)
    k1 = np.sqrt(eps_t + 0j) * k0
    zh = np.array([0.0, 0.0, 1.0])
    p_up = (-kt * kh + kmag * zh) / k1
    p_dn = (kt * kh + kmag * zh) / k1
    ss = np.outer(sh, sh)
    g = 1j / (2 * kt) * (rs * ss + rp * np.outer(p_up, p_dn)) * np.exp(1j * kt * (z + z_prime))
    if part == "total":
        if z > z_prime:
            pp = np.outer(p_up, p_up)
        elif z < z_prime:
            pp = np.outer(p_dn, p_dn)
        else:
            pp = 0.5 * (np.outer(p_up, p_up) + np.outer(p_dn, p_dn))
        g = g + 1j / (2 * kt) * (ss + pp) * np.exp(1j * kt * abs(z - z_prime))
    elif part != "scattered":
        raise ValueError("part must be 'total' or 'scattered'")
    _, _, kzs = _normal_wavenumbers(stack, omega, kmag, False)
    return SpectralGreen(np.asarray(k_parallel, float), omega, [complex(x) for x in kzs],
                         complex(rs), complex(rp), complex(ts), complex(tp), k0**2 * g, diag)


# --------------------------------------------------------------------------
# azimuthal integration and the Sommerfeld integrals


def _azimuthal(k, delta, sign, c_ss, c_kk, c_kz, c_zk, c_zz):
    """Average over the direction of k of a dyad times exp(i sign k.delta).

    The dyad is c_ss shat shat + c_kk khat khat + c_kz khat zhat
    + c_zk zhat khat + c_zz zhat zhat; coefficients depend on |k| only.
    Returns a (3, 3) complex array.
    """
    dist = float(np.hypot(delta[0], delta[1]))
    x = k * dist
    j0 = special.j0(x)
    j1 = special.j1(x)
    j2 = special.jv(2, x)
    dh = np.array([1.0, 0.0]) if dist == 0 else np.asarray(delta[:2], float) / dist
    aniso = 2 * np.outer(dh, dh) - np.eye(2)
    iso = np.eye(2)
    out = np.zeros((3, 3), dtype=complex)
    out[:2, :2] = (c_ss * (0.5 * j0 * iso + 0.5 * j2 * aniso)
                   + c_kk * (0.5 * j0 * iso - 0.5 * j2 * aniso))
    kavg = 1j * sign * j1 * dh
    out[:2, 2] = c_kz * kavg
    out[2, :2] = c_zk * kavg
    out[2, 2] = c_zz * j0
    return out


def _top_index(stack, omega):
    eps_t = eval_epsilon(stack.top, omega)
    if abs(np.imag(eps_t)) > 0 or np.real(eps_t) <= 0:
        raise NotImplementedError("k-integrals require a lossless top medium")
    return float(np.real(eps_t))


def _split_integral(integrand, k1, zsum, spec, vector_len):
    """Integrate integrand(k, kz) * k dk / kz over [0, inf) in the top medium.

    The light line is a hard node: k = k1 sin(th) below it and
    k = k1 cosh(t) above it, which absorbs the 1/kz singularity.
    ``integrand`` receives (k, kz) and must already include the 1/kz weight
    multiplied back out, i.e. it returns f(k) with the measure
    k dk / (2 pi kz) applied by this helper.
    """
    def prop(th):
        k = k1 * np.sin(th)
        kzv = k1 * np.cos(th)
        return integrand(k, kzv) * k1 * np.sin(th) / (2 * np.pi)

    def evan(t):
        k = k1 * np.cosh(t)
        kzv = 1j * k1 * np.sinh(t)
        return integrand(k, kzv) * k1 * np.cosh(t) / (2 * np.pi) / 1j

    t_max = np.arcsinh(46.0 / (k1 * max(zsum, 1e-300)))
    v1, e1 = adaptive_integrate(prop, 0.0, np.pi / 2, spec, vector=True)
    # near-field integrands peak around k ~ 1/zsum
    t_peak = np.arccosh(max(1.0, 1.0 / (k1 * max(zsum, 1e-300))))
    pts = [t_peak] if 0 < t_peak < t_max else None
    v2, e2 = adaptive_integrate(evan, 0.0, t_max, spec, vector=True, points=pts)
    return v1 + v2, e1 + e2


def _pack(m):
    return np.concatenate([m.real.ravel(), m.imag.ravel()])


def _unpack(v):
    return (v[:9] + 1j * v[9:]).reshape(3, 3)


SOMMERFELD_SPEC = QuadratureSpec(rel_tol=1e-9, abs_tol=0.0, max_subdivisions=400)


def scattered_green(stack, r, r_prime, omega, spec=SOMMERFELD_SPEC, return_error=False):
    """Position-space scattered Gbar_R(r, r', w) for r, r' in the top layer."""
    r, rp = np.asarray(r, float), np.asarray(r_prime, float)
    if r[2] <= 0 or rp[2] <= 0:
        raise ValueError("points must lie above the top interface (z > 0)")
    eps_t = _top_index(stack, omega)
    if stack.is_uniform:
        return (np.zeros((3, 3), complex), 0.0) if return_error else np.zeros((3, 3), complex)
    k0 = omega / c
    k1 = np.sqrt(eps_t) * k0
    delta = r[:2] - rp[:2]
    zsum = r[2] + rp[2]

    def f(k, kzv):
        rs, rp_, _, _ = fresnel_coefficients(stack, k, omega)
        ph = np.exp(1j * kzv * zsum)
        a = 1j / 2 * ph  # the 1/kz is supplied by the measure
        m = _azimuthal(k, delta, +1, a * rs, -a * rp_ * kzv**2 / k1**2,
                       -a * rp_ * kzv * k / k1**2, a * rp_ * k * kzv / k1**2,
                       a * rp_ * k**2 / k1**2)
        return _pack(m)

    v, e = _split_integral(f, k1, zsum, spec, 18)
    g = k0**2 * _unpack(v)
    if return_error:
        return g, k0**2 * e
    return g


def coincident_scattered(stack, z, omega, spec=SOMMERFELD_SPEC, derivative=False):
    """Diagonal (xx, zz) of Gbar_R(r, r) at height z, with error estimate.

    The tensor is diag(xx, xx, zz) by in-plane isotropy. With
    ``derivative=True`` the z-derivative is returned instead (the spectral
    integrand picks up a factor 2 i kz).
    """
    if z <= 0:
        raise ValueError("z must lie above the top interface")
    eps_t = _top_index(stack, omega)
    if stack.is_uniform:
        return 0j, 0j, 0.0
    k0 = omega / c
    k1 = np.sqrt(eps_t) * k0

    def f(k, kzv):
        rs, rp, _, _ = fresnel_coefficients(stack, k, omega)
        a = 0.5j * np.exp(2j * kzv * z)
        if derivative:
            a = a * 2j * kzv
        xx = 0.5 * a * (rs - rp * kzv**2 / k1**2)
        zz = a * rp * k**2 / k1**2
        return np.array([xx.real, zz.real, xx.imag, zz.imag])

    v, e = _split_integral(f, k1, 2 * z, spec, 4)
    return k0**2 * complex(v[0], v[2]), k0**2 * complex(v[1], v[3]), k0**2 * e


def green_tensor(stack, r, r_prime, omega, part="total", spec=SOMMERFELD_SPEC):
    """Position-space Gbar for r, r' in the (lossless) top layer."""
    g = scattered_green(stack, r, r_prime, omega, spec)
    if part == "scattered":
        return g
    eps_t = _top_index(stack, omega)
    return g + free_space_green(r, r_prime, omega, eps_t)


def im_green(stack, r, r_prime, omega, part="total", spec=SOMMERFELD_SPEC):
    """Elementwise Im Gbar, finite also at r = r'."""
    g = np.imag(scattered_green(stack, r, r_prime, omega, spec))
    if part == "scattered":
        return g
    eps_t = _top_index(stack, omega)
    return g + free_space_im_green(r, r_prime, omega, eps_t)


def vacuum_spectral_im_green(omega, delta_z=0.0, spec=SOMMERFELD_SPEC):
    """Im Gbar of vacuum at in-plane coincidence, by brute-force k integration.

    Only the propagating sector contributes; the 1/kz endpoint singularity
    is handled with QUADPACK's algebraic weight.
    """
    k1 = omega / c

    def comp(which):
        def f(k):
            kzv = np.sqrt(k1**2 - k**2)
            ph = np.cos(kzv * abs(delta_z))
            if which == "xx":
                val = 0.5 * (1 + kzv**2 / k1**2)
            else:
                val = k**2 / k1**2
            # integrand k/(2 pi) * Re[1/(2 kz)] * val, with kz = sqrt(k1-k) sqrt(k1+k)
            return k / (2 * np.pi) * ph * val / (2 * np.sqrt(k1 + k))
        v, e = adaptive_integrate(f, 0.0, k1, spec, weight="alg", wvar=(0.0, -0.5))
        return v, e

    xx, exx = comp("xx")
    zz, ezz = comp("zz")
    return k1**2 * np.diag([xx, xx, zz]), k1**2 * max(exx, ezz)


# --------------------------------------------------------------------------
# volume route: int Gbar(r,s) w(s) Gbar^dagger(r',s) ds


def _expint(a, d):
    """int_0^d exp(a t) dt, stable for small |a d|."""
    a = np.asarray(a, dtype=complex)
    ad = a * d
    small = np.abs(ad) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, d * (1 + ad / 2), np.expm1(ad) / safe)


def _layer_weights(stack, omega):
    """Per-layer (loss, gain) imaginary permittivity at real w."""
    return [split_loss_gain(m, omega) for m in stack.materials]


def _volume_scalars(stack, omega, k, weights):
    """Per-k scalars S_s, S_p summed over all non-top layers.

    ``weights`` is a list of per-layer imaginary permittivities (one number
    per layer, any sign). For the semi-infinite bottom, a lossless
    propagating half-space contributes its radiation escape, which is
    routed to the layer weight slot ``escape`` (returned separately).
    """
    k0 = omega / c
    out = {}
    for pol in ("s", "p"):
        rec = _recursion(stack, omega, k, pol)
        n = len(rec["eps"])
        tot = 0.0
        esc = 0.0
        for j in range(n - 1):
            kk = rec["kz"][j]
            if pol == "s":
                n2, m = 1.0, 1.0
            else:
                e2 = abs(rec["eps"][j]) ** 2
                n2 = (abs(kk) ** 2 + k**2) / e2
                m = (k**2 - abs(kk) ** 2) / e2
            dt = rec["d_top"][j]
            if j == 0:
                kpp = kk.imag
                amp = abs(dt) ** 2 * n2
                if weights[j] != 0 and kpp > 0:
                    tot += weights[j] * amp / (2 * kpp)
                elif weights[j] == 0 and kk.real > 0 and kpp == 0:
                    esc += amp * kk.real / k0**2
                continue
            if weights[j] == 0:
                continue
            d = stack.thicknesses[j]
            ub = rec["gamma"][j] * rec["d_bot"][j]
            e_dd = _expint(-2 * kk.imag, d).real
            cross = dt * np.conj(ub) * np.exp(-1j * np.conj(kk) * d) * _expint(2j * kk.real, d)
            val = n2 * (abs(dt) ** 2 + abs(ub) ** 2) * e_dd + 2 * m * cross.real
            tot += weights[j] * val
        out[pol] = (tot, esc)
    return out


def volume_route(stack, r, r_prime, omega, spec=SOMMERFELD_SPEC):
    """Im Gbar via the volume integral over sources, split by ordering.

    Returns a dict of 3x3 tensors (all in Gbar^2 units, i.e. directly
    comparable with Im Gbar):

    ``antinormal``  loss-channel sources plus radiation escaping to infinity
    ``normal``      gain-channel sources (|eps''_<|)
    ``kernel``      antinormal - normal, the commutator kernel
    """
    r, rp = np.asarray(r, float), np.asarray(r_prime, float)
    if r[2] <= 0 or rp[2] <= 0:
        raise ValueError("points must lie above the top interface (z > 0)")
    omega = float(omega)
    eps_t = _top_index(stack, omega)
    k0 = omega / c
    k1 = np.sqrt(eps_t) * k0
    delta = r[:2] - rp[:2]
    z, zp = r[2], rp[2]
    lg = _layer_weights(stack, omega)
    w_loss = [a for a, _ in lg]
    w_gain = [-b for _, b in lg]
    has_gain = any(w_gain)

    def f(k, kzv):
        # measure k dk / (2 pi kz) applied outside; multiply kz back here
        czz = (1j / (2 * kzv)) * np.exp(1j * kzv * z) * np.conj((1j / (2 * kzv)) * np.exp(1j * kzv * zp))
        pf = abs(eps_t / k0**2) ** 2
        blocks = []
        for wts in ((w_loss, True), (w_gain, False)):
            weights, with_escape = wts
            if not with_escape and not has_gain:
                blocks.append(np.zeros((3, 3), complex))
                continue
            sc = _volume_scalars(stack, omega, k, weights)
            ss, esc_s = sc["s"]
            sp, esc_p = sc["p"]
            if with_escape:
                ss, sp = ss + esc_s, sp + esc_p
            kk = kzv
            m = _azimuthal(k, delta, -1, czz * ss,
                           czz * pf * sp * abs(kk) ** 2 / eps_t**2,
                           czz * pf * sp * kk * k / eps_t**2,
                           czz * pf * sp * np.conj(kk) * k / eps_t**2,
                           czz * pf * sp * k**2 / eps_t**2)
            if with_escape and np.isreal(kzv) and kzv.real > 0:
                m = m + _top_escape(stack, omega, k, kzv.real, k1, k0, z, zp, delta)
            blocks.append(m * kzv)
        return np.concatenate([_pack(b) for b in blocks])

    v, e = _split_integral(f, k1, z + zp, spec, 36)
    anti = k0**4 * _unpack(v[:18])
    norm = k0**4 * _unpack(v[18:])
    return {"antinormal": anti, "normal": norm, "kernel": anti - norm,
            "error": k0**4 * e}


def _top_escape(stack, omega, k, kzv, k1, k0, z, zp, delta):
    """Radiation leaving through the top half-space (propagating k only)."""
    rs, rp, _, _ = fresnel_coefficients(stack, k, omega)
    e_m = np.exp(-1j * kzv * z)
    e_p = np.exp(1j * kzv * z)
    f_m = np.exp(-1j * kzv * zp)
    f_p = np.exp(1j * kzv * zp)
    a_s = e_m + rs * e_p
    a_s2 = f_m + rs * f_p
    bk = kzv * (rp * e_p - e_m) / k1
    bz = k * (e_m + rp * e_p) / k1
    bk2 = kzv * (rp * f_p - f_m) / k1
    bz2 = k * (f_m + rp * f_p) / k1
    pref = kzv / k0**2 / (4 * kzv**2)
    return _azimuthal(k, delta, -1, pref * a_s * np.conj(a_s2),
                      pref * bk * np.conj(bk2), pref * bk * np.conj(bz2),
                      pref * bz * np.conj(bk2), pref * bz * np.conj(bz2))


def imag_green_identity_check(stack, r, r_prime, omega, spec=SOMMERFELD_SPEC):
    """Relative Frobenius mismatch between Im Gbar and the volume integral.

    The left side comes from the Sommerfeld reflection integral plus the
    analytic free term; the right side from the source-volume integral with
    radiation escape. Requires a passive stack.
    """
    if stack.is_active:
        raise ValueError("identity check is defined for passive stacks")
    lhs = im_green(stack, r, r_prime, omega, spec=spec)
    rhs = volume_route(stack, r, r_prime, omega, spec)["antinormal"]
    resid = np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs)
    return float(resid), lhs, rhs
