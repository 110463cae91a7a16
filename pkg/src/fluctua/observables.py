"""Radiative and mechanical observables built on the field correlators.

Decay rates, Purcell factors and level shifts of a point emitter above a
stack; Casimir pressure between two stacks; lateral (friction and Hall-type)
forces between a body at rest and a moving or current-biased one.
"""

from dataclasses import dataclass, field
import cmath
import math

import numpy as np
from scipy import optimize

from .constants import c, epsilon_0, hbar
from .layered import (LayerStack, _csqrt_up, coincident_scattered, fresnel_coefficients, kz,
                      modal_denominator, volume_route, SOMMERFELD_SPEC)
from .material import (MaterialResponse, PermittivityChannel, drift_velocity,
                       effective_epsilon, eval_epsilon)
from .numerics import (Contour, IntegrationError, QuadratureSpec, adaptive_integrate,
                       batched_adaptive, bisect_threshold, graded_breaks, panel_sums,
                       principal_value, stability_scan)


class InstabilityError(RuntimeError):
    """The requested configuration has growing modes; results would be meaningless."""

    def __init__(self, msg, report=None, bracket=None):
        super().__init__(msg)
        self.report = report
        self.bracket = bracket


@dataclass(frozen=True)
class Emitter:
    """Two-level emitter: position (m), transition frequency (rad/s), dipole (C m)."""

    position: tuple
    omega0: float
    dipole: tuple

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        dip = tuple(complex(x) if isinstance(x, complex) else float(x) for x in self.dipole)
        if len(pos) != 3 or len(dip) != 3:
            raise ValueError("position and dipole must be 3-vectors")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be > 0")
        if not np.linalg.norm(np.asarray(dip, complex)) > 0:
            raise ValueError("dipole moment must be nonzero")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "dipole", dip)

    @property
    def d(self):
        return np.asarray(self.dipole, dtype=complex)

    @property
    def z(self):
        return self.position[2]

    def moved(self, dr):
        return Emitter(tuple(np.add(self.position, dr)), self.omega0, self.dipole)


@dataclass
class ObservableResult:
    value: object
    abs_error: float = 0.0
    unit: str = ""
    stable: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abs_error = float(abs(self.abs_error))

    def __float__(self):
        return float(np.real(self.value))


def free_space_rate(emitter):
    """w0^3 |d|^2 / (3 pi eps0 hbar c^3)."""
    d2 = float(np.vdot(emitter.d, emitter.d).real)
    return emitter.omega0**3 * d2 / (3 * np.pi * epsilon_0 * hbar * c**3)


# --------------------------------------------------------------------------
# stability of layered stacks


def _frequency_scale(materials, fallback):
    scales = [fallback]
    for m in materials:
        for ch in m.channels:
            scales += [ch.resonance, ch.plasma, ch.damping]
    return max(s for s in scales if np.isfinite(s))


def stability_check(stack, omega_scale=None, k_grid=None, contour=None):
    """Argument-principle scan of the s and p modal denominators of a stack.

    The default contour spans Re w in [-4W, 4W] and Im w in [1e-4 W, W],
    where W is the largest material frequency (or ``omega_scale``); the
    default k grid runs over [0, 3 sqrt(max|eps|) W / c].
    """
    W = _frequency_scale(stack.materials, omega_scale or 0.0)
    if W <= 0:
        raise ValueError("need omega_scale for a dispersionless stack")
    if contour is None:
        contour = Contour(-4 * W, 4 * W, 1e-4 * W, W)
    if k_grid is None:
        emax = max(abs(e) for e in stack.epsilons(W)) + max(m.background for m in stack.materials)
        k_grid = np.linspace(0.0, 3 * np.sqrt(emax) * W / c, 13)
    grid = [(float(k), pol) for k in k_grid for pol in ("s", "p")]
    return stability_scan(lambda w, kp: modal_denominator(stack, w, kp[0], kp[1]),
                          grid, contour)


def _require_stable(stack, emitter, allow_unstable):
    if not stack.is_active:
        return True, None
    report = stability_check(stack, emitter.omega0)
    if not report.stable and not allow_unstable:
        raise InstabilityError("stack has growing modes; decay rate is undefined", report)
    return report.stable, report


# --------------------------------------------------------------------------
# decay rate, Purcell factor


def _rate_prefactor():
    return 2.0 / (hbar * epsilon_0)


def decay_rate(stack, emitter, allow_unstable=False, spec=SOMMERFELD_SPEC):
    """Spontaneous downward rate Gamma = 2/(hbar eps0) d*.Im Gbar.d (1/s).

    With gain in the stack the normal-ordered correlator is nonzero and an
    upward (absorption-like) rate appears; it is reported in the diagnostics
    as ``upward_rate`` together with ``net_rate`` = down - up.
    """
    if any(m.velocity or m.drift_bias for m in stack.materials):
        raise NotImplementedError("moving or biased layers are not supported here")
    stable, report = _require_stable(stack, emitter, allow_unstable)
    d = emitter.d
    w0 = emitter.omega0
    r0 = emitter.position
    diag = {"ordering_convention": "downward rate from antinormal, upward from normal"}
    if stack.has_gain:
        res = volume_route(stack, r0, r0, w0, spec)
        down = _rate_prefactor() * np.vdot(d, res["antinormal"] @ d).real
        up = _rate_prefactor() * np.vdot(d, res["normal"] @ d).real
        err = _rate_prefactor() * np.linalg.norm(d) ** 2 * res["error"]
    else:
        eps_t = float(np.real(eval_epsilon(stack.top, w0)))
        xx, zz, err = coincident_scattered(stack, emitter.z, w0, spec)
        g0 = np.sqrt(eps_t) * w0**3 / (6 * np.pi * c**3)
        img = np.diag([g0 + xx.imag, g0 + xx.imag, g0 + zz.imag])
        down = _rate_prefactor() * np.vdot(d, img @ d).real
        up = 0.0
        err = _rate_prefactor() * np.linalg.norm(d) ** 2 * err
    diag.update(upward_rate=float(up), net_rate=float(down - up))
    if report is not None:
        diag["stability"] = report.to_dict()
    return ObservableResult(float(down), err, "1/s", stable, diag)


def purcell_factor(stack, emitter, allow_unstable=False, spec=SOMMERFELD_SPEC):
    """Gamma / Gamma_vacuum."""
    res = decay_rate(stack, emitter, allow_unstable, spec)
    g0 = free_space_rate(emitter)
    return ObservableResult(res.value / g0, res.abs_error / g0, "", res.stable,
                            dict(res.diagnostics, vacuum_rate=g0))


# --------------------------------------------------------------------------
# level shift and Casimir-Polder force


def spectral_shift(spectrum, omega0, omega_min, omega_max, window=None,
                   spec=QuadratureSpec(rel_tol=1e-8), points=None):
    """PV integral of spectrum(w) / (w0 - w) over [omega_min, omega_max]."""
    return principal_value(spectrum, omega0, omega_min, omega_max, window, spec,
                           points=points)


def _material_points(stack, lo, hi):
    pts = set()
    for m in stack.materials:
        for ch in m.channels:
            for w in (ch.resonance, ch.plasma / np.sqrt(2), ch.plasma):
                if lo < w < hi:
                    pts.add(float(w))
    return sorted(pts)


LAMB_SPEC = QuadratureSpec(rel_tol=1e-6, abs_tol=0.0, max_subdivisions=400)


def _shift_spectrum(stack, emitter, spec, derivative=False):
    d = emitter.d
    pref = 1.0 / (np.pi * hbar * epsilon_0)

    def f(w):
        xx, zz, _ = coincident_scattered(stack, emitter.z, w, spec, derivative)
        m = np.array([xx.imag, xx.imag, zz.imag])
        return pref * float(np.sum(np.abs(d) ** 2 * m))

    return f


def lamb_shift(stack, emitter, omega_max, window=None, spec=LAMB_SPEC, _derivative=False):
    """Environment-induced transition shift (rad/s), scattered Green part only.

    The free-space part is UV divergent and taken as absorbed into w0.
    """
    if not omega_max > emitter.omega0:
        raise ValueError("omega_max must exceed the transition frequency")
    f = _shift_spectrum(stack, emitter, SOMMERFELD_SPEC, _derivative)
    lo = 1e-6 * emitter.omega0
    val, err = principal_value(f, emitter.omega0, lo, omega_max, window, spec,
                               points=_material_points(stack, lo, omega_max))
    return ObservableResult(float(val), err, "rad/s" if not _derivative else "rad/s/m",
                            True, {"omega_max": omega_max, "omega_min": lo})


def casimir_polder_force(stack, emitter, omega_max, h=None, method="difference",
                         spec=LAMB_SPEC):
    """F = -hbar grad(delta w) on the emitter (N, 3-vector).

    ``method='difference'`` takes central differences of the shift with step
    ``h`` (default z/100); ``method='derivative'`` differentiates the
    spectral integrand analytically before the frequency integral.
    """
    z = emitter.z
    if method == "derivative":
        res = lamb_shift(stack, emitter, omega_max, spec=spec, _derivative=True)
        fz = -hbar * res.value
        return ObservableResult(np.array([0.0, 0.0, fz]), hbar * res.abs_error, "N",
                                True, {"method": method})
    if method != "difference":
        raise ValueError("method must be 'difference' or 'derivative'")
    h = 0.01 * z if h is None else h
    if not 0 < h < z:
        raise ValueError("step h must satisfy 0 < h < z")
    comps, errs = [], []
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        up = lamb_shift(stack, emitter.moved(step), omega_max, spec=spec)
        dn = lamb_shift(stack, emitter.moved(-step), omega_max, spec=spec)
        diff = up.value - dn.value
        noise = up.abs_error + dn.abs_error
        if axis == 2 and abs(diff) < 10 * noise:
            rec = h * (10 * noise / max(abs(diff), 1e-300)) ** 0.5
            raise ValueError(f"step h={h:g} m is noise dominated; try h >= {rec:g} m")
        comps.append(-hbar * diff / (2 * h))
        errs.append(hbar * noise / (2 * h))
    return ObservableResult(np.array(comps), max(errs), "N", True,
                            {"method": method, "h": h})


# --------------------------------------------------------------------------
# Casimir pressure between two stacks across a vacuum gap


def _as_stack(x):
    if isinstance(x, LayerStack):
        return x
    if isinstance(x, MaterialResponse):
        return LayerStack.half_space(x)
    raise TypeError("expected a LayerStack or MaterialResponse")


def _check_pair(pair):
    lower, upper = (_as_stack(s) for s in pair)
    for s in (lower, upper):
        if s.is_active:
            raise ValueError("Casimir pressure is defined here for passive bodies at rest")
        if s.top.channels or s.top.background != 1.0:
            raise ValueError("each stack must face the gap with vacuum on top")
    return lower, upper


CASIMIR_SPEC = QuadratureSpec(rel_tol=1e-5, abs_tol=0.0, max_subdivisions=400)


def casimir_pressure(stack_pair, d, route="imaginary", spec=CASIMIR_SPEC,
                     omega_max=None):
    """Normal pressure (Pa) on two bodies separated by a vacuum gap ``d``.

    Negative values mean attraction. ``route='imaginary'`` integrates over
    imaginary frequencies w = i xi in polar coordinates of (k, xi/c);
    ``route='real'`` integrates the same reflection kernel along real
    frequencies, with the k integral outermost (the w-outer order does not
    converge at the light line). The real route needs reflection
    coefficients that decay at large |w| (e.g. Drude mirrors) and an upper
    cutoff ``omega_max``.
    """
    lower, upper = _check_pair(stack_pair)
    if not d > 0:
        raise ValueError("gap must be > 0")
    if route == "imaginary":
        return _casimir_imaginary(lower, upper, d, spec)
    if route == "real":
        return _casimir_real(lower, upper, d, spec, omega_max)
    raise ValueError("route must be 'imaginary' or 'real'")


def _round_trip(lower, upper, k, omega):
    r1s, r1p, _, _ = fresnel_coefficients(lower, k, omega)
    r2s, r2p, _, _ = fresnel_coefficients(upper, k, omega)
    return r1s * r2s, r1p * r2p


def _casimir_imaginary(lower, upper, d, spec):
    inner_spec = spec.replace(rel_tol=1e-9)
    # the TE term switches off for xi below c q / sqrt(eps): a boundary layer in theta
    emax = max(abs(e) for st in (lower, upper) for e in st.epsilons(1j * c / (2 * d)))
    th_pts = [t for t in (1 / np.sqrt(emax), 10 / np.sqrt(emax), 100 / np.sqrt(emax)) if t < 0.5]

    def radial(theta):
        ct, st = math.cos(theta), math.sin(theta)

        def f(x):                      # x = 2 q d
            q = x / (2 * d)
            xi = c * q * st
            rs, rp = _round_trip(lower, upper, q * ct, 1j * xi)
            e = math.exp(-x)
            tot = 0.0
            for rr in (rs, rp):
                rho = complex(rr) * e
                tot += (rho / (1 - rho)).real
            return x**3 * tot

        # x^3 exp(-x) < 1e-20 beyond x = 60
        v, err = adaptive_integrate(f, 0.0, 60.0, inner_spec, points=[3.0])
        return ct * v, ct * err

    errs = []

    def outer(theta):
        v, e = radial(theta)
        errs.append(e)
        return v

    v, e = adaptive_integrate(outer, 0.0, np.pi / 2, spec, points=th_pts or None)
    scale = -hbar * c / (2 * np.pi**2) / (2 * d) ** 4
    return ObservableResult(float(scale * v), abs(scale) * (e + max(errs)), "Pa", True,
                            {"route": "imaginary", "evaluations": len(errs)})


def _casimir_real(lower, upper, d, spec, omega_max):
    if omega_max is None:
        raise ValueError("the real-frequency route needs omega_max")
    inner_spec = spec.replace(max_subdivisions=max(spec.max_subdivisions, 2000))
    errs = []

    def per_k(x):                      # x = k d
        k = x / d
        wl = c * k

        def f(w):
            kzv = _csqrt_up(complex((w / c) ** 2 - k * k))
            rs, rp = _round_trip(lower, upper, k, w)
            ph = cmath.exp(2j * kzv * d)
            tot = 0j
            for rr in (rs, rp):
                rho = complex(rr) * ph
                tot += rho / (1 - rho)
            return (kzv * tot).real

        v, err = 0.0, 0.0
        for lo, hi in ((0.0, min(wl, omega_max)), (min(wl, omega_max), omega_max)):
            if hi > lo:
                vr, er = adaptive_integrate(f, lo, hi, inner_spec)
                v += vr
                err += er
        errs.append(x * err)
        return x * v

    v, e = adaptive_integrate(per_k, 0.0, 60.0, spec)
    scale = hbar / (2 * np.pi**2) / d**2
    # the inner errors integrate over x in [0, 60]
    return ObservableResult(float(scale * v), abs(scale) * (e + max(errs) * 60.0),
                            "Pa", True, {"route": "real", "omega_max": omega_max})


def ideal_casimir_pressure(d):
    """-pi^2 hbar c / (240 d^4)."""
    return -np.pi**2 * hbar * c / (240 * d**4)


# --------------------------------------------------------------------------
# lateral forces: quantum friction and the Hall-type transverse force


def _direction(kx, ky):
    """Unit vector along k, or x for k = 0; works on scalars and arrays."""
    kn = np.hypot(kx, ky)
    if np.ndim(kn) == 0:
        return (kx / kn, ky / kn) if kn > 0 else (1.0, 0.0)
    safe = np.where(kn > 0, kn, 1.0)
    return np.where(kn > 0, kx / safe, 1.0), np.where(kn > 0, ky / safe, 0.0)


def _scalar_response(m):
    """Fast lab-frame eps(w, kx, ky) of a (possibly moving/biased) half-space."""
    bg = complex(m.background)
    v = m.velocity
    vdx, vdy = (float(x) for x in drift_velocity(m))
    plain = [ch for ch in m.channels if ch.kind != "conductivity"]
    cond = [(ch.strength, ch.damping, ch.sigma[0][0], ch.sigma[1][1],
             0.5 * (ch.sigma[0][1] + ch.sigma[1][0])) for ch in m.channels
            if ch.kind == "conductivity"]

    def eps(w, kx, ky):
        wr = w - kx * v
        e = bg
        vec = isinstance(wr, np.ndarray)
        for ch in plain:
            e = e + (ch(wr) if vec else ch._scalar(wr))
        if cond:
            cx, cy = _direction(kx, ky)
            wd = wr - (kx * vdx + ky * vdy)
            for f, g, sxx, syy, ssym in cond:
                proj = sxx * cx * cx + syy * cy * cy + 2 * ssym * cx * cy
                e += 1j * (f * proj * g / (g - 1j * wd)) / (epsilon_0 * wd)
        return e

    return eps


def _gain_drift(m):
    """In-plane velocity that opens the anomalous (gain) window of a body."""
    if m.velocity and m.drift_bias:
        raise NotImplementedError("combine either rigid motion or a drift bias, not both")
    if m.velocity:
        return np.array([m.velocity, 0.0])
    return drift_velocity(m)


FORCE_SPEC = QuadratureSpec(rel_tol=1e-4, abs_tol=0.0, max_subdivisions=200)


def _reflection(eps, k, w, retarded):
    """(r_s, r_p) of a half-space seen from vacuum; nonretarded keeps r_p only."""
    if not retarded:
        return 0.0, (eps - 1) / (eps + 1)
    k0 = w / c
    k_vac = _csqrt_up(complex(k0 * k0 - k * k))
    k_med = _csqrt_up(eps * k0 * k0 - k * k)
    return (k_vac - k_med) / (k_vac + k_med), (eps * k_vac - k_med) / (eps * k_vac + k_med)


def _lateral_force(m_rest, m_active, d, spec=FORCE_SPEC, retarded=False, x_max=40.0):
    """Force per area (N/m^2, 2-vector) on the active body from the gain window.

    F = -hbar/(2 pi^3) int d^2k k e^{-2kd} int_0^{k.u} dw
        Im R_rest(w) (-Im R_act(w, k)) / |1 - e^{-2kd} R_rest R_act|^2,
    with u the gain drift of the active body; the phi integral runs over the
    half plane k.u > 0, symmetric about u. In the retarded mode both
    polarisations are summed with exp(-2 q0 d), q0 = sqrt(k^2 - w^2/c^2).
    """
    u = _gain_drift(m_active)
    un = float(np.hypot(*u))
    if un == 0:
        return np.zeros(2), 0.0, {"evaluations": 0}
    phi_u = math.atan2(u[1], u[0])
    eps1 = _scalar_response(m_rest)
    eps2 = _scalar_response(m_active)
    inner = spec.replace(rel_tol=spec.rel_tol * 1e-2)
    mid = spec.replace(rel_tol=spec.rel_tol * 1e-1)
    count = [0]
    # absolute error floor for the phi level; zero means purely relative
    floor = [0.0]
    noisy = [0.0]
    degree = 2 * (len(m_rest.channels) + len(m_active.channels))
    # Doppler shifts k.u at which a surface mode of one body meets the
    # Doppler image of the other's; the phi integrand peaks there
    pair_shifts = sorted({a + b for a in _surface_modes(m_rest)
                          for b in _surface_modes(m_active)})
    # least damped (k, phi) cells: near threshold the integrand is sharply
    # peaked there in both k and phi
    seeds = growth_seeds(m_rest, m_active, d, n_seeds=2) if not retarded else []
    seed_psi = [math.remainder(phi - phi_u, 2 * np.pi) for _, phi, _, _ in seeds]

    def spectral(k, phi):
        kx, ky = k * math.cos(phi), k * math.sin(phi)
        wmax = k * un * math.cos(phi - phi_u)
        if wmax <= 0:
            return 0.0
        den = friction_denominator(m_rest, m_active, d, phi)
        modes = _polynomial_roots(lambda w: den(w, k), degree, 0.5 * wmax, wmax)
        # resonant peaks sit at the real parts of the coupled modes
        points = sorted({float(s) for s in modes.real / wmax if 0 < s < 1})

        def g(s):
            count[0] += 1
            w = s * wmax
            e1 = eps1(w, 0.0, 0.0)
            e2 = eps2(w, kx, ky)
            out = 0.0
            r1 = _reflection(e1, k, w, retarded)
            r2 = _reflection(e2, k, w, retarded)
            if retarded:
                q0 = math.sqrt(max(k * k - (w / c) ** 2, 0.0))
                decay = math.exp(-2 * q0 * d)
            else:
                decay = math.exp(-2 * k * d)
            for a, b in zip(r1, r2):
                if a == 0 and b == 0:
                    continue
                den = 1 - decay * a * b
                out += decay * a.imag * (-b.imag) / (den.real**2 + den.imag**2)
            return out

        tol = 0.1 * floor[0] / (np.pi * k * k * wmax)
        v, _ = adaptive_integrate(g, 0.0, 1.0, inner.replace(abs_tol=tol), points=points or None)
        return v * wmax

    def spectral_batch(k, psi):
        # nonretarded spectral weight at many drift angles in one pass
        wmax = k * un * np.cos(psi)
        res = np.zeros(len(psi))
        idx = np.nonzero(wmax > 0)[0]
        if len(idx) == 0:
            return res
        wm = wmax[idx]
        phi = phi_u + psi[idx]
        kx, ky = k * np.cos(phi), k * np.sin(phi)
        decay = math.exp(-2 * k * d)
        modes = _batched_roots(
            lambda w: _coupled_denominator(m_rest, m_active, d, w, k, kx[:, None], ky[:, None]),
            degree, 0.5 * wm, wm) / wm[:, None]
        meshes = []
        for row in modes:
            near = row[np.isfinite(row) & (row.real > -0.5) & (row.real < 1.5)]
            meshes.append(graded_breaks(0.0, 1.0, near.real, np.abs(near.imag)))
        owner = np.concatenate([np.full(len(e) - 1, i) for i, e in enumerate(meshes)])
        lo = np.concatenate([e[:-1] for e in meshes])
        hi = np.concatenate([e[1:] for e in meshes])

        def g(sv, own):
            count[0] += len(sv)
            w = sv * wm[own]
            e1 = eps1(w, 0.0, 0.0)
            e2 = eps2(w, kx[own], ky[own])
            r1 = (e1 - 1) / (e1 + 1)
            r2 = (e2 - 1) / (e2 + 1)
            den = 1 - decay * r1 * r2
            return decay * r1.imag * (-r2.imag) / (den.real**2 + den.imag**2)

        tol = 0.1 * floor[0] / (np.pi * k * k * wm)
        val = np.zeros(len(idx))
        err = np.full(len(idx), np.inf)
        rows = np.arange(len(idx))
        for nodes in (16, 32, 64):
            # coalescing modes near threshold need more nodes per panel
            sel = np.isin(owner, rows)
            remap = np.full(len(idx), -1)
            remap[rows] = np.arange(len(rows))
            v, e = panel_sums(lambda sv, o: g(sv, rows[o]), lo[sel], hi[sel],
                              remap[owner[sel]], len(rows), nodes)
            better = e < err[rows]
            val[rows[better]] = v[better]
            err[rows[better]] = e[better]
            rows = rows[err[rows] > np.maximum(tol[rows], inner.rel_tol * np.abs(val[rows]))]
            if len(rows) == 0:
                break
        # a mode almost on the real axis leaves rounding noise in
        # 1 - e r1 r2 that no rule removes; it is recorded instead
        for i in rows:
            noisy[0] = max(noisy[0], err[i] / abs(val[i]) if val[i] else np.inf)
        res[idx] = val * wm
        return res

    def over_phi(x, rel=mid.rel_tol):
        k = x / d
        ku = k * un
        psi = [math.acos(w / ku) for w in pair_shifts if w < ku]
        points = sorted({p for q in psi for p in (-q, q)} | {0.0}
                        | {p for p in seed_psi if abs(p) < np.pi / 2})

        if not retarded:
            def h_batch(ps):
                return np.stack([np.cos(phi_u + ps), np.sin(phi_u + ps)], axis=-1) \
                    * spectral_batch(k, ps)[:, None]

            v, _, _ = batched_adaptive(h_batch, -np.pi / 2, np.pi / 2, points,
                                       abs_tol=floor[0] / (k * k), rel_tol=rel)
            return v * k * k

        def h(psi):
            phi = phi_u + psi
            return np.array([math.cos(phi), math.sin(phi)]) * spectral(k, phi)

        tol = mid.replace(rel_tol=rel, abs_tol=floor[0] / (k * k))
        v, _ = adaptive_integrate(h, -np.pi / 2, np.pi / 2, tol, vector=True, points=points)
        return v * k * k

    # Without a floor every k would be resolved relative to itself, including
    # far-field resonances that are exponentially small in the total. The
    # scale comes from a coarse look at the near-field k, where the force
    # lives.
    scale = max(np.max(np.abs(over_phi(x, 1e-3))) for x in (0.25, 0.5, 1.0, 2.0))
    floor[0] = 0.1 * spec.rel_tol * scale
    # the phi integrand switches a resonance on where k|u| first reaches a
    # mode frequency or a pair shift, which is a kink in x
    onsets = set(pair_shifts) | set(_surface_modes(m_rest)) | set(_surface_modes(m_active))
    x_points = sorted({w * d / un for w in onsets if 0 < w * d / un < x_max}
                      | {k * d for k, _, _, _ in seeds if 0 < k * d < x_max})
    v, e = adaptive_integrate(over_phi, 0.0, x_max, spec, vector=True, points=x_points or None)
    out, errs = v / d, [e / d]             # dk = dx / d
    pref = -hbar / (2 * np.pi**3)
    force = pref * np.array(out)
    info = {"evaluations": count[0]}
    if noisy[0]:
        info["worst_noise_limited_rel_error"] = noisy[0]
    return force, abs(pref) * max(errs), info


def _polynomial_roots(f, degree, center, radius):
    """Roots of a polynomial f of known degree, sampled on a circle.

    The FFT of f on |w - center| = radius gives the coefficients in the
    scaled variable (w - center) / radius exactly up to rounding.
    """
    n = 2 * (degree + 1)
    z = np.exp(2j * np.pi * np.arange(n) / n)
    coef = np.fft.fft(f(center + radius * z)) / n
    coef = coef[:degree + 1][::-1]
    top = np.max(np.abs(coef))
    while len(coef) > 1 and abs(coef[0]) < 1e-12 * top:
        coef = coef[1:]
    return center + radius * np.roots(coef)


def _batched_roots(f, degree, center, radius):
    """Row-wise :func:`_polynomial_roots` for arrays of circles.

    f maps an (M, n) array of samples to values; rows whose leading
    coefficient vanishes have fewer roots and are padded with nan.
    """
    n = 2 * (degree + 1)
    z = np.exp(2j * np.pi * np.arange(n) / n)
    coef = np.fft.fft(f(center[:, None] + radius[:, None] * z), axis=1) / n
    coef = coef[:, :degree + 1][:, ::-1]
    top = np.max(np.abs(coef), axis=1)
    ok = np.abs(coef[:, 0]) >= 1e-12 * top
    roots = np.full((len(center), degree), np.nan + 0j)
    if degree and np.any(ok):
        comp = np.zeros((int(ok.sum()), degree, degree), dtype=complex)
        comp[:, 0, :] = -coef[ok, 1:] / coef[ok, :1]
        comp[:, 1:, :-1] = np.eye(degree - 1)
        roots[ok] = np.linalg.eigvals(comp)
    for i in np.nonzero(~ok)[0]:
        c = coef[i]
        while len(c) > 1 and abs(c[0]) < 1e-12 * top[i]:
            c = c[1:]
        r = np.roots(c)
        roots[i, :len(r)] = r
    return center[:, None] + radius[:, None] * roots


def _surface_modes(m):
    """Positive real parts of the rest-frame surface modes, eps(w) = -1."""
    rest = MaterialResponse(m.channels, m.background, name=m.name)
    degree = 2 * len(m.channels)
    if degree == 0:
        return []
    scale = max([ch.plasma for ch in m.channels] + [ch.resonance for ch in m.channels]
                + [ch.damping for ch in m.channels])
    if scale <= 0:
        # conductivity channels only: their scale is sqrt(sigma gamma / eps0)
        scale = max(math.sqrt(abs(ch.sigma[0][0]) * ch.damping / epsilon_0)
                    for ch in m.channels)
    roots = _polynomial_roots(lambda w: _pole_free(rest, w, 0.0, 0.0)[0], degree, 0.0, scale)
    return sorted(float(r.real) for r in roots if r.real > 0)


def _pole_free(m, w, kx, ky):
    """(eps + 1, eps - 1) multiplied by all channel pole polynomials.

    The polynomials vanish only on or below the real axis, so the product
    has the same upper-half-plane zeros as eps +- 1 and no poles at all.
    """
    wr = w - kx * m.velocity
    vdr = drift_velocity(m)
    cx, cy = _direction(kx, ky)
    num = np.full(w.shape, complex(m.background))
    den = np.ones(w.shape, dtype=complex)
    for ch in m.channels:
        g = ch.damping
        if ch.kind == "lorentz":
            p = ch.resonance**2 - wr**2 - 1j * g * wr
            top = ch.strength * ch.plasma**2 + 0 * wr
        elif ch.kind == "drude":
            p = wr * (wr + 1j * g)
            top = -ch.strength * ch.plasma**2 + 0 * wr
        else:
            wd = wr - (kx * vdr[0] + ky * vdr[1])
            proj = (ch.sigma[0][0] * cx**2 + ch.sigma[1][1] * cy**2
                    + (ch.sigma[0][1] + ch.sigma[1][0]) * cx * cy)
            p = (g - 1j * wd) * wd
            top = 1j * ch.strength * proj * g / epsilon_0 + 0 * wd
        num = num * p + top * den
        den = den * p
    return num + den, num - den


def friction_denominator(m_rest, m_active, d, phi=0.0):
    """Nonretarded coupled-mode denominator D(w; k) for the stability scan.

    D = (eps1 + 1)(eps2 + 1) - e^{-2kd}(eps1 - 1)(eps2 - 1), multiplied by
    the channel pole polynomials so that it is entire; zeros in the upper
    half plane are growing modes.
    """
    def den(w, k):
        return _coupled_denominator(m_rest, m_active, d, np.asarray(w, dtype=complex), k,
                                    k * math.cos(phi), k * math.sin(phi))

    return den


def _coupled_denominator(m_rest, m_active, d, w, k, kx, ky):
    p1, m1 = _pole_free(m_rest, w, 0.0, 0.0)
    p2, m2 = _pole_free(m_active, w, kx, ky)
    return p1 * p2 - np.exp(-2 * k * d) * m1 * m2


def _max_growth(den, k, degree, scale):
    """Largest Im w among the coupled modes at one (k, phi), and that mode."""
    roots = _polynomial_roots(lambda w: den(w, k), degree, 0.0, scale)
    top = roots[np.argmax(roots.imag)]
    return float(top.imag), complex(top)


def growth_seeds(m_rest, m_active, d, n_seeds=4, x_range=(0.02, 10.0), nx=300, npsi=41):
    """(k, phi) cells where coupled modes come closest to growing.

    The coupled-mode denominator is a polynomial in w, so its roots give the
    growth rate directly; a dense (k, phi) map of the largest Im w is
    searched, and the best cells are polished by a local maximisation. The
    result seeds the argument-principle scan, which on its own grid can
    miss the narrow unstable islands that open near threshold.
    """
    u = _gain_drift(m_active)
    un = float(np.hypot(*u))
    if un == 0:
        return []
    phi_u = math.atan2(u[1], u[0])
    W = _frequency_scale([m_rest, m_active], 0.0)
    degree = 2 * (len(m_rest.channels) + len(m_active.channels))
    xs = np.linspace(*x_range, nx)
    psis = np.linspace(-1.5, 1.5, npsi)
    gx, gp = (a.ravel() for a in np.meshgrid(xs, psis))
    k = gx / d
    roots = _batched_roots(
        lambda w: _coupled_denominator(m_rest, m_active, d, w, k[:, None],
                                       k[:, None] * np.cos(phi_u + gp[:, None]),
                                       k[:, None] * np.sin(phi_u + gp[:, None])),
        degree, np.zeros(len(k)), np.maximum(W, k * un))
    rates = np.nanmax(roots.imag, axis=1)
    cells = sorted(zip(rates.tolist(), gx.tolist(), gp.tolist()), reverse=True)
    seeds, seen = [], []
    for _, x, psi in cells:
        if len(seeds) == n_seeds:
            break
        if any(abs(x - a) < 0.2 and abs(psi - b) < 0.2 for a, b in seen):
            continue
        seen.append((x, psi))

        def neg(p):
            xx, pp = p
            if not (x_range[0] <= xx <= x_range[1] and -1.55 <= pp <= 1.55):
                return np.inf
            k = xx / d
            den = friction_denominator(m_rest, m_active, d, phi_u + pp)
            return -_max_growth(den, k, degree, max(W, k * un))[0]

        res = optimize.minimize(neg, [x, psi], method="Nelder-Mead",
                                options={"xatol": 1e-4, "fatol": 1e-6 * W, "maxiter": 400})
        xx, pp = res.x
        den = friction_denominator(m_rest, m_active, d, phi_u + pp)
        rate, root = _max_growth(den, xx / d, degree, max(W, xx / d * un))
        seeds.append((xx / d, phi_u + pp, rate, root))
    return seeds


def friction_stability(m_rest, m_active, d, k_grid=None, phis=None, contour=None,
                       im_min=1e-4, n_seeds=4, seed_im_min=1e-7):
    """Argument-principle scan of the coupled-mode denominator.

    The regular scan runs over ``k_grid`` (default kd in [0.05, 8]) and
    ``phis`` (default the drift direction) on a contour spanning Re w in
    +-(k_max |u| + 4W) and Im w in [im_min W, 2W], W being the largest
    material frequency. On top of that, ``n_seeds`` cells from
    :func:`growth_seeds` are scanned on compact contours around their
    least damped mode with the lower edge at ``seed_im_min`` W.
    """
    W = _frequency_scale([m_rest, m_active], 0.0)
    if W <= 0:
        raise ValueError("materials need at least one dispersive channel")
    if k_grid is None:
        k_grid = np.linspace(0.05, 8.0, 80) / d
    u = _gain_drift(m_active)
    un = float(np.hypot(*u))
    if phis is None:
        phis = (math.atan2(u[1], u[0]),)
    reach = max(k_grid) * un + 4 * W
    if contour is None:
        contour = Contour(-reach, reach, im_min * W, 2 * W, samples=128)
    grid = [(float(k), float(p)) for p in phis for k in k_grid]
    dens = {p: friction_denominator(m_rest, m_active, d, p) for p in phis}
    report = stability_scan(lambda w, kp: dens[kp[1]](w, kp[0]), grid, contour)
    for k, phi, _, root in (growth_seeds(m_rest, m_active, d, n_seeds) if n_seeds else []):
        den = friction_denominator(m_rest, m_active, d, phi)
        local = Contour(root.real - 0.05 * W, root.real + 0.05 * W, seed_im_min * W, 2 * W,
                        samples=128)
        sub = stability_scan(lambda w, kk: den(w, kk[0]), [(float(k), float(phi))], local)
        report.suspects += sub.suspects
        report.nudges += sub.nudges
        report.scanned += sub.scanned
        report.stable = report.stable and sub.stable
    return report


def _with_velocity(m, v):
    return MaterialResponse(m.channels, m.background, float(v), m.drift_bias, m.name)


def friction_threshold(m_rest, m_moving, d, v_hi, v_lo=0.0, rel_width=0.01, **scan):
    """Bracket (lo, hi) of the velocity where growing modes first appear."""
    def unstable(v):
        if v == 0:
            return False
        return not friction_stability(m_rest, _with_velocity(m_moving, v), d, **scan).stable

    hi = v_hi
    while not unstable(hi):
        hi *= 2
        if hi >= c:
            raise ValueError("no instability below the speed of light")
    return bisect_threshold(unstable, v_lo, hi, rel_width)


def quantum_friction_force(m_rest, m_moving, d, v, allow_unstable=False, check_stability=True,
                           retarded=False, spec=FORCE_SPEC, v_guess=None):
    """Lateral force per area (N/m^2) on a half-space sliding at velocity v along x.

    The other half-space is at rest; the gap is vacuum of width d. The
    result opposes the motion. Growing modes make the force undefined: the
    call then raises InstabilityError carrying the threshold bracket unless
    ``allow_unstable`` is set.
    """
    mov = _with_velocity(m_moving, v)
    stable, diag = True, {}
    if v != 0 and check_stability:
        report = friction_stability(m_rest, mov, d)
        stable = report.stable
        diag["stability"] = report.to_dict()
        if not stable and not allow_unstable:
            bracket = friction_threshold(m_rest, m_moving, d, v_guess or abs(v) / 2)
            raise InstabilityError(f"sliding at v={v:g} m/s excites growing modes",
                                   report, bracket)
    force, err, info = _lateral_force(m_rest, mov, d, spec, retarded)
    diag.update(info, vector=force.tolist(), retarded=retarded)
    return ObservableResult(float(force[0]), err, "N/m^2", stable, diag)


def with_hall(m, v_d, sigma_xy=None):
    """Copy of a conductive material with drift bias v_d and, optionally, Hall sigma_xy.

    The Hall value is written into the antisymmetric part of every
    conductivity channel's dc tensor.
    """
    chans = []
    for ch in m.channels:
        if ch.kind == "conductivity" and sigma_xy is not None:
            sig = ((ch.sigma[0][0], sigma_xy), (-sigma_xy, ch.sigma[1][1]))
            ch = PermittivityChannel("conductivity", ch.strength, ch.resonance, ch.damping,
                                     ch.plasma, sig)
        chans.append(ch)
    return MaterialResponse(tuple(chans), m.background, m.velocity, float(v_d), m.name)


def hall_lateral_force(m_rest, m_biased, d, v_d, sigma_xy=None, allow_unstable=False,
                       check_stability=True, spec=FORCE_SPEC):
    """Force per area transverse to the bias (y component, N/m^2).

    The biased half-space carries a drift v_d along x; its Hall conductivity
    tilts the carrier drift by the Hall angle, which makes the gain window
    asymmetric in k_y. The full 2-vector is in the diagnostics.
    """
    act = with_hall(m_biased, v_d, sigma_xy)
    if not any(ch.kind == "conductivity" for ch in act.channels):
        raise ValueError("biased material needs a conductivity channel")
    stable, diag = True, {}
    if v_d != 0 and check_stability:
        phi = math.atan2(*_gain_drift(act)[::-1])
        report = friction_stability(m_rest, act, d, phis=(phi,))
        stable = report.stable
        diag["stability"] = report.to_dict()
        if not stable and not allow_unstable:
            raise InstabilityError(f"drift v_d={v_d:g} m/s excites growing modes", report)
    force, err, info = _lateral_force(m_rest, act, d, spec)
    diag.update(info, vector=force.tolist(), drift=_gain_drift(act).tolist())
    return ObservableResult(float(force[1]), err, "N/m^2", stable, diag)
