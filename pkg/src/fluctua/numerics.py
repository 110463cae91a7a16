"""Quadrature and complex-analysis helpers.

Thin, strict wrappers around QUADPACK (scipy.integrate) that raise instead
of silently returning an unconverged value, a symmetric-subtraction
principal value, and an argument-principle stability scanner.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import functools
import os
import warnings

import numpy as np
from scipy import integrate, optimize


class IntegrationError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, msg, value=None, error=None, diagnostics=None):
        super().__init__(msg)
        self.value = value
        self.error = error
        self.diagnostics = diagnostics or {}


class ContourZeroError(RuntimeError):
    """A denominator vanishes (numerically) on the scan contour."""


TAILS = ("exp-map", "algebraic-map", "none")


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-6
    abs_tol: float = 0.0
    max_subdivisions: int = 200
    tail: str = "algebraic-map"

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.tail not in TAILS:
            raise ValueError(f"unknown tail transform {self.tail!r}")

    def replace(self, **kw):
        d = dict(rel_tol=self.rel_tol, abs_tol=self.abs_tol,
                 max_subdivisions=self.max_subdivisions, tail=self.tail)
        d.update(kw)
        return QuadratureSpec(**d)


DEFAULT_1D = QuadratureSpec(rel_tol=1e-6)
DEFAULT_2D = QuadratureSpec(rel_tol=1e-4)


def _tail_map(f, a, tail):
    """Map [a, inf) onto [0, 1)."""
    if tail == "exp-map":
        def g(t):
            return f(a - np.log1p(-t)) / (1.0 - t)
    else:
        def g(t):
            return f(a + t / (1.0 - t)) / (1.0 - t) ** 2
    return g


def adaptive_integrate(f, a, b, spec=DEFAULT_1D, *, points=None, vector=False,
                       weight=None, wvar=None, strict=True):
    """Integrate ``f`` over [a, b] to ``spec`` tolerance.

    ``b`` may be ``np.inf``; the tail is then mapped onto a finite interval
    unless ``spec.tail == 'none'``. ``vector=True`` integrates an array-valued
    ``f`` (scipy's quad_vec). ``weight``/``wvar`` pass through to QUADPACK's
    weighted rules ('sin', 'cos', 'alg', 'cauchy', ...).

    Returns
    -------
    value, error
    """
    tol = spec.abs_tol
    # QUADPACK refuses relative targets below 50 machine epsilons
    spec = spec.replace(rel_tol=max(spec.rel_tol, 1e-13))
    if weight is not None:
        if vector:
            raise ValueError("weighted rules are scalar only")
        kw = dict(weight=weight, wvar=wvar, epsabs=tol, epsrel=spec.rel_tol,
                  limit=spec.max_subdivisions, full_output=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = integrate.quad(f, a, b, **kw)
        val, err = res[0], res[1]
        ok = len(res) == 3 or res[3] is None or not res[3]
        return _checked(val, err, spec, strict, ok)

    if np.isinf(b) and spec.tail != "none":
        g = _tail_map(f, a, spec.tail)
        lo, hi = 0.0, 1.0
        if points is not None:
            pts = [p for p in points if a < p < np.inf]
            points = [(p - a) / (1.0 + p - a) if spec.tail == "algebraic-map"
                      else -np.expm1(-(p - a)) for p in pts]
    else:
        g, lo, hi = f, a, b
        if points is not None:
            points = [p for p in points if lo < p < hi]

    if vector:
        pts = sorted(points) if points else None
        val, err, info = integrate.quad_vec(
            g, lo, hi, epsabs=tol, epsrel=spec.rel_tol, norm="max",
            limit=spec.max_subdivisions, points=pts, full_output=True)
        ok = info.success
        return _checked(np.asarray(val), float(err), spec, strict, ok,
                        {"intervals": len(info.intervals)})

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = integrate.quad(g, lo, hi, epsabs=tol, epsrel=spec.rel_tol,
                             limit=spec.max_subdivisions, points=points or None,
                             full_output=1)
    val, err, info = res[0], res[1], res[2]
    ok = len(res) == 3
    return _checked(val, err, spec, strict, ok, {"neval": info["neval"],
                                                  "intervals": info["last"]})


def _checked(val, err, spec, strict, ok, diag=None):
    bound = max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(val))))
    if strict and not ok and err > bound:
        raise IntegrationError(
            f"quadrature did not converge: error {err:.3g} > bound {bound:.3g}",
            value=val, error=err, diagnostics=diag)
    return val, err


def integrate_2d(f, outer, inner, spec=DEFAULT_2D, *, outer_points=None,
                 inner_points=None, strict=True):
    """Nested adaptive 2-D integral of f(x, y).

    ``outer`` is (a, b); ``inner`` is a callable x -> (c, d) giving the
    inner limits. ``inner_points`` may be a callable x -> list of breaks.
    The inner tolerance is tightened tenfold so the outer error estimate
    dominates.
    """
    inner_spec = spec.replace(rel_tol=spec.rel_tol * 0.1,
                              abs_tol=spec.abs_tol * 0.1)
    errs = []

    def outer_f(x):
        c, d = inner(x)
        pts = inner_points(x) if inner_points is not None else None
        v, e = adaptive_integrate(lambda y: f(x, y), c, d, inner_spec,
                                  points=pts, strict=strict)
        errs.append(e)
        return v

    val, err = adaptive_integrate(outer_f, outer[0], outer[1], spec,
                                  points=outer_points, strict=strict)
    return val, err + (max(errs) if errs else 0.0) * (outer[1] - outer[0]
                                                        if np.isfinite(outer[1]) else 1.0)


@functools.lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def graded_breaks(a, b, centers, widths, ratio=4.0):
    """Mesh edges on [a, b] graded geometrically towards each (x0, w) peak.

    Each peak adds x0 and x0 +- w ratio^j for j >= 0 until they leave
    [a, b], so coincident peaks of very different widths share one mesh.
    """
    breaks = {a, b}
    span = b - a
    for x0, w in zip(centers, widths):
        w = max(w, 1e-14 * span)
        step = w
        while step < 2 * span:
            for x in (x0 - step, x0 + step):
                if a < x < b:
                    breaks.add(x)
            step *= ratio
        if a < x0 < b:
            breaks.add(x0)
    edges = np.array(sorted(breaks))
    keep = np.diff(edges) > 1e-15 * span
    return np.concatenate([edges[:-1][keep], [b]])


def panel_sums(f, lo, hi, owner, n_rows, nodes=16):
    """Gauss-Legendre sums over many panels, grouped by row.

    Panel i spans [lo[i], hi[i]] and belongs to row owner[i] (sorted).
    ``f(x, owner_of_x)`` is called once with every node. Returns per-row
    values and errors, the error being the difference to the rule with half
    the nodes.
    """
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    out = []
    for n in (nodes, nodes // 2):
        x, wt = _gauss_legendre(n)
        pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        vals = np.asarray(f(pts, np.repeat(owner, n))).reshape(len(lo), n)
        out.append(np.bincount(owner, weights=half * (vals @ wt), minlength=n_rows))
    return out[0], np.abs(out[0] - out[1])


def peaked_rule(f, a, b, centers, widths, nodes=16, ratio=4.0):
    """Vectorised Gauss-Legendre rule for integrands with Lorentzian peaks.

    The panels come from :func:`graded_breaks`. ``f`` takes an array of
    abscissae and returns an array whose first axis matches it. The error is
    the largest difference to the rule with half the nodes per panel, so it
    is pessimistic.

    Returns
    -------
    value, error
    """
    edges = graded_breaks(a, b, centers, widths, ratio)
    lo, hi = edges[:-1], edges[1:]
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    values = []
    for n in (nodes, nodes // 2):
        x, wt = _gauss_legendre(n)
        pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        vals = np.asarray(f(pts))
        vals = vals.reshape((len(lo), n) + vals.shape[1:])
        values.append(np.tensordot(half, np.tensordot(wt, vals, axes=(0, 1)), axes=(0, 0)))
    val = values[0] if values[0].ndim else float(values[0])
    return val, float(np.max(np.abs(values[0] - values[1])))


def batched_adaptive(f, a, b, points=(), abs_tol=0.0, rel_tol=1e-6, nodes=10,
                     max_intervals=4000):
    """Adaptive Gauss-Legendre quadrature that evaluates f on whole batches.

    Unlike QUADPACK or ``quad_vec``, which call the integrand one abscissa
    at a time, every refinement round passes all new nodes to ``f`` in one
    array, which pays off when f is itself vectorised and costly per call.
    f returns shape (N,) or (N, m). Intervals whose error exceeds their
    share of the tolerance are bisected until the summed error meets it.

    Returns
    -------
    value, error, n_intervals
    """
    edges = np.array(sorted({a, b} | {p for p in points if a < p < b}), dtype=float)
    lo, hi = edges[:-1], edges[1:]
    x_hi, w_hi = _gauss_legendre(nodes)
    x_lo, w_lo = _gauss_legendre(nodes // 2)
    vals = errs = None
    todo_lo, todo_hi = lo, hi
    done_lo = np.empty(0)
    done_hi = np.empty(0)
    span = b - a
    while True:
        half, mid = 0.5 * (todo_hi - todo_lo), 0.5 * (todo_hi + todo_lo)
        pts = np.concatenate([(mid[:, None] + half[:, None] * x_hi).ravel(),
                              (mid[:, None] + half[:, None] * x_lo).ravel()])
        fv = np.asarray(f(pts))
        tail = fv.shape[1:]
        m = len(todo_lo)
        f_hi = fv[:m * nodes].reshape((m, nodes) + tail)
        f_lo = fv[m * nodes:].reshape((m, nodes // 2) + tail)
        v_new = half.reshape((m,) + (1,) * len(tail)) * np.tensordot(w_hi, f_hi, axes=(0, 1))
        e_new = half.reshape((m,) + (1,) * len(tail)) * np.tensordot(w_lo, f_lo, axes=(0, 1))
        e_new = np.abs(v_new - e_new).reshape(m, -1).max(axis=1)
        if vals is None:
            vals, errs = v_new, e_new
            done_lo, done_hi = todo_lo, todo_hi
        else:
            vals = np.concatenate([vals, v_new])
            errs = np.concatenate([errs, e_new])
            done_lo = np.concatenate([done_lo, todo_lo])
            done_hi = np.concatenate([done_hi, todo_hi])
        total = vals.sum(axis=0)
        err = float(errs.sum())
        tol = max(abs_tol, rel_tol * float(np.max(np.abs(total))))
        if err <= tol or len(vals) >= max_intervals:
            return (total if total.ndim else float(total)), err, len(vals)
        split = errs > tol * (done_hi - done_lo) / span
        split[np.argmax(errs)] = True
        mids = 0.5 * (done_lo[split] + done_hi[split])
        todo_lo = np.concatenate([done_lo[split], mids])
        todo_hi = np.concatenate([mids, done_hi[split]])
        keep = ~split
        vals, errs = vals[keep], errs[keep]
        done_lo, done_hi = done_lo[keep], done_hi[keep]


def principal_value(f, pole, a, b, window=None, spec=DEFAULT_1D, *, vector=False,
                    points=None, strict=True):
    """PV of the integral of f(x) / (pole - x) over [a, b].

    Inside the window [pole - w, pole + w] the odd kernel is removed by
    pairing x = pole - t with x = pole + t, which leaves the regular
    integrand (f(pole - t) - f(pole + t)) / t. The remainder is integrated
    directly.

    Returns
    -------
    value, error
    """
    if not a < pole < b:
        raise ValueError("pole must lie strictly inside (a, b)")
    if window is None:
        window = 0.5 * min(pole - a, b - pole)
    if window <= 0 or pole - window < a or pole + window > b:
        raise ValueError("principal-value window exceeds the integration domain")

    def core(t):
        t = max(t, 1e-300)
        return (np.asarray(f(pole - t)) - np.asarray(f(pole + t))) / t

    parts = [adaptive_integrate(core, 0.0, window, spec, vector=vector, strict=strict)]
    pts = list(points or [])
    if pole - window > a:
        pl = [p for p in pts if a < p < pole - window]
        parts.append(adaptive_integrate(
            lambda x: np.asarray(f(x)) / (pole - x), a, pole - window, spec,
            vector=vector, points=pl or None, strict=strict))
    if pole + window < b:
        pr = [p for p in pts if pole + window < p < b]
        parts.append(adaptive_integrate(
            lambda x: np.asarray(f(x)) / (pole - x), pole + window, b, spec,
            vector=vector, points=pr or None, strict=strict))
    val = pairwise_sum([p[0] for p in parts])
    err = sum(p[1] for p in parts)
    return val, err


def thread_count():
    """Worker cap from FLUCTUA_THREADS (default 1, i.e. serial)."""
    raw = os.environ.get("FLUCTUA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FLUCTUA_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(fn, items):
    """Map over items with up to thread_count() workers, results in input order."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(values):
    """Deterministic tree reduction (fixed order, independent of scheduling)."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


# --------------------------------------------------------------------------
# argument principle


@dataclass(frozen=True)
class Contour:
    """Rectangle in the complex frequency plane, counter-clockwise."""

    re_min: float
    re_max: float
    im_min: float
    im_max: float
    samples: int = 64

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError("degenerate contour")

    @property
    def corners(self):
        return [complex(self.re_min, self.im_min), complex(self.re_max, self.im_min),
                complex(self.re_max, self.im_max), complex(self.re_min, self.im_max)]

    def point(self, t):
        """Perimeter parametrisation, t in [0, 4)."""
        t = np.asarray(t, dtype=float)
        c = self.corners + [self.corners[0]]
        i = np.clip(np.floor(t).astype(int), 0, 3)
        s = t - i
        a = np.array(c)[i]
        b = np.array(c)[i + 1]
        return a + (b - a) * s

    def initial_grid(self, max_per_edge=200000):
        """Parameter samples with spacing no coarser than the bottom edge height.

        Two zeros just below the lower edge turn the phase by nearly 2 pi over
        a length of order their depth; coarser seeds would alias that to 0.
        """
        spacing = abs(self.im_min) if self.im_min != 0 else np.inf
        ts = []
        for i, (a, b) in enumerate(zip(self.corners, self.corners[1:] + self.corners[:1])):
            n = int(min(max_per_edge, max(self.samples, np.ceil(abs(b - a) / spacing))))
            ts.append(i + np.arange(n) / n)
        return np.concatenate(ts + [np.array([4.0])])

    def shifted(self, d_im):
        return Contour(self.re_min, self.re_max, self.im_min + d_im,
                       self.im_max, self.samples)


def winding_number(func, contour, max_refine=30, max_step=np.pi / 4):
    """Number of zeros minus poles of ``func`` inside ``contour``.

    ``func`` maps a complex array to a complex array. Sampling is refined
    until no phase step exceeds ``max_step``.

    Returns
    -------
    (winding, centroid) where centroid is the argument-principle estimate of
    the mean zero location (None when the winding is zero).
    """
    t = contour.initial_grid()
    vals = func(contour.point(t))
    for _ in range(max_refine):
        if np.any(~np.isfinite(vals)):
            raise ContourZeroError("non-finite denominator on contour")
        # compared with its neighbours, not the global maximum: denominators
        # of thick layers vary exponentially along the contour
        mag = np.abs(vals)
        if np.any(mag[1:-1] < 1e-13 * np.maximum(mag[:-2], mag[2:])) or np.any(mag == 0):
            raise ContourZeroError("denominator vanishes on the contour")
        dphi = np.angle(vals[1:] / vals[:-1])
        bad = np.abs(dphi) > max_step
        if not bad.any():
            break
        mids = 0.5 * (t[:-1][bad] + t[1:][bad])
        t_new = np.sort(np.concatenate([t, mids]))
        new_vals = func(contour.point(mids))
        merged = np.concatenate([vals, new_vals])
        order = np.argsort(np.concatenate([t, mids]), kind="stable")
        t, vals = t_new, merged[order]
    else:
        raise ContourZeroError("phase refinement did not converge")
    dphi = np.angle(vals[1:] / vals[:-1])
    total = dphi.sum() / (2 * np.pi)
    n = int(round(total))
    if abs(total - n) > 1e-6:
        raise ContourZeroError(f"non-integer winding {total}")
    centroid = None
    if n:
        z = contour.point(t)
        zm = 0.5 * (z[1:] + z[:-1])
        dlog = np.log(np.abs(vals[1:]) / np.abs(vals[:-1])) + 1j * dphi
        centroid = complex(np.sum(zm * dlog) / (2j * np.pi) / n)
    return n, centroid


def polish_root(func, guess, tol=1e-12, maxiter=100):
    """Refine a complex zero with the secant method."""
    g = complex(guess)
    f = lambda w: complex(np.asarray(func(np.array([w])))[0])
    return complex(optimize.newton(f, g, x1=g * (1 + 1e-4) + 1e-6 * abs(g) + 1e-30,
                                   tol=tol * max(abs(g), 1.0), maxiter=maxiter))


@dataclass
class StabilityReport:
    stable: bool
    suspects: list = field(default_factory=list)
    contour: Contour = None
    nudges: int = 0
    scanned: int = 0

    def to_dict(self):
        return {
            "stable": self.stable,
            "suspects": [{"k": _jsonable(k), "omega": [z.real, z.imag] if z is not None else None,
                          "winding": n} for k, z, n in self.suspects],
            "contour": None if self.contour is None else
            [self.contour.re_min, self.contour.re_max, self.contour.im_min, self.contour.im_max],
            "nudges": self.nudges,
            "scanned": self.scanned,
        }


def _jsonable(k):
    return np.asarray(k).tolist()


def stability_scan(denominator, k_grid, contour, polish=True, max_nudges=4):
    """Argument-principle scan of modal denominators over a wavevector grid.

    Parameters
    ----------
    denominator : callable (omega_array, k) -> complex array
        Must be analytic inside and on ``contour`` (upper half plane) with
        no poles there, so the winding counts its zeros.
    k_grid : iterable
        Wavevector samples (any object accepted by ``denominator``).
    contour : Contour

    A zero on the contour itself triggers an upward nudge of the lower edge.
    """
    suspects, nudges, scanned = [], 0, 0
    for k in k_grid:
        c = contour
        for attempt in range(max_nudges + 1):
            try:
                n, z = winding_number(lambda w: denominator(w, k), c)
                break
            except ContourZeroError:
                nudges += 1
                c = c.shifted(0.01 * (c.im_max - c.im_min) * (attempt + 1))
        else:
            raise ContourZeroError(f"could not clear contour zero at k={k}")
        scanned += 1
        if n:
            if polish and n == 1 and z is not None:
                try:
                    z = polish_root(lambda w: denominator(w, k), z)
                except (RuntimeError, OverflowError):
                    pass
            suspects.append((k, z, n))
    stable = not any(n > 0 for _, _, n in suspects)
    return StabilityReport(stable, suspects, contour, nudges, scanned)


def bisect_threshold(is_unstable, lo, hi, rel_width=0.01, maxiter=60):
    """Bracket the parameter where ``is_unstable`` flips from False to True.

    Requires is_unstable(lo) is False and is_unstable(hi) is True.
    """
    if is_unstable(lo):
        raise ValueError("lower bracket end is already unstable")
    if not is_unstable(hi):
        raise ValueError("upper bracket end is stable")
    for _ in range(maxiter):
        if hi - lo <= rel_width * abs(hi):
            break
        mid = 0.5 * (lo + hi)
        if is_unstable(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi
