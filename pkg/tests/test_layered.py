import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctua.constants import c
from fluctua.layered import (DivergenceError, LayerStack, _recursion, fresnel_coefficients,
                             free_space_green, free_space_im_green, im_green,
                             imag_green_identity_check, modal_denominator, scattered_green,
                             vacuum_spectral_im_green, volume_route)
from fluctua.material import MaterialResponse, PermittivityChannel, constant, eval_epsilon
from fluctua.numerics import Contour, polish_root, stability_scan

from conftest import W, exact_channels

K0 = W / c


def lossy_half_space():
    ch = PermittivityChannel("lorentz", 1.0, 1.2e15, 2e14, 1.5e15)
    return LayerStack.half_space(MaterialResponse((ch,), 2.0))


def lossy_slab():
    ch = PermittivityChannel("lorentz", 0.8, 0.9e15, 3e14, 1.1e15)
    return LayerStack.slab(MaterialResponse((ch,), 3.0), 0.4 / K0, substrate=constant(2.25))


def test_stack_validation():
    with pytest.raises(ValueError):
        LayerStack(((constant(2.0), np.inf),))
    with pytest.raises(ValueError):
        LayerStack(((constant(2.0), np.inf), (constant(3.0), 1.0)))
    with pytest.raises(ValueError):
        LayerStack(((constant(2.0), np.inf), (constant(3.0), -1.0), (constant(1.0), np.inf)))


def test_interfaces_end_at_zero():
    s = LayerStack(((constant(2.0), np.inf), (constant(3.0), 2.0), (constant(4.0), 1.0),
                    (constant(1.0), np.inf)))
    assert list(s.interfaces) == [-3.0, -1.0, 0.0]


def test_normal_incidence_fresnel():
    rs, rp, ts, tp = fresnel_coefficients(LayerStack.half_space(constant(4.0)), 0.0, W)
    assert rs == pytest.approx(-1 / 3, abs=1e-15)
    assert rp == pytest.approx(1 / 3, abs=1e-15)
    assert ts == pytest.approx(2 / 3, abs=1e-15)


@given(st.floats(0.0, 5.0), st.floats(1.0, 20.0), st.floats(0.0, 10.0))
def test_single_interface_fast_path_matches_recursion(kk, re_eps, im_eps):
    m = MaterialResponse(exact_channels([im_eps]) if im_eps > 0 else (), re_eps)
    stack = LayerStack.half_space(m)
    rs, rp, _, _ = fresnel_coefficients(stack, kk * K0, W)
    assert rs == pytest.approx(complex(_recursion(stack, W, kk * K0, "s")["refl"]), abs=1e-12)
    assert rp == pytest.approx(complex(_recursion(stack, W, kk * K0, "p")["refl"]), abs=1e-12)


def test_vacuum_stack_is_reflectionless():
    rs, rp, ts, tp = fresnel_coefficients(LayerStack.vacuum(), 0.7 * K0, W)
    assert (rs, rp) == (0, 0)
    assert ts == pytest.approx(1.0)


@pytest.mark.parametrize("kk", [0.0, 0.5, 3.0])
def test_mirror_limits(kk):
    rs, rp, _, _ = fresnel_coefficients(LayerStack.half_space(constant(1e20)), kk * K0, W)
    assert rs == pytest.approx(-1.0, abs=1e-9)
    assert rp == pytest.approx(1.0, abs=1e-9)


def test_thin_slab_of_top_material_is_invisible():
    m = constant(2.25)
    a = fresnel_coefficients(LayerStack.half_space(m), 0.4 * K0, W)
    b = fresnel_coefficients(LayerStack.slab(constant(1.0), 0.3 / K0, substrate=m), 0.4 * K0, W)
    # a vacuum spacer only adds the round-trip phase exp(2 i kz d)
    kz = np.sqrt(1 - 0.4**2) * K0
    ph = np.exp(2j * kz * 0.3 / K0)
    assert b[0] == pytest.approx(a[0] * ph, rel=1e-12)
    assert b[1] == pytest.approx(a[1] * ph, rel=1e-12)


def test_free_space_green_diverges_at_coincidence():
    with pytest.raises(DivergenceError):
        free_space_green([0, 0, 1], [0, 0, 1], W)


def test_free_space_im_green_coincident_value():
    g = free_space_im_green([0, 0, 1], [0, 0, 1], W, eps=2.25)
    assert g == pytest.approx(1.5 * W**3 / (6 * np.pi * c**3) * np.eye(3), rel=1e-14)


@given(st.floats(0.01, 5.0), st.floats(0.0, 1.0))
def test_free_space_im_green_is_imag_of_full(dist, tilt):
    r = np.array([dist * np.sin(tilt), 0.0, dist * np.cos(tilt)]) / K0
    full = free_space_green(r, np.zeros(3), W)
    assert free_space_im_green(r, np.zeros(3), W) == pytest.approx(
        full.imag, rel=1e-6, abs=1e-9 * np.abs(full).max())


@pytest.mark.parametrize("stack", [lossy_half_space(), lossy_slab()], ids=["half", "slab"])
def test_reciprocity(stack):
    r = np.array([0.2, -0.1, 0.3]) / K0
    rp = np.array([-0.15, 0.25, 0.6]) / K0
    a = scattered_green(stack, r, rp, W)
    b = scattered_green(stack, rp, r, W)
    assert np.max(np.abs(a - b.T)) <= 1e-9 * np.max(np.abs(a))


@given(st.floats(0.05, 3.0))
def test_coincident_im_green_is_psd(zk):
    g = im_green(lossy_slab(), [0, 0, zk / K0], [0, 0, zk / K0], W)
    ev = np.linalg.eigvalsh(0.5 * (g + g.T))
    assert ev.min() >= -1e-12 * np.abs(ev).max()


def test_vacuum_spectral_integral():
    g, _ = vacuum_spectral_im_green(W)
    assert g == pytest.approx(W**3 / (6 * np.pi * c**3) * np.eye(3), rel=1e-6)


def test_vacuum_volume_route_is_pure_escape():
    # no material sources: everything is radiation leaving through the top
    r, rp = [0.1 / K0, 0, 0.3 / K0], [0, 0, 0.5 / K0]
    v = volume_route(LayerStack.vacuum(), r, rp, W)
    f = free_space_im_green(r, rp, W)
    assert np.abs(v["antinormal"] - f).max() <= 1e-9 * np.abs(f).max()
    assert np.all(v["normal"] == 0)


def test_uniform_stack_scatters_nothing():
    s = LayerStack.slab(constant(1.0), 1e-7)
    assert s.is_uniform
    assert np.all(scattered_green(s, [0, 0, 1e-7], [0, 0, 2e-7], W) == 0)
    assert not lossy_slab().is_uniform


def test_mirror_scattered_green_is_image_dipole():
    # image of an electric dipole: parallel components flip sign
    stack = LayerStack.half_space(constant(1e20))
    r = np.array([0.3, 0.1, 0.5]) / K0
    rp = np.array([-0.2, 0.4, 0.8]) / K0
    image = rp * np.array([1, 1, -1])
    expected = free_space_green(r, image, W) @ np.diag([-1.0, -1.0, 1.0])
    got = scattered_green(stack, r, rp, W)
    assert np.linalg.norm(got - expected) <= 1e-3 * np.linalg.norm(expected)


def test_mirror_im_green_oscillates_to_free_value():
    stack = LayerStack.half_space(constant(1e20))
    free = W**3 / (6 * np.pi * c**3)
    vals = [im_green(stack, [0, 0, z / K0], [0, 0, z / K0], W)[2, 2] / free
            for z in (0.5, 1.5, 3.0, 10.0)]
    x = 2 * np.array([0.5, 1.5, 3.0, 10.0])
    image = 1 + 3 * (np.sin(x) - x * np.cos(x)) / x**3
    assert vals == pytest.approx(image, rel=1e-6)


@pytest.mark.parametrize("stack", [lossy_half_space(), lossy_slab()], ids=["half", "slab"])
def test_im_green_identity(stack):
    resid, _, _ = imag_green_identity_check(stack, [0.1 / K0, 0, 0.3 / K0], [0, 0, 0.5 / K0], W)
    assert resid < 1e-6


def test_identity_check_refuses_gain():
    slab = LayerStack.slab(MaterialResponse(exact_channels([-0.2]), 4.0), 1e-6)
    with pytest.raises(ValueError):
        imag_green_identity_check(slab, [0, 0, 1e-7], [0, 0, 1e-7], W)


def test_lossy_top_layer_refused():
    stack = LayerStack(((constant(2.0), np.inf), (MaterialResponse(exact_channels([0.1]), 2.0),
                                                   np.inf)))
    with pytest.raises(NotImplementedError):
        im_green(stack, [0, 0, 1e-7], [0, 0, 1e-7], W)


@pytest.mark.parametrize("pol", ["s", "p"])
def test_passive_slab_modal_denominator_has_no_upper_zeros(pol):
    stack = lossy_slab()
    rep = stability_scan(lambda w, k: modal_denominator(stack, w, k, pol),
                         [0.0, 0.8 * K0, 2.0 * K0], Contour(0.2 * W, 3 * W, 1e-3 * W, 0.5 * W))
    assert rep.stable


# Fabry-Perot gain slab in vacuum, index about 2 - 0.125 i at the gain line
GAIN_L = 5e-6


def gain_slab():
    return LayerStack.slab(MaterialResponse(exact_channels([-0.5]), 4.0), GAIN_L)


def fabry_perot_phase(m):
    # r^2 exp(2 i n k0 L) = 1 at normal incidence, r the inner interface
    # reflection, in log form for longitudinal order m
    def f(w):
        w = np.asarray(w, dtype=complex)
        n = np.sqrt(eval_epsilon(MaterialResponse(exact_channels([-0.5]), 4.0), w))
        return 2j * n * w / c * GAIN_L + 2 * np.log((n - 1) / (n + 1)) - 2j * np.pi * m
    return f


def test_gain_slab_unstable_with_independent_root():
    # the longitudinal order nearest the gain line
    m = np.round(2 * GAIN_L * W / (np.pi * c))
    root = polish_root(fabry_perot_phase(m), m * np.pi * c / (2 * GAIN_L) + 1e13j)
    assert root.imag > 0
    contour = Contour(root.real - 2e13, root.real + 2e13, 0.2 * root.imag, 3 * root.imag)
    rep = stability_scan(lambda w, k: modal_denominator(gain_slab(), w, k, "s"), [0.0], contour)
    assert not rep.stable
    assert rep.suspects[0][2] == 1
    assert rep.suspects[0][1] == pytest.approx(root, rel=1e-9)
