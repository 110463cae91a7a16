import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluctua.constants import c, epsilon_0, hbar
from fluctua.fluctuation import (CorrelatorSample, commutator_kernel, field_correlator,
                                 noise_current_coefficients, noise_current_correlator)
from fluctua.layered import LayerStack, im_green, modal_denominator
from fluctua.material import MaterialResponse, PermittivityChannel, constant
from fluctua.numerics import Contour, stability_scan

from conftest import W, exact_channels

K0 = W / c
# hbar / (pi mu0) (w/c)^2 at w = 1e15 rad/s, CODATA 2022 mu0, 30-digit arithmetic
NOISE_PREFACTOR = 2.972179391612633e-16


def lossy_half_space():
    ch = PermittivityChannel("lorentz", 1.0, 1.2e15, 2e14, 1.5e15)
    return LayerStack.half_space(MaterialResponse((ch,), 2.0))


def gain_slab(loss, gain, thickness=0.3 / K0):
    """Thin slab with the given loss/gain split over a lossy substrate."""
    parts = [p for p in (loss, gain) if p != 0]
    slab = MaterialResponse(exact_channels(parts), 3.0)
    sub = MaterialResponse(exact_channels([0.5]), 2.0)
    return LayerStack.slab(slab, thickness, substrate=sub)


def test_noise_prefactor_oracle():
    anti, norm = noise_current_coefficients(MaterialResponse(exact_channels([1.0])), W)
    assert anti == pytest.approx(NOISE_PREFACTOR, rel=1e-12)
    assert norm == 0.0


def test_gain_channel_feeds_normal_ordering():
    anti, norm = noise_current_coefficients(MaterialResponse(exact_channels([-0.3])), W)
    assert anti == 0.0
    assert norm == pytest.approx(0.3 * NOISE_PREFACTOR, rel=1e-12)


@given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_current_orderings_differ_by_total_loss(loss, gain):
    m = MaterialResponse(exact_channels([loss, -gain]))
    anti = noise_current_correlator(m, W, "antinormal").value
    norm = noise_current_correlator(m, W, "normal").value
    assert np.real(anti - norm)[0, 0] == pytest.approx((loss - gain) * NOISE_PREFACTOR,
                                                       rel=1e-9, abs=1e-12 * NOISE_PREFACTOR)


def test_passive_normal_current_correlator_is_exactly_zero(lorentz_medium):
    for w in (3e14, 1.2e15, 4e15):
        assert np.all(noise_current_correlator(lorentz_medium, w, "normal").value == 0)


def test_bad_ordering_and_frequency_rejected(lorentz_medium):
    with pytest.raises(ValueError):
        noise_current_correlator(lorentz_medium, W, "weyl")
    with pytest.raises(ValueError):
        noise_current_coefficients(lorentz_medium, 0.0)
    with pytest.raises(ValueError):
        CorrelatorSample("ordered", np.eye(3), (), (), W)


@pytest.mark.parametrize("route", ["imag", "volume"])
def test_passive_normal_field_correlator_is_exactly_zero(route):
    s = field_correlator(lossy_half_space(), [0, 0, 0.2 / K0], [0, 0, 0.4 / K0], W,
                         "normal", route=route)
    assert np.all(s.value == 0)


@pytest.mark.parametrize("z, zp, dx", [(0.1, 0.1, 0.0), (0.3, 0.7, 0.2), (1.5, 0.4, -0.5)])
def test_fdt_routes_agree(z, zp, dx):
    stack = lossy_half_space()
    r, rp = [dx / K0, 0, z / K0], [0, 0, zp / K0]
    a = field_correlator(stack, r, rp, W, route="imag").value
    b = field_correlator(stack, r, rp, W, route="volume").value
    assert np.linalg.norm(a - b) <= 1e-3 * np.linalg.norm(a)


def test_imag_route_matches_prefactor_times_im_green():
    stack = lossy_half_space()
    r = [0, 0, 0.25 / K0]
    s = field_correlator(stack, r, r, W)
    assert s.value.real == pytest.approx(hbar / (np.pi * epsilon_0) * im_green(stack, r, r, W),
                                         rel=1e-12)
    assert s.is_hermitian


def test_gain_refuses_imag_route_and_auto_picks_volume():
    stack = gain_slab(0.2, -0.1)
    r = [0, 0, 0.2 / K0]
    with pytest.raises(ValueError):
        field_correlator(stack, r, r, W, route="imag")
    assert field_correlator(stack, r, r, W).diagnostics["route"] == "volume"


def test_moving_layers_refused():
    mv = MaterialResponse(exact_channels([0.2]), 2.0, velocity=1e5)
    with pytest.raises(NotImplementedError):
        field_correlator(LayerStack.half_space(mv), [0, 0, 1e-7], [0, 0, 1e-7], W)


@settings(max_examples=5)
@given(st.floats(0.05, 1.0))
def test_commutator_kernel_invariant_under_repartition(extra):
    # the same net eps'' = 0.1, split differently between loss and gain
    r, rp = [0, 0, 0.2 / K0], [0.1 / K0, 0, 0.35 / K0]
    ref = commutator_kernel(gain_slab(0.1, 0.0), r, rp, W)
    got = commutator_kernel(gain_slab(0.1 + extra, -extra), r, rp, W)
    assert np.linalg.norm(got - ref) <= 1e-6 * np.linalg.norm(ref)


def test_gain_slab_is_stable():
    stack = gain_slab(0.1, -0.4)
    for pol in ("s", "p"):
        rep = stability_scan(lambda w, k: modal_denominator(stack, w, k, pol),
                             [0.0, 0.5 * K0, 1.5 * K0, 4 * K0],
                             Contour(0.2 * W, 3 * W, 1e-3 * W, 0.5 * W))
        assert rep.stable


def test_commutator_kernel_restores_im_green_with_gain():
    stack = gain_slab(0.1, -0.4)
    r, rp = [0, 0, 0.2 / K0], [0.1 / K0, 0, 0.35 / K0]
    kern = commutator_kernel(stack, r, rp, W)
    ref = im_green(stack, r, rp, W)
    assert np.linalg.norm(kern - ref) <= 1e-3 * np.linalg.norm(ref)


def test_gain_makes_normal_ordering_positive():
    stack = gain_slab(0.1, -0.4)
    r = [0, 0, 0.2 / K0]
    s = field_correlator(stack, r, r, W, "normal")
    assert s.is_hermitian
    assert np.all(s.eigenvalues() > 0)
