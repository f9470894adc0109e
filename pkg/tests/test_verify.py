import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelunet.builders import build_square
from gelunet.network import Layer, Network, affine, identity_network
from gelunet.verify import (
    GridSpec,
    VerificationError,
    check_certificate,
    finite_difference_partial,
    make_oracle,
    probe_finite,
    sobolev_error,
)


@pytest.fixture(scope="module")
def square():
    return build_square(1e-3, 3)


def test_exact_identity_has_no_error():
    rep = sobolev_error(identity_network(1), make_oracle("identity"), GridSpec([(-3, 3)]), 3, eps=1e-12)
    assert rep.overall <= 1e-15 and rep.passed


def test_square_report(square):
    net, cert = square
    rep = sobolev_error(net, make_oracle("square"), GridSpec([(-1, 1)], 2048), 3, eps=1e-3,
                        noise_floor=cert.noise_floor)
    assert rep.passed
    assert rep.overall == max(e["max_err"] for e in rep.per_index)
    assert [e["k"] for e in rep.per_index] == [[0], [1], [2], [3]]
    doc = rep.as_dict()
    assert set(doc) == {"target", "eps", "order", "grid", "per_index", "overall", "noise_floor", "pass"}


def test_square_report_cross_checked_by_differences(square):
    net, _ = square
    for x in (-0.9, 0.1, 0.7):
        for k in (1, 2):
            fd = finite_difference_partial(net, [x], (k,))
            want = 2 * x if k == 1 else 2.0
            assert abs(fd - want) <= 1e-3 + 1e-4


def test_reciprocal_oracle_closed_form():
    o = make_oracle("reciprocal")
    assert o.fn(np.array([[0.5]]), (2,))[0] == pytest.approx(16.0)
    with pytest.raises(VerificationError):
        o.fn(np.array([[0.0]]), (0,))


def test_finite_difference_examples():
    sq = lambda p: p[:, 0] ** 2
    assert finite_difference_partial(sq, [1.3], (2,)) == pytest.approx(2.0, abs=1e-6)
    gelu_net = Network((Layer([[1.0]], [0.0]), Layer([[1.0]], [0.0])))
    assert finite_difference_partial(gelu_net, [0.0], (1,)) == pytest.approx(0.5, abs=1e-8)
    with pytest.raises(VerificationError):
        finite_difference_partial(sq, [0.0], (5,))


def test_random_network_partial_against_jet():
    from conftest import random_network
    from gelunet.network import partials

    rng = np.random.default_rng(3)
    net = random_network(rng, 3, (2, 4, 4, 1))
    x = [0.2, -0.4]
    jet = partials(net, x, 3)
    for k in [(3, 0), (2, 1), (1, 2), (0, 3)]:
        fd = finite_difference_partial(net, x, k)
        assert abs(fd - jet.derivative(k)) <= 1e-4 * max(1.0, abs(fd))


def test_battery_passes_and_tampering_fails(square):
    net, cert = square
    assert check_certificate(net, cert).passed
    first = net.layers[1]
    w = first.weight.copy()
    w[0, 0] = 0.0
    broken = Network((net.layers[0], Layer(w, first.shift)))
    bad = check_certificate(broken, cert)
    assert not bad.passed
    assert "config.matches_network" in bad.verification["failed"]
    assert any(name.startswith("error.") for name in bad.verification["failed"])


def test_battery_flags_extra_nonzero(square):
    net, cert = square
    w = net.layers[0].weight.copy()
    # three tiny shifts push S from 4 past the limit of 6 without moving values
    layers = (Layer(w, [1e-300, 1e-300]), Layer(net.layers[1].weight, [1e-300]))
    tampered = Network(layers)
    from gelunet.network import audit
    from dataclasses import replace

    out = check_certificate(tampered, replace(cert, config=audit(tampered)))
    assert "config.nonzeros" in out.verification["failed"]


def test_unknown_target_raises(square):
    from dataclasses import replace

    net, cert = square
    req = replace(cert.request)
    object.__setattr__(req, "target", "nothing")
    with pytest.raises(VerificationError):
        check_certificate(net, replace(cert, request=req))


def test_grid_validation():
    with pytest.raises(VerificationError):
        GridSpec([(1, 0)])
    with pytest.raises(VerificationError):
        GridSpec([(0, 1)], 1)
    with pytest.raises(VerificationError):
        sobolev_error(identity_network(2), make_oracle("identity"), GridSpec([(0, 1)]), 1)


def test_probe_finite_on_affine():
    out = probe_finite(affine([[2.0, 0.0]]), 2)
    assert out["finite"] and out["max_abs_value"] == 2000.0


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.1, 4.0), shift=st.floats(-2, 2))
def test_report_pass_iff_within_eps(scale, shift):
    net = affine([[scale]], [shift])
    rep = sobolev_error(net, make_oracle("identity"), GridSpec([(-1, 1)], 64), 2, eps=0.5)
    exact = max(abs(scale - 1) + abs(shift), abs(scale - 1))
    assert rep.overall == pytest.approx(exact, abs=1e-12)
    assert rep.passed == (rep.overall <= 0.5)
    assert rep.overall == max(e["max_err"] for e in rep.per_index)


def test_reports_are_deterministic(square):
    net, _ = square
    a = sobolev_error(net, make_oracle("square"), GridSpec([(-1, 1)], 256), 3, eps=1e-3).as_dict()
    b = sobolev_error(net, make_oracle("square"), GridSpec([(-1, 1)], 256), 3, eps=1e-3).as_dict()
    assert a == b
