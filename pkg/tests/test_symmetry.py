"""Generators, group elements, the infinitesimal criterion, and the losses."""

import numpy as np
import pytest
import scipy.linalg

from symodes.discover import SindyModel
from symodes.library import TermKey, build_library
from symodes.symmetry import (DegenerateLossError, Generator, GroupElement,
                              check_infinitesimal_criterion, loss_fgfe,
                              loss_fgie, loss_igfe, loss_igie,
                              matrix_exponential, precompute_transforms,
                              symmetry_loss, symmetry_loss_grad)

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])


def key(exponents):
    return TermKey(exponents, (False,) * len(exponents))


def oscillator_model():
    lib = build_library(2, 2)
    W = np.zeros((2, lib.size))
    W[0, lib.index_of(key((1, 0)))] = -0.1
    W[0, lib.index_of(key((0, 1)))] = -1.0
    W[1, lib.index_of(key((1, 0)))] = 1.0
    W[1, lib.index_of(key((0, 1)))] = -0.1
    return SindyModel(lib, W)


def broken_model():
    # h = (x1**2, 0) does not commute with rotation; used as the negative
    # control for the consistency check and the loss worked example.
    lib = build_library(2, 2)
    W = np.zeros((2, lib.size))
    W[0, lib.index_of(key((2, 0)))] = 1.0
    return SindyModel(lib, W)


def test_matrix_exponential_rotation_closed_form():
    for eps in (0.0, 0.1, 1.0, -2.3):
        got = matrix_exponential(eps * ROTATION)
        want = np.array([[np.cos(eps), np.sin(eps)],
                         [-np.sin(eps), np.cos(eps)]])
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_linear_generator_call_and_jacobian():
    gen = Generator.linear(ROTATION, label="rotation")
    X = np.array([[1.0, 2.0], [-0.5, 0.25]])
    np.testing.assert_allclose(gen(X), X @ ROTATION.T, atol=1e-15)
    J = gen.jacobian(X)
    assert J.shape == (2, 2, 2)
    np.testing.assert_allclose(J[0], ROTATION, atol=1e-15)
    assert gen.is_linear


def test_symbolic_generator_matches_linear():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(20, 2))
    lin = Generator.linear(ROTATION)
    sym = Generator.symbolic(("x2", "-x1"), dim=2)
    np.testing.assert_allclose(sym(X), lin(X), atol=1e-14)
    np.testing.assert_allclose(sym.jacobian(X), lin.jacobian(X), atol=1e-14)
    assert not sym.is_linear


def test_generator_config_round_trip():
    for gen in (Generator.linear(ROTATION, label="rot"),
                Generator.symbolic(("x2", "-x1"), dim=2, label="rot_sym")):
        back = Generator.from_config(gen.to_config(), dim=2)
        X = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_allclose(back(X), gen(X), atol=1e-14)
        assert back.label == gen.label


def test_group_element_linear_uses_matrix_exponential():
    gen = Generator.linear(ROTATION)
    eps = 0.37
    g = GroupElement(gen, eps)
    X = np.random.default_rng(4).normal(size=(8, 2))
    E = scipy.linalg.expm(eps * ROTATION)
    np.testing.assert_allclose(g.transform(X), X @ E.T, atol=1e-12)
    np.testing.assert_allclose(g.jacobian(X)[0], E, atol=1e-12)


def test_group_element_symbolic_inverse_composes_to_identity():
    gen = Generator.symbolic(("x2", "-x1"), dim=2)
    X = np.random.default_rng(5).normal(size=(8, 2))
    fwd = GroupElement(gen, 0.4).transform(X)
    back = GroupElement(gen, -0.4).transform(fwd)
    np.testing.assert_allclose(back, X, atol=1e-9)


def test_infinitesimal_criterion_consistent_for_oscillator():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 2))
    report = check_infinitesimal_criterion(
        oscillator_model(), [Generator.linear(ROTATION, label="rotation")], X)
    assert report["consistent"]
    assert report["max"] <= 1e-10
    assert report["per_generator"][0]["label"] == "rotation"


def test_infinitesimal_criterion_flags_broken_pair():
    # At x = (1, 1): J_h v - J_v h = (2, 1) and 1 + |J_v h| = 2, so the
    # relative residual is sqrt(5)/2.
    X = np.array([[1.0, 1.0]])
    report = check_infinitesimal_criterion(
        broken_model(), [Generator.linear(ROTATION)], X)
    assert not report["consistent"]
    assert report["max"] >= 1.0
    assert report["max"] == pytest.approx(np.sqrt(5.0) / 2.0, abs=1e-12)


def test_all_four_losses_vanish_at_the_truth():
    model = oscillator_model()
    gens = [Generator.linear(ROTATION)]
    X = np.random.default_rng(9).normal(size=(32, 2))
    assert loss_igie(model, gens, X) <= 1e-10
    assert loss_fgie(model, gens, X, eps=0.1) <= 1e-10
    assert loss_igfe(model, gens, X, tau=0.2) <= 1e-6
    assert loss_fgfe(model, gens, X, tau=0.2, eps=0.1) <= 1e-6


def test_igie_worked_example_equals_five():
    # For h = (x1**2, 0) against rotation at (1, 1) the defect ratio is
    # |(2, 1)|**2 / |(0, -1)|**2 = 5.
    X = np.array([[1.0, 1.0]])
    val = loss_igie(broken_model(), [Generator.linear(ROTATION)], X)
    assert val == pytest.approx(5.0, abs=1e-9)


def test_losses_positive_for_broken_pair():
    gens = [Generator.linear(ROTATION)]
    X = np.random.default_rng(13).normal(size=(16, 2)) + 2.0
    model = broken_model()
    assert loss_igie(model, gens, X) > 1e-2
    assert loss_fgie(model, gens, X) > 1e-2
    assert loss_igfe(model, gens, X, tau=0.2) > 1e-2
    assert loss_fgfe(model, gens, X, tau=0.2) > 1e-2


def test_degenerate_batch_raises():
    # At the origin J_v h vanishes identically, so every denominator
    # underflows and the loss has no usable points.
    X = np.zeros((4, 2))
    with pytest.raises(DegenerateLossError):
        loss_igie(oscillator_model(), [Generator.linear(ROTATION)], X)


def test_empty_generator_list_gives_zero_loss_and_grad():
    model = oscillator_model()
    X = np.random.default_rng(1).normal(size=(8, 2))
    val, grad = symmetry_loss_grad("igie", model, [], X)
    assert val == 0.0
    np.testing.assert_array_equal(grad, np.zeros_like(model.W))


def test_symmetry_loss_dispatch_and_validation():
    model = oscillator_model()
    gens = [Generator.linear(ROTATION)]
    X = np.random.default_rng(2).normal(size=(8, 2))
    assert symmetry_loss("igie", model, gens, X) == pytest.approx(
        loss_igie(model, gens, X), rel=1e-12)
    with pytest.raises(ValueError):
        symmetry_loss("nope", model, gens, X)
    with pytest.raises(ValueError):
        symmetry_loss("igfe", model, gens, X)  # tau is required
    with pytest.raises(ValueError):
        loss_fgfe(model, gens, X, tau=0.2, eps=0.0)


def test_precomputed_transforms_match_direct_fgie():
    model = broken_model()
    gens = [Generator.linear(ROTATION)]
    X = np.random.default_rng(21).normal(size=(12, 2)) + 1.5
    pre = precompute_transforms(gens, X, eps=0.1)
    direct = loss_fgie(model, gens, X, eps=0.1)
    cached = loss_fgie(model, gens, X, transforms=pre)
    assert cached == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("kind", ["igie", "fgie", "igfe", "fgfe"])
def test_loss_gradients_match_finite_differences(kind):
    lib = build_library(2, 2)
    rng = np.random.default_rng(37)
    gens = [Generator.linear(ROTATION)]
    X = rng.normal(size=(12, 2)) + 1.0
    kwargs = {"tau": 0.2} if kind in ("igfe", "fgfe") else {}

    for trial in range(2):
        W = 0.3 * rng.normal(size=(2, lib.size))
        model = SindyModel(lib, W)
        val, grad = symmetry_loss_grad(kind, model, gens, X, **kwargs)
        assert val == pytest.approx(
            symmetry_loss(kind, model, gens, X, **kwargs), rel=1e-10)

        h = 1e-6
        idx = [(0, 1), (1, 3), (0, 4), (1, 0)]
        for a, mu in idx:
            Wp = W.copy()
            Wp[a, mu] += h
            Wm = W.copy()
            Wm[a, mu] -= h
            fp = symmetry_loss(kind, SindyModel(lib, Wp), gens, X, **kwargs)
            fm = symmetry_loss(kind, SindyModel(lib, Wm), gens, X, **kwargs)
            fd = (fp - fm) / (2 * h)
            scale = max(1.0, abs(fd))
            assert abs(grad[a, mu] - fd) / scale <= 1e-5
