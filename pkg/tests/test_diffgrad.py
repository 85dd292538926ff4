"""Hand-written gradients checked against finite differences and closed forms."""

import json

import numpy as np
import pytest

from swguide.diffgrad import (
    DifferentiableMap,
    GradcheckReport,
    LossGradReport,
    chain_forward,
    chain_tie_mask,
    chain_vjp,
    finite_diff_check,
    grad_moments,
    grad_sliced,
    grad_sw1,
    identity_map,
    linear_map,
    loss_and_grad,
    sw1_tie_mask,
)
from swguide.errors import ConfigError, InputError, SampleCountError
from swguide.guidance import Decoder, GmmScoreModel, predict_x0_at, x0_vjp
from swguide.sliced import SlicedConfig, sample_slices, sw_distance


def _slices(seed=0, k=10, d=3, scheme="rotation-triples"):
    return sample_slices(SlicedConfig(slices=k, scheme=scheme, seed=seed), d)


def _fd_sw(a, b, s, **kw):
    rep = grad_sliced(a, b, s, **kw)
    f = lambda z: grad_sliced(z, b, s, **kw).loss  # noqa: E731
    return f, rep.grad


class TestGradSW1:
    def test_identical_clouds_zero_gradient(self):
        a = np.random.default_rng(0).random((20, 3))
        np.testing.assert_array_equal(grad_sw1(a, a, _slices()).grad, 0.0)

    def test_single_point_closed_form(self):
        x, y = np.array([[0.2, -0.4, 0.9]]), np.array([[0.5, 0.1, -0.3]])
        s = _slices(3)
        expected = np.mean(np.sign(s.directions @ (x - y)[0])[:, None] * s.directions, axis=0)
        np.testing.assert_allclose(grad_sw1(x, y, s).grad[0], expected, atol=1e-15)

    def test_loss_matches_distance(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((30, 3)), rng.random((30, 3))
        s = _slices(2)
        assert grad_sw1(a, b, s).loss == pytest.approx(sw_distance(a, b, SlicedConfig(seed=2), s), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((64, 3)), rng.random((64, 3))
        s = _slices(seed)
        f, g = _fd_sw(a, b, s)
        rep = finite_diff_check(f, a, g, eps=1e-5, tol=1e-4, ties=sw1_tie_mask(a, b, s, 1e-5))
        assert rep.passed, rep
        assert rep.flagged_ties < a.size // 2

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((40, 3)), rng.random((40, 3))
        s = _slices(4)
        t = np.array([0.25, -0.5, 0.125])
        np.testing.assert_array_equal(grad_sw1(a + t, b + t, s).grad, grad_sw1(a, b, s).grad)

    def test_small_step_descends(self):
        rng = np.random.default_rng(5)
        wins = 0
        for trial in range(100):
            a, b = rng.random((32, 3)), rng.random((32, 3)) + rng.normal(size=3) * 0.1
            s = _slices(trial)
            rep = grad_sw1(a, b, s)
            wins += grad_sw1(a - 1e-4 * rep.grad / np.abs(rep.grad).max(), b, s).loss < rep.loss
        assert wins >= 99

    def test_unequal_counts(self):
        with pytest.raises(SampleCountError):
            grad_sw1(np.zeros((3, 3)), np.zeros((4, 3)), _slices())

    def test_tie_is_flagged_not_failed(self):
        rng = np.random.default_rng(6)
        b = rng.random((16, 3))
        a = b.copy()
        a[:8] += 0.1
        s = _slices(1)
        f, g = _fd_sw(a, b, s)
        ties = sw1_tie_mask(a, b, s, 1e-5)
        assert ties[8:].all()
        rep = finite_diff_check(f, a, g, ties=ties)
        assert rep.flagged_ties >= 24
        assert rep.passed


class TestOtherVariants:
    @pytest.mark.parametrize(
        "kw,d",
        [
            ({"variant": "gsw", "g": "poly3"}, 10),
            ({"variant": "ebsw", "params": {"f": "exp"}}, 3),
            ({"variant": "ebsw", "params": {"f": "linear", "offset": 1.0}}, 3),
            ({"p": 2.0}, 3),
        ],
    )
    def test_finite_differences(self, kw, d):
        rng = np.random.default_rng(11)
        a, b = rng.random((24, 3)), rng.random((24, 3))
        s = _slices(2, d=d)
        f, g = _fd_sw(a, b, s, **kw)
        ties = sw1_tie_mask(a, b, s, 1e-5, kw.get("g", "linear"))
        assert finite_diff_check(f, a, g, ties=ties).passed

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            grad_sliced(np.zeros((2, 3)), np.ones((2, 3)), _slices(), variant="max")


class TestGradMoments:
    def test_identical_zero(self):
        a = np.random.default_rng(0).random((10, 3))
        rep = grad_moments(a, a)
        assert rep.loss == 0.0
        np.testing.assert_array_equal(rep.grad, 0.0)

    def test_pure_translation(self):
        a = np.random.default_rng(1).random((12, 3))
        t = np.array([0.1, -0.2, 0.3])
        rep = grad_moments(a, a + t)
        assert rep.terms["cov"] == pytest.approx(0.0, abs=1e-28)
        np.testing.assert_allclose(rep.grad, np.broadcast_to(-2 * t / 12, a.shape), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((32, 3)), rng.random((32, 3)) * 2
        rep = grad_moments(a, b)
        chk = finite_diff_check(lambda z: grad_moments(z, b).loss, a, rep.grad, tol=1e-6)
        assert chk.passed, chk

    def test_needs_two_points(self):
        with pytest.raises(InputError):
            grad_moments(np.zeros((1, 3)), np.zeros((1, 3)))


class TestChain:
    def test_identity_passthrough(self):
        g = np.random.default_rng(0).random((5, 3))
        np.testing.assert_array_equal(chain_vjp([identity_map()], g * 0, g), g)

    @pytest.mark.parametrize("k", [0, 1, 5])
    def test_many_identities(self, k):
        g = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(chain_vjp([identity_map()] * k, g, g), g)

    def test_two_linear_maps(self):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
        x, g = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        got = chain_vjp([linear_map(A), linear_map(B)], x, g)
        np.testing.assert_allclose(got, (A.T @ (B.T @ g.T)).T, atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(2)
        A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        dec = Decoder.random("affine-tanh", 3, seed=1)
        maps = [linear_map(A), dec.as_map(), linear_map(B)]
        x, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        whole = chain_vjp(maps, x, g)
        mid = chain_forward(maps[:2], x)[-1]
        split = chain_vjp(maps[:2], x, chain_vjp(maps[2:], mid, g))
        np.testing.assert_allclose(whole, split, rtol=1e-13, atol=1e-15)

    def test_shape_error_names_stage(self):
        bad = DifferentiableMap("broken", lambda x: x, lambda x, ct: ct[:, :1])
        with pytest.raises(InputError, match="stage 1 \\(broken\\)"):
            chain_vjp([identity_map(), bad], np.ones((2, 3)), np.ones((2, 3)))

    def test_declared_shape_contract(self):
        m = DifferentiableMap("m", lambda x: x, lambda x, ct: ct, in_shape=(2, 2))
        with pytest.raises(InputError, match="stage 0 \\(m\\)"):
            chain_forward([m], np.ones((3, 2)))

    @pytest.mark.parametrize("kind,tol", [("identity", 1e-4), ("affine", 1e-4), ("affine-tanh", 1e-3)])
    def test_guidance_chain_finite_differences(self, kind, tol):
        rng = np.random.default_rng(3)
        model = GmmScoreModel([0.5, 0.5], [[-0.5, 0.2, 0.0], [0.6, -0.3, 0.4]],
                              [np.eye(3) * 0.1, np.eye(3) * 0.05])
        abar = 0.4
        x0 = DifferentiableMap("x0", lambda z: predict_x0_at(model, z, abar),
                               lambda z, ct: x0_vjp(model, z, abar, ct))
        maps = [x0, Decoder.random(kind, 3, seed=7).as_map()]
        x = rng.standard_normal((16, 3))
        b = rng.random((16, 3))
        s = _slices(5)

        def f(z):
            return grad_sw1(chain_forward(maps, z)[-1], b, s).loss

        vals = chain_forward(maps, x)
        grad = chain_vjp(maps, x, grad_sw1(vals[-1], b, s).grad, vals)
        rep = finite_diff_check(f, x, grad, tol=tol, ties=chain_tie_mask(maps, x, b, s, 1e-5))
        assert rep.passed, rep


class TestFiniteDiffCheck:
    def test_linear_map_exact(self):
        A = np.random.default_rng(0).normal(size=(3, 3))
        rep = finite_diff_check(linear_map(A), np.ones((4, 3)))
        assert rep.max_rel_err < 1e-8
        assert rep.passed

    def test_wrong_gradient_fails(self):
        x = np.ones(3)
        rep = finite_diff_check(lambda z: float(np.sum(z**2)), x, grad=x)
        assert not rep.passed
        assert rep.worst_index != ()

    def test_requires_gradient_for_scalar(self):
        with pytest.raises(ConfigError):
            finite_diff_check(lambda z: 0.0, np.ones(2))

    def test_positive_eps(self):
        with pytest.raises(ConfigError):
            finite_diff_check(lambda z: 0.0, np.ones(2), grad=np.zeros(2), eps=0)

    def test_report_json(self):
        rep = GradcheckReport("sw1", 1e-9, 1e-7, 2, True)
        assert set(json.loads(rep.to_json())) == {"stage", "max_abs_err", "max_rel_err", "flagged_ties", "pass"}


def test_loss_modes_add_up():
    rng = np.random.default_rng(0)
    a, b = rng.random((20, 3)), rng.random((20, 3))
    s = _slices()
    both = loss_and_grad(a, b, "sw+moments", s)
    sw = loss_and_grad(a, b, "sw", s)
    mo = loss_and_grad(a, b, "moments")
    assert both.loss == pytest.approx(sw.loss + mo.loss)
    np.testing.assert_allclose(both.grad, sw.grad + mo.grad)
    assert set(both.terms) == {"sw", "mean", "cov"}
    with pytest.raises(ConfigError):
        loss_and_grad(a, b, "l2")


def test_non_finite_gradient_rejected():
    with pytest.raises(ArithmeticError):
        LossGradReport(0.0, np.array([np.nan]))
