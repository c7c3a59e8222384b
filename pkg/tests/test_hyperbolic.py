import numpy as np
import pytest

from corrgeo import domain as dom
from corrgeo import hyperbolic as hyp
from corrgeo.errors import DimensionMismatch

from helpers import fd_grad_free, rel_err


def rand_ball(dim, rng, rmax=0.8):
    v = rng.standard_normal(dim)
    r = rng.uniform(0.0, rmax)
    return r * v / np.linalg.norm(v)


def rand_hemisphere(dim, rng):
    v = rng.standard_normal(dim + 1)
    v /= np.linalg.norm(v)
    v[-1] = abs(v[-1]) + 1e-3
    return v / np.linalg.norm(v)


class TestIsometries:
    def test_north_pole(self):
        x = np.array([0.0, 0.0, 1.0])
        assert np.array_equal(hyp.hs_to_pb(x), np.zeros(2))
        assert np.allclose(hyp.pb_to_hs(np.zeros(2)), x)

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        for dim in range(1, 10):
            h = rand_hemisphere(dim, rng)
            assert np.abs(hyp.pb_to_hs(hyp.hs_to_pb(h)) - h).max() < 1e-12
            p = rand_ball(dim, rng)
            assert np.abs(hyp.hs_to_pb(hyp.pb_to_hs(p)) - p).max() < 1e-12

    def test_distance_preserved(self):
        rng = np.random.default_rng(1)
        for dim in (1, 3, 6):
            h1, h2 = rand_hemisphere(dim, rng), rand_hemisphere(dim, rng)
            dh = hyp.hyperboloid_dist(h1, h2)
            dp = hyp.poincare_dist(hyp.hs_to_pb(h1), hyp.hs_to_pb(h2))
            assert abs(dh - dp) < 1e-9

    def test_vjp_pairings(self):
        rng = np.random.default_rng(2)
        h = rand_hemisphere(4, rng)
        p = rand_ball(4, rng)
        g5 = rng.standard_normal(5)
        g4 = rng.standard_normal(4)
        fd = fd_grad_free(lambda x: np.sum(hyp.pb_to_hs(x) * g5), p)
        assert rel_err(hyp.pb_to_hs_vjp(p, g5), fd) < 1e-7
        fd = fd_grad_free(lambda x: np.sum(hyp.hs_to_pb(x) * g4), h)
        assert rel_err(hyp.hs_to_pb_vjp(h, g4), fd) < 1e-7


class TestOriginMaps:
    def test_zero_fixed(self):
        assert np.array_equal(hyp.pb_log0(np.zeros(3)), np.zeros(3))
        assert np.array_equal(hyp.pb_exp0(np.zeros(3)), np.zeros(3))

    def test_scalar_hand_value(self):
        out = hyp.pb_log0(np.array([0.5]))
        assert abs(out[0] - 0.5493061443340549) < 1e-12

    def test_roundtrip(self):
        rng = np.random.default_rng(3)
        for dim in range(1, 9):
            p = rand_ball(dim, rng)
            assert np.abs(hyp.pb_exp0(hyp.pb_log0(p)) - p).max() < 1e-12
            v = rng.standard_normal(dim)
            assert np.abs(hyp.pb_log0(hyp.pb_exp0(v)) - v).max() < 1e-12

    def test_small_radius_stable(self):
        tiny = np.full(3, 1e-9)
        assert rel_err(hyp.pb_log0(tiny), tiny) < 1e-12
        assert rel_err(hyp.pb_exp0(tiny), tiny) < 1e-12

    def test_vjps(self):
        rng = np.random.default_rng(4)
        p = rand_ball(5, rng)
        g = rng.standard_normal(5)
        fd = fd_grad_free(lambda x: np.sum(hyp.pb_log0(x) * g), p)
        assert rel_err(hyp.pb_log0_vjp(p, g), fd) < 1e-6
        v = rng.standard_normal(5) * 0.7
        fd = fd_grad_free(lambda x: np.sum(hyp.pb_exp0(x) * g), v)
        assert rel_err(hyp.pb_exp0_vjp(v, g), fd) < 1e-6

    def test_guard_band_rescales(self):
        v = np.array([30.0, 0.0])
        p = hyp.pb_exp0(v)
        assert np.sum(p * p) < 1.0
        assert np.isfinite(hyp.pb_log0(p)).all()


class TestMlrLogit:
    def test_origin_value(self):
        z = np.array([1.0, 2.0])
        gamma = 0.3
        v = hyp.pb_mlr_logit(np.zeros(2), z, gamma)
        assert abs(v - (-4.0 * gamma * np.linalg.norm(z))) < 1e-12

    def test_zero_gamma_origin(self):
        assert hyp.pb_mlr_logit(np.zeros(3), np.ones(3), 0.0) == 0.0

    def test_zero_direction_convention(self):
        rng = np.random.default_rng(5)
        p = rand_ball(3, rng)
        assert hyp.pb_mlr_logit(p, np.zeros(3), 0.7) == 0.0
        gx, gz, gg = hyp.pb_mlr_logit_vjp(p, np.zeros(3), 0.7, 1.0)
        assert np.abs(gx).max() == 0.0 and np.abs(gz).max() == 0.0 and gg == 0.0

    def test_vjp_matches_fd(self):
        rng = np.random.default_rng(6)
        p = rand_ball(4, rng)
        z = rng.standard_normal(4)
        gamma = 0.4
        gx, gz, gg = hyp.pb_mlr_logit_vjp(p, z, gamma, 1.0)
        assert rel_err(gx, fd_grad_free(lambda x: hyp.pb_mlr_logit(x, z, gamma), p)) < 1e-6
        assert rel_err(gz, fd_grad_free(lambda w: hyp.pb_mlr_logit(p, w, gamma), z)) < 1e-6
        fdg = fd_grad_free(lambda g: hyp.pb_mlr_logit(p, z, g[0]), np.array([gamma]))
        assert abs(gg - fdg[0]) < 1e-6 * max(1.0, abs(fdg[0]))


class TestFc:
    def test_zero_params(self):
        x = np.zeros(3)
        y = hyp.pb_fc(x, np.zeros((2, 3)), np.zeros(2))
        assert np.array_equal(y, np.zeros(2))

    def test_scalar_tanh_identity(self):
        s = 1.3
        y = hyp.pb_fc_from_logits(np.array([s]))
        assert abs(y[0] - np.tanh(s / 2.0)) < 1e-12

    def test_norm_below_one_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            v = rng.uniform(-30, 30, size=4)
            y = hyp.pb_fc_from_logits(v)
            assert np.sum(y * y) < 1.0

    def test_defining_relation_readback(self):
        # reading the output back through the signed-distance form recovers v_k
        rng = np.random.default_rng(8)
        for _ in range(20):
            v = rng.standard_normal(5) * 2.0
            y = hyp.pb_fc_from_logits(v)
            back = np.arcsinh(2.0 * y / (1.0 - np.sum(y * y)))
            assert rel_err(back, v) < 1e-8

    def test_vjp(self):
        rng = np.random.default_rng(9)
        v = rng.standard_normal(4)
        g = rng.standard_normal(4)
        got = hyp.pb_fc_from_logits_vjp(v, g)
        fd = fd_grad_free(lambda w: np.sum(hyp.pb_fc_from_logits(w) * g), v)
        assert rel_err(got, fd) < 1e-6


class TestBetaOps:
    def test_single_part_identity(self):
        rng = np.random.default_rng(10)
        p = rand_ball(4, rng)
        assert np.abs(hyp.beta_concat([p]) - p).max() < 1e-12

    def test_zero_parts(self):
        out = hyp.beta_concat([np.zeros(2), np.zeros(3)])
        assert np.array_equal(out, np.zeros(5))

    def test_concat_split_roundtrip(self):
        rng = np.random.default_rng(11)
        parts = [rand_ball(d, rng) for d in (1, 3, 2, 5)]
        y = hyp.beta_concat(parts)
        back = hyp.beta_split(y, [1, 3, 2, 5])
        for a, b in zip(parts, back):
            assert np.abs(a - b).max() < 1e-10

    def test_order_invariance_grid(self):
        # two-stage (rows then all) versus one-shot concatenation on a 2x3 grid
        rng = np.random.default_rng(12)
        grid = [[rand_ball(d, rng) for d in (2, 4, 6)] for _ in range(2)]
        flat = [p for row in grid for p in row]
        oneshot = hyp.beta_concat(flat)
        rows = [hyp.beta_concat(row) for row in grid]
        twostage = hyp.beta_concat(rows)
        assert np.abs(oneshot - twostage).max() < 1e-10

    def test_split_order_invariance(self):
        rng = np.random.default_rng(13)
        y = rand_ball(24, rng)
        dims = [2, 4, 6, 2, 4, 6]
        oneshot = hyp.beta_split(y, dims)
        halves = hyp.beta_split(y, [12, 12])
        twostage = hyp.beta_split(halves[0], [2, 4, 6]) + hyp.beta_split(halves[1], [2, 4, 6])
        for a, b in zip(oneshot, twostage):
            assert np.abs(a - b).max() < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            hyp.beta_split(np.zeros(5), [2, 2])

    def test_vjps(self):
        rng = np.random.default_rng(14)
        parts = [rand_ball(d, rng, 0.6) for d in (2, 3)]
        g = rng.standard_normal(5)
        grads = hyp.beta_concat_vjp(parts, g)
        for k in range(2):
            def loss(p, k=k):
                ps = [p if i == k else parts[i] for i in range(2)]
                return np.sum(hyp.beta_concat(ps) * g)
            assert rel_err(grads[k], fd_grad_free(loss, parts[k])) < 1e-6
        y = rand_ball(5, rng, 0.6)
        gparts = [rng.standard_normal(2), rng.standard_normal(3)]
        got = hyp.beta_split_vjp(y, [2, 3], gparts)
        fd = fd_grad_free(
            lambda q: sum(np.sum(a * b) for a, b in zip(hyp.beta_split(q, [2, 3]), gparts)), y
        )
        assert rel_err(got, fd) < 1e-6


class TestCorPpb:
    def test_identity_maps_to_zeros(self):
        parts, _ = hyp.cor_to_ppb(np.eye(4))
        for p in parts:
            assert np.abs(p).max() < 1e-14

    def test_two_by_two_hand_value(self):
        r = 0.6
        parts, _ = hyp.cor_to_ppb(np.array([[1.0, r], [r, 1.0]]))
        assert len(parts) == 1
        assert abs(parts[0][0] - 1.0 / 3.0) < 1e-12

    def test_roundtrip(self):
        for seed in range(10):
            c = dom.random_correlation(6, 1.0, rng=seed)
            parts, _ = hyp.cor_to_ppb(c)
            assert all(hyp.in_ball(p) for p in parts)
            back = hyp.ppb_to_cor(parts)
            assert np.abs(back - c).max() < 1e-9

    def test_vjps(self):
        rng = np.random.default_rng(15)
        c = dom.random_correlation(4, 1.0, rng=16)
        parts, l = hyp.cor_to_ppb(c)
        gparts = [rng.standard_normal(i) for i in (1, 2, 3)]

        def loss(cm):
            ps, _ = hyp.cor_to_ppb(cm)
            return sum(np.sum(a * b) for a, b in zip(ps, gparts))

        g = hyp.cor_to_ppb_vjp(l, gparts)
        from helpers import fd_grad_sym, sym_adjoint_as_fd
        fd = fd_grad_sym(loss, c)
        np.fill_diagonal(fd, 0.0)
        got = sym_adjoint_as_fd(g)
        np.fill_diagonal(got, 0.0)
        assert rel_err(got, fd) < 1e-6

        gc = np.asarray(rng.standard_normal((4, 4)))
        gc = (gc + gc.T) / 2

        def loss2(flat):
            ps = [flat[:1], flat[1:3], flat[3:6]]
            return np.sum(hyp.ppb_to_cor(ps) * gc)

        flat0 = np.concatenate(parts)
        got = hyp.ppb_to_cor_vjp(parts, l, gc)
        fd = fd_grad_free(loss2, flat0)
        assert rel_err(np.concatenate(got), fd) < 1e-6
