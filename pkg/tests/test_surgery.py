import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtbert import autodiff as ad
from mtbert.autodiff import Tensor
from mtbert.errors import ContractError
from mtbert.surgery import AdamW, GradientSet, NonFiniteGradient, PairedLosses, adam_update, make_layout, \
    paired_step, pcgrad_project, surgered_gradients


def gs(task, vec):
    v = np.asarray(vec, dtype=np.float64)
    return GradientSet(task, v, {"p": (0, v.size)})


def project(g1, g2, seed=0):
    a, b = pcgrad_project([gs("a", g1), gs("b", g2)], np.random.default_rng(seed))
    return a.flat, b.flat


class TestPcgradProject:
    def test_non_conflicting_unchanged(self):
        a, b = project([1.0, 2.0], [3.0, 0.5])
        np.testing.assert_array_equal(a, [1.0, 2.0])
        np.testing.assert_array_equal(b, [3.0, 0.5])

    def test_worked_example(self):
        a, _ = project([1.0, 0.0], [-1.0, 1.0])
        np.testing.assert_allclose(a, [0.5, 0.5], atol=1e-15)

    def test_anti_parallel_annihilates(self):
        a, b = project([1.0, -2.0, 3.0], [-1.0, 2.0, -3.0])
        np.testing.assert_allclose(a, 0.0, atol=1e-15)
        np.testing.assert_allclose(b, 0.0, atol=1e-15)

    def test_inputs_not_modified(self):
        g1, g2 = gs("a", [1.0, 0.0]), gs("b", [-1.0, 1.0])
        pcgrad_project([g1, g2], np.random.default_rng(0))
        np.testing.assert_array_equal(g1.flat, [1.0, 0.0])

    def test_uses_original_partner(self):
        # against original partners g0 ends at (0.5, 0.5) or (0.5, 0) depending on visiting order;
        # against g1 already projected onto (0, 1) it would stay (1, 0)
        G = [np.array([1.0, 0.0]), np.array([-1.0, 1.0]), np.array([0.0, -1.0])]
        seen = set()
        for seed in range(12):
            out = pcgrad_project([gs(str(i), g) for i, g in enumerate(G)], np.random.default_rng(seed))
            seen.add(tuple(np.round(out[0].flat, 12)))
        assert seen == {(0.5, 0.5), (0.5, 0.0)}

    def test_zero_norm_skipped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            a, b = project([1.0, 2.0], [0.0, 0.0])
        np.testing.assert_array_equal(a, [1.0, 2.0])
        assert "zero-norm" in caplog.text

    def test_needs_two(self):
        with pytest.raises(ContractError):
            pcgrad_project([gs("a", [1.0])], np.random.default_rng(0))

    def test_layout_mismatch(self):
        other = GradientSet("b", np.ones(2), {"q": (0, 2)})
        with pytest.raises(ContractError):
            pcgrad_project([gs("a", [1.0, 1.0]), other], np.random.default_rng(0))

    @given(arrays(np.float64, 20, elements=st.floats(-10, 10)), arrays(np.float64, 20, elements=st.floats(-10, 10)))
    @settings(max_examples=200)
    def test_two_task_invariants(self, g1, g2):
        a, b = project(g1, g2)
        if np.dot(g1, g2) >= 0:
            assert np.array_equal(a, g1) and np.array_equal(b, g2)
        else:
            scale = 1e-9 * (1 + np.linalg.norm(g1) * np.linalg.norm(g2))
            assert np.dot(a, g2) >= -scale and np.dot(b, g1) >= -scale
            assert np.linalg.norm(a) <= np.linalg.norm(g1) + 1e-12
            assert np.linalg.norm(b) <= np.linalg.norm(g2) + 1e-12

    @given(arrays(np.float64, 10, elements=st.floats(-5, 5)), arrays(np.float64, 10, elements=st.floats(-5, 5)))
    def test_idempotent_when_resolved(self, g1, g2):
        a, b = project(g1, g2)
        if np.dot(a, b) >= 0:
            a2, b2 = project(a, b)
            np.testing.assert_array_equal(a2, a)
            np.testing.assert_array_equal(b2, b)


def linear_losses(vecs, params):
    """Loss i = v_i . shared + v_i . head_i, so each gradient is known in closed form."""
    out = []
    for i, v in enumerate(vecs):
        out.append(ad.add(ad.sum(ad.mul(params["shared.w"], v)), ad.sum(ad.mul(params[f"head{i}.w"], v))))
    return out


def make_params(d=4, n=3):
    p = {"shared.w": Tensor(np.zeros(d), True)}
    for i in range(n):
        p[f"head{i}.w"] = Tensor(np.zeros(d), True)
    return p


class TestSurgeredGradients:
    def test_orthogonal_pairs_equal_naive_plus_extra_lp(self):
        a, b, c = np.eye(4)[0], np.eye(4)[1], np.eye(4)[2]
        p = make_params()
        sst, para, sts = linear_losses([a, b, c], p)
        rng = np.random.default_rng(0)
        paired = surgered_gradients(p, [(sst, para), (sts, para)], rng, "pcgrad-paired")
        naive = surgered_gradients(p, [(sst, para), (sts, para)], rng, "naive-sum")
        np.testing.assert_array_equal(paired["shared.w"], naive["shared.w"] + b)
        for i in range(3):
            np.testing.assert_array_equal(paired[f"head{i}.w"], naive[f"head{i}.w"])

    def test_head_params_get_raw_gradient(self):
        p = make_params()
        a = np.array([1.0, 0, 0, 0])
        b = np.array([-1.0, 1.0, 0, 0])
        sst, para, sts = linear_losses([a, b, np.zeros(4)], p)
        g = surgered_gradients(p, [(sst, para), (sts, para)], np.random.default_rng(0))
        np.testing.assert_array_equal(g["head0.w"], a)
        np.testing.assert_array_equal(g["head1.w"], b)

    def test_zeroed_pair2_equals_single_pair(self):
        p = make_params()
        rng_vecs = np.random.default_rng(5)
        sst, para, sts = linear_losses([rng_vecs.normal(size=4) for _ in range(3)], p)
        z1, z2 = ad.scale(sts, 0.0), ad.scale(para, 0.0)
        both = surgered_gradients(p, [(sst, para), (z1, z2)], np.random.default_rng(9))
        single = surgered_gradients(p, [(sst, para)], np.random.default_rng(9))
        for n in p:
            np.testing.assert_array_equal(both[n], single[n])

    def test_missing_loss(self):
        p = make_params()
        sst, para, _ = linear_losses([np.ones(4)] * 3, p)
        with pytest.raises(ContractError):
            surgered_gradients(p, [(sst, None)], np.random.default_rng(0))

    def test_unknown_mode(self):
        p = make_params()
        sst, para, _ = linear_losses([np.ones(4)] * 3, p)
        with pytest.raises(ContractError):
            surgered_gradients(p, [(sst, para)], np.random.default_rng(0), "cagrad")

    def test_halve_paraphrase(self):
        a, b, c = np.eye(4)[0], np.eye(4)[1], np.eye(4)[2]
        p = make_params()
        sst, para, sts = linear_losses([a, b, c], p)
        g = surgered_gradients(p, [(sst, para), (sts, para)], np.random.default_rng(0), halve_paraphrase=True)
        np.testing.assert_array_equal(g["shared.w"], a + b + c)


class TestPairedStep:
    def test_zero_losses_pure_decay(self):
        p = {"shared.w": Tensor(np.array([1.0, -2.0]), True), "head0.w": Tensor(np.array([3.0]), True)}
        zero = lambda: ad.scale(ad.add(ad.sum(p["shared.w"]), ad.sum(p["head0.w"])), 0.0)
        losses = PairedLosses((zero(), zero()), (zero(), zero()))
        opt = AdamW(lr=0.1, weight_decay=0.01)
        paired_step(p, losses, opt, np.random.default_rng(0))
        np.testing.assert_allclose(p["shared.w"].data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.01))
        np.testing.assert_allclose(p["head0.w"].data, [3.0 * (1 - 0.1 * 0.01)])

    def test_from_bundle_pairs(self):
        class B:
            L_SST, L_P, L_STS = Tensor(1.0), Tensor(2.0), Tensor(3.0)
        pl = PairedLosses.from_bundle(B)
        assert pl.pair1[1] is pl.pair2[1] is B.L_P


class TestAdam:
    def test_zero_grad_no_decay(self):
        p = {"w": Tensor(np.array([1.0, 2.0]))}
        adam_update(p, {"w": np.zeros(2)}, AdamW(), lr=1e-3)
        np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])

    def test_pure_decay(self):
        p = {"w": Tensor(np.array([1.0, 2.0]))}
        adam_update(p, {"w": np.zeros(2)}, AdamW(), lr=1.0, weight_decay=0.1)
        np.testing.assert_allclose(p["w"].data, [0.9, 1.8])

    def test_first_step_magnitude(self):
        p = {"w": Tensor(np.array([0.5]))}
        lr = 1e-3
        adam_update(p, {"w": np.ones(1)}, AdamW(), lr=lr)
        # m_hat = v_hat = 1 after bias correction: step = lr * 1 / (1 + eps)
        np.testing.assert_allclose(p["w"].data, [0.5 - lr / (1.0 + 1e-8)], rtol=0, atol=1e-15)

    def test_non_finite_aborts_before_update(self):
        p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
        state = AdamW()
        with pytest.raises(NonFiniteGradient, match="'b'"):
            adam_update(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, state, lr=0.1)
        np.testing.assert_array_equal(p["a"].data, np.ones(2))
        assert state.step_count == 0


def test_make_layout_offsets():
    p = {"a": Tensor(np.zeros((2, 3))), "b": Tensor(np.zeros(4))}
    assert make_layout(p, ["a", "b"]) == {"a": (0, 6), "b": (6, 4)}
