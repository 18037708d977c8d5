import numpy as np
import pytest

from gliomil import autodiff as ad
from gliomil.autodiff import Tensor
from gliomil.gradcheck import grad_check
from gliomil.heads import (
    correlation_loss,
    fusion_classify,
    graph_mix,
    histology_forward,
    init_histology,
    init_molecular,
    molecular_forward,
)
from gliomil.synth import estimate_cooccurrence

from helpers import collect_tensors, make_param


def rand_feats(seed, n=3, k=4, count=3):
    rng = np.random.default_rng(seed)
    return tuple(Tensor(rng.normal(size=(n, k))) for _ in range(count))


class TestGraphMix:
    def test_matches_direct_einsum(self):
        rng = np.random.default_rng(0)
        feats = rand_feats(1, n=2, k=2)
        a = estimate_cooccurrence(np.array([[1, 1, 0], [1, 0, 0], [0, 0, 0], [1, 1, 0]])).a
        w = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        alpha = 0.5
        out = graph_mix(feats, a, w, alpha)
        stacked = np.stack([f.data for f in feats])
        mid = np.maximum(np.einsum("ij,jnk,kl->inl", a, stacked, w.data), 0.0)
        expect = alpha * mid + (1 - alpha) * stacked
        for i in range(3):
            assert np.allclose(out[i].data, expect[i], atol=1e-12)

    def test_alpha_zero_returns_input(self):
        feats = rand_feats(2)
        w = Tensor(np.random.default_rng(3).normal(size=(4, 4)))
        out = graph_mix(feats, np.eye(3), w, 0.0)
        for f_in, f_out in zip(feats, out):
            assert np.array_equal(f_out.data, f_in.data)

    def test_alpha_one_returns_pure_graph_output(self):
        feats = rand_feats(4)
        w = Tensor(np.random.default_rng(5).normal(size=(4, 4)))
        a = np.full((3, 3), 0.5)
        out = graph_mix(feats, a, w, 1.0)
        stacked = np.stack([f.data for f in feats])
        mid = np.maximum(np.einsum("ij,jnk,kl->inl", a, stacked, w.data), 0.0)
        for i in range(3):
            assert np.allclose(out[i].data, mid[i], atol=1e-12)

    def test_rejects_bad_adjacency(self):
        with pytest.raises(ValueError, match="3x3"):
            graph_mix(rand_feats(6), np.eye(2), Tensor(np.eye(4)), 0.5)


class TestCorrelationLoss:
    def test_zero_when_cosines_equal_adjacency(self):
        # identical blocks have pairwise cosine 1 everywhere; an all-ones
        # adjacency (all markers always jointly positive) matches exactly
        f = Tensor(np.random.default_rng(7).normal(size=(3, 4)))
        loss = correlation_loss((f, f, f), np.ones((3, 3)))
        assert loss.item() <= 1e-12

    def test_matches_directly_computed_cosine_table(self):
        f0 = Tensor(np.array([[1.0, 0.0]]))
        f1 = Tensor(np.array([[0.0, 1.0]]))
        a = np.eye(3)
        a[0, 1] = a[1, 0] = 0.3
        loss = correlation_loss((f0, f1, f0), a)
        cos = np.array([
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
        ])
        assert loss.item() == pytest.approx(np.mean((cos - a) ** 2), abs=1e-12)

    def test_uniform_gap_value(self):
        # every cosine exactly matches except one symmetric pair off by 0.3
        f0 = Tensor(np.array([[1.0, 0.0]]))
        f1 = Tensor(np.array([[1.0, 0.0]]))
        f2 = Tensor(np.array([[1.0, 1.0]]) / np.sqrt(2.0))
        a = np.ones((3, 3))
        a[0, 2] = a[2, 0] = np.cos(np.pi / 4) - 0.3
        a[1, 2] = a[2, 1] = np.cos(np.pi / 4)
        loss = correlation_loss((f0, f1, f2), a)
        assert loss.item() == pytest.approx(2 * 0.3**2 / 9, abs=1e-12)

    def test_zero_norm_block_counts_as_zero_cosine(self):
        f0 = Tensor(np.zeros((2, 2)))
        f1 = Tensor(np.ones((2, 2)))
        a = np.zeros((3, 3))
        loss = correlation_loss((f0, f1, f1), a)
        # nonzero entries: cos(1,1)=cos(2,2)=cos(1,2)=cos(2,1)=1 vs 0
        assert loss.item() == pytest.approx(4 / 9, abs=1e-12)

    def test_bounded_by_four(self):
        for seed in range(10):
            feats = rand_feats(seed)
            a = np.random.default_rng(seed).uniform(0, 1, size=(3, 3))
            a = 0.5 * (a + a.T)
            assert 0.0 <= correlation_loss(feats, a).item() <= 4.0


class TestMolecularForward:
    def test_shapes_and_branch_count(self):
        p = init_molecular(np.random.default_rng(8), 4, make_param)
        feats = Tensor(np.random.default_rng(9).normal(size=(6, 4)))
        state = molecular_forward(feats, np.eye(3), p, alpha=0.5)
        assert len(state.feats_in) == len(state.feats_out) == 3
        for f in state.feats_in + state.feats_out:
            assert f.data.shape == (6, 4)
        for z, a, lg in zip(state.pooled, state.attn, state.logits):
            assert z.data.shape == (1, 4) and a.data.shape == (6, 1) and lg.data.shape == (1, 2)

    def test_branches_consume_each_other_in_sequence(self):
        """Later branches run on earlier refinements, so corrupting the first
        branch's blocks must change the later branches' features too."""
        rng = np.random.default_rng(10)
        p = init_molecular(rng, 4, make_param)
        feats = Tensor(rng.normal(size=(5, 4)))
        before = molecular_forward(feats, np.eye(3), p, alpha=0.5)
        p.idh.blocks[0].wo.data += 1.0
        after = molecular_forward(feats, np.eye(3), p, alpha=0.5)
        for i in range(3):
            assert not np.allclose(before.feats_in[i].data, after.feats_in[i].data)

    def test_no_graph_passes_features_through(self):
        rng = np.random.default_rng(11)
        p = init_molecular(rng, 4, make_param)
        feats = Tensor(rng.normal(size=(5, 4)))
        state = molecular_forward(feats, np.eye(3), p, alpha=0.5, use_graph=False)
        for f_in, f_out in zip(state.feats_in, state.feats_out):
            assert f_in is f_out

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        p = init_molecular(rng, 3, make_param)
        feats = Tensor(rng.uniform(-1, 1, size=(4, 3)))
        a = np.full((3, 3), 0.4) + 0.6 * np.eye(3)
        params = collect_tensors(p)

        def f():
            state = molecular_forward(feats, a, p, alpha=0.5)
            loss = correlation_loss(state.feats_out, a)
            for i, lg in enumerate(state.logits):
                loss = ad.add(loss, ad.softmax_cross_entropy(lg, i % 2))
            return loss

        report = grad_check(f, params)
        assert report.passed, report.summary()


class TestHistologyAndFusion:
    def test_histology_shapes(self):
        p = init_histology(np.random.default_rng(13), 4, make_param)
        state = histology_forward(Tensor(np.random.default_rng(14).normal(size=(7, 4))), p)
        assert state.feats.data.shape == (7, 4)
        assert state.pooled.data.shape == (1, 4)
        assert state.attn.data.shape == (7, 1)
        assert state.logits.data.shape == (1, 2)

    def test_histology_permutation_invariant_summary(self):
        rng = np.random.default_rng(15)
        p = init_histology(rng, 4, make_param)
        x = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        a = histology_forward(Tensor(x), p)
        b = histology_forward(Tensor(x[perm]), p)
        assert np.allclose(a.pooled.data, b.pooled.data, atol=1e-10)
        assert np.allclose(a.logits.data, b.logits.data, atol=1e-10)

    def test_fusion_zero_weights_give_uniform(self):
        rng = np.random.default_rng(16)
        pooled_his = Tensor(rng.normal(size=(1, 4)))
        pooled_mol = tuple(Tensor(rng.normal(size=(1, 4))) for _ in range(3))
        logits = fusion_classify(pooled_his, pooled_mol, Tensor(np.zeros((8, 4))),
                                 Tensor(np.zeros((1, 4))))
        probs = ad.softmax(logits, axis=1).data.ravel()
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_fusion_uses_mean_of_marker_summaries(self):
        rng = np.random.default_rng(17)
        w = Tensor(rng.normal(size=(8, 4)))
        b = Tensor(np.zeros((1, 4)))
        pooled_his = Tensor(rng.normal(size=(1, 4)))
        pooled_mol = tuple(Tensor(rng.normal(size=(1, 4))) for _ in range(3))
        out = fusion_classify(pooled_his, pooled_mol, w, b)
        mol_mean = np.mean([z.data for z in pooled_mol], axis=0)
        joint = np.concatenate([pooled_his.data, mol_mean], axis=1)
        assert np.allclose(out.data, joint @ w.data, atol=1e-12)
