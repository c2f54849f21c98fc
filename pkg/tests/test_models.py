"""Tests for WSim / WSim-MT scoring, losses, and analytic gradients."""

import math

import numpy as np
import pytest

from microrank.dataset import PooledAccount
from microrank.errors import ShapeError, UsageError
from microrank.models import (
    WSimMTParams,
    WSimParams,
    classify_category,
    embed_rows,
    init_wsim,
    init_wsimmt,
    listwise_loss,
    load_checkpoint,
    make_scorer,
    multitask_loss,
    save_checkpoint,
    score_candidates,
    wsim_loss_and_grads,
    wsim_score,
    wsimmt_embed,
    wsimmt_score,
)
from microrank.numcore import DenseLayer, dense_forward, grad_check, softmax
from microrank.sampler import Pool, PoolPlan, build_pools

from conftest import build_dataset

# exp(-800) underflows to exactly 0, so these alpha vectors realize the
# limiting mixture weights exactly through the softmax reparameterization.
ALPHA_TV_ONLY = np.array([0.0, 0.0, -800.0])      # weights (0.5, 0.5, 0)
ALPHA_ENG_ONLY = np.array([-800.0, -800.0, 0.0])  # weights (0, 0, 1)


def account(aid, kind, cat, text, visual, engagement=0.0):
    return PooledAccount(id=aid, kind=kind, category=cat,
                         text_pooled=np.asarray(text, float),
                         visual_pooled=np.asarray(visual, float),
                         engagement=engagement)


class TestWSimScore:
    def test_identity_bilinear_is_dot_product(self):
        params = WSimParams(np.ones(2), np.ones(2), ALPHA_TV_ONLY)
        b = account("b", "brand", "c", [1.0, 0.0], [0.0, 1.0])
        i = account("i", "influencer", "c", [1.0, 0.0], [0.0, 1.0], engagement=0.7)
        assert wsim_score(params, b, i) == pytest.approx(1.0, abs=1e-15)

    def test_engagement_only_limit(self):
        params = WSimParams(np.ones(2), np.ones(2), ALPHA_ENG_ONLY)
        b = account("b", "brand", "c", [3.0, -1.0], [2.0, 2.0])
        i = account("i", "influencer", "c", [5.0, 5.0], [1.0, -4.0], engagement=0.37)
        assert wsim_score(params, b, i) == pytest.approx(0.37, abs=1e-15)

    def test_matches_per_term_summation_oracle(self):
        rng = np.random.default_rng(12)
        d_t, d_v = 5, 7
        params = WSimParams(rng.normal(size=d_t), rng.normal(size=d_v),
                            rng.normal(size=3))
        b = account("b", "brand", "c", rng.normal(size=d_t), rng.normal(size=d_v))
        i = account("i", "influencer", "c", rng.normal(size=d_t),
                    rng.normal(size=d_v), engagement=0.42)
        s_t = sum(params.wt_diag[j] * b.text_pooled[j] * i.text_pooled[j]
                  for j in range(d_t))
        s_v = sum(params.wv_diag[j] * b.visual_pooled[j] * i.visual_pooled[j]
                  for j in range(d_v))
        w = np.exp(params.alpha - params.alpha.max())
        w = w / w.sum()
        expected = w[0] * s_t + w[1] * s_v + w[2] * i.engagement
        assert wsim_score(params, b, i) == pytest.approx(expected, rel=1e-12)

    def test_dim_mismatch(self):
        params = init_wsim(3, 4)
        b = account("b", "brand", "c", [1.0, 2.0], np.zeros(4))
        i = account("i", "influencer", "c", np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            wsim_score(params, b, i)

    def test_simplex_invariant_for_any_alpha(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            params = WSimParams(np.ones(2), np.ones(2), rng.normal(scale=10, size=3))
            w = params.mixture_weights
            assert abs(w.sum() - 1.0) < 1e-12
            assert np.all(w >= 0)

    def test_scale_identity(self):
        # Doubling the diagonals while halving one side's embeddings
        # leaves the bilinear scores unchanged.
        rng = np.random.default_rng(5)
        params = WSimParams(rng.normal(size=4), rng.normal(size=6), rng.normal(size=3))
        doubled = WSimParams(2 * params.wt_diag, 2 * params.wv_diag, params.alpha)
        b = account("b", "brand", "c", rng.normal(size=4), rng.normal(size=6))
        b_half = account("b", "brand", "c", b.text_pooled / 2, b.visual_pooled / 2)
        i = account("i", "influencer", "c", rng.normal(size=4), rng.normal(size=6),
                    engagement=0.3)
        assert wsim_score(doubled, b_half, i) == pytest.approx(
            wsim_score(params, b, i), rel=1e-12)


def rigged_mt_params(d_t, d_v, d_r, n_cat, out_value=1.0):
    """Encoders with zero weights and constant-output biases."""
    def stack(d_in, value):
        return [
            DenseLayer(np.zeros((4, d_in)), np.zeros(4), "relu"),
            DenseLayer(np.zeros((4, 4)), np.zeros(4), "relu"),
            DenseLayer(np.zeros((d_r, 4)), np.full(d_r, value), "identity"),
        ]
    return WSimMTParams(stack(d_t, out_value), stack(d_v, 1.0),
                        np.eye(d_r), 0.0,
                        DenseLayer(np.zeros((n_cat, d_r)), np.zeros(n_cat), "softmax"))


class TestWSimMT:
    def test_rigged_encoders_give_ones(self):
        params = rigged_mt_params(3, 5, 4, 2)
        acc = account("a", "brand", "c", np.ones(3), np.ones(5))
        np.testing.assert_array_equal(wsimmt_embed(params, acc), np.ones(4))

    def test_zero_text_encoder_absorbs(self):
        params = rigged_mt_params(3, 5, 4, 2, out_value=0.0)
        acc = account("a", "brand", "c", np.ones(3), np.ones(5))
        np.testing.assert_array_equal(wsimmt_embed(params, acc), np.zeros(4))

    def test_embed_matches_dense_forward_composition(self):
        rng = np.random.default_rng(21)
        params = init_wsimmt(rng, 6, 9, 4, (5, 4), (7, 5), 3)
        acc = account("a", "influencer", "c", rng.normal(size=6), rng.normal(size=9))
        x = acc.text_pooled
        for layer in params.f_layers:
            x, _ = dense_forward(layer, x)
        v = acc.visual_pooled
        for layer in params.g_layers:
            v, _ = dense_forward(layer, v)
        np.testing.assert_array_equal(wsimmt_embed(params, acc), x * v)

    def test_identity_core_all_ones(self):
        params = rigged_mt_params(3, 5, 4, 2)
        params.alpha_e = -800.0  # w_e -> 0 exactly
        b = account("b", "brand", "c", np.ones(3), np.ones(5))
        i = account("i", "influencer", "c", np.ones(3), np.ones(5), engagement=0.9)
        assert wsimmt_score(params, b, i) == pytest.approx(4.0, abs=1e-15)

    def test_engagement_only_limit(self):
        params = rigged_mt_params(3, 5, 4, 2)
        params.alpha_e = 800.0  # w_e -> 1 exactly
        b = account("b", "brand", "c", np.ones(3), np.ones(5))
        i = account("i", "influencer", "c", np.ones(3), np.ones(5), engagement=0.25)
        assert wsimmt_score(params, b, i) == pytest.approx(0.25, abs=1e-15)

    def test_score_matches_matvec_oracle(self):
        rng = np.random.default_rng(31)
        params = init_wsimmt(rng, 4, 6, 5, (6, 5), (6, 5), 2)
        params.wr = rng.normal(size=(5, 5))
        params.alpha_e = 0.3
        b = account("b", "brand", "c", rng.normal(size=4), rng.normal(size=6))
        i = account("i", "influencer", "c", rng.normal(size=4), rng.normal(size=6),
                    engagement=0.6)
        e_b = wsimmt_embed(params, b)
        e_i = wsimmt_embed(params, i)
        bilinear = sum(e_b[a] * params.wr[a, c] * e_i[c]
                       for a in range(5) for c in range(5))
        w_e = 1.0 / (1.0 + math.exp(-0.3))
        expected = (1 - w_e) * bilinear + w_e * 0.6
        assert wsimmt_score(params, b, i) == pytest.approx(expected, rel=1e-12)

    def test_encoder_sharing_is_role_symmetric(self):
        # Same account embeds identically whether used as brand or candidate.
        rng = np.random.default_rng(41)
        params = init_wsimmt(rng, 4, 6, 5, (6, 5), (6, 5), 2)
        a = account("x", "brand", "c", rng.normal(size=4), rng.normal(size=6),
                    engagement=0.5)
        b = account("y", "influencer", "c", a.text_pooled.copy(),
                    a.visual_pooled.copy(), engagement=0.5)
        assert params.f_layers is params.f_layers  # one shared parameter set
        np.testing.assert_array_equal(wsimmt_embed(params, a), wsimmt_embed(params, b))
        assert wsimmt_score(params, a, b) == pytest.approx(wsimmt_score(params, b, a))


class TestListwiseLoss:
    def test_uniform_single_positive_k4(self):
        z = np.zeros(4)
        y = np.array([1.0, 0.0, 0.0, 0.0])
        assert listwise_loss(z, y) == pytest.approx(math.log(4), abs=1e-12)

    def test_confident_correct_is_near_zero(self):
        z = np.array([50.0, -50.0, -50.0])
        y = np.array([1.0, 0.0, 0.0])
        assert listwise_loss(z, y) == pytest.approx(0.0, abs=1e-12)

    def test_matches_numcore_composition(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=6)
        y = rng.random(6)
        y /= y.sum()
        from microrank.numcore import cross_entropy
        assert listwise_loss(z, y) == cross_entropy(y, softmax(z))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            listwise_loss(np.zeros(3), np.array([1.0, 0.0]))

    def test_monotonicity_of_top_one_probability(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=5)
        p = softmax(z)
        for i in range(5):
            z2 = z.copy()
            z2[i] += 0.1
            assert softmax(z2)[i] > p[i]


class TestClassifier:
    def test_zero_weights_uniform(self):
        params = rigged_mt_params(3, 5, 4, 6)
        probs = classify_category(params, np.ones(4))
        np.testing.assert_allclose(probs, np.full(6, 1 / 6), atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        params = init_wsimmt(rng, 3, 5, 4, (4, 4), (4, 4), 5)
        for _ in range(20):
            probs = classify_category(params, rng.normal(size=4))
            assert abs(probs.sum() - 1.0) < 1e-12

    def test_matches_dense_forward(self):
        rng = np.random.default_rng(4)
        params = init_wsimmt(rng, 3, 5, 4, (4, 4), (4, 4), 5)
        e = rng.normal(size=4)
        expected, _ = dense_forward(params.h_layer, e)
        np.testing.assert_array_equal(classify_category(params, e), expected)


def grad_check_dataset(d_t=8, d_v=12):
    return build_dataset(n_categories=3, brands_per_cat=2, influencers_per_cat=6,
                         positives_per_brand=3, d_t=d_t, d_v=d_v,
                         s1=1, s2=4, f_n=3, seed=13)


def one_pool(ds, k=4, seed=0):
    brand = ds.brands[0]
    return build_pools(brand, ds.positives(brand), ds.negatives(brand),
                       PoolPlan(k=k), np.random.default_rng(seed))[0]


class TestLossGradients:
    def test_wsim_gradients_match_finite_differences(self):
        ds = grad_check_dataset()
        pool = one_pool(ds)
        params = init_wsim(ds.d_t, ds.d_v)
        base = params.with_vector(params.to_vector() +
                                  np.random.default_rng(7).normal(scale=0.3,
                                                                  size=params.n_params))

        def f(vec):
            return wsim_loss_and_grads(base.with_vector(vec), pool, ds)

        assert grad_check(f, base.to_vector(), h=1e-5) < 1e-4

    def test_multitask_gradients_match_finite_differences(self):
        ds = grad_check_dataset()
        pool = one_pool(ds)
        params = init_wsimmt(np.random.default_rng(19), ds.d_t, ds.d_v, 6,
                             (10, 8), (10, 8), len(ds.categories))

        def f(vec):
            return multitask_loss(params.with_vector(vec), pool, ds,
                                  lam=0.5, gamma=0.5, training=False)

        assert grad_check(f, params.to_vector(), h=1e-5) < 1e-4

    def test_saturated_pool_has_vanishing_gradient(self):
        ds = grad_check_dataset()
        pool = one_pool(ds)
        params = init_wsim(ds.d_t, ds.d_v)
        # Blow up the positive's margin by aligning the brand text vector
        # with the first positive and scaling hugely.
        brand = ds.accounts[pool.brand_id]
        pos_id = pool.candidate_ids[int(np.argmax(pool.positive_mask))]
        brand.text_pooled = ds.accounts[pos_id].text_pooled * 1e6
        ds.__dict__.pop("matrices", None)  # rebuild cached arrays
        single = Pool(pool.brand_id, pool.candidate_ids,
                      pool.positive_mask & (np.arange(len(pool.candidate_ids)) ==
                                            int(np.argmax(pool.positive_mask))),
                      None)
        mask = single.positive_mask
        y = mask / mask.sum()
        single = Pool(pool.brand_id, pool.candidate_ids, mask, y)
        _, grads = wsim_loss_and_grads(params, single, ds)
        assert np.linalg.norm(grads) == pytest.approx(0.0, abs=1e-8)

    def test_lambda_gamma_zero_collapses_to_listwise(self):
        ds = grad_check_dataset()
        pool = one_pool(ds)
        params = init_wsimmt(np.random.default_rng(23), ds.d_t, ds.d_v, 6,
                             (10, 8), (10, 8), len(ds.categories))
        total, _ = multitask_loss(params, pool, ds, lam=0.0, gamma=0.0)
        z = score_candidates(params, ds, pool.brand_id, pool.candidate_ids)
        assert total == listwise_loss(z, pool.y)

    def test_perfect_classifier_contributes_nothing(self):
        # All-positive pool from a single-category dataset, classifier
        # biased so hard the correct class gets probability exactly 1.
        ds = build_dataset(n_categories=1, brands_per_cat=1, influencers_per_cat=9,
                           positives_per_brand=4, d_t=4, d_v=6, s1=1, s2=2, f_n=3,
                           seed=3)
        brand = ds.brands[0]
        pools = build_pools(brand, ds.positives(brand), ds.negatives(brand),
                            PoolPlan(k=4), np.random.default_rng(1))
        pool = [p for p in pools if p.positive_mask.all()][0]
        params = init_wsimmt(np.random.default_rng(5), 4, 6, 3, (5, 4), (5, 4), 2)
        params.h_layer = DenseLayer(np.zeros((2, 3)), np.array([800.0, -800.0]),
                                    "softmax")
        with_aux, _ = multitask_loss(params, pool, ds, lam=0.5, gamma=0.5)
        without, _ = multitask_loss(params, pool, ds, lam=0.0, gamma=0.0)
        assert with_aux == without

    def test_negative_lambda_rejected(self):
        ds = grad_check_dataset()
        pool = one_pool(ds)
        params = init_wsimmt(np.random.default_rng(1), ds.d_t, ds.d_v, 6,
                             (10, 8), (10, 8), len(ds.categories))
        with pytest.raises(UsageError):
            multitask_loss(params, pool, ds, lam=-0.1, gamma=0.5)


class TestCosineReduction:
    def test_ranking_equals_cosine_on_normalized_embeddings(self):
        ds = build_dataset(n_categories=2, brands_per_cat=2, influencers_per_cat=8,
                           positives_per_brand=3, d_t=4, d_v=6, s1=1, s2=2, f_n=3,
                           seed=77)
        for acc in ds.accounts.values():
            acc.text_pooled = acc.text_pooled / np.linalg.norm(acc.text_pooled)
            acc.visual_pooled = acc.visual_pooled / np.linalg.norm(acc.visual_pooled)
        ds.__dict__.pop("matrices", None)
        params = WSimParams(np.ones(4), np.ones(6), ALPHA_TV_ONLY)
        brand = ds.brands[0]
        cands = ds.influencers
        z = score_candidates(params, ds, brand, cands)

        b = ds.accounts[brand]
        bcat = np.concatenate([b.text_pooled, b.visual_pooled])
        cosines = []
        for cid in cands:
            c = ds.accounts[cid]
            ccat = np.concatenate([c.text_pooled, c.visual_pooled])
            cosines.append(bcat @ ccat / (np.linalg.norm(bcat) * np.linalg.norm(ccat)))
        assert list(np.argsort(-z)) == list(np.argsort(-np.asarray(cosines)))


class TestScorerAndCheckpoint:
    def test_score_candidates_matches_pairwise(self, tiny_dataset):
        params = init_wsim(tiny_dataset.d_t, tiny_dataset.d_v)
        brand = tiny_dataset.brands[0]
        cands = tiny_dataset.influencers[:5]
        batch = score_candidates(params, tiny_dataset, brand, cands)
        for cid, z in zip(cands, batch):
            assert wsim_score(params, tiny_dataset.accounts[brand],
                              tiny_dataset.accounts[cid]) == pytest.approx(z, rel=1e-12)

    def test_mt_score_candidates_matches_pairwise(self, tiny_dataset):
        rng = np.random.default_rng(9)
        params = init_wsimmt(rng, tiny_dataset.d_t, tiny_dataset.d_v, 4,
                             (5, 4), (5, 4), len(tiny_dataset.categories))
        params.wr = rng.normal(size=(4, 4))
        brand = tiny_dataset.brands[1]
        cands = tiny_dataset.influencers[:4]
        batch = score_candidates(params, tiny_dataset, brand, cands)
        for cid, z in zip(cands, batch):
            direct = wsimmt_score(params, tiny_dataset.accounts[brand],
                                  tiny_dataset.accounts[cid])
            assert direct == pytest.approx(z, rel=1e-10)

    def test_wsim_checkpoint_roundtrip(self, tiny_dataset, tmp_path):
        params = init_wsim(tiny_dataset.d_t, tiny_dataset.d_v)
        params.alpha = np.array([0.3, -0.1, 0.05])
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, tiny_dataset, path)
        loaded, meta = load_checkpoint(path)
        assert meta["model_type"] == "wsim"
        assert meta["dims"]["s1"] == tiny_dataset.s1
        np.testing.assert_array_equal(loaded.to_vector(), params.to_vector())

    def test_mt_checkpoint_roundtrip(self, tiny_dataset, tmp_path):
        params = init_wsimmt(np.random.default_rng(3), tiny_dataset.d_t,
                             tiny_dataset.d_v, 4, (5, 4), (5, 4),
                             len(tiny_dataset.categories))
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, tiny_dataset, path)
        loaded, meta = load_checkpoint(path)
        assert meta["dims"]["d_r"] == 4
        np.testing.assert_array_equal(loaded.to_vector(), params.to_vector())
        assert [l.activation for l in loaded.f_layers] == \
               [l.activation for l in params.f_layers]

    def test_vector_roundtrip(self):
        params = init_wsimmt(np.random.default_rng(2), 4, 6, 3, (5, 4), (5, 4), 3)
        vec = params.to_vector()
        np.testing.assert_array_equal(params.with_vector(vec).to_vector(), vec)

    def test_make_scorer_is_inference_mode(self, tiny_dataset):
        params = init_wsim(tiny_dataset.d_t, tiny_dataset.d_v)
        scorer = make_scorer(params, tiny_dataset)
        brand = tiny_dataset.brands[0]
        a = scorer(brand, tiny_dataset.influencers)
        b = scorer(brand, tiny_dataset.influencers)
        np.testing.assert_array_equal(a, b)
