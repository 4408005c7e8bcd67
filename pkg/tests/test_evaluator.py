import numpy as np
import pytest
import torch

from oracles import naive_metrics, naive_order, random_metric_instance
from shapereid.evaluator import (DescriptorSet, EvalResult, Protocol,
                                 evaluate_descriptors, evaluate_protocol,
                                 evaluate_ranking, extract_descriptors,
                                 l2_normalize, load_descriptors,
                                 pool_tracklets, rank_gallery, seq_pool,
                                 write_descriptors)
from shapereid.manifest import Modality
from shapereid.network import build_model


def _result_equal(res: EvalResult, ref: dict):
    assert np.allclose(res.cmc, ref["cmc"], atol=1e-12)
    assert res.mean_ap == pytest.approx(ref["map"], abs=1e-12)
    assert res.mean_inp == pytest.approx(ref["minp"], abs=1e-12)
    assert res.num_queries == ref["num_queries"]
    assert res.num_excluded == ref["num_excluded"]
    assert np.allclose(res.per_query_ap, ref["per_query_ap"], atol=1e-12)
    assert np.allclose(res.per_query_inp, ref["per_query_inp"], atol=1e-12)


# ---------------------------------------------------------------- ranking

def test_l2_normalize():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    out = l2_normalize(x)
    assert np.allclose(out[0], [0.6, 0.8])
    assert np.all(np.isfinite(out[1]))


def test_rank_gallery_self_hit():
    g = l2_normalize(np.random.default_rng(0).normal(size=(10, 8)))
    q = g[[3]]
    order, dist = rank_gallery(q, g)
    assert order[0, 0] == 3
    assert dist[0, 3] == pytest.approx(0.0, abs=1e-9)


def test_rank_gallery_orthogonal():
    g = np.eye(4)
    q = np.eye(4)[[0]]
    order, dist = rank_gallery(q, g)
    assert dist[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(dist[0, 1:], np.sqrt(2.0), atol=1e-12)
    # ties among the three equidistant vectors break by gallery index
    assert list(order[0]) == [0, 1, 2, 3]


def test_rank_gallery_matches_naive_sort():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(20, 16))
    g = rng.normal(size=(50, 16))
    order, dist = rank_gallery(q, g)
    for i in range(20):
        assert list(order[i]) == naive_order(dist[i])


def test_rank_gallery_tie_break_stable():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    q = np.array([[1.0, 0.0]])
    order, _ = rank_gallery(q, g)
    assert list(order[0]) == [0, 2, 3, 1]


def test_rank_gallery_empty():
    with pytest.raises(ValueError, match="empty gallery"):
        rank_gallery(np.zeros((1, 4)), np.zeros((0, 4)))


# ---------------------------------------------------------------- metrics

def test_cmc_first_positive_rank3():
    order = np.array([[0, 1, 2, 3, 4]])
    g_ids = np.array([7, 8, 5, 5, 9])
    res = evaluate_ranking(order, np.array([5]), g_ids, max_rank=5)
    assert np.allclose(res.cmc, [0, 0, 1, 1, 1])


def test_ap_and_inp_examples():
    # positives at ranks {1, 3}: AP = (1 + 2/3)/2 = 5/6, INP = 2/3
    order = np.array([[0, 1, 2, 3]])
    g_ids = np.array([1, 0, 1, 0])
    res = evaluate_ranking(order, np.array([1]), g_ids)
    assert res.mean_ap == pytest.approx(5.0 / 6.0, abs=1e-12)
    assert res.mean_inp == pytest.approx(2.0 / 3.0, abs=1e-12)
    # single positive at rank 1: AP = 1
    res1 = evaluate_ranking(order, np.array([1]), np.array([1, 0, 0, 0]))
    assert res1.mean_ap == 1.0 and res1.mean_inp == 1.0
    # all positives in the top-|P| ranks: INP = 1 even if AP < 1 is impossible
    res2 = evaluate_ranking(order, np.array([1]), np.array([1, 1, 0, 0]))
    assert res2.mean_inp == 1.0 and res2.mean_ap == 1.0


def test_single_identity_dataset():
    rng = np.random.default_rng(2)
    order = np.stack([rng.permutation(6) for _ in range(4)])
    res = evaluate_ranking(order, np.zeros(4, int), np.zeros(6, int))
    assert np.allclose(res.cmc, 1.0)
    assert res.mean_ap == 1.0 and res.mean_inp == 1.0


def test_excluded_queries_counted():
    order = np.array([[0, 1], [0, 1], [1, 0]])
    q_ids = np.array([0, 3, 1])      # identity 3 has no gallery row
    g_ids = np.array([0, 1])
    res = evaluate_ranking(order, q_ids, g_ids)
    assert res.num_queries == 2
    assert res.num_excluded == 1
    assert res.rank(1) == 1.0


def test_no_valid_queries():
    order = np.array([[0]])
    with pytest.raises(ValueError, match="no query has a gallery positive"):
        evaluate_ranking(order, np.array([1]), np.array([2]))


def test_same_camera_exclusion():
    # rank-1 gallery row is a same-camera hit; with exclusion it is junk and
    # the cross-camera positive at rank 2 becomes rank 1
    order = np.array([[0, 1, 2]])
    g_ids = np.array([5, 5, 6])
    g_cams = np.array([1, 0, 1])
    res = evaluate_ranking(order, np.array([5]), g_ids, np.array([1]), g_cams,
                           exclude_same_camera=True)
    assert res.rank(1) == 1.0 and res.mean_ap == 1.0
    plain = evaluate_ranking(order, np.array([5]), g_ids, np.array([1]), g_cams)
    assert plain.per_query_ap[0] == pytest.approx(1.0, abs=1e-12)
    assert plain.mean_inp == pytest.approx(1.0, abs=1e-12)


def test_metrics_match_naive_oracle():
    rng = np.random.default_rng(3)
    for _ in range(60):
        dist, q_ids, g_ids, q_cams, g_cams = random_metric_instance(rng)
        excl = bool(rng.random() < 0.5)
        ref = naive_metrics(dist, q_ids, g_ids, q_cams, g_cams,
                            exclude_same_camera=excl)
        if ref["num_queries"] == 0:
            continue
        order = np.argsort(dist, axis=1, kind="stable")
        res = evaluate_ranking(order, q_ids, g_ids, q_cams, g_cams,
                               exclude_same_camera=excl)
        _result_equal(res, ref)


def test_invariants_on_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(20):
        dist, q_ids, g_ids, _, _ = random_metric_instance(rng)
        if not any(np.isin(q_ids, g_ids)):
            continue
        order = np.argsort(dist, axis=1, kind="stable")
        res = evaluate_ranking(order, q_ids, g_ids)
        assert np.all(np.diff(res.cmc) >= -1e-12)
        assert np.all((res.cmc >= 0) & (res.cmc <= 1.0 + 1e-12))
        assert 0.0 <= res.mean_ap <= 1.0 and 0.0 <= res.mean_inp <= 1.0
        if res.cmc.shape[0] == dist.shape[1]:
            assert res.cmc[-1] >= res.mean_ap - 1e-12


def test_gallery_permutation_invariance():
    rng = np.random.default_rng(5)
    q = l2_normalize(rng.normal(size=(12, 16)))
    g = l2_normalize(rng.normal(size=(40, 16)))
    q_ids = rng.integers(0, 4, size=12)
    g_ids = rng.integers(0, 4, size=40)
    base = evaluate_descriptors(
        DescriptorSet(q, q_ids, np.zeros(12, int), [Modality.IR] * 12, [None] * 12),
        DescriptorSet(g, g_ids, np.ones(40, int), [Modality.VIS] * 40, [None] * 40),
        Protocol("ir->vis", max_rank=40))
    perm = rng.permutation(40)
    shuf = evaluate_descriptors(
        DescriptorSet(q, q_ids, np.zeros(12, int), [Modality.IR] * 12, [None] * 12),
        DescriptorSet(g[perm], g_ids[perm], np.ones(40, int),
                      [Modality.VIS] * 40, [None] * 40),
        Protocol("ir->vis", max_rank=40))
    assert np.allclose(base.cmc, shuf.cmc, atol=1e-12)
    assert base.mean_ap == pytest.approx(shuf.mean_ap, abs=1e-12)
    assert base.mean_inp == pytest.approx(shuf.mean_inp, abs=1e-12)


def test_rotation_invariance():
    rng = np.random.default_rng(6)
    q = rng.normal(size=(10, 12))
    g = rng.normal(size=(30, 12))
    q_ids = rng.integers(0, 3, size=10)
    g_ids = rng.integers(0, 3, size=30)
    rot, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    o1, _ = rank_gallery(q, g)
    o2, _ = rank_gallery(q @ rot, g @ rot)
    r1 = evaluate_ranking(o1, q_ids, g_ids)
    r2 = evaluate_ranking(o2, q_ids, g_ids)
    assert np.allclose(r1.cmc, r2.cmc, atol=1e-12)
    assert r1.mean_ap == pytest.approx(r2.mean_ap, abs=1e-12)
    assert r1.mean_inp == pytest.approx(r2.mean_inp, abs=1e-12)


# ---------------------------------------------------------- pooling, dumps

def test_seq_pool():
    v = l2_normalize(np.array([[1.0, 2.0, 2.0]]))
    assert np.allclose(seq_pool(v), v[0], atol=1e-12)
    two = np.stack([v[0], v[0]])
    assert np.allclose(seq_pool(two), v[0], atol=1e-12)
    rng = np.random.default_rng(7)
    frames = rng.normal(size=(5, 8))
    hand = frames.mean(axis=0)
    hand = hand / np.linalg.norm(hand)
    assert np.allclose(seq_pool(frames), hand, atol=1e-12)
    with pytest.raises(ValueError, match="at least one frame"):
        seq_pool(np.zeros((0, 8)))


def test_pool_tracklets():
    rng = np.random.default_rng(8)
    vecs = l2_normalize(rng.normal(size=(6, 4)))
    descs = DescriptorSet(vecs, np.array([0, 0, 1, 1, 0, 1]),
                          np.array([0, 0, 1, 1, 0, 1]),
                          [Modality.IR] * 6, [10, 10, 11, 11, 10, 12])
    pooled = pool_tracklets(descs)
    assert len(pooled) == 3
    assert pooled.tracklets == [10, 11, 12]
    assert list(pooled.identities) == [0, 1, 1]
    hand = vecs[[0, 1, 4]].mean(axis=0)
    assert np.allclose(pooled.vectors[0], hand / np.linalg.norm(hand), atol=1e-12)
    bad = DescriptorSet(vecs, descs.identities, descs.cameras,
                        descs.modalities, [10, None, 11, 11, 10, 12])
    with pytest.raises(ValueError, match="without tracklet"):
        pool_tracklets(bad)


def test_eval_result_text_roundtrip():
    res = EvalResult(protocol="ir->vis", cmc=np.array([0.25, 0.5, 1.0]),
                     mean_ap=1 / 3, mean_inp=2 / 7, num_queries=12,
                     num_excluded=1, per_query_ap=np.array([0.1, 0.9]),
                     per_query_inp=np.array([0.2, 0.8]))
    back = EvalResult.from_text(res.to_text())
    assert back.protocol == res.protocol
    assert back.mean_ap == res.mean_ap and back.mean_inp == res.mean_inp
    assert np.array_equal(back.cmc, res.cmc)
    assert np.array_equal(back.per_query_ap, res.per_query_ap)
    assert back.num_queries == 12 and back.num_excluded == 1
    assert res.rank(2) == 0.5
    assert back.to_text() == res.to_text()


def test_descriptor_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    descs = DescriptorSet(l2_normalize(rng.normal(size=(5, 6))),
                          np.array([0, 1, 2, 0, 1]),
                          np.array([0, 1, 0, 1, 0]),
                          [Modality.VIS, Modality.IR, Modality.VIS,
                           Modality.IR, Modality.VIS],
                          [3, None, 4, None, 5])
    path = tmp_path / "desc.tsv"
    write_descriptors(descs, path)
    back = load_descriptors(path)
    assert np.array_equal(back.vectors, descs.vectors)
    assert np.array_equal(back.identities, descs.identities)
    assert np.array_equal(back.cameras, descs.cameras)
    assert back.modalities == descs.modalities
    assert back.tracklets == descs.tracklets


def test_protocol_validation():
    p = Protocol("ir->vis")
    assert p.query_modality is Modality.IR
    assert p.gallery_modality is Modality.VIS
    rev = Protocol("vis->ir")
    assert rev.query_modality is Modality.VIS
    with pytest.raises(ValueError, match="unknown protocol"):
        Protocol("ir->ir")


# ------------------------------------------------------------- extraction

def test_extract_b_setting_descriptor(tiny_ds, mini_bb):
    model = build_model(mini_bb, num_identities=8, setting="B", seed=0)
    descs = extract_descriptors(model, tiny_ds.query)
    assert np.allclose(np.linalg.norm(descs.vectors, axis=1), 1.0, atol=1e-6)
    assert descs.vectors.shape == (16, mini_bb.final_channels)
    # hand path: load, normalize, forward, pool, L2 x2
    from shapereid.evaluator import _image_tensor
    img = _image_tensor(tiny_ds.query, 0, (64, 32), 0.5, 0.5)
    model.eval()
    with torch.no_grad():
        pooled = model(img[None], num_vis=0)["app_pooled"].numpy()
    hand = l2_normalize(l2_normalize(pooled))
    assert np.allclose(descs.vectors[0], hand[0], atol=1e-6)


def test_extract_full_setting_composition(tiny_ds, mini_bb):
    model = build_model(mini_bb, num_identities=8, setting="full", seed=0)
    descs = extract_descriptors(model, tiny_ds.query, composition="app+shape")
    assert descs.vectors.shape == (16, 2 * mini_bb.final_channels)
    from shapereid.evaluator import _image_tensor
    img = _image_tensor(tiny_ds.query, 3, (64, 32), 0.5, 0.5)
    model.eval()
    with torch.no_grad():
        bundle = model(img[None], num_vis=0)
    parts = [l2_normalize(bundle["enhanced_pooled"].numpy()),
             l2_normalize(bundle["student_pooled"].numpy())]
    hand = l2_normalize(np.concatenate(parts, axis=1))
    assert np.allclose(descs.vectors[3], hand[0], atol=1e-6)


def test_extract_determinism(tiny_ds, mini_bb):
    model = build_model(mini_bb, num_identities=8, setting="B", seed=0)
    a = extract_descriptors(model, tiny_ds.query)
    b = extract_descriptors(model, tiny_ds.query)
    assert np.array_equal(a.vectors, b.vectors)


def test_extraction_never_reads_masks(tiny_ds, mini_bb, monkeypatch):
    import shapereid.manifest as manifest_mod

    def boom(*args, **kwargs):
        raise AssertionError("mask read during descriptor extraction")

    monkeypatch.setattr(manifest_mod, "load_mask", boom)
    model = build_model(mini_bb, num_identities=8, setting="full", seed=0)
    descs = extract_descriptors(model, tiny_ds.query)
    assert len(descs) == 16


def test_evaluate_protocol_end_to_end(tiny_ds, mini_bb):
    model = build_model(mini_bb, num_identities=8, setting="B", seed=0)
    res = evaluate_protocol(model, tiny_ds.query, tiny_ds.gallery,
                            Protocol("ir->vis"))
    assert res.num_queries == 16 and res.num_excluded == 0
    assert res.cmc.shape == (16,)
    assert np.all(np.diff(res.cmc) >= 0)
    assert res.cmc[-1] >= res.mean_ap


def test_evaluate_protocol_filters_modalities(tiny_ds, mini_bb):
    """Running both directions on the mixed train manifest keeps only the
    protocol's modalities on each side."""
    model = build_model(mini_bb, num_identities=8, setting="B", seed=0)
    fwd = evaluate_protocol(model, tiny_ds.train, tiny_ds.train,
                            Protocol("ir->vis"))
    assert fwd.num_queries + fwd.num_excluded == 24   # IR rows of train
    with pytest.raises(ValueError, match="no\\s+query/gallery rows"):
        evaluate_protocol(model, tiny_ds.query, tiny_ds.query,
                          Protocol("ir->vis"))    # query split has no VIS rows


def test_untrained_model_map_within_random_band(tiny_ds, mini_bb):
    """An untrained network's retrieval quality is statistically consistent
    with random ranking on this gallery structure."""
    model = build_model(mini_bb, num_identities=8, setting="B", seed=0)
    res = evaluate_protocol(model, tiny_ds.query, tiny_ds.gallery,
                            Protocol("ir->vis"))
    q_ids = np.repeat(np.arange(8), 2)
    g_ids = np.repeat(np.arange(8), 2)
    rng = np.random.default_rng(0)
    mc = []
    for _ in range(2000):
        order = np.stack([rng.permutation(16) for _ in range(16)])
        mc.append(evaluate_ranking(order, q_ids, g_ids).mean_ap)
    lo, hi = np.quantile(mc, 0.001), np.quantile(mc, 0.999)
    assert lo <= res.mean_ap <= hi, (res.mean_ap, lo, hi)
