"""Shared fixtures: tiny dataset builders used across test modules."""

import json

import numpy as np
import pytest

from microrank.dataset import Dataset, PooledAccount, normalize_engagements


def build_dataset(n_categories=3, brands_per_cat=2, influencers_per_cat=4,
                  positives_per_brand=2, d_t=4, d_v=6, s1=1, s2=2, f_n=3,
                  seed=0):
    """Hand-rolled miniature dataset with same-category positives."""
    rng = np.random.default_rng(seed)
    categories = [f"cat{c:02d}" for c in range(n_categories)]
    accounts = {}
    associations = {}
    infl_by_cat = {}
    for c, cat in enumerate(categories):
        infl_by_cat[cat] = []
        for j in range(influencers_per_cat):
            iid = f"inf_{c:02d}_{j:03d}"
            infl_by_cat[cat].append(iid)
            accounts[iid] = PooledAccount(
                id=iid, kind="influencer", category=cat,
                text_pooled=rng.normal(size=d_t), visual_pooled=rng.normal(size=d_v),
                engagement_raw=float(rng.uniform()), followers=7000,
            )
    for c, cat in enumerate(categories):
        for j in range(brands_per_cat):
            bid = f"brand_{c:02d}_{j:02d}"
            accounts[bid] = PooledAccount(
                id=bid, kind="brand", category=cat,
                text_pooled=rng.normal(size=d_t), visual_pooled=rng.normal(size=d_v),
                engagement_raw=float(rng.uniform()),
            )
            picks = rng.choice(influencers_per_cat, size=positives_per_brand,
                               replace=False)
            associations[bid] = sorted(infl_by_cat[cat][p] for p in picks)
    ids = sorted(accounts)
    for i, e in zip(ids, normalize_engagements(
            np.array([accounts[i].engagement_raw for i in ids]))):
        accounts[i].engagement = float(e)
    return Dataset(accounts=accounts, associations=associations,
                   d_t=d_t, d_v=d_v, s1=s1, s2=s2, f_n=f_n, n_posts=1,
                   categories=categories)


@pytest.fixture
def tiny_dataset():
    return build_dataset()


def write_dataset_dir(tmp_path, header=None, accounts=None, associations=None):
    """Write raw dataset files, bypassing validation, for loader tests."""
    header = header if header is not None else {
        "d_t": 2, "d_v": 3, "s1": 1, "s2": 1, "f_n": 3, "n_posts": 2,
        "categories": ["food", "auto"],
    }
    if accounts is None:
        accounts = [
            {"id": "b1", "kind": "brand", "category": "food", "followers": None,
             "engagement_raw": 0.2, "text_pooled": [1.0, 0.0],
             "visual_pooled": [0.0, 1.0, 0.0]},
            {"id": "b2", "kind": "brand", "category": "auto", "followers": None,
             "engagement_raw": 0.4, "text_pooled": [0.0, 1.0],
             "visual_pooled": [1.0, 0.0, 0.0]},
            {"id": "i1", "kind": "influencer", "category": "food", "followers": 9000,
             "engagement_raw": 0.5, "text_pooled": [1.0, 1.0],
             "visual_pooled": [0.0, 0.5, 0.5]},
            {"id": "i2", "kind": "influencer", "category": "auto", "followers": 8000,
             "engagement_raw": 0.1, "text_pooled": [0.5, 0.5],
             "visual_pooled": [0.2, 0.2, 0.6]},
        ]
    if associations is None:
        associations = [
            {"brand_id": "b1", "influencer_ids": ["i1"]},
            {"brand_id": "b2", "influencer_ids": ["i2"]},
        ]
    (tmp_path / "header.json").write_text(json.dumps(header))
    with open(tmp_path / "accounts.jsonl", "w") as fh:
        for a in accounts:
            fh.write(json.dumps(a) + "\n")
    with open(tmp_path / "associations.jsonl", "w") as fh:
        for a in associations:
            fh.write(json.dumps(a) + "\n")
    return tmp_path
