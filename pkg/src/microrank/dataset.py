"""Data model, JSONL ingestion, post pooling, folds, and synthetic data.

A dataset directory holds three files:

* ``header.json`` — ``{"d_t", "d_v", "s1", "s2", "f_n", "n_posts", "categories"}``
* ``accounts.jsonl`` — one account per line, either already pooled
  (``text_pooled``/``visual_pooled``/``engagement_raw``) or in raw mode with a
  ``posts`` list, in which case pooling and engagement are computed at load.
* ``associations.jsonl`` — ``{"brand_id", "influencer_ids"}`` per line.

Visual embeddings are stored unrolled in row-major (s1, s2, f_n) order,
channel-last; ``s1 * s2 * f_n`` must equal ``d_v``. Engagement is min-max
normalized over all accounts after loading (a constant column maps to 0).
Datasets are immutable after construction.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError, UsageError

KINDS = ("brand", "influencer")


@dataclass
class Post:
    text_embedding: np.ndarray
    visual_embedding: np.ndarray
    likes: int
    comments: int


@dataclass
class PooledAccount:
    """One brand or influencer after pooling its posts."""

    id: str
    kind: str
    category: str
    text_pooled: np.ndarray
    visual_pooled: np.ndarray
    engagement: float = 0.0       # min-max normalized over the dataset
    engagement_raw: float = 0.0
    followers: int | None = None


@dataclass
class Dataset:
    accounts: dict[str, PooledAccount]
    associations: dict[str, list[str]]  # brand id -> sorted positive influencer ids
    d_t: int
    d_v: int
    s1: int
    s2: int
    f_n: int
    n_posts: int
    categories: list[str]

    @cached_property
    def brands(self) -> list[str]:
        return sorted(a.id for a in self.accounts.values() if a.kind == "brand")

    @cached_property
    def influencers(self) -> list[str]:
        return sorted(a.id for a in self.accounts.values() if a.kind == "influencer")

    def positives(self, brand_id: str) -> list[str]:
        return self.associations.get(brand_id, [])

    def negatives(self, brand_id: str) -> list[str]:
        pos = set(self.associations.get(brand_id, ()))
        return [i for i in self.influencers if i not in pos]

    def category_index(self, name: str) -> int:
        return self.categories.index(name)

    @cached_property
    def matrices(self) -> "DatasetMatrices":
        ids = sorted(self.accounts)
        text = np.stack([self.accounts[i].text_pooled for i in ids])
        visual = np.stack([self.accounts[i].visual_pooled for i in ids])
        eng = np.array([self.accounts[i].engagement for i in ids])
        cat = np.array([self.categories.index(self.accounts[i].category) for i in ids])
        return DatasetMatrices(ids, {a: k for k, a in enumerate(ids)}, text, visual, eng, cat)


@dataclass
class DatasetMatrices:
    """Row-aligned arrays over all accounts, for batched scoring."""

    ids: list[str]
    index: dict[str, int]
    text: np.ndarray
    visual: np.ndarray
    engagement: np.ndarray
    category_idx: np.ndarray

    def rows(self, account_ids) -> np.ndarray:
        return np.array([self.index[a] for a in account_ids], dtype=np.int64)


@dataclass
class FoldSplit:
    fold_index: int
    train_brands: list[str]
    test_brands: list[str]


# --------------------------------------------------------------------------
# pooling and engagement
# --------------------------------------------------------------------------

def pool_posts(posts: list[Post]):
    """Element-wise mean of the post embeddings, per modality."""
    if not posts:
        raise UsageError("cannot pool an empty post list")
    d_t = posts[0].text_embedding.shape[0]
    d_v = posts[0].visual_embedding.shape[0]
    for p in posts:
        if p.text_embedding.shape[0] != d_t or p.visual_embedding.shape[0] != d_v:
            raise ShapeError("inconsistent embedding dims across posts")
    text = np.mean([p.text_embedding for p in posts], axis=0)
    visual = np.mean([p.visual_embedding for p in posts], axis=0)
    return text, visual


def compute_engagement(posts: list[Post], followers: int) -> float:
    """Raw engagement: mean over posts of (likes + comments) / followers."""
    if followers <= 0:
        raise UsageError(f"followers must be positive, got {followers}")
    if not posts:
        raise UsageError("cannot compute engagement of an empty post list")
    return float(np.mean([(p.likes + p.comments) / followers for p in posts]))


def normalize_engagements(raw: np.ndarray) -> np.ndarray:
    """Dataset-wide min-max to [0, 1]; a degenerate range maps to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

_HEADER_KEYS = {"d_t", "d_v", "s1", "s2", "f_n", "n_posts", "categories"}


def _fail(path, lineno, msg):
    raise DataError(f"{path}:{lineno}: {msg}")


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                _fail(path, lineno, f"invalid JSON ({exc.msg})")


def _vector(obj, key, length, path, lineno):
    val = obj.get(key)
    if not isinstance(val, list):
        _fail(path, lineno, f"missing or non-list field {key!r}")
    if len(val) != length:
        _fail(path, lineno, f"{key} has length {len(val)}, expected {length}")
    arr = np.asarray(val, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        _fail(path, lineno, f"{key} contains non-finite values")
    return arr


def load_dataset(path) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(path)
    header_path = root / "header.json"
    accounts_path = root / "accounts.jsonl"
    assoc_path = root / "associations.jsonl"
    for p in (header_path, accounts_path, assoc_path):
        if not p.exists():
            raise DataError(f"missing dataset file: {p}")

    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{header_path}: invalid JSON ({exc.msg})") from exc
    missing = _HEADER_KEYS - set(header)
    if missing:
        raise DataError(f"{header_path}: missing keys {sorted(missing)}")
    d_t, d_v = int(header["d_t"]), int(header["d_v"])
    s1, s2, f_n = int(header["s1"]), int(header["s2"]), int(header["f_n"])
    n_posts = int(header["n_posts"])
    categories = list(header["categories"])
    if min(d_t, d_v, s1, s2, f_n, n_posts) < 1:
        raise DataError(f"{header_path}: dims and n_posts must be positive")
    if s1 * s2 * f_n != d_v:
        raise DataError(
            f"{header_path}: s1*s2*f_n = {s1 * s2 * f_n} does not equal d_v = {d_v}"
        )
    if not categories or len(set(categories)) != len(categories):
        raise DataError(f"{header_path}: categories must be nonempty and unique")

    accounts: dict[str, PooledAccount] = {}
    for lineno, obj in _read_jsonl(accounts_path):
        acc_id = obj.get("id")
        if not isinstance(acc_id, str) or not acc_id:
            _fail(accounts_path, lineno, "missing or empty 'id'")
        if acc_id in accounts:
            _fail(accounts_path, lineno, f"duplicate account id {acc_id!r}")
        kind = obj.get("kind")
        if kind not in KINDS:
            _fail(accounts_path, lineno, f"kind must be one of {KINDS}, got {kind!r}")
        category = obj.get("category")
        if category not in categories:
            _fail(accounts_path, lineno, f"unknown category {category!r}")
        followers = obj.get("followers")
        if followers is not None:
            followers = int(followers)

        if "posts" in obj:
            posts_field = obj["posts"]
            if not isinstance(posts_field, list) or not posts_field:
                _fail(accounts_path, lineno, "'posts' must be a nonempty list")
            posts = []
            for p in posts_field:
                posts.append(Post(
                    _vector(p, "text_embedding", d_t, accounts_path, lineno),
                    _vector(p, "visual_embedding", d_v, accounts_path, lineno),
                    int(p.get("likes", 0)),
                    int(p.get("comments", 0)),
                ))
                if posts[-1].likes < 0 or posts[-1].comments < 0:
                    _fail(accounts_path, lineno, "likes/comments must be >= 0")
            if followers is None or followers <= 0:
                _fail(accounts_path, lineno, "raw-mode accounts need positive 'followers'")
            text_pooled, visual_pooled = pool_posts(posts)
            engagement_raw = compute_engagement(posts, followers)
        else:
            text_pooled = _vector(obj, "text_pooled", d_t, accounts_path, lineno)
            visual_pooled = _vector(obj, "visual_pooled", d_v, accounts_path, lineno)
            engagement_raw = obj.get("engagement_raw")
            if not isinstance(engagement_raw, (int, float)):
                _fail(accounts_path, lineno, "missing numeric 'engagement_raw'")
            engagement_raw = float(engagement_raw)

        accounts[acc_id] = PooledAccount(
            id=acc_id, kind=kind, category=category,
            text_pooled=text_pooled, visual_pooled=visual_pooled,
            engagement_raw=engagement_raw, followers=followers,
        )

    associations: dict[str, list[str]] = {}
    for lineno, obj in _read_jsonl(assoc_path):
        brand_id = obj.get("brand_id")
        if brand_id not in accounts:
            _fail(assoc_path, lineno, f"association references unknown brand {brand_id!r}")
        if accounts[brand_id].kind != "brand":
            _fail(assoc_path, lineno, f"{brand_id!r} is not a brand")
        if brand_id in associations:
            _fail(assoc_path, lineno, f"duplicate association line for brand {brand_id!r}")
        infl = obj.get("influencer_ids")
        if not isinstance(infl, list) or not infl:
            _fail(assoc_path, lineno, "'influencer_ids' must be a nonempty list")
        seen = set()
        for iid in infl:
            if iid not in accounts:
                _fail(assoc_path, lineno,
                      f"association references unknown influencer {iid!r}")
            if accounts[iid].kind != "influencer":
                _fail(assoc_path, lineno, f"{iid!r} is not an influencer")
            if iid in seen:
                _fail(assoc_path, lineno, f"duplicate influencer {iid!r} in association")
            seen.add(iid)
        associations[brand_id] = sorted(infl)

    ids = sorted(accounts)
    normalized = normalize_engagements(np.array([accounts[i].engagement_raw for i in ids]))
    for i, e in zip(ids, normalized):
        accounts[i].engagement = float(e)

    return Dataset(accounts=accounts, associations=associations,
                   d_t=d_t, d_v=d_v, s1=s1, s2=s2, f_n=f_n,
                   n_posts=n_posts, categories=categories)


def save_dataset(dataset: Dataset, outdir) -> None:
    """Write header.json / accounts.jsonl / associations.jsonl."""
    root = Path(outdir)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "d_t": dataset.d_t, "d_v": dataset.d_v,
        "s1": dataset.s1, "s2": dataset.s2, "f_n": dataset.f_n,
        "n_posts": dataset.n_posts, "categories": dataset.categories,
    }
    (root / "header.json").write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    with open(root / "accounts.jsonl", "w", encoding="utf-8") as fh:
        for acc_id in sorted(dataset.accounts):
            acc = dataset.accounts[acc_id]
            fh.write(json.dumps({
                "id": acc.id, "kind": acc.kind, "category": acc.category,
                "followers": acc.followers, "engagement_raw": acc.engagement_raw,
                "text_pooled": acc.text_pooled.tolist(),
                "visual_pooled": acc.visual_pooled.tolist(),
            }) + "\n")
    with open(root / "associations.jsonl", "w", encoding="utf-8") as fh:
        for brand_id in sorted(dataset.associations):
            fh.write(json.dumps({
                "brand_id": brand_id,
                "influencer_ids": dataset.associations[brand_id],
            }) + "\n")


# --------------------------------------------------------------------------
# stratified k-fold
# --------------------------------------------------------------------------

def split_kfold(dataset: Dataset, k: int, seed: int) -> list[FoldSplit]:
    """Category-stratified partition of brands into k folds."""
    if k < 2:
        raise UsageError(f"k must be >= 2 (k={k} leaves no train side)")
    rng = np.random.default_rng(seed)
    test_sets: list[list[str]] = [[] for _ in range(k)]
    for cat in dataset.categories:
        cat_brands = sorted(b for b in dataset.brands
                            if dataset.accounts[b].category == cat)
        if len(cat_brands) < k:
            raise DataError(
                f"category {cat!r} has {len(cat_brands)} brands, fewer than k={k}"
            )
        order = [cat_brands[i] for i in rng.permutation(len(cat_brands))]
        base, extra = divmod(len(order), k)
        start = 0
        for fold in range(k):
            size = base + (1 if fold < extra else 0)
            test_sets[fold].extend(order[start:start + size])
            start += size
    all_brands = set(dataset.brands)
    splits = []
    for fold in range(k):
        test = sorted(test_sets[fold])
        train = sorted(all_brands - set(test))
        splits.append(FoldSplit(fold, train, test))
    return splits


# --------------------------------------------------------------------------
# synthetic data with planted category structure
# --------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Knobs for the planted-structure generator.

    Category centers are scaled so pooled vectors have roughly unit norm;
    ``noise_sigma`` is the per-account jitter relative to that signal
    scale. ``signal_fraction_v`` confines the visual category signal to
    the leading fraction of channels, and ``distractor_sigma`` adds
    structureless per-account noise on the remaining visual dims (used to
    dilute unweighted cosine similarity). Defaults keep the full visual
    space informative.
    """

    n_categories: int = 12
    brands_per_cat: int = 5
    influencers_per_cat: int = 20
    d_t: int = 16
    d_v: int = 48
    positives_per_brand: int = 11
    noise_sigma: float = 0.1
    seed: int = 0
    s1: int = 4
    s2: int = 4
    f_n: int = 3
    signal_fraction_v: float = 1.0
    distractor_sigma: float = 0.0

    def __post_init__(self):
        for name in ("n_categories", "brands_per_cat", "influencers_per_cat",
                     "d_t", "d_v", "positives_per_brand", "s1", "s2", "f_n"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.noise_sigma < 0 or self.distractor_sigma < 0:
            raise UsageError("noise sigmas must be >= 0")
        if not 0.0 < self.signal_fraction_v <= 1.0:
            raise UsageError("signal_fraction_v must be in (0, 1]")
        if self.s1 * self.s2 * self.f_n != self.d_v:
            raise UsageError(
                f"s1*s2*f_n = {self.s1 * self.s2 * self.f_n} must equal d_v = {self.d_v}"
            )
        if self.positives_per_brand > self.influencers_per_cat:
            raise UsageError("positives_per_brand cannot exceed influencers_per_cat")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Planted-structure dataset: per-category Gaussian centers.

    Each brand and its positive influencers are drawn from the brand's
    category center with ``noise_sigma`` jitter; every other category
    provides the negatives. Engagement is uniform with positives biased
    upward. Deterministic given ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    n_sig_v = max(1, round(spec.signal_fraction_v * spec.d_v))
    scale_t = 1.0 / np.sqrt(spec.d_t)
    scale_v = 1.0 / np.sqrt(n_sig_v)

    centers_t = rng.normal(0.0, scale_t, size=(spec.n_categories, spec.d_t))
    centers_v = np.zeros((spec.n_categories, spec.d_v))
    centers_v[:, :n_sig_v] = rng.normal(0.0, scale_v, size=(spec.n_categories, n_sig_v))

    def draw_account(cat: int):
        t = centers_t[cat] + rng.normal(0.0, spec.noise_sigma * scale_t, size=spec.d_t)
        v = centers_v[cat].copy()
        v[:n_sig_v] += rng.normal(0.0, spec.noise_sigma * scale_v, size=n_sig_v)
        if spec.distractor_sigma > 0 and n_sig_v < spec.d_v:
            v[n_sig_v:] += rng.normal(0.0, spec.distractor_sigma * scale_v,
                                      size=spec.d_v - n_sig_v)
        return t, v

    categories = [f"cat{c:02d}" for c in range(spec.n_categories)]
    accounts: dict[str, PooledAccount] = {}
    associations: dict[str, list[str]] = {}

    infl_ids = {c: [f"inf_{c:02d}_{j:03d}" for j in range(spec.influencers_per_cat)]
                for c in range(spec.n_categories)}
    for c in range(spec.n_categories):
        for iid in infl_ids[c]:
            t, v = draw_account(c)
            accounts[iid] = PooledAccount(
                id=iid, kind="influencer", category=categories[c],
                text_pooled=t, visual_pooled=v,
                followers=int(rng.integers(5000, 100001)),
            )

    for c in range(spec.n_categories):
        for j in range(spec.brands_per_cat):
            bid = f"brand_{c:02d}_{j:02d}"
            t, v = draw_account(c)
            accounts[bid] = PooledAccount(
                id=bid, kind="brand", category=categories[c],
                text_pooled=t, visual_pooled=v,
            )
            picks = rng.choice(spec.influencers_per_cat,
                               size=spec.positives_per_brand, replace=False)
            associations[bid] = sorted(infl_ids[c][p] for p in picks)

    positive_ids = set()
    for infl in associations.values():
        positive_ids.update(infl)
    for acc_id in sorted(accounts):
        acc = accounts[acc_id]
        u = float(rng.uniform())
        if acc.kind == "influencer":
            acc.engagement_raw = 0.4 + 0.6 * u if acc_id in positive_ids else 0.6 * u
        else:
            acc.engagement_raw = u
    ids = sorted(accounts)
    normalized = normalize_engagements(np.array([accounts[i].engagement_raw for i in ids]))
    for i, e in zip(ids, normalized):
        accounts[i].engagement = float(e)

    return Dataset(accounts=accounts, associations=associations,
                   d_t=spec.d_t, d_v=spec.d_v, s1=spec.s1, s2=spec.s2,
                   f_n=spec.f_n, n_posts=1, categories=categories)
