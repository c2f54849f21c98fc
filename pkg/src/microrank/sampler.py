"""Training-pool construction with controlled positive counts.

For a brand with n positives and pool size K, one pool per positive is
built at every positive-count level j = 1..min(K, n), giving
n * min(K, n) pools total. Positives are assigned by rotating a window
of length j over a seeded shuffle, so every positive occurs at least
once at every level; the remaining K - j slots are negatives sampled
without replacement within each pool. Candidate order inside a pool is
shuffled so position carries no signal.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import PooledAccount
from .errors import UsageError

MODES = ("listwise", "partial_sequence")


@dataclass
class Pool:
    """One K-candidate training list with its target distribution."""

    brand_id: str
    candidate_ids: list[str]
    positive_mask: np.ndarray  # bool, aligned with candidate_ids
    y: np.ndarray


@dataclass
class PoolPlan:
    k: int
    mode: str = "partial_sequence"
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise UsageError(f"pool size K must be >= 2, got {self.k}")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")


def target_distribution(positive_mask, mode: str, n_total_positives: int) -> np.ndarray:
    """Target y over one pool.

    ``listwise`` puts 1/n_total_positives on each in-pool positive, then
    renormalizes to sum 1 within the pool; ``partial_sequence`` divides
    by the in-pool positive count directly. With equal per-positive mass
    those coincide, by construction of the renormalization.
    """
    mask = np.asarray(positive_mask, dtype=bool)
    n_in_pool = int(mask.sum())
    if n_in_pool == 0:
        raise UsageError("a pool must contain at least one positive")
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "listwise":
        if n_total_positives < n_in_pool:
            raise UsageError("n_total_positives smaller than in-pool positives")
        base = mask / n_total_positives
        return base / base.sum()
    return mask / n_in_pool


def build_pools(brand: PooledAccount | str, positives, negatives,
                plan: PoolPlan, rng: np.random.Generator | None = None) -> list[Pool]:
    """All pools for one brand under the given plan.

    ``positives`` and ``negatives`` are disjoint collections of
    influencer ids; ids are sorted before any seeded draw so results
    depend only on set contents and the generator state.
    """
    brand_id = brand.id if isinstance(brand, PooledAccount) else brand
    pos = sorted(positives)
    neg = sorted(negatives)
    if not pos:
        raise UsageError(f"brand {brand_id!r} has no positives")
    overlap = set(pos) & set(neg)
    if overlap:
        raise UsageError(f"positives and negatives overlap: {sorted(overlap)[:3]}")
    k = plan.k
    if len(neg) < k - 1:
        raise UsageError(
            f"brand {brand_id!r}: need at least K-1 = {k - 1} negatives, "
            f"have {len(neg)}"
        )
    if rng is None:
        rng = np.random.default_rng(plan.seed)

    n = len(pos)
    levels = min(k, n)
    shuffled = [pos[i] for i in rng.permutation(n)]

    pools = []
    for j in range(1, levels + 1):
        for i in range(n):
            pool_pos = [shuffled[(i + t) % n] for t in range(j)]
            need = k - j
            if need > 0:
                picks = rng.choice(len(neg), size=need, replace=False)
                pool_neg = [neg[p] for p in picks]
            else:
                pool_neg = []
            cands = pool_pos + pool_neg
            order = rng.permutation(k)
            cands = [cands[o] for o in order]
            pos_here = set(pool_pos)
            mask = np.array([c in pos_here for c in cands])
            y = target_distribution(mask, plan.mode, n)
            pools.append(Pool(brand_id, cands, mask, y))
    return pools


def dump_pools_jsonl(pools: list[Pool], path) -> None:
    """Debug dump, one pool per line."""
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for p in pools:
            fh.write(json.dumps({
                "brand_id": p.brand_id,
                "candidate_ids": p.candidate_ids,
                "positive_mask": [bool(b) for b in p.positive_mask],
                "y": p.y.tolist(),
            }) + "\n")
