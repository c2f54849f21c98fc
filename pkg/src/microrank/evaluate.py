"""Ranking inference, metrics (AUC, Recall@k, MedR), baselines, CV reports.

AUC counts tied pairs as half wins. MedR is the lower median of the
1-indexed rank of each brand's best-ranked positive. The test-time
candidate universe of a fold is the union of the test brands' positive
sets plus any influencer that is positive for no brand at all (pure
background negatives).
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, PooledAccount, split_kfold
from .errors import MicrorankError, UsageError
from .models import ScoredCandidate, make_scorer

METRIC_KEYS = ("auc", "recall_at_10", "recall_at_50", "medr")


# --------------------------------------------------------------------------
# core metrics
# --------------------------------------------------------------------------

def rank_brand(scorer, brand_id: str, candidates) -> list[ScoredCandidate]:
    """Candidates sorted by descending score, ties broken by ascending id."""
    candidates = list(candidates)
    if not candidates:
        raise UsageError("rank_brand needs at least one candidate")
    scores = np.asarray(scorer(brand_id, candidates), dtype=np.float64)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return [ScoredCandidate(candidates[i], float(scores[i])) for i in order]


def auc(scores, labels) -> float:
    """Probability that a positive outscores a negative, ties half-counted."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise UsageError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("AUC undefined without both positives and negatives")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-indexed
        i = j + 1
    pos_rank_sum = ranks[labels].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def recall_at_k(ranked_ids, positives, k: int) -> float:
    """Fraction of the positives appearing in the top-k of the ranking."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    positives = set(positives)
    if not positives:
        raise UsageError("recall undefined for an empty positive set")
    top = set(list(ranked_ids)[:k])
    return len(top & positives) / len(positives)


def medr(best_positive_ranks) -> float:
    """Lower median of 1-indexed best-positive ranks."""
    ranks = sorted(best_positive_ranks)
    if not ranks:
        raise UsageError("medr of an empty rank list")
    return float(ranks[(len(ranks) - 1) // 2])


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

def baseline_simcos(brand: PooledAccount, candidate: PooledAccount) -> float:
    """Cosine similarity of the concatenated text+visual vectors."""
    a = np.concatenate([brand.text_pooled, brand.visual_pooled])
    b = np.concatenate([candidate.text_pooled, candidate.visual_pooled])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UsageError("cosine similarity undefined for a zero vector")
    return float(a @ b / (na * nb))


def make_simcos_scorer(dataset: Dataset):
    mats = dataset.matrices
    concat = np.concatenate([mats.text, mats.visual], axis=1)
    norms = np.linalg.norm(concat, axis=1)
    if np.any(norms == 0.0):
        raise UsageError("cosine similarity undefined for a zero vector")
    unit = concat / norms[:, None]

    def scorer(brand_id, candidate_ids):
        rows = mats.rows(candidate_ids)
        return unit[rows] @ unit[mats.index[brand_id]]

    return scorer


def baseline_random(rng: np.random.Generator) -> float:
    """One uniform score drawn from the seeded stream."""
    return float(rng.random())


def make_random_scorer(seed: int):
    rng = np.random.default_rng(seed)

    def scorer(brand_id, candidate_ids):
        return rng.random(len(candidate_ids))

    return scorer


# --------------------------------------------------------------------------
# per-split evaluation and cross-validation
# --------------------------------------------------------------------------

def fold_universe(dataset: Dataset, test_brands) -> list[str]:
    """Candidates a test brand is ranked against."""
    universe = set()
    for b in test_brands:
        universe.update(dataset.positives(b))
    ever_positive = set()
    for infl in dataset.associations.values():
        ever_positive.update(infl)
    universe.update(i for i in dataset.influencers if i not in ever_positive)
    return sorted(universe)


def ranking_auc(scorer, dataset: Dataset, brands, candidates=None) -> float:
    """Mean per-brand AUC of a scorer, order independent."""
    brands = sorted(brands)
    if not brands:
        raise UsageError("ranking_auc needs at least one brand")
    cands = sorted(candidates) if candidates is not None else dataset.influencers
    values = []
    for b in brands:
        pos = set(dataset.positives(b))
        labels = np.array([c in pos for c in cands])
        scores = np.asarray(scorer(b, cands), dtype=np.float64)
        values.append(auc(scores, labels))
    return float(np.mean(values))


def evaluate_split(scorer, dataset: Dataset, test_brands) -> dict:
    """Fold-level metrics for one scorer over one test-brand set."""
    universe = fold_universe(dataset, test_brands)
    aucs, rec10, rec50, best_ranks = [], [], [], []
    for b in sorted(test_brands):
        pos = set(dataset.positives(b))
        if not pos:
            raise UsageError(f"test brand {b!r} has no positives")
        if len(pos) >= len(universe):
            raise UsageError(f"test brand {b!r} has no negatives in the universe")
        ranked = rank_brand(scorer, b, universe)
        ranked_ids = [c.influencer_id for c in ranked]
        labels = np.array([c.influencer_id in pos for c in ranked])
        scores = np.array([c.score for c in ranked])
        aucs.append(auc(scores, labels))
        rec10.append(recall_at_k(ranked_ids, pos, 10))
        rec50.append(recall_at_k(ranked_ids, pos, 50))
        best_ranks.append(1 + int(np.argmax(labels)))
    return {
        "auc": float(np.mean(aucs)),
        "recall_at_10": float(np.mean(rec10)),
        "recall_at_50": float(np.mean(rec50)),
        "medr": medr(best_ranks),
        "n_brands": len(test_brands),
        "n_candidates": len(universe),
    }


@dataclass
class MetricsReport:
    """Per-fold metrics with mean +- sample std aggregates."""

    label: str
    n_params: int
    folds: list[dict]
    aggregate: dict

    @classmethod
    def from_folds(cls, label: str, n_params: int, folds: list[dict]) -> "MetricsReport":
        aggregate = {}
        for key in METRIC_KEYS:
            vals = np.array([f[key] for f in folds])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            aggregate[key] = {"mean": float(vals.mean()), "std": std}
        return cls(label, n_params, folds, aggregate)

    def to_json_dict(self) -> dict:
        return {"model": self.label, "n_params": self.n_params,
                "folds": self.folds, "aggregate": self.aggregate}


def cross_validate(dataset: Dataset, config=None, *, folds: int = 5,
                   seed: int | None = None, scorer_factory=None,
                   label: str | None = None) -> MetricsReport:
    """Train (or apply a fixed scorer) per fold and aggregate metrics.

    With ``scorer_factory`` given, no training happens: the factory maps
    a FoldSplit to a scorer (used for the Random/SimCos baselines and
    for injected scorers in tests). Otherwise a model is trained per
    fold according to ``config``, with the fold index folded into the
    training seed.
    """
    from . import train as train_mod

    if config is None and scorer_factory is None:
        raise UsageError("cross_validate needs a config or a scorer_factory")
    if seed is None:
        seed = config.seed if config is not None else 0
    splits = split_kfold(dataset, folds, seed)
    fold_metrics = []
    n_params = 0
    for split in splits:
        if scorer_factory is not None:
            scorer = scorer_factory(split)
        else:
            try:
                fold_config = train_mod.fold_config(config, split.fold_index)
                params, _ = train_mod.train(dataset, split, fold_config)
            except MicrorankError as exc:
                raise type(exc)(f"fold {split.fold_index}: {exc}") from exc
            n_params = params.n_params
            scorer = make_scorer(params, dataset)
        metrics = evaluate_split(scorer, dataset, split.test_brands)
        metrics["fold"] = split.fold_index
        fold_metrics.append(metrics)
    if label is None:
        label = config.model_type if config is not None else "scorer"
    return MetricsReport.from_folds(label, n_params, fold_metrics)


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------

def write_reports_json(reports: list[MetricsReport], path) -> None:
    doc = {"reports": [r.to_json_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_reports_csv(reports: list[MetricsReport], path) -> None:
    """Flat CSV with one row per fold plus mean/std rows per model."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fold", "auc", "recall_at_10", "recall_at_50",
                         "medr", "n_params"])
        for r in reports:
            for f in r.folds:
                writer.writerow([r.label, f["fold"], repr(f["auc"]),
                                 repr(f["recall_at_10"]), repr(f["recall_at_50"]),
                                 repr(f["medr"]), r.n_params])
            agg = r.aggregate
            writer.writerow([r.label, "mean"] +
                            [repr(agg[k]["mean"]) for k in METRIC_KEYS] + [r.n_params])
            writer.writerow([r.label, "std"] +
                            [repr(agg[k]["std"]) for k in METRIC_KEYS] + [r.n_params])
