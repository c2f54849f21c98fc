"""End-to-end training loop with per-epoch pool sampling and early stopping.

Each epoch rebuilds training pools with fresh negatives (unless
``freeze_pools``), visits them in a seeded-shuffled order applying one
Adam update per pool, then computes validation loss/AUC with dropout
disabled. Early stopping tracks the best validation loss and restores
those parameters. Every random stream is derived from the config seed
via tagged SeedSequences, so runs are bit-reproducible.
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Dataset, FoldSplit
from .errors import NumericError, UsageError
from .evaluate import ranking_auc
from .models import (
    init_wsim,
    init_wsimmt,
    listwise_loss,
    make_scorer,
    multitask_loss,
    score_candidates,
    wsim_loss_and_grads,
)
from .numcore import AdamState, adam_step
from .sampler import PoolPlan, build_pools

MODEL_TYPES = ("wsim", "wsim_mt")

# encoder width presets: desk scale for synthetic data, paper scale for
# 300/25088-dim embeddings
PRESETS = {
    "desk": {"d_r": 8, "hidden_t": (32, 16), "hidden_v": (48, 24)},
    "paper": {"d_r": 512, "hidden_t": (300, 512), "hidden_v": (4096, 512)},
}

# seed-stream tags
_INIT, _SPLIT, _POOLS, _ORDER, _DROPOUT, _VAL, _FOLD = range(7)


def _rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *extra]))


@dataclass
class TrainConfig:
    model_type: str = "wsim"
    k: int = 4
    mode: str = "partial_sequence"
    lr: float = 0.001
    epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.2
    lam: float = 0.5
    gamma: float = 0.5
    dropout: float = 0.5
    seed: int = 0
    d_r: int = 8
    hidden_t: tuple = (32, 16)
    hidden_v: tuple = (48, 24)
    freeze_pools: bool = False

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise UsageError(f"model_type must be one of {MODEL_TYPES}")
        if self.k < 2:
            raise UsageError("K must be >= 2")
        if not 0.0 < self.val_fraction < 1.0:
            raise UsageError("val_fraction must be in (0, 1)")
        if self.lr < 0.0:
            raise UsageError("lr must be >= 0")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.patience < 0:
            raise UsageError("patience must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError("dropout must be in [0, 1)")
        if self.lam < 0.0 or self.gamma < 0.0:
            raise UsageError("lam and gamma must be >= 0")
        if self.seed < 0:
            raise UsageError("seed must be >= 0")
        self.hidden_t = tuple(self.hidden_t)
        self.hidden_v = tuple(self.hidden_v)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0


def fold_config(config: TrainConfig, fold_index: int) -> TrainConfig:
    """Derive a per-fold config with an independent seed stream."""
    sub = int(np.random.SeedSequence([config.seed, _FOLD, fold_index])
              .generate_state(1)[0])
    return replace(config, seed=sub)


def _init_params(dataset: Dataset, config: TrainConfig):
    if config.model_type == "wsim":
        return init_wsim(dataset.d_t, dataset.d_v)
    return init_wsimmt(_rng(config.seed, _INIT), dataset.d_t, dataset.d_v,
                       config.d_r, config.hidden_t, config.hidden_v,
                       len(dataset.categories))


def _split_validation(train_brands, config: TrainConfig):
    brands = sorted(train_brands)
    if len(brands) < 2:
        raise UsageError("need at least two training brands to hold out validation")
    rng = _rng(config.seed, _SPLIT)
    order = [brands[i] for i in rng.permutation(len(brands))]
    n_val = max(1, round(config.val_fraction * len(brands)))
    n_val = min(n_val, len(brands) - 1)
    return sorted(order[n_val:]), sorted(order[:n_val])


def _brand_pools(dataset, brand_id, plan, rng):
    return build_pools(brand_id, dataset.positives(brand_id),
                       dataset.negatives(brand_id), plan, rng)


def _make_loss_fn(config: TrainConfig, dataset: Dataset):
    if config.model_type == "wsim":
        def loss_fn(params, pool, rng):
            return wsim_loss_and_grads(params, pool, dataset)
    else:
        def loss_fn(params, pool, rng):
            return multitask_loss(params, pool, dataset, config.lam, config.gamma,
                                  training=True, rng=rng, dropout=config.dropout)
    return loss_fn


def validate(params, brands, dataset: Dataset, config: TrainConfig,
             val_pools=None):
    """Mean listwise loss over fixed-seed validation pools plus ranking AUC.

    Dropout is disabled; per-brand seeds are keyed on the brand's global
    index, so the result does not depend on evaluation order.
    """
    brands = sorted(brands)
    if not brands:
        raise UsageError("validation brand set is empty")
    if val_pools is None:
        val_pools = build_validation_pools(dataset, brands, config)
    losses = []
    for pool in val_pools:
        z = score_candidates(params, dataset, pool.brand_id, pool.candidate_ids)
        losses.append(listwise_loss(z, pool.y))
    scorer = make_scorer(params, dataset)
    auc = ranking_auc(scorer, dataset, brands)
    return float(np.mean(losses)), auc


def build_validation_pools(dataset: Dataset, brands, config: TrainConfig):
    plan = PoolPlan(k=config.k, mode=config.mode, seed=config.seed)
    brand_index = {b: i for i, b in enumerate(dataset.brands)}
    pools = []
    for b in sorted(brands):
        pools.extend(_brand_pools(dataset, b, plan,
                                  _rng(config.seed, _VAL, brand_index[b])))
    return pools


def train(dataset: Dataset, split: FoldSplit, config: TrainConfig):
    """Train one model on the split's train brands.

    Returns ``(params, TrainHistory)`` with the best-validation-loss
    parameters restored.
    """
    for b in split.train_brands:
        if not dataset.positives(b):
            raise UsageError(f"training brand {b!r} has no positive influencers")
    fit_brands, val_brands = _split_validation(split.train_brands, config)
    plan = PoolPlan(k=config.k, mode=config.mode, seed=config.seed)
    brand_index = {b: i for i, b in enumerate(dataset.brands)}
    n_influencers = len(dataset.influencers)
    for b in fit_brands:
        n_neg = n_influencers - len(dataset.positives(b))
        if n_neg < config.k - 1:
            raise UsageError(
                f"brand {b!r} has only {n_neg} negatives, K={config.k} needs "
                f"{config.k - 1}")

    template = _init_params(dataset, config)
    vec = template.to_vector()
    adam = AdamState.for_params(vec, lr=config.lr)
    loss_fn = _make_loss_fn(config, dataset)
    val_pools = build_validation_pools(dataset, val_brands, config)

    history = TrainHistory()
    best_loss = np.inf
    best_vec = vec.copy()
    streak = 0
    frozen_pools = None

    for epoch in range(config.epochs):
        if config.freeze_pools and frozen_pools is not None:
            pools = frozen_pools
        else:
            pools = []
            for b in fit_brands:
                pools.extend(_brand_pools(
                    dataset, b, plan, _rng(config.seed, _POOLS, epoch, brand_index[b])))
            if config.freeze_pools:
                frozen_pools = pools

        order = _rng(config.seed, _ORDER, epoch).permutation(len(pools))
        drop_rng = _rng(config.seed, _DROPOUT, epoch)
        params = template.with_vector(vec)
        epoch_losses = []
        for idx in order:
            pool = pools[idx]
            loss, grads = loss_fn(params, pool, drop_rng)
            if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, pool {idx} "
                    f"(brand {pool.brand_id!r}); |params| = "
                    f"{np.linalg.norm(vec):.6g}")
            epoch_losses.append(loss)
            vec, adam = adam_step(vec, grads, adam)
            params = template.with_vector(vec)

        val_loss, val_auc = validate(params, val_brands, dataset, config, val_pools)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val_loss)
        history.val_auc.append(val_auc)
        history.stopped_epoch = epoch + 1

        if val_loss < best_loss:
            best_loss = val_loss
            best_vec = vec.copy()
            history.best_epoch = epoch + 1
            streak = 0
        else:
            streak += 1
            if streak > config.patience:
                break

    return template.with_vector(best_vec), history


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_auc"])
        for i, (tl, vl, va) in enumerate(zip(history.train_loss, history.val_loss,
                                             history.val_auc), start=1):
            writer.writerow([i, repr(tl), repr(vl), repr(va)])
