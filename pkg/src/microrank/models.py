"""Diagonal-bilinear (WSim) and multi-task (WSim-MT) ranking models.

WSim scores a brand/influencer pair by mixing diagonal bilinear text and
visual similarities with the influencer's engagement, the three mixture
weights living on the simplex via a softmax reparameterization. WSim-MT
first re-embeds both accounts with shared text/visual encoders fused by
a Hadamard product, scores through a full bilinear matrix blended with
engagement by a sigmoid gate, and trains with auxiliary brand and
influencer category-classification losses.

Losses return ``(scalar, flat gradient)`` where the gradient layout
matches ``params.to_vector()``; training code runs Adam directly on that
flat vector.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import Dataset, PooledAccount
from .errors import DataError, ShapeError, UsageError
from .numcore import DenseLayer, cross_entropy, dense_backward, dense_forward, init_dense, softmax
from .sampler import Pool

_P_FLOOR = 1e-12


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class WSimParams:
    """Diagonals of the two bilinear matrices plus three mixture logits."""

    wt_diag: np.ndarray
    wv_diag: np.ndarray
    alpha: np.ndarray  # (3,) -> softmax -> (w_t, w_v, w_e)

    @property
    def mixture_weights(self) -> np.ndarray:
        return softmax(self.alpha)

    @property
    def n_params(self) -> int:
        return self.wt_diag.size + self.wv_diag.size + 3

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.wt_diag, self.wv_diag, self.alpha])

    def with_vector(self, vec: np.ndarray) -> "WSimParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ShapeError(f"vector size {vec.size} != n_params {self.n_params}")
        d_t = self.wt_diag.size
        d_v = self.wv_diag.size
        return WSimParams(vec[:d_t].copy(), vec[d_t:d_t + d_v].copy(),
                          vec[d_t + d_v:].copy())

    def copy(self) -> "WSimParams":
        return WSimParams(self.wt_diag.copy(), self.wv_diag.copy(), self.alpha.copy())


def init_wsim(d_t: int, d_v: int) -> WSimParams:
    """Identity diagonals and equal mixture weights: a cosine-like start."""
    return WSimParams(np.ones(d_t), np.ones(d_v), np.zeros(3))


@dataclass
class WSimMTParams:
    """Shared text/visual encoders, full bilinear core, gate, classifier."""

    f_layers: list[DenseLayer]   # text encoder
    g_layers: list[DenseLayer]   # visual encoder
    wr: np.ndarray               # (d_r, d_r)
    alpha_e: float               # w_e = sigmoid(alpha_e)
    h_layer: DenseLayer          # affine + softmax over categories

    @property
    def d_r(self) -> int:
        return self.wr.shape[0]

    @property
    def engagement_weight(self) -> float:
        return _sigmoid(self.alpha_e)

    @property
    def n_params(self) -> int:
        total = self.wr.size + 1 + self.h_layer.weights.size + self.h_layer.bias.size
        for layer in self.f_layers + self.g_layers:
            total += layer.weights.size + layer.bias.size
        return total

    def to_vector(self) -> np.ndarray:
        parts = []
        for layer in self.f_layers + self.g_layers:
            parts.append(layer.weights.ravel())
            parts.append(layer.bias)
        parts.append(self.wr.ravel())
        parts.append(np.array([self.alpha_e]))
        parts.append(self.h_layer.weights.ravel())
        parts.append(self.h_layer.bias)
        return np.concatenate(parts)

    def with_vector(self, vec: np.ndarray) -> "WSimMTParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ShapeError(f"vector size {vec.size} != n_params {self.n_params}")
        pos = 0

        def take(n):
            nonlocal pos
            out = vec[pos:pos + n]
            pos += n
            return out

        def rebuild(layers):
            out = []
            for layer in layers:
                w = take(layer.weights.size).reshape(layer.weights.shape).copy()
                b = take(layer.bias.size).copy()
                out.append(DenseLayer(w, b, layer.activation))
            return out

        f_layers = rebuild(self.f_layers)
        g_layers = rebuild(self.g_layers)
        wr = take(self.wr.size).reshape(self.wr.shape).copy()
        alpha_e = float(take(1)[0])
        h_w = take(self.h_layer.weights.size).reshape(self.h_layer.weights.shape).copy()
        h_b = take(self.h_layer.bias.size).copy()
        return WSimMTParams(f_layers, g_layers, wr, alpha_e,
                            DenseLayer(h_w, h_b, self.h_layer.activation))

    def copy(self) -> "WSimMTParams":
        return WSimMTParams(
            [l.copy() for l in self.f_layers],
            [l.copy() for l in self.g_layers],
            self.wr.copy(), self.alpha_e, self.h_layer.copy(),
        )


def init_wsimmt(rng: np.random.Generator, d_t: int, d_v: int, d_r: int,
                hidden_t: tuple, hidden_v: tuple, n_categories: int) -> WSimMTParams:
    """Glorot encoders (two ReLU hidden layers, identity output), identity
    bilinear core, gate at 0.5."""
    def stack(d_in, hidden):
        dims = [d_in, *hidden, d_r]
        layers = []
        for i in range(len(dims) - 1):
            act = "relu" if i < len(dims) - 2 else "identity"
            layers.append(init_dense(rng, dims[i], dims[i + 1], act))
        return layers

    f_layers = stack(d_t, tuple(hidden_t))
    g_layers = stack(d_v, tuple(hidden_v))
    wr = np.eye(d_r)
    h_layer = init_dense(rng, d_r, n_categories, "softmax")
    return WSimMTParams(f_layers, g_layers, wr, 0.0, h_layer)


@dataclass
class ScoredCandidate:
    influencer_id: str
    score: float


# --------------------------------------------------------------------------
# WSim scoring and loss
# --------------------------------------------------------------------------

def _check_wsim_dims(params: WSimParams, brand: PooledAccount, infl: PooledAccount):
    if brand.text_pooled.size != params.wt_diag.size or \
            infl.text_pooled.size != params.wt_diag.size:
        raise ShapeError("text embedding dim does not match wt_diag")
    if brand.visual_pooled.size != params.wv_diag.size or \
            infl.visual_pooled.size != params.wv_diag.size:
        raise ShapeError("visual embedding dim does not match wv_diag")


def wsim_score(params: WSimParams, brand: PooledAccount, infl: PooledAccount) -> float:
    """Convex mix of diagonal bilinear similarities and engagement."""
    _check_wsim_dims(params, brand, infl)
    z = kernels.wsim_scores(
        brand.text_pooled, brand.visual_pooled,
        np.ascontiguousarray(infl.text_pooled[None, :]),
        np.ascontiguousarray(infl.visual_pooled[None, :]),
        np.array([infl.engagement]),
        params.wt_diag, params.wv_diag, params.alpha,
    )
    return float(z[0])


def wsim_loss_and_grads(params: WSimParams, pool: Pool, dataset: Dataset):
    """Listwise loss over one pool plus flat gradients (wt, wv, alpha)."""
    mats = dataset.matrices
    rows = mats.rows(pool.candidate_ids)
    brand = dataset.accounts[pool.brand_id]
    loss, gwt, gwv, galpha = kernels.wsim_pool_loss_grads(
        brand.text_pooled, brand.visual_pooled,
        np.ascontiguousarray(mats.text[rows]),
        np.ascontiguousarray(mats.visual[rows]),
        np.ascontiguousarray(mats.engagement[rows]),
        pool.y, params.wt_diag, params.wv_diag, params.alpha,
    )
    return float(loss), np.concatenate([gwt, gwv, galpha])


# --------------------------------------------------------------------------
# WSim-MT forward pieces
# --------------------------------------------------------------------------

def _stack_forward(layers, x, dropout, rng, training):
    """Forward through a dense stack; dropout on hidden layers only."""
    caches = []
    out = x
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        rate = dropout if (training and i < last) else 0.0
        out, cache = dense_forward(layer, out, rate, rng, training and rate > 0)
        caches.append(cache)
    return out, caches


def _stack_backward(caches, grad_out):
    """Backward through a dense stack; returns (per-layer grads, grad_x)."""
    grads = []
    g = grad_out
    for cache in reversed(caches):
        g, gw, gb = dense_backward(cache, g)
        grads.append((gw, gb))
    grads.reverse()
    return grads, g


def wsimmt_embed(params: WSimMTParams, account: PooledAccount,
                 training: bool = False, rng: np.random.Generator | None = None,
                 dropout: float = 0.5) -> np.ndarray:
    """Hadamard fusion of the text and visual encoder outputs."""
    f_out, _ = _stack_forward(params.f_layers, account.text_pooled,
                              dropout, rng, training)
    g_out, _ = _stack_forward(params.g_layers, account.visual_pooled,
                              dropout, rng, training)
    return f_out * g_out


def embed_rows(params: WSimMTParams, text: np.ndarray, visual: np.ndarray) -> np.ndarray:
    """Batch embedding without dropout (inference path)."""
    f_out, _ = _stack_forward(params.f_layers, text, 0.0, None, False)
    g_out, _ = _stack_forward(params.g_layers, visual, 0.0, None, False)
    return f_out * g_out


def wsimmt_score(params: WSimMTParams, brand: PooledAccount, infl: PooledAccount,
                 training: bool = False, rng: np.random.Generator | None = None,
                 dropout: float = 0.5) -> float:
    """Gated blend of the latent bilinear similarity and engagement."""
    e_b = wsimmt_embed(params, brand, training, rng, dropout)
    e_i = wsimmt_embed(params, infl, training, rng, dropout)
    w_e = params.engagement_weight
    return float((1.0 - w_e) * (e_b @ params.wr @ e_i) + w_e * infl.engagement)


def classify_category(params: WSimMTParams, e_vec: np.ndarray) -> np.ndarray:
    """Category probabilities for one fused embedding."""
    probs, _ = dense_forward(params.h_layer, e_vec)
    return probs


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def listwise_loss(z, y) -> float:
    """Cross-entropy between the target distribution and softmax scores."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError(f"scores shape {z.shape} != targets shape {y.shape}")
    if abs(y.sum() - 1.0) > 1e-9:
        raise UsageError(f"targets must sum to 1, got {y.sum()}")
    return cross_entropy(y, softmax(z))


def multitask_loss(params: WSimMTParams, pool: Pool, dataset: Dataset,
                   lam: float = 0.5, gamma: float = 0.5,
                   training: bool = False, rng: np.random.Generator | None = None,
                   dropout: float = 0.5):
    """Pool loss plus weighted category-classification terms, with gradients.

    Returns ``(total_loss, grad_vector)``; the gradient layout matches
    ``params.to_vector()``. The influencer classification term is the
    mean cross-entropy over the pool's K candidates. With
    ``lam == gamma == 0`` the classifier is skipped entirely and the
    value equals the plain listwise loss.
    """
    if lam < 0 or gamma < 0:
        raise UsageError("lam and gamma must be >= 0")
    mats = dataset.matrices
    k = len(pool.candidate_ids)
    rows = mats.rows(pool.candidate_ids)
    brow = mats.index[pool.brand_id]
    text = np.concatenate([mats.text[brow][None, :], mats.text[rows]], axis=0)
    visual = np.concatenate([mats.visual[brow][None, :], mats.visual[rows]], axis=0)
    eng = mats.engagement[rows]
    y = pool.y

    f_out, f_caches = _stack_forward(params.f_layers, text, dropout, rng, training)
    g_out, g_caches = _stack_forward(params.g_layers, visual, dropout, rng, training)
    fused = f_out * g_out                    # (K+1, d_r), row 0 is the brand
    e_b = fused[0]
    e_i = fused[1:]

    w_e = params.engagement_weight
    wvec = params.wr.T @ e_b
    s = e_i @ wvec
    z = (1.0 - w_e) * s + w_e * eng
    p = softmax(z)
    total = cross_entropy(y, p)

    # gradients of the main term
    dz = p - y
    ds = (1.0 - w_e) * dz
    d_alpha_e = float(dz @ (eng - s)) * w_e * (1.0 - w_e)
    proj = e_i.T @ ds                        # (d_r,)
    d_wr = np.outer(e_b, proj)
    d_fused = np.empty_like(fused)
    d_fused[0] = params.wr @ proj
    d_fused[1:] = np.outer(ds, wvec)

    d_hw = np.zeros_like(params.h_layer.weights)
    d_hb = np.zeros_like(params.h_layer.bias)
    if lam > 0 or gamma > 0:
        logits = fused @ params.h_layer.weights.T + params.h_layer.bias
        q = softmax(logits)                  # (K+1, C)
        b_cat = int(mats.category_idx[brow])
        i_cats = mats.category_idx[rows]
        total += lam * float(-np.log(max(q[0, b_cat], _P_FLOOR)))
        total += gamma * float(np.mean(
            [-np.log(max(q[1 + j, i_cats[j]], _P_FLOOR)) for j in range(k)]))

        g_logits = np.zeros_like(q)
        if lam > 0:
            g_logits[0] = q[0]
            g_logits[0, b_cat] -= 1.0
            g_logits[0] *= lam
        if gamma > 0:
            block = q[1:].copy()
            block[np.arange(k), i_cats] -= 1.0
            g_logits[1:] = (gamma / k) * block
        d_hw = g_logits.T @ fused
        d_hb = g_logits.sum(axis=0)
        d_fused = d_fused + g_logits @ params.h_layer.weights

    d_f_out = d_fused * g_out
    d_g_out = d_fused * f_out
    f_grads, _ = _stack_backward(f_caches, d_f_out)
    g_grads, _ = _stack_backward(g_caches, d_g_out)

    parts = []
    for gw, gb in f_grads + g_grads:
        parts.append(gw.ravel())
        parts.append(gb)
    parts.append(d_wr.ravel())
    parts.append(np.array([d_alpha_e]))
    parts.append(d_hw.ravel())
    parts.append(d_hb)
    return float(total), np.concatenate(parts)


# --------------------------------------------------------------------------
# batched scoring shared by train/evaluate
# --------------------------------------------------------------------------

def score_candidates(params, dataset: Dataset, brand_id: str, candidate_ids,
                     training: bool = False, rng=None, dropout: float = 0.5) -> np.ndarray:
    """Scores of the candidates against one brand, in candidate order."""
    mats = dataset.matrices
    rows = mats.rows(candidate_ids)
    if isinstance(params, WSimParams):
        brand = dataset.accounts[brand_id]
        return np.asarray(kernels.wsim_scores(
            brand.text_pooled, brand.visual_pooled,
            np.ascontiguousarray(mats.text[rows]),
            np.ascontiguousarray(mats.visual[rows]),
            np.ascontiguousarray(mats.engagement[rows]),
            params.wt_diag, params.wv_diag, params.alpha,
        ))
    if isinstance(params, WSimMTParams):
        brow = mats.index[brand_id]
        if training:
            text = np.concatenate([mats.text[brow][None, :], mats.text[rows]])
            visual = np.concatenate([mats.visual[brow][None, :], mats.visual[rows]])
            f_out, _ = _stack_forward(params.f_layers, text, dropout, rng, True)
            g_out, _ = _stack_forward(params.g_layers, visual, dropout, rng, True)
            fused = f_out * g_out
            e_b, e_i = fused[0], fused[1:]
        else:
            e_b = embed_rows(params, mats.text[brow][None, :], mats.visual[brow][None, :])[0]
            e_i = embed_rows(params, mats.text[rows], mats.visual[rows])
        w_e = params.engagement_weight
        return (1.0 - w_e) * (e_i @ (params.wr.T @ e_b)) + w_e * mats.engagement[rows]
    raise UsageError(f"unknown parameter type {type(params).__name__}")


def make_scorer(params, dataset: Dataset):
    """Inference-mode scorer: (brand_id, candidate_ids) -> score array."""
    def scorer(brand_id, candidate_ids):
        return score_candidates(params, dataset, brand_id, candidate_ids)
    return scorer


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _layer_to_json(layer: DenseLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(),
            "activation": layer.activation}


def _layer_from_json(obj) -> DenseLayer:
    return DenseLayer(np.asarray(obj["weights"], dtype=np.float64),
                      np.asarray(obj["bias"], dtype=np.float64),
                      obj["activation"])


def save_checkpoint(params, dataset: Dataset, path) -> None:
    """JSON checkpoint: header with model type/dims/categories plus arrays."""
    dims = {"d_t": dataset.d_t, "d_v": dataset.d_v, "s1": dataset.s1,
            "s2": dataset.s2, "f_n": dataset.f_n}
    if isinstance(params, WSimParams):
        doc = {
            "model_type": "wsim", "dims": dims, "categories": dataset.categories,
            "params": {"wt_diag": params.wt_diag.tolist(),
                       "wv_diag": params.wv_diag.tolist(),
                       "alpha": params.alpha.tolist()},
        }
    elif isinstance(params, WSimMTParams):
        dims = dict(dims, d_r=params.d_r)
        doc = {
            "model_type": "wsim_mt", "dims": dims, "categories": dataset.categories,
            "params": {
                "f_layers": [_layer_to_json(l) for l in params.f_layers],
                "g_layers": [_layer_to_json(l) for l in params.g_layers],
                "wr": params.wr.tolist(),
                "alpha_e": params.alpha_e,
                "h_layer": _layer_to_json(params.h_layer),
            },
        }
    else:
        raise UsageError(f"cannot checkpoint {type(params).__name__}")
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Returns ``(params, meta)`` where meta has model_type/dims/categories."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    model_type = doc.get("model_type")
    raw = doc.get("params", {})
    if model_type == "wsim":
        params = WSimParams(np.asarray(raw["wt_diag"], dtype=np.float64),
                            np.asarray(raw["wv_diag"], dtype=np.float64),
                            np.asarray(raw["alpha"], dtype=np.float64))
    elif model_type == "wsim_mt":
        params = WSimMTParams(
            [_layer_from_json(o) for o in raw["f_layers"]],
            [_layer_from_json(o) for o in raw["g_layers"]],
            np.asarray(raw["wr"], dtype=np.float64),
            float(raw["alpha_e"]),
            _layer_from_json(raw["h_layer"]),
        )
    else:
        raise DataError(f"checkpoint {path} has unknown model_type {model_type!r}")
    meta = {"model_type": model_type, "dims": doc.get("dims", {}),
            "categories": doc.get("categories", [])}
    return params, meta
