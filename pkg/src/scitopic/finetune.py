"""Linear adapter trained with a margin-shifted in-batch contrastive loss.

The base composite embeddings stay frozen; a linear map ``z = W x (+ b)`` is
learned on top of them. For one anchor ``a`` with judged positive ``c+`` the
loss is the softmax cross-entropy of ``s(a, c+) / tau`` against ``s(a, c) / tau``
for every positive and negative ``c`` in the batch, where ``s`` is cosine
similarity minus the margin ``gamma``. Gradients are derived by hand and
checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .oracle import TripletJudgment, Verdict

log = logging.getLogger(__name__)

ADAPTER_FORMAT = "scitopic-adapter"
ADAPTER_VERSION = 1


class CollapsedAdapter(ValueError):
    """An adapted vector has zero norm, so cosine similarity is undefined."""


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class FineTuneConfig:
    tau: float = 0.05
    gamma: float = 0.05
    lr: float = 1e-2
    batch_size: int = 16
    epochs: int = 20
    entropy_weighting: bool = True
    seed: int = 0
    # "uniform" shifts every pair by gamma, "negatives" only non-positive pairs
    margin_mode: str = "uniform"
    use_bias: bool = False
    d_out: int | None = None

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.margin_mode not in ("uniform", "negatives"):
            raise ValueError(f"unknown margin mode {self.margin_mode!r}")


@dataclass
class Adapter:
    weight: np.ndarray
    bias: np.ndarray | None = None

    @classmethod
    def identity(cls, d_in: int, d_out: int | None = None, bias: bool = False) -> "Adapter":
        d_out = d_in if d_out is None else d_out
        if d_out > d_in:
            raise ValueError(f"d_out ({d_out}) may not exceed d_in ({d_in}) for identity init")
        return cls(np.eye(d_out, d_in), np.zeros(d_out) if bias else None)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "Adapter":
        return Adapter(self.weight.copy(), None if self.bias is None else self.bias.copy())

    def check_finite(self) -> None:
        bad = np.argwhere(~np.isfinite(self.weight))
        if bad.size:
            raise NonFiniteError(f"non-finite adapter weight at {tuple(int(i) for i in bad[0])}")
        if self.bias is not None and not np.all(np.isfinite(self.bias)):
            raise NonFiniteError(f"non-finite adapter bias at {int(np.argmin(np.isfinite(self.bias)))}")

    def save(self, path: str | Path, seed: int | None = None, config: FineTuneConfig | None = None) -> None:
        doc = {
            "format": ADAPTER_FORMAT,
            "version": ADAPTER_VERSION,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "weight": self.weight.tolist(),
            "bias": None if self.bias is None else self.bias.tolist(),
            "seed": seed,
            "config": asdict(config) if config is not None else None,
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Adapter":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != ADAPTER_FORMAT or doc.get("version") != ADAPTER_VERSION:
            raise ValueError(f"{path}: not a version-{ADAPTER_VERSION} adapter checkpoint")
        weight = np.asarray(doc["weight"], dtype=np.float64).reshape(doc["d_out"], doc["d_in"])
        bias = None if doc["bias"] is None else np.asarray(doc["bias"], dtype=np.float64)
        adapter = cls(weight, bias)
        adapter.check_finite()
        return adapter


def apply_adapter(adapter: Adapter, embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != adapter.d_in:
        raise ValueError(f"adapter expects {adapter.d_in} input columns, got shape {x.shape}")
    out = x @ adapter.weight.T
    if adapter.bias is not None:
        out = out + adapter.bias
    return out


def similarity(x: np.ndarray, y: np.ndarray, gamma: float = 0.0) -> float:
    """Cosine similarity minus the margin."""
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise CollapsedAdapter("cosine similarity of a zero vector")
    return float(np.dot(x, y) / (nx * ny) - gamma)


@dataclass(frozen=True, eq=False)
class TrainBatch:
    """Aligned anchor/positive/negative rows of base embeddings.

    The candidate set is the positives followed by the negatives, so the
    positive of anchor ``i`` sits at candidate column ``i``.
    """

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    weights: np.ndarray | None = None
    ids: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self) -> None:
        if not (self.anchors.shape == self.positives.shape == self.negatives.shape):
            raise ValueError("anchors, positives and negatives must have matching shapes")
        if self.weights is not None and self.weights.shape != (self.size,):
            raise ValueError("one weight per anchor required")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    @property
    def candidates(self) -> np.ndarray:
        return np.vstack([self.positives, self.negatives])


def _anchor_weights(batch: TrainBatch, config: FineTuneConfig) -> np.ndarray:
    b = batch.size
    if config.entropy_weighting and batch.weights is not None:
        w = np.asarray(batch.weights, dtype=np.float64)
        total = w.sum()
        if total > 0:
            return w / total
    return np.full(b, 1.0 / b)


def _margin_matrix(b: int, gamma: float, mode: str) -> np.ndarray:
    m = np.full((b, 2 * b), gamma)
    if mode == "negatives":
        m[np.arange(b), np.arange(b)] = 0.0
    return m


def loss_from_similarities(
    sims: np.ndarray,
    tau: float,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted softmax cross-entropy where row ``i``'s target is column ``i``.

    Returns the loss and the per-anchor losses.
    """
    logits = np.asarray(sims, dtype=np.float64) / tau
    b = logits.shape[0]
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    per_anchor = lse - logits[np.arange(b), np.arange(b)]
    w = np.full(b, 1.0 / b) if weights is None else weights
    return float(w @ per_anchor), per_anchor


def _forward(adapter: Adapter, batch: TrainBatch, config: FineTuneConfig):
    xa, xd = batch.anchors, batch.candidates
    za, zd = apply_adapter(adapter, xa), apply_adapter(adapter, xd)
    na = np.linalg.norm(za, axis=1)
    nd = np.linalg.norm(zd, axis=1)
    if np.any(na == 0.0) or np.any(nd == 0.0):
        raise CollapsedAdapter("adapter maps a batch vector to zero")
    ua, ud = za / na[:, None], zd / nd[:, None]
    cos = ua @ ud.T
    sims = cos - _margin_matrix(batch.size, config.gamma, config.margin_mode)
    return xa, xd, ua, ud, na, nd, sims


def batch_loss(batch: TrainBatch, config: FineTuneConfig, adapter: Adapter | None = None) -> float:
    if batch.size < 2:
        raise ValueError(f"in-batch negatives need at least 2 triplets, got {batch.size}")
    adapter = adapter or Adapter.identity(batch.anchors.shape[1])
    *_, sims = _forward(adapter, batch, config)
    loss, _ = loss_from_similarities(sims, config.tau, _anchor_weights(batch, config))
    return loss


def loss_gradient(
    batch: TrainBatch,
    adapter: Adapter,
    config: FineTuneConfig,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Loss and its exact gradient w.r.t. the adapter weight (and bias)."""
    if batch.size < 2:
        raise ValueError(f"in-batch negatives need at least 2 triplets, got {batch.size}")
    xa, xd, ua, ud, na, nd, sims = _forward(adapter, batch, config)
    w = _anchor_weights(batch, config)
    logits = sims / config.tau
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    loss, _ = loss_from_similarities(sims, config.tau, w)

    b = batch.size
    g = probs.copy()
    g[np.arange(b), np.arange(b)] -= 1.0
    g *= w[:, None] / config.tau  # dL/dcos; the margin is a constant offset
    d_ua = g @ ud
    d_ud = g.T @ ua
    # back through u = z / |z|
    d_za = (d_ua - ua * np.sum(ua * d_ua, axis=1, keepdims=True)) / na[:, None]
    d_zd = (d_ud - ud * np.sum(ud * d_ud, axis=1, keepdims=True)) / nd[:, None]
    grad_w = d_za.T @ xa + d_zd.T @ xd
    grad_b = d_za.sum(axis=0) + d_zd.sum(axis=0) if adapter.bias is not None else None

    bad = np.argwhere(~np.isfinite(grad_w))
    if bad.size:
        raise NonFiniteError(f"non-finite gradient at weight {tuple(int(i) for i in bad[0])}")
    if grad_b is not None and not np.all(np.isfinite(grad_b)):
        raise NonFiniteError(f"non-finite gradient at bias {int(np.argmin(np.isfinite(grad_b)))}")
    return loss, grad_w, grad_b


@dataclass
class TrainResult:
    adapter: Adapter
    epoch_losses: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    n_triplets: int = 0


def make_batch(
    judgments: Sequence[TripletJudgment],
    embeddings: np.ndarray,
    index: Mapping[str, int],
    entropies: Mapping[str, float] | None = None,
) -> TrainBatch:
    rows = [(index[j.anchor], index[j.positive], index[j.negative]) for j in judgments]  # type: ignore[index]
    a, p, n = (np.asarray(c, dtype=np.int64) for c in zip(*rows))
    weights = None
    if entropies is not None:
        weights = np.array([entropies.get(j.anchor, 0.0) for j in judgments], dtype=np.float64)
    ids = tuple((j.anchor, j.positive, j.negative) for j in judgments)  # type: ignore[misc]
    return TrainBatch(embeddings[a], embeddings[p], embeddings[n], weights, ids)  # type: ignore[arg-type]


def _batches_for_epoch(
    n: int,
    batch_size: int,
    rng: np.random.Generator,
    sampling_weights: np.ndarray | None,
) -> list[np.ndarray]:
    # floor division keeps every batch at least batch_size long
    n_batches = max(1, n // batch_size)
    if sampling_weights is None:
        return np.array_split(rng.permutation(n), n_batches)
    # each batch draws without replacement, proportionally to anchor entropy
    sizes = [len(part) for part in np.array_split(np.arange(n), n_batches)]
    return [rng.choice(n, size=s, replace=False, p=sampling_weights) for s in sizes]


def _sampling_weights(judgments: Sequence[TripletJudgment], entropies: Mapping[str, float]) -> np.ndarray | None:
    w = np.array([max(entropies.get(j.anchor, 0.0), 0.0) for j in judgments])
    positive = np.count_nonzero(w)
    if positive < len(w):
        # zero-entropy anchors keep a small chance so every batch can fill
        floor = w[w > 0].min() * 1e-3 if positive else 1.0
        w = np.where(w > 0, w, floor)
    return w / w.sum()


def train(
    judgments: Sequence[TripletJudgment],
    base_embeddings: np.ndarray,
    ids: Sequence[str],
    config: FineTuneConfig,
    entropies: Mapping[str, float] | None = None,
    adapter: Adapter | None = None,
) -> TrainResult:
    """Mini-batch gradient descent on judged triplets.

    ``entropies`` maps anchor ids to normalised entropy; with
    ``config.entropy_weighting`` set, batches are drawn in proportion to it.
    Returns the snapshot with the lowest epoch-mean loss.
    """
    if any(j.verdict is Verdict.NEITHER for j in judgments):
        raise ValueError("Neither-verdict judgments must be filtered out before training")
    if len(judgments) < config.batch_size:
        raise ValueError(
            f"only {len(judgments)} usable triplets for batch_size={config.batch_size}; "
            "lower batch_size or gather more triplets"
        )
    x = np.asarray(base_embeddings, dtype=np.float64)
    index = {doc_id: i for i, doc_id in enumerate(ids)}
    current = adapter.copy() if adapter is not None else Adapter.identity(
        x.shape[1], config.d_out, config.use_bias)
    rng = np.random.default_rng(config.seed)
    weighting = config.entropy_weighting and entropies is not None
    sampling = _sampling_weights(judgments, entropies) if weighting else None  # type: ignore[arg-type]

    result = TrainResult(current.copy(), n_triplets=len(judgments))
    best = np.inf
    for epoch in range(config.epochs):
        losses = []
        for idx in _batches_for_epoch(len(judgments), config.batch_size, rng, sampling):
            batch = make_batch([judgments[i] for i in idx], x, index)
            loss, gw, gb = loss_gradient(batch, current, config)
            current.weight -= config.lr * gw
            if gb is not None and current.bias is not None:
                current.bias -= config.lr * gb
            current.check_finite()
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        result.epoch_losses.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch + 1, epoch_loss)
        if epoch_loss < best:
            best = epoch_loss
            result.adapter = current.copy()
            result.best_epoch = epoch + 1
    return result
