"""Entropy over nearby clusters, anchor selection and triplet candidates."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cluster import ClusterState, squared_distances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    lam: float = 0.5
    sigma_low: float = 0.3
    sigma_high: float = 1.0
    # None means min(256, n // 10), resolved against the corpus size
    n_anchors: int | None = None
    candidates_rule: str = "same_cluster_plus_nearest"

    def __post_init__(self) -> None:
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.sigma_low < 0.0 or self.sigma_high <= self.sigma_low:
            raise ValueError(
                f"need 0 <= sigma_low < sigma_high, got {self.sigma_low}, {self.sigma_high}"
            )
        if self.n_anchors is not None and self.n_anchors < 0:
            raise ValueError("n_anchors must be nonnegative")
        if self.candidates_rule != "same_cluster_plus_nearest":
            raise ValueError(f"unknown candidates rule {self.candidates_rule!r}")

    def anchors_for(self, n_docs: int) -> int:
        if self.n_anchors is not None:
            return self.n_anchors
        return max(1, min(256, n_docs // 10))


@dataclass(frozen=True)
class EntropyRecord:
    doc_id: str
    cluster: int
    phi: int
    nearest_clusters: tuple[int, ...]
    entropy: float
    normalized_entropy: float


@dataclass(frozen=True)
class Triplet:
    anchor: str
    cand1: str
    cand2: str
    cand1_cluster: int
    cand2_cluster: int

    def __post_init__(self) -> None:
        if len({self.anchor, self.cand1, self.cand2}) != 3:
            raise ValueError(f"triplet documents must be distinct: {self}")
        if self.cand1_cluster == self.cand2_cluster:
            raise ValueError("candidates must come from different clusters")

    @property
    def triplet_id(self) -> str:
        return hashlib.sha256(f"{self.anchor}\x1f{self.cand1}\x1f{self.cand2}".encode()).hexdigest()[:32]

    def swapped(self) -> "Triplet":
        # cand1 leaves the anchor's cluster here; used to probe order-equivariance
        return Triplet(self.anchor, self.cand2, self.cand1, self.cand2_cluster, self.cand1_cluster)


def subset_size(lam: float, K: int) -> int:
    """Number of nearest clusters entering the entropy: max(ceil(lam*K), 2), at most K."""
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    # rounding first keeps products like 0.3*10 = 3.0000000000000004 from ceiling to 4
    raw = math.ceil(round(lam * K, 9))
    return min(max(raw, 2), K)


def renormalize(probs: np.ndarray) -> np.ndarray:
    total = probs.sum()
    if total <= 0:
        raise ValueError("cannot renormalise an all-zero probability vector")
    return probs / total


def shannon_entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _nearest(row_order: np.ndarray, hard: int, phi: int) -> tuple[int, ...]:
    rest = [int(c) for c in row_order if c != hard]
    return (hard, *rest[:phi - 1])


def entropy_of(
    doc: int,
    state: ClusterState,
    soft: np.ndarray,
    config: SamplerConfig,
    ids: Sequence[str] | None = None,
    distances: np.ndarray | None = None,
) -> EntropyRecord:
    """Entropy of one document's memberships over its ``phi`` nearest clusters.

    ``distances`` is the document's squared distance row; without it the
    membership row itself orders clusters (it decreases with distance).
    """
    row = np.asarray(soft[doc], dtype=np.float64)
    if row.shape != (state.K,):
        raise ValueError(f"soft assignment row has shape {row.shape}, expected ({state.K},)")
    phi = subset_size(config.lam, state.K)
    key = np.asarray(distances, dtype=np.float64) if distances is not None else -row
    order = np.argsort(key, kind="stable")
    nearest = _nearest(order, int(state.hard_assign[doc]), phi)
    p_hat = renormalize(row[list(nearest)])
    h = shannon_entropy(p_hat)
    return EntropyRecord(
        doc_id=ids[doc] if ids is not None else str(doc),
        cluster=int(state.hard_assign[doc]),
        phi=phi,
        nearest_clusters=nearest,
        entropy=h,
        normalized_entropy=h / math.log(phi),
    )


def entropy_records(
    state: ClusterState,
    embeddings: np.ndarray,
    soft: np.ndarray,
    config: SamplerConfig,
    ids: Sequence[str],
) -> list[EntropyRecord]:
    d2 = squared_distances(embeddings, state.centroids)
    return [entropy_of(i, state, soft, config, ids, d2[i]) for i in range(len(ids))]


def select_anchors(records: Sequence[EntropyRecord], config: SamplerConfig) -> list[str]:
    """Documents inside the normalised-entropy band, most uncertain first."""
    pool = [r for r in records if config.sigma_low <= r.normalized_entropy <= config.sigma_high]
    pool.sort(key=lambda r: (-r.normalized_entropy, r.doc_id))
    return [r.doc_id for r in pool[:config.anchors_for(len(records))]]


def anchor_rng(seed: int, doc_id: str) -> np.random.Generator:
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def sample_candidates(
    anchor: int,
    record: EntropyRecord,
    state: ClusterState,
    ids: Sequence[str],
    seed: int,
) -> Triplet | None:
    """Positive candidate from the anchor's cluster, negative from a nearby one.

    The negative's cluster is drawn among the other nearest clusters with
    probability proportional to cluster size. Returns None (and logs why)
    when no valid triplet exists for this anchor.
    """
    rng = anchor_rng(seed, ids[anchor])
    own = int(state.hard_assign[anchor])
    mates = state.members(own)
    mates = mates[mates != anchor]
    if mates.size == 0:
        log.info("skipping anchor %s: its cluster %d is a singleton", ids[anchor], own)
        return None
    others = np.array([c for c in record.nearest_clusters if c != own], dtype=np.int64)
    sizes = state.sizes()[others] if others.size else np.zeros(0)
    if sizes.sum() == 0:
        log.info("skipping anchor %s: no populated neighbouring cluster", ids[anchor])
        return None
    pos = int(mates[rng.integers(mates.size)])
    other = int(others[rng.choice(others.size, p=sizes / sizes.sum())])
    pool = state.members(other)
    neg = int(pool[rng.integers(pool.size)])
    return Triplet(ids[anchor], ids[pos], ids[neg], own, other)


def build_triplets(
    anchors: Iterable[str],
    records: Sequence[EntropyRecord],
    state: ClusterState,
    ids: Sequence[str],
    seed: int,
) -> tuple[list[Triplet], int]:
    """One triplet per anchor; returns the triplets and the number skipped."""
    index = {doc_id: i for i, doc_id in enumerate(ids)}
    out: list[Triplet] = []
    skipped = 0
    for doc_id in anchors:
        i = index[doc_id]
        t = sample_candidates(i, records[i], state, ids, seed)
        if t is None:
            skipped += 1
        else:
            out.append(t)
    return out, skipped


def write_entropy_csv(records: Iterable[EntropyRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "cluster", "phi", "entropy", "normalized_entropy"])
        for r in records:
            w.writerow([r.doc_id, r.cluster, r.phi, repr(r.entropy), repr(r.normalized_entropy)])
