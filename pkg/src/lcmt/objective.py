"""Loss terms: supervised cross-entropy, consistency, local clustering, and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class GraphConfig:
    """Neighbour cut-off in squared-distance units. 0 disables the clustering term."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class BatchGraph:
    weights: np.ndarray
    pairing: str  # "labeled-unlabeled" or "unlabeled-unlabeled"

    @property
    def neighbours(self) -> np.ndarray:
        return self.weights > 0


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    cons: float
    lc: float
    total: float
    lambda1: float
    lambda2: float


def cross_entropy(logits, labels) -> ad.Tensor:
    """Mean of -log p(y_i) over the rows, via log-softmax."""
    logits = ad.constant(logits)
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ad.DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {logits.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return ad.scale(ad.sum_all(ad.pick(ad.log_softmax(logits), labels)), -1.0 / max(len(labels), 1))


def consistency_loss(student_probs, teacher_probs) -> ad.Tensor:
    """Squared difference averaged over batch and classes. The teacher side gets no gradient."""
    student_probs = ad.constant(student_probs)
    teacher_probs = ad.detach(ad.constant(teacher_probs))
    if student_probs.shape != teacher_probs.shape:
        raise ad.DimensionError(f"{student_probs.shape} vs {teacher_probs.shape}")
    return ad.mean_all(ad.square(ad.sub(student_probs, teacher_probs)))


def weights_from_sq_dist(d2: np.ndarray, epsilon: float) -> np.ndarray:
    if epsilon == 0.0:
        return np.zeros_like(d2)
    return np.where(d2 <= epsilon, np.exp(-d2 / epsilon), 0.0)


def edge_weights(za, zb=None, cfg: GraphConfig | None = None) -> BatchGraph:
    """exp(-d2/eps) for pairs with d2 <= eps, else 0. Self-pairs are zeroed when ``zb`` is omitted."""
    if cfg is None:
        raise TypeError("edge_weights needs a GraphConfig")
    za = ad.constant(za).value
    same = zb is None
    d2 = (ad.pairwise_sq_dist(za) if same else ad.pairwise_sq_dist(za, ad.constant(zb).value)).value
    w = weights_from_sq_dist(d2, cfg.epsilon)
    if same:
        np.fill_diagonal(w, 0.0)
    return BatchGraph(weights=w, pairing="unlabeled-unlabeled" if same else "labeled-unlabeled")


def local_clustering_loss(z_l, z_u, cfg: GraphConfig, graphs: tuple[BatchGraph, BatchGraph] | None = None) -> ad.Tensor:
    """Weighted squared feature distances between neighbouring samples.

    Mean over all labeled x unlabeled pairs plus mean over unordered unlabeled
    pairs; labeled pairs are skipped. Edge weights are treated as constants.
    Pass ``graphs`` to reuse precomputed weights instead of building them from
    the current features.
    """
    z_l, z_u = ad.constant(z_l), ad.constant(z_u)
    b_l, b_u = z_l.shape[0], z_u.shape[0]
    if cfg.epsilon == 0.0 and graphs is None:
        return ad.constant(0.0)
    if graphs is None:
        graphs = (edge_weights(z_l.value, z_u.value, cfg), edge_weights(z_u.value, cfg=cfg))
    lu, uu = graphs

    terms = []
    if b_l and b_u:
        d_lu = ad.pairwise_sq_dist(z_l, z_u)
        terms.append(ad.scale(ad.sum_all(ad.mul(d_lu, lu.weights)), 1.0 / (b_l * b_u)))
    if b_u >= 2:
        d_uu = ad.pairwise_sq_dist(z_u)
        # full symmetric sum counts every unordered pair twice
        n_pairs = b_u * (b_u - 1) / 2
        terms.append(ad.scale(ad.sum_all(ad.mul(d_uu, uu.weights)), 0.5 / n_pairs))
    if not terms:
        return ad.constant(0.0)
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def lc_brute_force_oracle(z_l, z_u, cfg: GraphConfig) -> float:
    """Scalar-by-scalar reference for :func:`local_clustering_loss`."""
    z_l = [list(map(float, r)) for r in np.asarray(z_l, dtype=float)]
    z_u = [list(map(float, r)) for r in np.asarray(z_u, dtype=float)]
    eps = cfg.epsilon

    def pair_term(p, q):
        d2 = 0.0
        for a, b in zip(p, q):
            d2 += (a - b) * (a - b)
        if eps == 0.0 or d2 > eps:
            return 0.0
        return math.exp(-d2 / eps) * d2

    first = 0.0
    if z_l and z_u:
        acc = 0.0
        for p in z_l:
            for q in z_u:
                acc += pair_term(p, q)
        first = acc / (len(z_l) * len(z_u))
    second = 0.0
    n = len(z_u)
    if n >= 2:
        acc = 0.0
        for m in range(n):
            for k in range(m + 1, n):
                acc += pair_term(z_u[m], z_u[k])
        second = acc / (n * (n - 1) / 2)
    return first + second


def total_loss(ce, cons, lc, w: LossWeights) -> ad.Tensor:
    """ce + lambda1 * cons + lambda2 * lc."""
    return ad.add(ad.add(ad.constant(ce), ad.scale(cons, w.lambda1)), ad.scale(lc, w.lambda2))


def breakdown(ce, cons, lc, total, w: LossWeights) -> LossBreakdown:
    val = lambda t: float(ad.constant(t).value)
    return LossBreakdown(ce=val(ce), cons=val(cons), lc=val(lc), total=val(total),
                         lambda1=w.lambda1, lambda2=w.lambda2)
