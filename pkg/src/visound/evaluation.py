"""Likelihood-based audio retrieval: visual features act as queries and every
audio in the pooled test database is scored by its conditional log-likelihood
under the query's model.

Metrics follow the two levels of the retrieval task: category-level (any
top-k audio shares the query's category) and instance-level (the query's own
audio appears in the top k).  Ties break by candidate id, so reports are
deterministic.  With per-category models, each query is scored by its own
category's model; chance levels are reported both pool-wide and per category
pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Manifest
from .errors import ConfigError, ContractError
from .generator import GeneratorModel, log_likelihood, log_likelihood_batch
from .training import _ClipCache


def score_pair(model: GeneratorModel, query_feats, candidate_clip) -> float:
    """Log-likelihood of the candidate audio under the query's conditioning."""
    return log_likelihood(model, candidate_clip, query_feats)


@dataclass
class QueryResult:
    query_id: str
    category: str
    ranking: tuple[str, ...]  # candidate ids, best first
    scores: tuple[float, ...]  # aligned with ranking


@dataclass
class RetrievalReport:
    pool_size: int
    ks: tuple[int, ...]
    category_accuracy: dict[int, float]
    instance_accuracy: dict[int, float]
    chance_category: float
    chance_instance_pool: float  # 1 / pool size
    chance_instance_category: float  # 1 / mean per-category pool size
    per_query: list[QueryResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def table(self) -> str:
        lines = [f"pool size: {self.pool_size}"]
        for k in self.ks:
            lines.append(f"category top-{k}: {self.category_accuracy[k]:.4f}")
        for k in self.ks:
            lines.append(f"instance top-{k}: {self.instance_accuracy[k]:.4f}")
        lines.append(f"chance category: {self.chance_category:.4f}")
        lines.append(f"chance instance (pool-wide): {self.chance_instance_pool:.4f}")
        lines.append(f"chance instance (per-category pool): {self.chance_instance_category:.4f}")
        return "\n".join(lines)


def compute_score_matrix(models, manifest: Manifest, split: str = "test") -> tuple[list, list, np.ndarray]:
    """Score every (query video, candidate audio) pair in a split.

    ``models`` is either one multi-category model or a mapping
    category -> model.  Returns (records, records, matrix) where
    matrix[i, j] scores candidate j under query i's conditioning.
    """
    records = sorted(manifest.split(split), key=lambda r: r.id)
    if not records:
        raise ContractError(f"split {split!r} is empty")
    if isinstance(models, GeneratorModel):
        model_for = {c: models for c in manifest.categories}
    else:
        model_for = dict(models)
        missing = {r.category for r in records} - set(model_for)
        if missing:
            raise ConfigError(f"no model supplied for categories {sorted(missing)}")
    cache = _ClipCache(manifest)
    codes = np.stack([cache.get(r)[0] for r in records], axis=0)
    matrix = np.zeros((len(records), len(records)), dtype=np.float64)
    for qi, query in enumerate(records):
        model = model_for[query.category]
        track = cache.get(query)[1]
        matrix[qi, :] = log_likelihood_batch(model, codes, track)
    return records, records, matrix


def rank_and_report(queries, pool, matrix: np.ndarray, ks=(1, 5)) -> RetrievalReport:
    """Turn a score matrix into rankings and top-k accuracies."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(queries), len(pool)):
        raise ContractError(
            f"score matrix shape {matrix.shape} does not match "
            f"{len(queries)} queries x {len(pool)} candidates"
        )
    if not np.isfinite(matrix).all():
        raise ContractError("score matrix contains non-finite values")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if any(k < 1 for k in ks):
        raise ContractError(f"top-k values must be >= 1, got {ks}")
    pool_ids = [r.id for r in pool]
    pool_cats = [r.category for r in pool]
    per_query: list[QueryResult] = []
    cat_hits = {k: 0 for k in ks}
    inst_hits = {k: 0 for k in ks}
    for qi, query in enumerate(queries):
        order = sorted(range(len(pool)), key=lambda j: (-matrix[qi, j], pool_ids[j]))
        per_query.append(
            QueryResult(
                query_id=query.id,
                category=query.category,
                ranking=tuple(pool_ids[j] for j in order),
                scores=tuple(float(matrix[qi, j]) for j in order),
            )
        )
        for k in ks:
            top = order[:k]
            if any(pool_cats[j] == query.category for j in top):
                cat_hits[k] += 1
            if any(pool_ids[j] == query.id for j in top):
                inst_hits[k] += 1
    nq = len(queries)
    cat_sizes = {}
    for c in pool_cats:
        cat_sizes[c] = cat_sizes.get(c, 0) + 1
    chance_cat = float(np.mean([cat_sizes.get(q.category, 0) / len(pool) for q in queries]))
    mean_cat_pool = float(np.mean(list(cat_sizes.values())))
    return RetrievalReport(
        pool_size=len(pool),
        ks=ks,
        category_accuracy={k: cat_hits[k] / nq for k in ks},
        instance_accuracy={k: inst_hits[k] / nq for k in ks},
        chance_category=chance_cat,
        chance_instance_pool=1.0 / len(pool),
        chance_instance_category=1.0 / mean_cat_pool,
        per_query=per_query,
    )


def run_retrieval(models, manifest: Manifest, ks=(1, 5), split: str = "test") -> RetrievalReport:
    """End-to-end retrieval over a split's pooled audio database."""
    queries, pool, matrix = compute_score_matrix(models, manifest, split)
    return rank_and_report(queries, pool, matrix, ks)


def random_score_matrix(n_queries: int, n_pool: int, seed: int) -> np.ndarray:
    """Seeded random scores, the chance-level control for retrieval."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC7A0]))
    return rng.standard_normal((n_queries, n_pool))
