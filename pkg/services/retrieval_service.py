"""
Exact cosine-similarity retrieval for the four privacy retrieval tasks.

This module provides:
- Cosine similarity with zero-vector and dimension checks
- An exact top-k ranking engine with deterministic clip_id tie-breaks
- Clip embedding through raw mean pooling (zero-shot) or trained heads
- Task runners for ego->ego identity, ego->exo identity, scene and moment
- Concurrent query ranking merged by query id
- HR@k evaluation and JSON-lines rankings dumps

Author: EgoLeak Team
Version: 1.0.0
"""

import concurrent.futures
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from config import Config
from utils.constants import RetrievalTask, Split, View
from utils.error_handling import MissingDataError, ValidationError
from .dataset_service import ClipRecord, Dataset, positive_set
from .heads import ProjectionHead, pool
from .metrics_service import MetricReport, chance_hit_rate, hit_rate_at_k

logger = logging.getLogger(__name__)

# =============================================================================
# Domain Types
# =============================================================================

@dataclass(frozen=True)
class Ranking:
    """Candidates for one query in descending score order."""
    query_id: str
    candidates: Tuple[Tuple[str, float], ...]
    truncation_k: Optional[int] = None

    @property
    def candidate_ids(self) -> List[str]:
        return [clip_id for clip_id, _ in self.candidates]

    @property
    def scores(self) -> List[float]:
        return [score for _, score in self.candidates]

    def to_dict(self) -> Dict:
        return {"query": self.query_id,
                "candidates": [{"id": clip_id, "score": score} for clip_id, score in self.candidates]}


@dataclass(frozen=True)
class RetrieverHeads:
    """
    Trained ego/exo projection heads (capability 2), or none for raw embeddings (capability 1).

    Ego clips go through ``ego_head`` and exo clips through ``exo_head``.
    """
    ego_head: Optional[ProjectionHead] = None
    exo_head: Optional[ProjectionHead] = None

    @property
    def is_raw(self) -> bool:
        return self.ego_head is None and self.exo_head is None

    def head_for(self, view: View) -> Optional[ProjectionHead]:
        return self.ego_head if View(view) == View.EGO else self.exo_head

    def embed(self, dataset: Dataset, clip: ClipRecord, frames: Optional[int]) -> np.ndarray:
        matrix = dataset.frames(clip.clip_id, frames)
        head = self.head_for(clip.view)
        if head is None:
            return pool(matrix)
        return head.embed(matrix)


RAW_EMBEDDINGS = RetrieverHeads()

# =============================================================================
# Similarity and Ranking
# =============================================================================

def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """
    Cosine of the angle between two vectors.

    Raises:
        ValidationError: dimension mismatch or a zero vector
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    norm_u, norm_v = np.linalg.norm(u), np.linalg.norm(v)
    if norm_u == 0.0 or norm_v == 0.0:
        raise ValidationError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (norm_u * norm_v), -1.0, 1.0))


class GalleryIndex:
    """
    Read-only gallery of pooled clip vectors, stored unit-normalized in clip_id order.

    Row position doubles as the tie-break rank, so ties resolve by ascending clip_id.
    """

    def __init__(self, clip_ids: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(clip_ids) != vectors.shape[0]:
            raise ValidationError("gallery ids and vectors differ in length")
        if len(set(clip_ids)) != len(clip_ids):
            raise ValidationError("duplicate clip ids in gallery")
        order = sorted(range(len(clip_ids)), key=lambda i: clip_ids[i])
        self.clip_ids: List[str] = [clip_ids[i] for i in order]
        vectors = vectors[order] if order else vectors
        norms = np.linalg.norm(vectors, axis=1) if vectors.size else np.zeros(0)
        if np.any(norms == 0.0):
            zero = self.clip_ids[int(np.flatnonzero(norms == 0.0)[0])]
            raise ValidationError(f"gallery clip {zero} has a zero vector")
        self.unit = vectors / norms[:, None] if vectors.size else vectors
        self.unit.setflags(write=False)
        self._position = {clip_id: i for i, clip_id in enumerate(self.clip_ids)}

    def __len__(self) -> int:
        return len(self.clip_ids)

    @property
    def dim(self) -> int:
        return self.unit.shape[1] if self.unit.ndim == 2 else 0

    def keep_mask(self, exclude: Iterable[str]) -> np.ndarray:
        mask = np.ones(len(self.clip_ids), dtype=bool)
        for clip_id in exclude:
            position = self._position.get(clip_id)
            if position is not None:
                mask[position] = False
        return mask


def rank_gallery(query_emb: Sequence[float], gallery: GalleryIndex, exclude: Iterable[str] = (),
                 top_k: Optional[int] = None, query_id: str = "") -> Ranking:
    """
    Exact cosine ranking of a gallery for one pooled query vector.

    Args:
        query_emb: pooled query vector (any nonzero scale)
        gallery: the gallery index
        exclude: clip ids removed before ranking (self-exclusion)
        top_k: when set, only the first top_k candidates are returned; the
            prefix always equals the full sort's prefix

    Raises:
        ValidationError: zero query, dimension mismatch, empty gallery after exclusion
    """
    query = np.asarray(query_emb, dtype=np.float64)
    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise ValidationError(f"query {query_id or '?'} is a zero vector")
    if len(gallery) and query.shape[0] != gallery.dim:
        raise ValidationError(f"dimension mismatch: query {query.shape[0]} vs gallery {gallery.dim}")
    positions = np.flatnonzero(gallery.keep_mask(exclude))
    if positions.size == 0:
        raise ValidationError("empty gallery")

    scores = gallery.unit[positions] @ (query / norm)
    if top_k is not None and top_k < 1:
        raise ValidationError(f"top_k must be positive, got {top_k}")
    if top_k is not None and top_k < positions.size:
        threshold = np.partition(scores, positions.size - top_k)[positions.size - top_k]
        selected = np.flatnonzero(scores >= threshold)
    else:
        selected = np.arange(positions.size)
    order = selected[np.lexsort((positions[selected], -scores[selected]))]
    if top_k is not None:
        order = order[:top_k]
    candidates = tuple((gallery.clip_ids[positions[i]], float(scores[i])) for i in order)
    return Ranking(query_id, candidates, top_k)


# =============================================================================
# Task Runners
# =============================================================================

def embed_clips(dataset: Dataset, clips: Sequence[ClipRecord], embedder: RetrieverHeads = RAW_EMBEDDINGS,
                frames: Optional[int] = Config.DEFAULT_FRAMES) -> Tuple[List[str], np.ndarray]:
    """Pooled (and optionally projected) vectors for clips, in the given order."""
    vectors = [embedder.embed(dataset, clip, frames) for clip in clips]
    if not vectors:
        return [], np.zeros((0, 0))
    return [clip.clip_id for clip in clips], np.stack(vectors)


def gallery_view(task: RetrievalTask, scene_gallery: View = View.EGO) -> View:
    task = RetrievalTask(task)
    if task in (RetrievalTask.EGO_TO_EXO_IDENTITY, RetrievalTask.MOMENT):
        return View.EXO
    if task == RetrievalTask.SCENE:
        return View(scene_gallery)
    return View.EGO


def task_queries(dataset: Dataset, task: RetrievalTask, split: Optional[Split] = None) -> List[ClipRecord]:
    """
    Ego queries eligible for a task.

    Raises:
        MissingDataError: scene task with a query lacking scene_id
    """
    queries = dataset.clips_in(View.EGO, split)
    if RetrievalTask(task) == RetrievalTask.SCENE:
        missing = [clip.clip_id for clip in queries if clip.scene_id is None]
        if missing:
            raise MissingDataError(f"scene task requires scene_id; clip {missing[0]} has none")
    return queries


def task_positives(dataset: Dataset, task: RetrievalTask, queries: Sequence[ClipRecord],
                   gallery_ids: Iterable[str], scene_gallery: View = View.EGO) -> Dict[str, Set[str]]:
    """Positive sets restricted to the clips actually in the gallery."""
    in_gallery = set(gallery_ids)
    return {
        clip.clip_id: positive_set(dataset, task, clip.clip_id, scene_gallery) & in_gallery
        for clip in queries
    }


def run_retrieval_task(dataset: Dataset, task: RetrievalTask, embedder: Optional[RetrieverHeads] = None,
                       split: Optional[Split] = None, frames: Optional[int] = Config.DEFAULT_FRAMES,
                       scene_gallery: View = View.EGO, top_k: Optional[int] = None,
                       workers: int = Config.WORKERS) -> Dict[str, Ranking]:
    """
    Rank the task's gallery for every eligible ego query.

    Args:
        dataset: the benchmark
        task: which retrieval task
        embedder: trained heads (capability 2) or None for raw embeddings (capability 1)
        split: restrict queries and gallery to one split (None = all clips)
        frames: frame subsampling
        scene_gallery: gallery side for the scene task
        top_k: truncate rankings
        workers: threads used to rank queries

    Returns:
        Dict[str, Ranking]: rankings keyed by query id, in ascending id order

    Raises:
        MissingDataError: scene task without scene ids
        ValidationError: moment task where a query has no synchronized exo clip
    """
    task = RetrievalTask(task)
    embedder = embedder or RAW_EMBEDDINGS
    queries = task_queries(dataset, task, split)
    side = gallery_view(task, scene_gallery)
    gallery_clips = dataset.clips_in(side, split)

    if task == RetrievalTask.MOMENT:
        synced = task_positives(dataset, task, queries, [c.clip_id for c in gallery_clips])
        empty = [query_id for query_id, ids in synced.items() if not ids]
        if empty:
            raise ValidationError(f"moment retrieval needs synchronized exo clips; take of {empty[0]} has none")

    gallery_ids, gallery_vectors = embed_clips(dataset, gallery_clips, embedder, frames)
    gallery = GalleryIndex(gallery_ids, gallery_vectors)
    query_ids, query_vectors = embed_clips(dataset, queries, embedder, frames)
    same_gallery = side == View.EGO

    def rank_one(index: int) -> Ranking:
        query_id = query_ids[index]
        exclude = (query_id,) if same_gallery else ()
        return rank_gallery(query_vectors[index], gallery, exclude, top_k, query_id)

    if workers > 1 and len(query_ids) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(rank_one, range(len(query_ids))))
    else:
        results = [rank_one(i) for i in range(len(query_ids))]

    logger.info(f"Ranked {len(results)} {task.value} queries against {len(gallery)} {side.value} clips")
    return {ranking.query_id: ranking for ranking in sorted(results, key=lambda r: r.query_id)}


def evaluate_retrieval(dataset: Dataset, task: RetrievalTask, rankings: Mapping[str, Ranking],
                       ks: Sequence[int] = Config.DEFAULT_HIT_RATE_KS, split: Optional[Split] = None,
                       scene_gallery: View = View.EGO) -> List[MetricReport]:
    """
    HR@k rows for each k plus the matching chance rows.

    Chance uses the gallery size and the median positive-set size of the
    evaluated queries.
    """
    task = RetrievalTask(task)
    queries = [dataset.clip(query_id) for query_id in rankings]
    gallery_ids = {c.clip_id for c in dataset.clips_in(gallery_view(task, scene_gallery), split)}
    positives = task_positives(dataset, task, queries, gallery_ids, scene_gallery)
    reports = []
    for k in ks:
        report = hit_rate_at_k(rankings, positives, k)
        reports.append(MetricReport(f"{task.value}/{report.metric_name}", report.value, report.n_evaluated,
                                    report.n_excluded, {"k": k, "task": task.value}))
    sizes = sorted(len(p) for p in positives.values() if p)
    gallery_size = len(gallery_ids) - (1 if gallery_view(task, scene_gallery) == View.EGO else 0)
    if sizes and gallery_size > 0:
        median_p = sizes[len(sizes) // 2]
        for k in ks:
            chance = chance_hit_rate(gallery_size, min(median_p, gallery_size), min(k, gallery_size))
            reports.append(MetricReport(f"{task.value}/chance@{k}", chance, len(sizes), 0,
                                        {"k": k, "task": task.value, "gallery_size": gallery_size,
                                         "positives": median_p}))
    return reports


def write_rankings(rankings: Mapping[str, Ranking], path: Union[str, Path]) -> None:
    """Dump rankings as JSON lines, one object per query."""
    with open(path, "w", encoding="utf-8") as handle:
        for query_id in sorted(rankings):
            handle.write(json.dumps(rankings[query_id].to_dict()) + "\n")
