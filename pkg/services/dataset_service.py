"""
Benchmark data model and ingestion for the EgoLeak toolkit.

This module handles the clip-level data model including:
- Clip records with identity, take, scene and demographic labels
- Manifest and embedding-file ingestion with full validation
- Dataset bundles (manifest + ego/exo embedding files) on disk
- Positive sets for the four retrieval tasks
- Frame subsampling and split bookkeeping

Author: EgoLeak Team
Version: 1.0.0
"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from utils.constants import (
    ATTRIBUTE_CLASSES,
    EGO_EMBEDDINGS_FILE,
    EXO_EMBEDDINGS_FILE,
    MANIFEST_FILE,
    PROVENANCE_FILE,
    Attribute,
    RetrievalTask,
    Split,
    View,
)
from utils.error_handling import (
    DataFormatError,
    MissingDataError,
    ValidationError,
    parse_enum,
    validate_required_fields,
)
from .embedding_store import EmbeddingTable, read_embeddings, subsample_frames, write_embeddings

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_REQUIRED_FIELDS = ("clip_id", "view", "identity_id", "take_id", "split", "frame_count")
_MANIFEST_FIELDS = _REQUIRED_FIELDS + ("scene_id", "gender", "race", "age")

# =============================================================================
# Domain Types
# =============================================================================

@dataclass(frozen=True)
class ClipRecord:
    """One video clip: who wore the camera, which take and scene, and its labels."""
    clip_id: str
    view: View
    identity_id: str
    take_id: str
    split: Split
    frame_count: int
    scene_id: Optional[str] = None
    gender: Optional[str] = None
    race: Optional[str] = None
    age: Optional[str] = None

    def label(self, attribute: Attribute) -> Optional[str]:
        """Return the clip's label for a demographic attribute, or None when unannotated."""
        return getattr(self, Attribute(attribute).value)

    def demographics(self) -> Tuple[Optional[str], Optional[str], Optional[str]]:
        return (self.gender, self.race, self.age)

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        record["view"] = self.view.value
        record["split"] = self.split.value
        return {key: record[key] for key in _MANIFEST_FIELDS}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ClipRecord":
        """
        Parse one manifest object, checking enums as exact strings.

        Raises:
            DataFormatError: missing fields, unknown fields or out-of-enum values
        """
        if not isinstance(record, Mapping):
            raise DataFormatError(f"manifest entries must be objects, got {type(record).__name__}")
        validate_required_fields(record, _REQUIRED_FIELDS, context=f"clip {record.get('clip_id', '?')}")
        unknown = set(record) - set(_MANIFEST_FIELDS)
        if unknown:
            raise DataFormatError(f"clip {record['clip_id']} has unknown fields: {', '.join(sorted(unknown))}")

        labels = {}
        for attribute in Attribute:
            value = record.get(attribute.value)
            if value is not None and value not in ATTRIBUTE_CLASSES[attribute]:
                allowed = ", ".join(ATTRIBUTE_CLASSES[attribute])
                raise DataFormatError(
                    f"clip {record['clip_id']}: {attribute.value} label {value!r} is not one of: {allowed}"
                )
            labels[attribute.value] = value

        frame_count = record["frame_count"]
        if not isinstance(frame_count, int) or isinstance(frame_count, bool) or frame_count <= 0:
            raise DataFormatError(f"clip {record['clip_id']}: frame_count must be a positive integer")

        return cls(
            clip_id=str(record["clip_id"]),
            view=parse_enum(View, record["view"], "view"),
            identity_id=str(record["identity_id"]),
            take_id=str(record["take_id"]),
            split=parse_enum(Split, record["split"], "split"),
            frame_count=frame_count,
            scene_id=record.get("scene_id"),
            **labels,
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable benchmark: clip records plus ego and exo embedding tables.

    Indexes by id, identity and take are built once at construction; the
    object is safe to share across evaluation threads.
    """
    clips: Tuple[ClipRecord, ...]
    ego_embeddings: EmbeddingTable
    exo_embeddings: EmbeddingTable
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        validate_dataset(self)
        by_id = {clip.clip_id: clip for clip in self.clips}
        by_identity: Dict[str, List[ClipRecord]] = defaultdict(list)
        by_take: Dict[str, List[ClipRecord]] = defaultdict(list)
        for clip in self.clips:
            by_identity[clip.identity_id].append(clip)
            by_take[clip.take_id].append(clip)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_identity", dict(by_identity))
        object.__setattr__(self, "_by_take", dict(by_take))

    # -------------------------------------------------------------------------
    # Lookups
    # -------------------------------------------------------------------------

    def clip(self, clip_id: str) -> ClipRecord:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise MissingDataError(f"unknown clip {clip_id}")

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._by_id

    def clips_in(self, view: Optional[View] = None, split: Optional[Split] = None) -> List[ClipRecord]:
        """Clips filtered by view and split, in ascending clip_id order."""
        selected = [
            clip for clip in self.clips
            if (view is None or clip.view == view) and (split is None or clip.split == split)
        ]
        return sorted(selected, key=lambda clip: clip.clip_id)

    def identity_clips(self, identity_id: str) -> List[ClipRecord]:
        return list(self._by_identity.get(identity_id, []))

    def take_clips(self, take_id: str) -> List[ClipRecord]:
        return list(self._by_take.get(take_id, []))

    def table(self, view: View) -> EmbeddingTable:
        return self.ego_embeddings if View(view) == View.EGO else self.exo_embeddings

    def frames(self, clip_id: str, frames: Optional[int] = None) -> np.ndarray:
        """
        Frame matrix for a clip as float64, subsampled to ``frames`` rows.

        Raises:
            MissingDataError: the clip has no embedding row
        """
        clip = self.clip(clip_id)
        table = self.table(clip.view)
        if clip_id not in table:
            raise MissingDataError(f"missing embedding for clip {clip_id}")
        return subsample_frames(table.rows[clip_id], frames).astype(np.float64)

    def labels(self, attribute: Attribute, clips: Optional[Iterable[ClipRecord]] = None) -> Dict[str, str]:
        """Labels for one attribute; unannotated clips are left out for this attribute only."""
        source = self.clips if clips is None else clips
        return {clip.clip_id: clip.label(attribute) for clip in source if clip.label(attribute) is not None}

    def subset(self, clip_ids: Iterable[str], note: str = "") -> "Dataset":
        """A dataset restricted to the given clips, e.g. an exo retrieval pool."""
        keep = set(clip_ids)
        clips = [clip for clip in self.clips if clip.clip_id in keep]
        ego = EmbeddingTable(self.ego_embeddings.dim,
                             {k: v for k, v in self.ego_embeddings.rows.items() if k in keep},
                             self.ego_embeddings.normalized)
        exo = EmbeddingTable(self.exo_embeddings.dim,
                             {k: v for k, v in self.exo_embeddings.rows.items() if k in keep},
                             self.exo_embeddings.normalized)
        provenance = dict(self.provenance)
        if note:
            provenance["subset"] = note
        return Dataset(tuple(clips), ego, exo, provenance)

    def manifest(self) -> List[Dict[str, Any]]:
        return [clip.to_dict() for clip in self.clips]


# =============================================================================
# Validation
# =============================================================================

def validate_dataset(dataset: Dataset) -> None:
    """
    Check every Dataset invariant.

    Raises:
        DataFormatError: duplicate ids, inconsistent demographics, frame-count mismatch
        MissingDataError: clip without embedding, or embedding without clip
    """
    seen: Set[str] = set()
    for clip in dataset.clips:
        if clip.clip_id in seen:
            raise DataFormatError(f"duplicate clip_id {clip.clip_id}")
        seen.add(clip.clip_id)

    demographics: Dict[str, Tuple[Optional[str], ...]] = {}
    for clip in dataset.clips:
        known = demographics.get(clip.identity_id)
        current = clip.demographics()
        if known is None:
            demographics[clip.identity_id] = current
            continue
        for attribute, a, b in zip(Attribute, known, current):
            if a is not None and b is not None and a != b:
                raise DataFormatError(
                    f"identity {clip.identity_id} has conflicting {attribute.value} labels: {a} vs {b}"
                )
        demographics[clip.identity_id] = tuple(a if a is not None else b for a, b in zip(known, current))

    for view, table in ((View.EGO, dataset.ego_embeddings), (View.EXO, dataset.exo_embeddings)):
        expected = {clip.clip_id: clip for clip in dataset.clips if clip.view == view}
        unknown = sorted(set(table.rows) - set(expected))
        if unknown:
            raise MissingDataError(f"unknown clip_id in {view.value} embedding file: {unknown[0]}")
        for clip_id, clip in expected.items():
            if clip_id not in table.rows:
                raise MissingDataError(f"missing embedding for clip {clip_id}")
            if table.rows[clip_id].shape[0] != clip.frame_count:
                raise DataFormatError(
                    f"clip {clip_id}: manifest frame_count {clip.frame_count} "
                    f"but embedding has {table.rows[clip_id].shape[0]} frames"
                )


# =============================================================================
# Ingestion and Bundles
# =============================================================================

def read_manifest(manifest_path: PathLike) -> List[ClipRecord]:
    """Parse a JSON manifest into clip records."""
    path = Path(manifest_path)
    if not path.exists():
        raise DataFormatError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"malformed manifest {path}: {e}")
    if not isinstance(payload, list):
        raise DataFormatError(f"manifest {path} must be a JSON array of clip objects")
    return [ClipRecord.from_dict(record) for record in payload]


def ingest(manifest_path: PathLike, ego_emb_path: PathLike, exo_emb_path: PathLike,
           provenance: Optional[Mapping[str, Any]] = None) -> Dataset:
    """
    Load and validate a dataset from a manifest and two embedding files.

    Args:
        manifest_path: JSON array of clip records
        ego_emb_path: embedding file holding every Ego clip
        exo_emb_path: embedding file holding every Exo clip
        provenance: free-text metadata carried with the dataset

    Returns:
        Dataset: validated, immutable dataset
    """
    clips = read_manifest(manifest_path)
    ego = read_embeddings(ego_emb_path)
    exo = read_embeddings(exo_emb_path)
    meta = dict(provenance or {})
    dataset = Dataset(tuple(clips), ego, exo, meta)
    logger.info(
        f"Ingested {len(clips)} clips ({len(ego)} ego, {len(exo)} exo, dims {ego.dim}/{exo.dim})"
    )
    return dataset


def save_dataset(dataset: Dataset, out_dir: PathLike) -> Path:
    """Write a dataset bundle: manifest, both embedding files and provenance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_FILE).write_text(json.dumps(dataset.manifest(), indent=2) + "\n", encoding="utf-8")
    write_embeddings(dataset.ego_embeddings, out / EGO_EMBEDDINGS_FILE)
    write_embeddings(dataset.exo_embeddings, out / EXO_EMBEDDINGS_FILE)
    (out / PROVENANCE_FILE).write_text(
        json.dumps(dict(dataset.provenance), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def load_dataset(bundle_dir: PathLike) -> Dataset:
    """Load a dataset bundle written by ``save_dataset``."""
    bundle = Path(bundle_dir)
    if not (bundle / MANIFEST_FILE).exists():
        raise MissingDataError(f"{bundle} is not a dataset bundle (no {MANIFEST_FILE})")
    provenance = {}
    if (bundle / PROVENANCE_FILE).exists():
        provenance = json.loads((bundle / PROVENANCE_FILE).read_text(encoding="utf-8"))
    return ingest(bundle / MANIFEST_FILE, bundle / EGO_EMBEDDINGS_FILE, bundle / EXO_EMBEDDINGS_FILE, provenance)


# =============================================================================
# Positive Sets
# =============================================================================

def positive_set(dataset: Dataset, task: RetrievalTask, query_clip: str,
                 scene_gallery: View = View.EGO) -> Set[str]:
    """
    Clips that count as hits for a query under a retrieval task.

    Args:
        dataset: the benchmark
        task: EgoToEgoIdentity, EgoToExoIdentity, Scene or Moment
        query_clip: an Ego clip id
        scene_gallery: gallery side for the Scene task

    Returns:
        Set[str]: positive clip ids (may be empty; callers exclude such queries)

    Raises:
        ValidationError: query is not an Ego clip
        MissingDataError: Scene task on a query without scene_id
    """
    query = dataset.clip(query_clip)
    if query.view != View.EGO:
        raise ValidationError(f"query {query_clip} is not an Ego clip")
    task = RetrievalTask(task)

    if task == RetrievalTask.EGO_TO_EGO_IDENTITY:
        return {c.clip_id for c in dataset.identity_clips(query.identity_id)
                if c.view == View.EGO and c.clip_id != query.clip_id}
    if task == RetrievalTask.EGO_TO_EXO_IDENTITY:
        return {c.clip_id for c in dataset.identity_clips(query.identity_id) if c.view == View.EXO}
    if task == RetrievalTask.MOMENT:
        return {c.clip_id for c in dataset.take_clips(query.take_id) if c.view == View.EXO}

    if query.scene_id is None:
        raise MissingDataError(f"query {query_clip} has no scene_id for the scene task")
    side = View(scene_gallery)
    return {c.clip_id for c in dataset.clips
            if c.view == side and c.scene_id == query.scene_id and c.clip_id != query.clip_id}
