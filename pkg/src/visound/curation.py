"""Dataset-cleaning logic over crowd-sourced segment annotations.

Source videos are labeled on a fixed grid of short segments (2 seconds by
default), each segment annotated independently for the audio and the visual
modality by three workers with ordinal votes no < sort_of < yes.  A segment
survives when neither modality's aggregated vote is "no"; maximal runs of
surviving segments merge into curated videos.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError

VOTE_NO = "no"
VOTE_SORT_OF = "sort_of"
VOTE_YES = "yes"
VOTES = (VOTE_NO, VOTE_SORT_OF, VOTE_YES)  # ordinal order
MODALITIES = ("audio", "visual")

_VOTE_ALIASES = {
    "no": VOTE_NO,
    "n": VOTE_NO,
    "sort_of": VOTE_SORT_OF,
    "sortof": VOTE_SORT_OF,
    "sort-of": VOTE_SORT_OF,
    "s": VOTE_SORT_OF,
    "yes": VOTE_YES,
    "y": VOTE_YES,
}


def parse_vote(token: str) -> str:
    vote = _VOTE_ALIASES.get(token.strip().lower())
    if vote is None:
        raise DataError(f"unknown vote {token!r}, expected one of yes/sort_of/no")
    return vote


@dataclass(frozen=True)
class SegmentAnnotation:
    video_id: str
    category: str
    segment: int
    modality: str
    votes: tuple[str, str, str]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        if len(self.votes) != 3:
            raise ContractError(f"exactly 3 votes required, got {len(self.votes)}")
        for v in self.votes:
            if v not in VOTES:
                raise DataError(f"unknown vote {v!r}")
        if self.segment < 0:
            raise DataError(f"segment index must be >= 0, got {self.segment}")


@dataclass(frozen=True)
class CuratedVideo:
    """A maximal run of surviving segments, [start, end) on the segment grid."""

    source_video: str
    category: str
    start_segment: int
    end_segment: int
    segment_seconds: float = 2.0

    @property
    def n_segments(self) -> int:
        return self.end_segment - self.start_segment

    @property
    def duration(self) -> float:
        return self.n_segments * self.segment_seconds

    @property
    def id(self) -> str:
        return f"{self.source_video}__{self.start_segment}_{self.end_segment}"


def aggregate_votes(votes) -> str:
    """Majority of 3 ordinal votes; a three-way split resolves to the ordinal
    median, sort_of."""
    votes = tuple(votes)
    if len(votes) != 3:
        raise ContractError(f"exactly 3 votes required, got {len(votes)}")
    for v in votes:
        if v not in VOTES:
            raise DataError(f"unknown vote {v!r}")
    counts = Counter(votes)
    label, n = counts.most_common(1)[0]
    return label if n >= 2 else VOTE_SORT_OF


def _group_by_video(annotations):
    grouped: dict[str, dict[tuple[int, str], SegmentAnnotation]] = {}
    categories: dict[str, str] = {}
    for ann in annotations:
        per_video = grouped.setdefault(ann.video_id, {})
        key = (ann.segment, ann.modality)
        if key in per_video:
            raise DataError(
                f"duplicate annotation for video {ann.video_id} segment "
                f"{ann.segment} modality {ann.modality}"
            )
        per_video[key] = ann
        prev = categories.setdefault(ann.video_id, ann.category)
        if prev != ann.category:
            raise DataError(
                f"video {ann.video_id} annotated with conflicting categories "
                f"{prev!r} and {ann.category!r}"
            )
    return grouped, categories


def filter_and_merge(annotations, segment_seconds: float = 2.0) -> list[CuratedVideo]:
    """Keep segments whose aggregated audio and visual labels are both not
    "no", then merge each maximal run of kept segments into one video."""
    grouped, categories = _group_by_video(annotations)
    curated: list[CuratedVideo] = []
    for video_id in sorted(grouped):
        per_video = grouped[video_id]
        segments = sorted({seg for seg, _ in per_video})
        if segments != list(range(len(segments))):
            raise DataError(f"video {video_id}: segment indices not contiguous from 0")
        keep = []
        for seg in segments:
            labels = {}
            for modality in MODALITIES:
                ann = per_video.get((seg, modality))
                if ann is None:
                    raise DataError(
                        f"video {video_id} segment {seg}: missing {modality} annotation"
                    )
                labels[modality] = aggregate_votes(ann.votes)
            keep.append(all(labels[m] != VOTE_NO for m in MODALITIES))
        start = None
        for seg, kept in enumerate(keep + [False]):
            if kept and start is None:
                start = seg
            elif not kept and start is not None:
                curated.append(
                    CuratedVideo(video_id, categories[video_id], start, seg, segment_seconds)
                )
                start = None
    return curated


@dataclass
class CurationStats:
    total_videos: int
    per_category: dict[str, int]
    mean_duration: float
    std_duration: float
    histogram: dict[float, int]  # duration seconds -> count

    def table(self) -> str:
        lines = [f"videos: {self.total_videos}"]
        for cat in sorted(self.per_category):
            lines.append(f"  {cat}: {self.per_category[cat]}")
        lines.append(f"mean length: {self.mean_duration:.3f}s")
        lines.append(f"std length: {self.std_duration:.3f}s")
        lines.append("length histogram:")
        for dur in sorted(self.histogram):
            lines.append(f"  {dur:g}s: {self.histogram[dur]}")
        return "\n".join(lines)


def dataset_stats(videos) -> CurationStats:
    """Counts, mean/std of lengths, and the length histogram on the segment
    grid (population standard deviation; a single video has std 0)."""
    videos = list(videos)
    if not videos:
        raise ContractError("dataset_stats requires a non-empty curated set")
    durations = np.array([v.duration for v in videos], dtype=np.float64)
    per_category: dict[str, int] = {}
    for v in videos:
        per_category[v.category] = per_category.get(v.category, 0) + 1
    histogram: dict[float, int] = {}
    for d in durations:
        histogram[float(d)] = histogram.get(float(d), 0) + 1
    return CurationStats(
        total_videos=len(videos),
        per_category=per_category,
        mean_duration=float(durations.mean()),
        std_duration=float(durations.std()),
        histogram=histogram,
    )


def load_annotations(path) -> list[SegmentAnnotation]:
    """Parse the tab-separated annotation table.

    Columns: video_id, category, segment, modality, vote1, vote2, vote3.
    Lines starting with '#' are comments.  Errors carry line numbers.
    """
    annotations = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise DataError(
                    f"{path}:{lineno}: expected 7 tab-separated fields, got {len(parts)}"
                )
            try:
                annotations.append(
                    SegmentAnnotation(
                        video_id=parts[0],
                        category=parts[1],
                        segment=int(parts[2]),
                        modality=parts[3].strip().lower(),
                        votes=tuple(parse_vote(v) for v in parts[4:7]),
                    )
                )
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return annotations


def save_annotations(path, annotations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# video_id\tcategory\tsegment\tmodality\tvote1\tvote2\tvote3\n")
        for ann in annotations:
            fh.write(
                "\t".join(
                    [ann.video_id, ann.category, str(ann.segment), ann.modality, *ann.votes]
                )
                + "\n"
            )
