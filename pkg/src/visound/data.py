"""Feature ingestion, frame/sample alignment, manifests, and the synthetic
corpus generator used for desk-scale verification.

Per-frame visual features are produced by external networks and ingested
from files; this module never computes them.  The one alignment identity all
loaders enforce: frames * step = padded audio samples, where step =
ceil(sr_audio / sr_video).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .audio import QuantizedClip, Waveform, pad_to_length, quantize, read_wav, write_wav
from .errors import ConfigError, ContractError, DataError, FormatError

KIND_APPEARANCE = "appearance"
KIND_APPEARANCE_FLOW = "appearance+flow"
_KIND_CODES = {KIND_APPEARANCE: 0, KIND_APPEARANCE_FLOW: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class FeatureTrack:
    """Per-frame feature matrix (frames x dim)."""

    values: np.ndarray
    kind: str = KIND_APPEARANCE

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"feature matrix must be non-empty 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("feature matrix contains non-finite values")
        if self.kind not in _KIND_CODES:
            raise DataError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "values", arr)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def step_size(sr_audio: float, sr_video: float) -> int:
    """Audio samples per video frame: ceil(sr_audio / sr_video).

    Rates are interpreted exactly via their decimal representation so that
    rate pairs with an integral ratio (e.g. 15974.4 / 15.6) never pick up a
    spurious +1 from float division.
    """
    if sr_audio <= 0 or sr_video <= 0:
        raise ContractError(f"rates must be positive, got {sr_audio}, {sr_video}")
    ratio = Fraction(str(sr_audio)) / Fraction(str(sr_video))
    return int(-(-ratio.numerator // ratio.denominator))


def frame_index_for_sample(t: int, s: int) -> int:
    """Frame that conditions sample ``t`` when each frame covers ``s`` samples."""
    if t < 0:
        raise ContractError(f"sample index must be >= 0, got {t}")
    if s < 1:
        raise ContractError(f"step size must be >= 1, got {s}")
    return t // s


def pad_features(track: FeatureTrack, target_frames: int) -> FeatureTrack:
    """Repeat rows end-to-end and truncate, mirroring audio padding."""
    if target_frames < 1:
        raise ContractError(f"target frames must be >= 1, got {target_frames}")
    if track.frames == target_frames:
        return track
    reps = -(-target_frames // track.frames)
    return FeatureTrack(np.tile(track.values, (reps, 1))[:target_frames], track.kind)


# Feature file: magic "VSFT", version u16, frames u32, dim u32, kind u8,
# then frames*dim little-endian float32, row-major.
_FEAT_MAGIC = b"VSFT"
_FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sHIIB")


def save_features(path, track: FeatureTrack) -> None:
    payload = track.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(
            _FEAT_HEADER.pack(
                _FEAT_MAGIC, _FEAT_VERSION, track.frames, track.dim, _KIND_CODES[track.kind]
            )
        )
        fh.write(payload)


def peek_features(path) -> tuple[int, int, str]:
    """Read only the header; returns (frames, dim, kind)."""
    with open(path, "rb") as fh:
        head = fh.read(_FEAT_HEADER.size)
    if len(head) < _FEAT_HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, frames, dim, kind = _FEAT_HEADER.unpack(head)
    if magic != _FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_FEAT_MAGIC!r}")
    if version != _FEAT_VERSION:
        raise FormatError(f"{path}: unsupported feature version {version}")
    if frames < 1:
        raise DataError(f"{path}: feature file declares zero frames")
    if dim < 1:
        raise DataError(f"{path}: feature file declares zero dim")
    if kind not in _KIND_NAMES:
        raise FormatError(f"{path}: unknown kind byte {kind}")
    return frames, dim, _KIND_NAMES[kind]


def load_features(path) -> FeatureTrack:
    frames, dim, kind = peek_features(path)
    with open(path, "rb") as fh:
        fh.seek(_FEAT_HEADER.size)
        payload = fh.read()
    expected = frames * dim * 4
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(frames, dim).astype(np.float64)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: feature payload contains NaN or Inf")
    return FeatureTrack(values, kind)


def load_feature_paths(paths) -> FeatureTrack:
    """Load one track, or concatenate two (appearance + flow) along dim."""
    tracks = [load_features(p) for p in paths]
    if len(tracks) == 1:
        return tracks[0]
    if len(tracks) != 2:
        raise DataError(f"expected 1 or 2 feature paths, got {len(tracks)}")
    a, b = tracks
    if a.frames != b.frames:
        raise DataError(
            f"feature tracks disagree on frame count: {a.frames} vs {b.frames}"
        )
    return FeatureTrack(np.concatenate([a.values, b.values], axis=1), KIND_APPEARANCE_FLOW)


@dataclass(frozen=True)
class CorpusProfile:
    """Rates, sizes, and synthesis parameters for one corpus scale."""

    name: str
    n_categories: int
    sr_audio: float
    sr_video: float
    clip_seconds: float
    feature_dim: int
    # synthetic-signal parameters
    noise_amp: float = 0.003
    feature_noise: float = 0.1
    amp_range: tuple[float, float] = (0.4, 0.85)
    # the tone is gated by a per-frame burst schedule: each video frame is
    # independently on with this probability, and on/off transitions ramp
    # linearly over burst_ramp samples.  Burst onsets are unpredictable from
    # audio history alone but are described by the per-frame features, which
    # is what makes visual conditioning necessary (and hence learnable and
    # measurable) at desk scale.  p_on >= 1 gives a continuous tone.
    burst_p_on: float = 0.6
    burst_ramp: int = 24

    def __post_init__(self):
        if self.feature_dim < self.n_categories + 5:
            raise ConfigError(
                f"feature dim {self.feature_dim} too small to embed "
                f"{self.n_categories} category patterns plus signal descriptors"
            )
        frames = self.sr_video * self.clip_seconds
        if abs(frames - round(frames)) > 1e-9:
            raise ConfigError(
                f"clip of {self.clip_seconds}s at {self.sr_video} fps gives "
                f"non-integer frame count {frames}"
            )

    @property
    def step(self) -> int:
        return step_size(self.sr_audio, self.sr_video)

    @property
    def frames_per_clip(self) -> int:
        return int(round(self.sr_video * self.clip_seconds))

    @property
    def samples_per_clip(self) -> int:
        # defined via the alignment identity, not seconds * rate
        return self.frames_per_clip * self.step

    def category_frequency(self, category: int) -> float:
        """Distinct, well-separated tone frequency per category."""
        if not 0 <= category < self.n_categories:
            raise ContractError(
                f"category {category} out of range [0, {self.n_categories})"
            )
        lo, hi = 0.05, 0.40  # fractions of the sample rate
        frac = lo + (hi - lo) * category / max(1, self.n_categories - 1)
        return frac * self.sr_audio


DESK_PROFILE = CorpusProfile(
    name="desk",
    n_categories=4,
    sr_audio=4000.0,
    sr_video=12.5,
    clip_seconds=2.0,
    feature_dim=16,
)

PAPER_PROFILE = CorpusProfile(
    name="paper",
    n_categories=10,
    sr_audio=15974.4,
    sr_video=15.6,
    clip_seconds=10.0,
    feature_dim=4096,
)


def synth_clip(category: int, seed: int, profile: CorpusProfile = DESK_PROFILE) -> tuple[Waveform, FeatureTrack]:
    """Deterministic synthetic (waveform, features) pair for one category.

    The waveform is a category-frequency tone with seeded amplitude/phase
    jitter plus low noise, gated by a seeded per-frame burst schedule (see
    CorpusProfile).  Each feature row embeds the category one-hot pattern
    plus descriptors of what that frame sounds like: amplitude, the tone
    phase at the frame start, and the burst flags of this and the next
    frame.  Seeded noise is added to every row.  Feature slot layout, with
    C = number of categories:

        [0:C)  category one-hot      C+2  sin(phase at frame start)
        C      amplitude             C+3  burst flag, this frame
        C+1    cos(phase at frame start)  C+4  burst flag, next frame
    """
    freq = profile.category_frequency(category)
    rng = np.random.default_rng(np.random.SeedSequence([seed, category]))
    n = profile.samples_per_clip
    frames = profile.frames_per_clip
    s = profile.step
    amp = rng.uniform(*profile.amp_range)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if profile.burst_p_on >= 1.0:
        mask = np.ones(frames, dtype=bool)
    else:
        mask = rng.random(frames) < profile.burst_p_on
        if not mask.any():
            mask[int(rng.integers(frames))] = True
    env = np.repeat(mask.astype(np.float64), s)
    if profile.burst_ramp > 1:
        kernel = np.ones(profile.burst_ramp) / profile.burst_ramp
        env = np.convolve(env, kernel, mode="same")
    t = np.arange(n, dtype=np.float64) / profile.sr_audio
    samples = amp * env * np.sin(2.0 * np.pi * freq * t + phase)
    if profile.noise_amp > 0:
        samples = samples + profile.noise_amp * rng.standard_normal(n)
    wave = Waveform(np.clip(samples, -1.0, 1.0), profile.sr_audio)

    c = profile.n_categories
    rows = np.zeros((frames, profile.feature_dim), dtype=np.float64)
    rows[:, category] = 1.0
    rows[:, c] = amp
    frame_phase = (2.0 * np.pi * freq * (np.arange(frames) * s) / profile.sr_audio + phase) % (
        2.0 * np.pi
    )
    rows[:, c + 1] = np.cos(frame_phase)
    rows[:, c + 2] = np.sin(frame_phase)
    rows[:, c + 3] = mask.astype(np.float64)
    rows[:, c + 4] = mask[(np.arange(frames) + 1) % frames].astype(np.float64)
    rows = rows + profile.feature_noise * rng.standard_normal(rows.shape)
    # float32 grid so tracks survive the feature-file format bit-exactly
    track = FeatureTrack(rows.astype(np.float32).astype(np.float64), KIND_APPEARANCE)
    return wave, track


@dataclass(frozen=True)
class ClipRecord:
    id: str
    category: str
    audio_path: str
    feature_paths: tuple[str, ...]
    split: str
    n_samples: int
    n_frames: int

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DataError(f"record {self.id}: unknown split {self.split!r}")
        if len(self.feature_paths) not in (1, 2):
            raise DataError(f"record {self.id}: need 1 or 2 feature paths")


@dataclass(frozen=True)
class Manifest:
    """Immutable clip index with category set and rate configuration."""

    categories: tuple[str, ...]
    records: tuple[ClipRecord, ...]
    sr_audio: float
    sr_video: float
    root: str = "."
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate clip ids")
        known = set(self.categories)
        for r in self.records:
            if r.category not in known:
                raise DataError(f"record {r.id}: category {r.category!r} not declared")

    @property
    def step(self) -> int:
        return step_size(self.sr_audio, self.sr_video)

    def split(self, name: str) -> tuple[ClipRecord, ...]:
        return tuple(r for r in self.records if r.split == name)

    def by_category(self, category: str, split: str | None = None) -> tuple[ClipRecord, ...]:
        return tuple(
            r
            for r in self.records
            if r.category == category and (split is None or r.split == split)
        )

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.root, path)

    def with_all_in_split(self, split: str) -> "Manifest":
        return replace(self, records=tuple(replace(r, split=split) for r in self.records))


_MANIFEST_MAGIC = "#visound-manifest 1"


def save_manifest(path, manifest: Manifest) -> None:
    lines = [_MANIFEST_MAGIC]
    lines.append(f"#sr_audio {manifest.sr_audio!r}")
    lines.append(f"#sr_video {manifest.sr_video!r}")
    lines.append("#categories " + ",".join(manifest.categories))
    for key, value in sorted(manifest.meta.items()):
        lines.append(f"#meta {key}={value}")
    for r in manifest.records:
        lines.append(
            "\t".join(
                [
                    r.id,
                    r.category,
                    r.audio_path,
                    ";".join(r.feature_paths),
                    r.split,
                    str(r.n_samples),
                    str(r.n_frames),
                ]
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path, check_files: bool = True) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != _MANIFEST_MAGIC:
        raise FormatError(f"{path}: first line must be {_MANIFEST_MAGIC!r}")
    sr_audio = sr_video = None
    categories: tuple[str, ...] = ()
    meta: dict = {}
    records = []
    root = os.path.dirname(os.path.abspath(path))
    for lineno, line in enumerate(raw[1:], start=2):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sr_audio "):
                sr_audio = float(body.split(None, 1)[1])
            elif body.startswith("sr_video "):
                sr_video = float(body.split(None, 1)[1])
            elif body.startswith("categories "):
                categories = tuple(c for c in body.split(None, 1)[1].split(",") if c)
            elif body.startswith("meta "):
                key, _, value = body[5:].partition("=")
                meta[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise DataError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(parts)}")
        try:
            record = ClipRecord(
                id=parts[0],
                category=parts[1],
                audio_path=parts[2],
                feature_paths=tuple(parts[3].split(";")),
                split=parts[4],
                n_samples=int(parts[5]),
                n_frames=int(parts[6]),
            )
        except (ValueError, DataError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        records.append(record)
    if sr_audio is None or sr_video is None:
        raise DataError(f"{path}: missing #sr_audio or #sr_video header")
    if not categories:
        raise DataError(f"{path}: missing #categories header")
    manifest = Manifest(categories, tuple(records), sr_audio, sr_video, root=root, meta=meta)
    if check_files:
        for r in manifest.records:
            for p in (r.audio_path, *r.feature_paths):
                full = manifest.resolve(p)
                if not os.path.exists(full):
                    raise DataError(f"{path}: record {r.id} references missing file {full}")
    return manifest


def load_clip(manifest: Manifest, record: ClipRecord) -> tuple[QuantizedClip, FeatureTrack]:
    """Load, quantize, and pad one clip to the manifest's alignment grid."""
    wave = read_wav(manifest.resolve(record.audio_path))
    if int(round(wave.sample_rate)) != int(round(manifest.sr_audio)):
        raise DataError(
            f"record {record.id}: file rate {wave.sample_rate} does not match "
            f"manifest rate {manifest.sr_audio} (no resampling is performed)"
        )
    track = load_feature_paths([manifest.resolve(p) for p in record.feature_paths])
    s = manifest.step
    clip = pad_to_length(quantize(wave), record.n_frames * s)
    track = pad_features(track, record.n_frames)
    if track.frames * s != len(clip):
        raise DataError(
            f"record {record.id}: alignment broken, {track.frames} frames * {s} "
            f"!= {len(clip)} samples"
        )
    return clip, track


def category_names(n: int) -> list[str]:
    return [f"cat{i}" for i in range(n)]


def build_synth_corpus(
    out_dir,
    clips_per_category: int,
    seed: int,
    profile: CorpusProfile = DESK_PROFILE,
    test_per_category: int | None = None,
    manifest_name: str = "manifest.tsv",
    meta: dict | None = None,
) -> Manifest:
    """Write WAVs, feature files, and a manifest for a synthetic corpus.

    Deterministic per seed: identical invocations produce byte-identical
    files.  The test split takes the last ``test_per_category`` clips of each
    category after a seeded shuffle.
    """
    if clips_per_category < 0:
        raise ContractError("clips_per_category must be >= 0")
    if test_per_category is None:
        test_per_category = max(1, clips_per_category // 4) if clips_per_category else 0
    if test_per_category > clips_per_category:
        raise ConfigError(
            f"test_per_category {test_per_category} exceeds clips_per_category "
            f"{clips_per_category}"
        )
    os.makedirs(out_dir, exist_ok=True)
    cats = category_names(profile.n_categories)
    records = []
    for ci, cat in enumerate(cats):
        order = np.random.default_rng(
            np.random.SeedSequence([seed, ci, 0xA11])
        ).permutation(clips_per_category)
        test_ids = set(order[:test_per_category].tolist())
        for i in range(clips_per_category):
            clip_seed = (seed * 100003 + ci * 1009 + i) & 0x7FFFFFFF
            wave, track = synth_clip(ci, clip_seed, profile)
            clip_id = f"{cat}_{i:04d}"
            wav_rel = f"{clip_id}.wav"
            feat_rel = f"{clip_id}.vsft"
            write_wav(os.path.join(out_dir, wav_rel), wave)
            save_features(os.path.join(out_dir, feat_rel), track)
            records.append(
                ClipRecord(
                    id=clip_id,
                    category=cat,
                    audio_path=wav_rel,
                    feature_paths=(feat_rel,),
                    split="test" if i in test_ids else "train",
                    n_samples=len(wave.samples),
                    n_frames=track.frames,
                )
            )
    manifest = Manifest(
        categories=tuple(cats),
        records=tuple(records),
        sr_audio=profile.sr_audio,
        sr_video=profile.sr_video,
        root=str(out_dir),
        meta=dict(meta or {}),
    )
    save_manifest(os.path.join(out_dir, manifest_name), manifest)
    return manifest
