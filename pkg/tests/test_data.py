import dataclasses

import numpy as np
import pytest

from visound.audio import quantize
from visound.data import (
    DESK_PROFILE,
    PAPER_PROFILE,
    KIND_APPEARANCE,
    KIND_APPEARANCE_FLOW,
    ClipRecord,
    FeatureTrack,
    Manifest,
    build_synth_corpus,
    frame_index_for_sample,
    load_clip,
    load_feature_paths,
    load_features,
    load_manifest,
    pad_features,
    peek_features,
    save_features,
    save_manifest,
    step_size,
    synth_clip,
)
from visound.errors import ContractError, DataError, FormatError


def test_step_size_paper_rates():
    assert step_size(15974.4, 15.6) == 1024


def test_step_size_equal_rates():
    assert step_size(4000, 4000) == 1


def test_step_size_exact_division():
    assert step_size(4000, 25) == 160


def test_step_size_rounds_up():
    assert step_size(4001, 25) == 161


def test_step_size_rejects_nonpositive():
    with pytest.raises(ContractError):
        step_size(0, 25)


def test_frame_index_examples():
    assert frame_index_for_sample(0, 1024) == 0
    assert frame_index_for_sample(159743, 1024) == 155


def test_frame_index_counts_exactly_step_per_frame():
    counts = np.bincount(np.arange(159744) // 1024)
    assert counts.size == 156
    assert (counts == 1024).all()


def test_frame_index_monotone_and_surjective():
    idx = np.array([frame_index_for_sample(t, 320) for t in range(0, 8000, 7)])
    assert (np.diff(idx) >= 0).all()
    assert set(np.arange(8000) // 320) == set(range(25))


def test_feature_file_known_values(tmp_path):
    values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
    path = tmp_path / "t.vsft"
    save_features(path, FeatureTrack(values))
    back = load_features(path)
    assert back.frames == 2 and back.dim == 3
    assert np.array_equal(back.values, values.astype(np.float64))


def test_feature_file_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((156, 64)).astype(np.float32).astype(np.float64)
    path = tmp_path / "r.vsft"
    save_features(path, FeatureTrack(values, KIND_APPEARANCE_FLOW))
    back = load_features(path)
    assert back.kind == KIND_APPEARANCE_FLOW
    assert np.array_equal(back.values, values)
    path2 = tmp_path / "r2.vsft"
    save_features(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_feature_file_zero_frames_rejected(tmp_path):
    path = tmp_path / "z.vsft"
    save_features(path, FeatureTrack(np.ones((1, 2))))
    blob = bytearray(path.read_bytes())
    blob[6:10] = (0).to_bytes(4, "little")  # frames field
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_features(path)


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "m.vsft"
    save_features(path, FeatureTrack(np.ones((1, 2))))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"JUNK"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        peek_features(path)


def test_feature_file_truncated_payload(tmp_path):
    path = tmp_path / "t.vsft"
    save_features(path, FeatureTrack(np.ones((4, 4))))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="payload"):
        load_features(path)


def test_feature_file_nan_rejected(tmp_path):
    path = tmp_path / "n.vsft"
    save_features(path, FeatureTrack(np.ones((2, 2))))
    blob = bytearray(path.read_bytes())
    blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="NaN"):
        load_features(path)


def test_two_path_features_concatenate(tmp_path):
    a = FeatureTrack(np.ones((3, 4)))
    b = FeatureTrack(2 * np.ones((3, 4)))
    pa, pb = tmp_path / "a.vsft", tmp_path / "b.vsft"
    save_features(pa, a)
    save_features(pb, b)
    merged = load_feature_paths([pa, pb])
    assert merged.kind == KIND_APPEARANCE_FLOW
    assert merged.dim == 8
    assert np.array_equal(merged.values[:, :4], a.values)


def test_two_path_frame_mismatch(tmp_path):
    pa, pb = tmp_path / "a.vsft", tmp_path / "b.vsft"
    save_features(pa, FeatureTrack(np.ones((3, 4))))
    save_features(pb, FeatureTrack(np.ones((2, 4))))
    with pytest.raises(DataError, match="frame count"):
        load_feature_paths([pa, pb])


def test_pad_features_mirrors_audio_padding():
    track = FeatureTrack(np.arange(6, dtype=float).reshape(3, 2))
    padded = pad_features(track, 7)
    assert padded.frames == 7
    for i in range(7):
        assert np.array_equal(padded.values[i], track.values[i % 3])


def test_profiles_satisfy_alignment_identity():
    assert DESK_PROFILE.step == 320
    assert DESK_PROFILE.frames_per_clip * DESK_PROFILE.step == 8000
    assert PAPER_PROFILE.step == 1024
    assert PAPER_PROFILE.frames_per_clip == 156
    assert PAPER_PROFILE.samples_per_clip == 159744


def test_synth_clip_deterministic():
    w1, t1 = synth_clip(2, seed=5)
    w2, t2 = synth_clip(2, seed=5)
    assert np.array_equal(w1.samples, w2.samples)
    assert np.array_equal(t1.values, t2.values)
    w3, _ = synth_clip(2, seed=6)
    assert not np.array_equal(w1.samples, w3.samples)


def test_synth_clip_alignment():
    w, t = synth_clip(0, seed=1)
    assert len(w.samples) == t.frames * DESK_PROFILE.step


def test_synth_categories_have_distinct_spectral_peaks():
    peaks = []
    for c in range(DESK_PROFILE.n_categories):
        w, _ = synth_clip(c, seed=11)
        mag = np.abs(np.fft.rfft(w.samples))
        mag[0] = 0.0
        k = int(np.argmax(mag))
        peaks.append(k * DESK_PROFILE.sr_audio / len(w.samples))
    assert len(set(np.round(peaks, 0))) == len(peaks)
    for c, peak in enumerate(peaks):
        assert abs(peak - DESK_PROFILE.category_frequency(c)) < 10.0


def test_synth_feature_rows_classify_to_their_category():
    correct = 0
    total = 0
    for c in range(4):
        _, track = synth_clip(c, seed=3)
        patterns = np.zeros((4, track.dim))
        for cc in range(4):
            patterns[cc, cc] = 1.0
        base = track.values.copy()
        # descriptor slots (amp/phase) are identical across candidate
        # patterns, so distance comparisons reduce to the one-hot slots
        d = ((base[:, None, :4] - patterns[None, :, :4]) ** 2).sum(axis=2)
        correct += int((np.argmin(d, axis=1) == c).sum())
        total += track.frames
    assert correct / total >= 0.99


def test_build_synth_corpus_and_manifest_roundtrip(tmp_path):
    out = tmp_path / "corpus"
    manifest = build_synth_corpus(out, clips_per_category=4, seed=7, test_per_category=1)
    assert len(manifest.records) == 16
    assert len(manifest.split("test")) == 4
    assert len(manifest.split("train")) == 12
    loaded = load_manifest(out / "manifest.tsv")
    assert loaded.categories == manifest.categories
    assert [r.id for r in loaded.records] == [r.id for r in manifest.records]
    assert loaded.step == 320

    clip, track = load_clip(loaded, loaded.records[0])
    assert len(clip) == track.frames * loaded.step


def test_build_synth_corpus_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    build_synth_corpus(a, clips_per_category=2, seed=3, test_per_category=1)
    build_synth_corpus(b, clips_per_category=2, seed=3, test_per_category=1)
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_split_assignment_stable_and_disjoint(tmp_path):
    m1 = build_synth_corpus(tmp_path / "x", clips_per_category=6, seed=9, test_per_category=2)
    m2 = build_synth_corpus(tmp_path / "y", clips_per_category=6, seed=9, test_per_category=2)
    s1 = {r.id: r.split for r in m1.records}
    s2 = {r.id: r.split for r in m2.records}
    assert s1 == s2
    assert not ({r.id for r in m1.split("train")} & {r.id for r in m1.split("test")})


def test_manifest_rejects_unknown_category(tmp_path):
    rec = ClipRecord("a", "nope", "a.wav", ("a.vsft",), "train", 100, 10)
    with pytest.raises(DataError, match="category"):
        Manifest(("cat0",), (rec,), 4000, 12.5)


def test_manifest_rejects_duplicate_ids():
    rec = ClipRecord("a", "cat0", "a.wav", ("a.vsft",), "train", 100, 10)
    with pytest.raises(DataError, match="duplicate"):
        Manifest(("cat0",), (rec, rec), 4000, 12.5)


def test_manifest_missing_file_check(tmp_path):
    rec = ClipRecord("a", "cat0", "missing.wav", ("missing.vsft",), "train", 100, 10)
    manifest = Manifest(("cat0",), (rec,), 4000, 12.5, root=str(tmp_path))
    path = tmp_path / "m.tsv"
    save_manifest(path, manifest)
    with pytest.raises(DataError, match="missing"):
        load_manifest(path)
    lenient = load_manifest(path, check_files=False)
    assert lenient.records[0].id == "a"


def test_manifest_bad_row_reports_line_number(tmp_path):
    path = tmp_path / "m.tsv"
    build_dir = tmp_path / "c"
    manifest = build_synth_corpus(build_dir, clips_per_category=1, seed=0, test_per_category=0)
    save_manifest(path, manifest)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("only\tthree\tfields\n")
    with pytest.raises(DataError, match=r":\d+"):
        load_manifest(path, check_files=False)


def test_load_clip_rejects_rate_mismatch(tmp_path):
    out = tmp_path / "c"
    manifest = build_synth_corpus(out, clips_per_category=1, seed=0, test_per_category=0)
    wrong = dataclasses.replace(manifest, sr_audio=8000.0, sr_video=25.0)
    with pytest.raises(DataError, match="rate"):
        load_clip(wrong, wrong.records[0])


def test_feature_track_rejects_nonfinite():
    with pytest.raises(DataError):
        FeatureTrack(np.array([[np.inf, 1.0]]))


def test_feature_track_kinds():
    assert FeatureTrack(np.ones((1, 1)), KIND_APPEARANCE).kind == "appearance"
    with pytest.raises(DataError):
        FeatureTrack(np.ones((1, 1)), "motion")
