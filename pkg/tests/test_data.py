import json

import numpy as np
import pytest

from questmf.data import (
    DataError,
    FeatureFormatError,
    ManifestError,
    Session,
    SynthConfig,
    aggregate_turn_window,
    build_padded_batch,
    load_dataset,
    parse_manifest,
    read_feature_matrix,
    read_transcript,
    synth_generate,
    write_dataset,
    write_feature_matrix,
    write_transcript,
)
from questmf.data.io import HEADER, MAGIC

SMALL = dict(n_train=30, n_validation=6, n_test=6, min_expected_count=1,
             widths={"text": 6, "audio": 3, "video": 5}, turn_range=(2, 5))


def test_turn_window_examples():
    v = np.array([0.3, -0.4])
    frames = np.tile(v, (10, 1))
    np.testing.assert_allclose(aggregate_turn_window(frames, 1.0, 4.0, 2.0, False), v)
    np.testing.assert_allclose(aggregate_turn_window(frames, 1.0, 4.0, 2.0, True), v / 0.5)
    np.testing.assert_array_equal(aggregate_turn_window([[1, 2], [3, 4]], 0.0, 2.0, 1.0, False), [2, 3])
    with pytest.raises(DataError, match="empty window"):
        aggregate_turn_window(frames, 20.0, 21.0, 1.0, False)


def test_feature_matrix_round_trip_and_errors(tmp_path):
    m = np.arange(6, dtype=np.float64).reshape(2, 3) / 4
    write_feature_matrix(tmp_path / "a.qmf", m)
    np.testing.assert_array_equal(read_feature_matrix(tmp_path / "a.qmf"), m)
    (tmp_path / "bad.qmf").write_bytes(HEADER.pack(b"XXXX", 1, 1) + b"\0" * 4)
    with pytest.raises(FeatureFormatError, match="magic"):
        read_feature_matrix(tmp_path / "bad.qmf")
    (tmp_path / "short.qmf").write_bytes(HEADER.pack(MAGIC, 2, 3) + b"\0" * 20)
    with pytest.raises(FeatureFormatError, match="payload"):
        read_feature_matrix(tmp_path / "short.qmf")
    (tmp_path / "nan.qmf").write_bytes(HEADER.pack(MAGIC, 1, 1) + np.array([np.nan], "<f4").tobytes())
    with pytest.raises(FeatureFormatError, match="non-finite"):
        read_feature_matrix(tmp_path / "nan.qmf")


def test_transcript_keeps_participant_rows(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text(
        "turn_index\tt_start\tt_end\tspeaker\ttext\n"
        "1\t2.0\t3.5\tParticipant\thi\n"
        "0\t0.0\t1.5\tEllie\thello\n"
        "2\t4.0\t6.0\tParticipant\tok\n"
    )
    assert read_transcript(p) == [(2.0, 3.5), (4.0, 6.0)]
    write_transcript(tmp_path / "w.tsv", [(0.0, 1.0)])
    assert read_transcript(tmp_path / "w.tsv") == [(0.0, 1.0)]


def _one_session_manifest(tmp_path, **entry):
    write_feature_matrix(tmp_path / "s/text.qmf", np.ones((2, 4)))
    write_feature_matrix(tmp_path / "s/audio.qmf", np.arange(8.0).reshape(4, 2))
    doc = {
        "schema_version": 1,
        "audio_rate": 2,
        "sessions": [
            {"id": "s1", "split": "train", "features": {"text": "s/text.qmf", "audio": "s/audio.qmf"},
             "turns": [[0.0, 1.0], [1.0, 2.0]], **entry}
        ],
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_manifest_minimal_and_load(tmp_path):
    path = _one_session_manifest(tmp_path, labels=[1, 0, 2, 3, 0, 1, 2, 0], total=9)
    descs = parse_manifest(path)
    assert len(descs) == 1 and descs[0].total == 9
    ds = load_dataset(path)
    s = ds.sessions[0]
    np.testing.assert_allclose(s.features["text"], np.full((2, 4), 0.5))
    np.testing.assert_allclose(s.features["audio"], [[1.0, 2.0], [5.0, 6.0]])


@pytest.mark.parametrize(
    "entry, match",
    [
        ({"labels": [1, 0, 2, 3, 0, 1, 2, 0], "total": 10}, "total 10 != label sum 9"),
        ({"labels": [4, 0, 0, 0, 0, 0, 0, 0]}, "outside 0..3"),
        ({"labels": [1, 0, 2]}, "expected 8 labels"),
        ({"split": "dev"}, "unknown split"),
        ({"total": 30}, "outside 0..24"),
        ({"features": {"text": "missing.qmf"}}, "missing file"),
        ({"features": {"smell": "s/text.qmf"}}, "unknown modality"),
    ],
)
def test_manifest_rejections(tmp_path, entry, match):
    with pytest.raises(DataError, match=match):
        parse_manifest(_one_session_manifest(tmp_path, **entry))


def test_manifest_structure_errors(tmp_path):
    path = _one_session_manifest(tmp_path)
    doc = json.loads(path.read_text())
    doc["sessions"].append(dict(doc["sessions"][0]))
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="duplicate"):
        parse_manifest(path)
    path.write_text(json.dumps({"schema_version": 2, "sessions": []}))
    with pytest.raises(ManifestError, match="schema_version"):
        parse_manifest(path)
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        parse_manifest(path)


def test_text_rows_must_match_turns(tmp_path):
    path = _one_session_manifest(tmp_path, turns=[[0.0, 1.0]])
    with pytest.raises(DataError, match="text rows"):
        load_dataset(path)


def _session(n, sid="x"):
    return Session(sid, "train", {"text": np.ones((n, 2))})


@pytest.mark.parametrize("n, kept", [(3, 3), (120, 120), (150, 120)])
def test_padding_and_truncation(n, kept):
    b = build_padded_batch([_session(n)])
    assert b.mask.shape == (1, 120)
    assert b.mask.sum() == kept and b.mask[0, :kept].all()
    np.testing.assert_array_equal(b.features["text"][0, kept:], 0.0)


def test_batch_take_trims_to_selected_sessions():
    b = build_padded_batch([_session(3, "a"), _session(7, "b"), _session(5, "c")])
    sub = b.take([0, 2])
    assert sub.ids == ["a", "c"] and sub.mask.shape == (2, 5)
    assert sub.features["text"].shape == (2, 5, 2)


def test_session_validation():
    with pytest.raises(DataError, match="disagree"):
        Session("x", "train", {"text": np.ones((2, 2)), "audio": np.ones((3, 2))})
    with pytest.raises(DataError, match="!="):
        Session("x", "train", {"text": np.ones((2, 2))}, labels=np.ones(8), total=3)
    s = Session("x", "train", {"text": np.ones((2, 2))}, labels=np.ones(8))
    assert s.total == 8 and len(s.turns) == 2


def test_synth_is_deterministic_and_round_trips(tmp_path):
    cfg = SynthConfig(**SMALL, seed=3)
    a, b = synth_generate(cfg), synth_generate(SynthConfig(**SMALL, seed=3))
    for sa, sb in zip(a.sessions, b.sessions):
        for m in sa.features:
            np.testing.assert_array_equal(sa.features[m], sb.features[m])
        np.testing.assert_array_equal(sa.labels, sb.labels)
    write_dataset(a, tmp_path / "one")
    write_dataset(b, tmp_path / "two")
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes()
    loaded = load_dataset(tmp_path / "one" / "manifest.json")
    for s, t in zip(a.sessions, loaded.sessions):
        assert s.id == t.id and s.total == t.total
        for m in s.features:
            np.testing.assert_allclose(t.features[m], s.features[m], rtol=1e-6, atol=1e-6)
    assert not np.array_equal(synth_generate(SynthConfig(**SMALL, seed=4)).sessions[0].features["text"],
                              a.sessions[0].features["text"])


def test_synth_noiseless_signal_is_recovered_by_least_squares():
    cfg = SynthConfig(**{**SMALL, "n_train": 60, "widths": {"text": 6, "audio": 12, "video": 5}}, noise=0.0)
    ds = synth_generate(cfg)
    train = ds.split("train")
    x = np.stack([s.features["audio"][0] for s in train])
    x = np.hstack([x, np.ones((len(train), 1))])
    y = np.stack([s.labels for s in train]).astype(float)
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    np.testing.assert_allclose(x @ coef, y, atol=1e-5)
    # distinct directions make every question separable on its own
    for q in range(8):
        np.testing.assert_array_equal(np.rint(x @ coef[:, q]), y[:, q])


def test_synth_class_frequencies_follow_prior():
    cfg = SynthConfig(n_train=1000, n_validation=0, n_test=0, widths={"text": 2, "audio": 2, "video": 2},
                      turn_range=(1, 1))
    labels = np.stack([s.labels for s in synth_generate(cfg).sessions])
    prior = np.asarray(cfg.class_prior)
    sigma = np.sqrt(prior * (1 - prior) / 1000)
    for q in range(8):
        freq = np.bincount(labels[:, q], minlength=4) / 1000
        assert np.all(np.abs(freq - prior) <= 3 * sigma)


def test_synth_config_validation():
    with pytest.raises(DataError, match="expected train count"):
        synth_generate(SynthConfig(n_train=16))
    with pytest.raises(DataError, match="sum to 1"):
        SynthConfig(class_prior=(0.5, 0.5, 0.5, 0.5)).validate()
    with pytest.raises(DataError, match="turn range"):
        SynthConfig(turn_range=(0, 3)).validate()
    cfg = SynthConfig(n_train=16, n_validation=4, n_test=4, class_prior=(0.25,) * 4, min_expected_count=1)
    assert len(synth_generate(cfg).split("train")) == 16
