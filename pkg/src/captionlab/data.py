"""Dataset plumbing: manifests, feature/image files, batching, synthetic data.

Manifests are JSON Lines; binary formats are little-endian with 4-byte magic
("CAPF" feature grids, "CAPI" raw images).  The synthetic generator draws one
colored shape per image with a templated caption, deterministic per seed.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import AnnotationGrid
from .tensor import Rng
from .text import PAD_ID, Vocabulary, tokenize

__all__ = [
    "Sample",
    "Batch",
    "Dataset",
    "SPLITS",
    "load_manifest",
    "write_manifest",
    "build_dataset",
    "load_captioning_dataset",
    "load_feature_file",
    "write_feature_file",
    "load_image_file",
    "write_image_file",
    "generate_synthetic_dataset",
    "write_synthetic_dataset",
    "synthesize_features",
    "make_batches",
    "unbatch_captions",
    "COLORS",
    "SHAPES",
]

SPLITS = ("train", "val", "test")

FEATURE_MAGIC = b"CAPF"
IMAGE_MAGIC = b"CAPI"

MAX_CAPTION_LEN = 30


@dataclass
class Sample:
    """One image with its reference captions (encoded and raw tokens)."""

    image_id: str
    split: str
    captions: list            # list of id sequences, each <start> ... <end>
    caption_tokens: list      # parallel list of raw token lists
    image: np.ndarray | None = None      # (3, H, W) floats in [0, 1]
    features: np.ndarray | None = None   # (P, N) floats
    image_path: str | None = None
    feature_path: str | None = None

    def encoder_input(self):
        """Whatever the encoder consumes: image volume or feature grid."""
        if self.features is not None:
            return AnnotationGrid(self.features)
        if self.image is not None:
            return self.image
        raise ValueError(f"sample {self.image_id} has neither image nor features")


@dataclass
class Batch:
    """Stacked encoder inputs plus right-padded caption id matrix."""

    samples: list
    captions: np.ndarray   # (B, T) int64, PAD_ID beyond each length
    lengths: np.ndarray    # (B,) true sequence lengths including specials

    def __post_init__(self):
        b, t = self.captions.shape
        if np.any(self.lengths > t):
            raise ValueError("caption length exceeds batch width")


@dataclass
class Dataset:
    vocabulary: Vocabulary
    samples: dict = field(default_factory=dict)  # split -> list[Sample]

    def split(self, name: str) -> list:
        return self.samples.get(name, [])

    @property
    def counts(self) -> dict:
        return {s: len(self.samples.get(s, [])) for s in SPLITS}


# -- manifest I/O ---------------------------------------------------------------


def load_manifest(path) -> list[dict]:
    """Read a JSON Lines manifest into per-image records.

    Lines sharing an image_id are grouped into one record with all its
    captions.  Raises on malformed lines (with the line number), unknown
    split labels, and images assigned to two splits.
    """
    path = Path(path)
    records: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: malformed JSON line: {e}") from None
            for key in ("image_id", "split", "caption"):
                if key not in row:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            if row["split"] not in SPLITS:
                raise ValueError(
                    f"{path}:{lineno}: unknown split {row['split']!r} "
                    f"(expected one of {', '.join(SPLITS)})"
                )
            rec = records.setdefault(
                row["image_id"],
                {"image_id": row["image_id"], "split": row["split"], "captions": [],
                 "image_path": None, "feature_path": None},
            )
            if rec["split"] != row["split"]:
                raise ValueError(
                    f"{path}:{lineno}: image {row['image_id']!r} assigned to both "
                    f"{rec['split']!r} and {row['split']!r}"
                )
            rec["captions"].append(row["caption"])
            for key in ("image_path", "feature_path"):
                if row.get(key):
                    if rec[key] not in (None, row[key]):
                        raise ValueError(
                            f"{path}:{lineno}: conflicting {key} for image "
                            f"{row['image_id']!r}"
                        )
                    rec[key] = row[key]
    return list(records.values())


def write_manifest(records, path):
    """One line per (image, caption) pair; inverse of :func:`load_manifest`."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            for caption in rec["captions"]:
                row = {"image_id": rec["image_id"], "split": rec["split"],
                       "caption": caption}
                for key in ("image_path", "feature_path"):
                    if rec.get(key):
                        row[key] = rec[key]
                fh.write(json.dumps(row) + "\n")


def build_dataset(records, min_count=1, max_caption_len=MAX_CAPTION_LEN,
                  root=None) -> Dataset:
    """Tokenize captions, build the vocabulary from the train split, and
    encode every caption.  Captions longer than ``max_caption_len`` tokens
    are dropped with a warning."""
    root = Path(root) if root is not None else None

    tokenized: dict[str, list[list[str]]] = {}
    for rec in records:
        toks = []
        for caption in rec["captions"]:
            tokens = tokenize(caption)
            if len(tokens) > max_caption_len:
                warnings.warn(
                    f"dropping caption of {len(tokens)} tokens for image "
                    f"{rec['image_id']!r} (limit {max_caption_len})"
                )
                continue
            if tokens:
                toks.append(tokens)
        tokenized[rec["image_id"]] = toks

    train_tokens = [t for rec in records if rec["split"] == "train"
                    for t in tokenized[rec["image_id"]]]
    vocab = Vocabulary.build(train_tokens, min_count=min_count)

    dataset = Dataset(vocabulary=vocab, samples={s: [] for s in SPLITS})
    for rec in records:
        token_lists = tokenized[rec["image_id"]]
        if not token_lists:
            warnings.warn(f"image {rec['image_id']!r} has no usable captions; skipped")
            continue
        sample = Sample(
            image_id=rec["image_id"],
            split=rec["split"],
            captions=[vocab.encode(t) for t in token_lists],
            caption_tokens=token_lists,
            image=rec.get("image"),
            image_path=rec.get("image_path"),
            feature_path=rec.get("feature_path"),
        )
        if root is not None:
            if sample.feature_path:
                sample.features = load_feature_file(root / sample.feature_path).values
            elif sample.image_path:
                sample.image = load_image_file(root / sample.image_path)
        dataset.samples[rec["split"]].append(sample)
    return dataset


def load_captioning_dataset(manifest_path, min_count=1,
                            max_caption_len=MAX_CAPTION_LEN) -> Dataset:
    """Manifest file to a fully loaded Dataset (images/features read eagerly)."""
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    return build_dataset(records, min_count=min_count,
                         max_caption_len=max_caption_len,
                         root=manifest_path.parent)


# -- binary formats --------------------------------------------------------------


def write_feature_file(path, values):
    """Feature grid: magic, u32 P, u32 N, then P*N little-endian float32."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"feature grid must be 2-D, got shape {values.shape}")
    p, n = values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", p, n))
        fh.write(values.astype("<f4").tobytes(order="C"))


def load_feature_file(path) -> AnnotationGrid:
    """Read a feature grid, widening float32 payload to float64."""
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    p, n = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * p * n
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload length mismatch: header says {p}x{n} "
            f"({expected} bytes), file has {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=12).astype(np.float64).reshape(p, n)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: non-finite feature values")
    return AnnotationGrid(values)


def write_image_file(path, image):
    """Raw RGB image: magic, u32 H, u32 W, then H*W*3 uint8 (row-major, RGB)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {image.shape}")
    _, h, w = image.shape
    payload = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(payload.transpose(1, 2, 0).tobytes(order="C"))


def load_image_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != IMAGE_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {IMAGE_MAGIC!r}")
    h, w = struct.unpack("<II", raw[4:12])
    expected = 12 + h * w * 3
    if len(raw) != expected:
        raise ValueError(f"{path}: payload length mismatch")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=12).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


# -- synthetic dataset ------------------------------------------------------------

COLORS = {
    "red": (1.0, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.1, 0.2, 0.9),
    "yellow": (0.95, 0.9, 0.1),
    "purple": (0.6, 0.1, 0.8),
    "orange": (1.0, 0.55, 0.1),
    "white": (0.95, 0.95, 0.95),
    "gray": (0.5, 0.5, 0.5),
}

SHAPES = ("circle", "square", "triangle", "cross", "diamond")

IMAGE_SIDE = 32


def _render_shape(shape, color, background, center, radius):
    """Draw one filled shape on a plain background, (3, S, S) floats."""
    s = IMAGE_SIDE
    yy, xx = np.mgrid[0:s, 0:s]
    cy, cx = center
    if shape == "circle":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
    elif shape == "square":
        mask = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= radius
    elif shape == "diamond":
        mask = np.abs(xx - cx) + np.abs(yy - cy) <= radius
    elif shape == "triangle":
        rel = yy - (cy - radius)
        mask = (rel >= 0) & (yy <= cy + radius) & (np.abs(xx - cx) * 2 <= rel)
    elif shape == "cross":
        arm = max(1, radius // 3)
        mask = ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= radius)) | (
            (np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= radius))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    img = np.empty((3, s, s))
    for c in range(3):
        img[c] = np.where(mask, color[c], background[c])
    return img


def generate_synthetic_dataset(rng: Rng, count: int, val_fraction=0.0,
                               test_fraction=0.0) -> list[dict]:
    """Deterministic toy dataset: one colored shape per image, captioned
    "a <color> <shape> on a <color> background".

    Shape and color cycle round-robin so every template word appears within
    the first few samples; geometry and background vary with the rng.
    Returns manifest records carrying in-memory images.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    color_names = list(COLORS)
    n_test = int(count * test_fraction)
    n_val = int(count * val_fraction)
    n_train = count - n_val - n_test
    if n_train < 1:
        raise ValueError("fractions leave no training samples")

    records = []
    for i in range(count):
        color = color_names[i % len(color_names)]
        shape = SHAPES[i % len(SHAPES)]
        others = [c for c in color_names if c != color]
        background = others[int(rng.integers(0, len(others)))]
        cy = 12 + int(rng.integers(0, 9))
        cx = 12 + int(rng.integers(0, 9))
        radius = 6 + int(rng.integers(0, 5))
        image = _render_shape(shape, COLORS[color], COLORS[background],
                              (cy, cx), radius)
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        records.append({
            "image_id": f"synth-{i:05d}",
            "split": split,
            "captions": [f"a {color} {shape} on a {background} background"],
            "image": image,
            "image_path": None,
            "feature_path": None,
        })
    return records


def synthesize_features(image, grid_side: int, channels: int, seed: int = 0):
    """Stand-in "pretrained" features: per-cell mean colors projected to
    ``channels`` dims by a fixed seeded random map."""
    _, h, w = image.shape
    if h % grid_side or w % grid_side:
        raise ValueError(f"image {h}x{w} not divisible by grid {grid_side}")
    sy, sx = h // grid_side, w // grid_side
    pooled = image.reshape(3, grid_side, sy, grid_side, sx).mean(axis=(2, 4))
    cells = pooled.reshape(3, -1).T  # (P, 3)
    proj = Rng(seed).normal(0.0, 1.0, (3, channels))
    return cells @ proj


def write_synthetic_dataset(records, out_dir, feature_grid=None,
                            feature_channels=None, feature_seed=0):
    """Write images (and optional synthesized feature files) plus the manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    if feature_grid:
        (out_dir / "features").mkdir(exist_ok=True)
    for rec in records:
        rel = f"images/{rec['image_id']}.capi"
        write_image_file(out_dir / rel, rec["image"])
        rec["image_path"] = rel
        if feature_grid:
            frel = f"features/{rec['image_id']}.capf"
            write_feature_file(
                out_dir / frel,
                synthesize_features(rec["image"], feature_grid,
                                    feature_channels or 16, feature_seed),
            )
            rec["feature_path"] = frel
    write_manifest(records, out_dir / "manifest.jsonl")
    return out_dir / "manifest.jsonl"


# -- batching ----------------------------------------------------------------------


def make_batches(samples, batch_size: int, rng: Rng | None = None) -> list[Batch]:
    """Batches over (image, caption) pairs, optionally shuffled.

    Every caption of every sample becomes one training item; captions are
    right-padded to the batch maximum, never truncated.
    """
    pairs = [(s, k) for s in samples for k in range(len(s.captions))]
    if rng is not None:
        order = rng.permutation(len(pairs))
        pairs = [pairs[int(i)] for i in order]
    batches = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        lengths = np.array([len(s.captions[k]) for s, k in chunk], dtype=np.int64)
        width = int(lengths.max())
        ids = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        for row, (s, k) in enumerate(chunk):
            seq = s.captions[k]
            ids[row, :len(seq)] = seq
        batches.append(Batch(samples=[s for s, _ in chunk], captions=ids,
                             lengths=lengths))
    return batches


def unbatch_captions(batch: Batch) -> list[list[int]]:
    """Recover the exact unpadded id sequences from a batch."""
    return [list(batch.captions[i, :batch.lengths[i]]) for i in range(len(batch.samples))]
