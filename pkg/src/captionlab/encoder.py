"""Image encoders producing spatial annotation grids.

A trainable patch-convolutional encoder stands in for a large pretrained
CNN: stacked stride-s patch conv + relu blocks followed by a 1x1 projection
to the requested channel count.  Each block is a gather of non-overlapping
patches (via the embedding primitive) and a matmul, so the whole encoder
lives inside the checked autodiff catalog.  A pass-through variant serves
precomputed feature grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Rng, Tensor, add, constant, embedding, matmul, relu, reshape, uniform_init

__all__ = [
    "EncoderConfig",
    "AnnotationGrid",
    "ConvEncoder",
    "PrecomputedEncoder",
    "build_encoder",
    "flatten_annotations",
    "unflatten_annotations",
    "VARIANT_BLOCKS",
]

VARIANT_BLOCKS = {"conv-s": 2, "conv-m": 3, "conv-l": 4}


@dataclass
class EncoderConfig:
    """Encoder family member: variant, output channels, grid side, fine-tune flag."""

    variant: str = "conv-s"
    channels: int = 64
    grid_side: int = 4
    finetune: bool = False
    finetune_all: bool = False

    def __post_init__(self):
        if self.variant not in (*VARIANT_BLOCKS, "precomputed"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.channels < 1 or self.grid_side < 1:
            raise ValueError("channels and grid_side must be positive")

    @property
    def positions(self) -> int:
        return self.grid_side * self.grid_side


@dataclass
class AnnotationGrid:
    """P position vectors of dimension N from the encoder's final conv layer."""

    values: np.ndarray  # (P, N) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"annotation grid must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("annotation grid contains non-finite values")

    @property
    def positions(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def flatten_annotations(volume: np.ndarray) -> AnnotationGrid:
    """Flatten a (N, G, G) feature volume to (G*G, N): row p is the channel
    fiber at spatial position p, row-major over (row, col)."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise ValueError(f"expected a 3-axis volume, got shape {volume.shape}")
    n, h, w = volume.shape
    return AnnotationGrid(volume.reshape(n, h * w).T.copy())


def unflatten_annotations(grid: AnnotationGrid, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`flatten_annotations`."""
    p, n = grid.values.shape
    if p != height * width:
        raise ValueError(f"{p} positions do not fill a {height}x{width} grid")
    return grid.values.T.reshape(n, height, width).copy()


def _patch_index_map(height, width, stride):
    """Flat pixel indices for each non-overlapping stride x stride patch,
    patch-major then pixel-major; output grid is (height//stride, width//stride)."""
    gh, gw = height // stride, width // stride
    ids = np.empty((gh * gw, stride * stride), dtype=np.int64)
    p = 0
    for gy in range(gh):
        for gx in range(gw):
            k = 0
            for dy in range(stride):
                for dx in range(stride):
                    ids[p, k] = (gy * stride + dy) * width + (gx * stride + dx)
                    k += 1
            p += 1
    return ids


def _block_strides(total_stride: int, blocks: int) -> list[int]:
    """Split the required downsampling across blocks: the first block absorbs
    what stride-2 blocks cannot, later blocks halve."""
    rest = 2 ** (blocks - 1)
    if total_stride % rest != 0 or total_stride < rest:
        raise ValueError(
            f"cannot reach total stride {total_stride} with {blocks} blocks"
        )
    return [total_stride // rest] + [2] * (blocks - 1)


class ConvEncoder:
    """Trainable stand-in for a deep pretrained CNN encoder.

    Depth follows the variant (2/3/4 blocks for conv-s/m/l); block widths are
    fixed (8, 16, 32, 64) and a final 1x1 conv maps to ``config.channels``.
    ``finetune`` controls which parameters train: nothing when off, only the
    final 1x1 layer when on, everything with ``finetune_all``.
    """

    BLOCK_WIDTHS = (8, 16, 32, 64)

    def __init__(self, config: EncoderConfig, rng: Rng):
        if config.variant == "precomputed":
            raise ValueError("ConvEncoder requires a trainable variant")
        self.config = config
        self.blocks = []  # (weight, bias) per patch-conv block
        n_blocks = VARIANT_BLOCKS[config.variant]
        in_ch = 3
        for b in range(n_blocks):
            out_ch = self.BLOCK_WIDTHS[b]
            # Weight shape depends on the stride chosen at encode time only
            # through the patch size, which is fixed per block below.
            self.blocks.append((in_ch, out_ch))
            in_ch = out_ch
        self._rng = rng
        self._block_params = None  # created lazily once strides are known
        self._strides = None
        self.head_w = uniform_init(rng, (in_ch, config.channels), name="encoder.head.w")
        self.head_b = Tensor(np.zeros((1, config.channels)), requires_grad=True,
                             name="encoder.head.b")
        self.set_finetune(config.finetune)

    def _ensure_blocks(self, height, width):
        g = self.config.grid_side
        if height % g != 0 or width % g != 0:
            raise ValueError(
                f"input {height}x{width} not divisible by grid side {g}"
            )
        if height // g != width // g:
            raise ValueError("input must downsample equally in both axes")
        strides = _block_strides(height // g, len(self.blocks))
        if self._block_params is not None:
            if self._strides != strides:
                raise ValueError(
                    f"encoder built for strides {self._strides}, got input needing {strides}"
                )
            return
        self._strides = strides
        self._block_params = []
        for (in_ch, out_ch), s in zip(self.blocks, strides):
            w = uniform_init(self._rng, (s * s * in_ch, out_ch),
                             name=f"encoder.block{len(self._block_params)}.w")
            b = Tensor(np.zeros((1, out_ch)), requires_grad=True,
                       name=f"encoder.block{len(self._block_params)}.b")
            self._block_params.append((w, b))
        self.set_finetune(self.config.finetune)

    def prepare(self, height: int, width: int):
        """Create block weights for this input size (idempotent).

        Call before collecting parameters for an optimizer; weights are sized
        by the per-block patch strides, which depend on the input resolution.
        """
        self._ensure_blocks(height, width)

    def encode(self, image) -> Tensor:
        """Image (3, H, W) in [0, 1] to an in-graph (P, N) annotation tensor."""
        img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) image, got shape {img.shape}")
        _, height, width = img.shape
        self._ensure_blocks(height, width)

        # Pixel table (H*W, 3), kept in-graph only when the image itself needs
        # gradients (transposed via matmul so it stays inside the catalog).
        if isinstance(image, Tensor) and image.requires_grad:
            flat = reshape(image, (3, height * width))
            x = matmul(flat, constant(np.eye(3)), transpose_a=True)
        else:
            x = constant(img.reshape(3, -1).T.copy())
        h, w = height, width
        for (weight, bias), s in zip(self._block_params, self._strides):
            ids = _patch_index_map(h, w, s)
            patches = embedding(x, ids.reshape(-1))
            patches = reshape(patches, (ids.shape[0], ids.shape[1] * x.shape[1]))
            x = relu(add(matmul(patches, weight), bias))
            h, w = h // s, w // s
        return add(matmul(x, self.head_w), self.head_b)

    def parameters(self):
        """All parameters, trainable or not, in a stable order."""
        params = []
        if self._block_params:
            for w, b in self._block_params:
                params.extend([w, b])
        params.extend([self.head_w, self.head_b])
        return params

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def set_finetune(self, flag: bool):
        """Select trainable parameters: none, final 1x1 layer, or (with
        ``finetune_all``) every block."""
        self.config.finetune = bool(flag)
        all_blocks = flag and self.config.finetune_all
        if self._block_params:
            for w, b in self._block_params:
                w.requires_grad = all_blocks
                b.requires_grad = all_blocks
        self.head_w.requires_grad = bool(flag)
        self.head_b.requires_grad = bool(flag)


class PrecomputedEncoder:
    """Pass-through for feature grids loaded from files."""

    def __init__(self, config: EncoderConfig):
        self.config = config

    def encode(self, grid) -> Tensor:
        values = grid.values if isinstance(grid, AnnotationGrid) else np.asarray(grid)
        return constant(values)

    def parameters(self):
        return []

    def trainable_parameters(self):
        return []

    def set_finetune(self, flag: bool):
        raise ValueError("precomputed features cannot be fine-tuned")


def build_encoder(config: EncoderConfig, rng: Rng):
    if config.variant == "precomputed":
        return PrecomputedEncoder(config)
    return ConvEncoder(config, rng)
