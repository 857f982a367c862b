"""Token geometry of the joint [SR | ST | DT | TEXT] sequence.

Also holds the bounding-box foreground bonus used when ranking static
template tokens.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix


class Segment(enum.IntEnum):
    SR = 0
    ST = 1
    DT = 2
    TEXT = 3

    @classmethod
    def parse(cls, name) -> "Segment":
        if isinstance(name, Segment):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown segment {name!r}") from None


class BonusMode(str, enum.Enum):
    OFF = "off"
    FULL = "full"
    SOFT = "soft"
    ALL = "all"


@dataclass(frozen=True)
class SegmentLayout:
    """Grid geometry of the search region and the two templates.

    ``n_sr``, ``n_st`` and ``n_dt`` follow from the grids; both templates
    share one grid. ``n_text`` is 0 (RGB) or 1 (language token present).
    """

    sr_grid: tuple[int, int]
    tmpl_grid: tuple[int, int]
    patch_size: int
    embed_dim: int
    n_text: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sr_grid", tuple(int(v) for v in self.sr_grid))
        object.__setattr__(self, "tmpl_grid", tuple(int(v) for v in self.tmpl_grid))
        if len(self.sr_grid) != 2 or len(self.tmpl_grid) != 2:
            raise ValueError("grids must be (rows, cols)")
        if min(self.sr_grid + self.tmpl_grid) < 1:
            raise ValueError("grid sides must be >= 1")
        if self.patch_size < 1 or self.embed_dim < 1:
            raise ValueError("patch_size and embed_dim must be positive")
        if self.n_text not in (0, 1):
            raise ValueError("only a single text token is supported (n_text in {0, 1})")

    @property
    def n_sr(self) -> int:
        return self.sr_grid[0] * self.sr_grid[1]

    @property
    def n_st(self) -> int:
        return self.tmpl_grid[0] * self.tmpl_grid[1]

    @property
    def n_dt(self) -> int:
        return self.n_st

    @property
    def n_vision(self) -> int:
        return self.n_sr + self.n_st + self.n_dt

    @property
    def n_total(self) -> int:
        return self.n_vision + self.n_text

    @property
    def template_side(self) -> int:
        if self.tmpl_grid[0] != self.tmpl_grid[1]:
            raise ValueError("template crop is not square")
        return self.tmpl_grid[0] * self.patch_size

    def count(self, seg: Segment) -> int:
        return (self.n_sr, self.n_st, self.n_dt, self.n_text)[seg]

    def grid(self, seg: Segment) -> tuple[int, int]:
        if seg == Segment.SR:
            return self.sr_grid
        if seg in (Segment.ST, Segment.DT):
            return self.tmpl_grid
        return (1, self.n_text)

    @classmethod
    def preset(cls, name: str) -> "SegmentLayout":
        try:
            return cls(**LAYOUT_PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown layout preset {name!r}") from None


LAYOUT_PRESETS = {
    # search 256px / template 128px, patch 16
    "ostrack256": dict(sr_grid=(16, 16), tmpl_grid=(8, 8), patch_size=16, embed_dim=768),
    "ostrack384": dict(sr_grid=(24, 24), tmpl_grid=(12, 12), patch_size=16, embed_dim=768),
    "sutrack224": dict(sr_grid=(14, 14), tmpl_grid=(7, 7), patch_size=16, embed_dim=512, n_text=1),
    "sutrack384": dict(sr_grid=(24, 24), tmpl_grid=(12, 12), patch_size=16, embed_dim=512, n_text=1),
}


@dataclass(frozen=True)
class TokenBatch:
    """Token features plus the identity of every row.

    ``original_index`` is the flat position of the token in its segment's
    full grid, so it survives any number of prunes.
    """

    features: np.ndarray
    segment_tag: np.ndarray
    original_index: np.ndarray

    def __post_init__(self):
        feats = as_matrix(self.features, "features")
        tags = np.asarray(self.segment_tag, dtype=np.int64)
        orig = np.asarray(self.original_index, dtype=np.int64)
        if not (feats.shape[0] == tags.shape[0] == orig.shape[0]):
            raise ValueError("features, tags and indices disagree on token count")
        if tags.size and (np.any(np.diff(tags) < 0) or tags.min() < 0 or tags.max() > 3):
            raise ValueError("segment tags must appear in [SR | ST | DT | TEXT] order")
        for seg in Segment:
            idx = orig[tags == seg]
            if np.unique(idx).size != idx.size:
                raise ValueError(f"duplicate original indices in segment {seg.name}")
        for name, arr in (("features", feats), ("segment_tag", tags), ("original_index", orig)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.features.shape[1]

    def positions(self, seg: Segment) -> np.ndarray:
        return np.flatnonzero(self.segment_tag == seg)

    def count(self, seg: Segment) -> int:
        return int(np.count_nonzero(self.segment_tag == seg))

    def indices(self, seg: Segment) -> np.ndarray:
        return self.original_index[self.segment_tag == seg]

    def segment_features(self, seg: Segment) -> np.ndarray:
        return self.features[self.segment_tag == seg]

    def position_of(self, seg: Segment, original: int) -> int | None:
        hit = np.flatnonzero((self.segment_tag == seg) & (self.original_index == original))
        return int(hit[0]) if hit.size else None

    def with_features(self, features: np.ndarray) -> "TokenBatch":
        return TokenBatch(features, self.segment_tag, self.original_index)

    def select(self, rows: np.ndarray) -> "TokenBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return TokenBatch(self.features[rows], self.segment_tag[rows], self.original_index[rows])


def assemble_batch(layout: SegmentLayout, sr, st, dt, text=None) -> TokenBatch:
    parts = [(Segment.SR, sr, layout.n_sr), (Segment.ST, st, layout.n_st), (Segment.DT, dt, layout.n_dt)]
    if text is not None:
        if layout.n_text != 1:
            raise ValueError("layout has no text slot but a text embedding was given")
        parts.append((Segment.TEXT, np.atleast_2d(text), 1))
    elif layout.n_text:
        raise ValueError("layout expects a text embedding")

    feats, tags, orig = [], [], []
    for seg, mat, n in parts:
        mat = as_matrix(mat, seg.name)
        if mat.shape != (n, layout.embed_dim):
            raise ValueError(
                f"{seg.name} embedding has shape {mat.shape}, expected {(n, layout.embed_dim)}"
            )
        feats.append(mat)
        tags.append(np.full(n, int(seg)))
        orig.append(np.arange(n))
    return TokenBatch(np.vstack(feats), np.concatenate(tags), np.concatenate(orig))


def split_batch(batch: TokenBatch) -> dict[Segment, np.ndarray]:
    return {seg: batch.segment_features(seg) for seg in Segment if batch.count(seg)}


def center_index(grid: tuple[int, int]) -> int:
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ValueError("grid sides must be >= 1")
    return (rows // 2) * cols + cols // 2


def fill_missing_modality(rgb) -> np.ndarray:
    """Six-channel input for a frame with no depth/thermal/event data.

    Channel-last; the auxiliary channels are copies of the RGB channels.
    """
    x = np.asarray(rgb)
    if x.ndim < 1 or x.shape[-1] != 3:
        raise ValueError(f"expected a 3-channel (channel-last) crop, got shape {x.shape}")
    return np.concatenate([x, x], axis=-1)


@dataclass(frozen=True)
class BBox:
    """Target box in template-crop pixels; covers [y, y+h) x [x, x+w)."""

    x: int
    y: int
    w: int
    h: int

    def check(self, template_side: int) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError("bbox width and height must be >= 1")
        if self.x < 0 or self.y < 0 or self.x + self.w > template_side or self.y + self.h > template_side:
            raise ValueError(f"bbox {self} exceeds a {template_side}px template")

    @classmethod
    def centered(cls, template_side: int, fraction: float = 0.5) -> "BBox":
        """Box centered in the crop covering ``fraction`` of each side.

        Templates are cropped at twice the target size, hence the 0.5 default.
        """
        side = max(1, int(round(template_side * fraction)))
        off = (template_side - side) // 2
        return cls(off, off, side, side)


def build_mask(bbox: BBox, template_side: int) -> np.ndarray:
    bbox.check(template_side)
    mask = np.zeros((template_side, template_side), dtype=np.uint8)
    mask[bbox.y : bbox.y + bbox.h, bbox.x : bbox.x + bbox.w] = 1
    return mask


def patch_bonus(mask, patch_size: int, mode: BonusMode | str) -> np.ndarray:
    """Per-patch foreground bonus in row-major patch order."""
    mode = BonusMode(mode)
    m = np.asarray(mask, dtype=np.float64)
    rows, cols = m.shape
    if rows % patch_size or cols % patch_size:
        raise ValueError(f"mask {m.shape} not divisible into {patch_size}px patches")
    patches = m.reshape(rows // patch_size, patch_size, cols // patch_size, patch_size).swapaxes(1, 2)
    patches = patches.reshape(-1, patch_size * patch_size)
    if mode == BonusMode.OFF:
        return np.zeros(patches.shape[0])
    if mode == BonusMode.FULL:
        return patches.min(axis=1)
    if mode == BonusMode.ALL:
        return patches.max(axis=1)
    return patches.sum(axis=1) / (patch_size * patch_size)


@dataclass(frozen=True)
class ForegroundBonus:
    mode: BonusMode
    values: np.ndarray = field(repr=False)
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", BonusMode(self.mode))
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or np.any(v < 0) or np.any(v > 1):
            raise ValueError("bonus values must be a 1-D array in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def active(self) -> bool:
        return self.mode != BonusMode.OFF

    @classmethod
    def from_bbox(cls, bbox: BBox, layout: SegmentLayout, mode=BonusMode.SOFT, weight: float = 1.0):
        mask = build_mask(bbox, layout.template_side)
        return cls(BonusMode(mode), patch_bonus(mask, layout.patch_size, mode), weight)
