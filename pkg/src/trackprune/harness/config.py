"""Run configuration: JSON documents and named presets.

A config has the key groups ``layout``, ``encoder``, ``schedule``,
``bonus``, ``text_guidance``, ``seed`` and ``io``. Presets expand into the
same explicit form, so every written config is self-describing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..budget import PruningSchedule, staged_schedule
from ..ctem import PruneOptions
from ..encoder import EncoderConfig
from ..layout import BBox, BonusMode, ForegroundBonus, Segment, SegmentLayout, TokenBatch, assemble_batch
from .fixtures import read_fixture

STAGE_SUFFIXES = {"": (), "-ce": ("ce",), "-ce-dte": ("ce", "dte"), "-utp": ("ce", "dte", "ste")}
FAMILIES = {"ostrack256": "rgb", "ostrack384": "rgb", "sutrack224": "unified", "sutrack384": "unified"}
PRESETS = sorted(base + sfx for base in FAMILIES for sfx in STAGE_SUFFIXES)

DUMMY_TEXT_SEED = 0x7E47


@dataclass(frozen=True)
class BonusConfig:
    mode: str = "soft"
    beta: float = 1.0
    # [x, y, w, h] in template pixels; None means the centered half-size box
    bbox: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        BonusMode(self.mode)
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
            if len(self.bbox) != 4:
                raise ValueError("bbox must be [x, y, w, h]")

    def resolve(self, layout: SegmentLayout) -> ForegroundBonus | None:
        if self.mode == BonusMode.OFF.value:
            return None
        box = BBox(*self.bbox) if self.bbox is not None else BBox.centered(layout.template_side)
        return ForegroundBonus.from_bbox(box, layout, self.mode, self.beta)


@dataclass(frozen=True)
class IOConfig:
    out_dir: str = "out"
    sr_fixture: str | None = None
    st_fixture: str | None = None
    dt_fixture: str | None = None
    text_fixture: str | None = None
    dummy_text: bool = True


@dataclass(frozen=True)
class RunConfig:
    layout: SegmentLayout
    encoder: EncoderConfig
    schedule: PruningSchedule = field(default_factory=PruningSchedule)
    bonus: BonusConfig = field(default_factory=BonusConfig)
    text_guidance: tuple[str, ...] = ()
    seed: int = 0
    io: IOConfig = field(default_factory=IOConfig)

    def __post_init__(self):
        tg = tuple(sorted({Segment.parse(s).name for s in self.text_guidance}, key=lambda n: Segment[n]))
        object.__setattr__(self, "text_guidance", tg)

    def validate(self) -> "RunConfig":
        if self.layout.embed_dim != self.encoder.embed_dim:
            raise ValueError(
                f"layout embed_dim {self.layout.embed_dim} != encoder embed_dim {self.encoder.embed_dim}"
            )
        self.schedule.validate(self.encoder.num_layers)
        if self.text_guidance and self.layout.n_text != 1:
            raise ValueError("text guidance needs a layout with a text token")
        if "TEXT" in self.text_guidance:
            raise ValueError("text token cannot be a text-guidance target")
        if self.bonus.mode != BonusMode.OFF.value:
            self.bonus.resolve(self.layout)
        return self

    def prune_options(self) -> PruneOptions:
        return PruneOptions(self.bonus.resolve(self.layout), frozenset(self.text_guidance))

    def with_no_prune(self) -> "RunConfig":
        return dataclasses.replace(self, schedule=PruningSchedule(**{
            k: v for k, v in self.schedule.to_dict().items() if k.startswith("keep_ratio")
        }))

    def to_dict(self) -> dict:
        lay = dataclasses.asdict(self.layout)
        lay["sr_grid"], lay["tmpl_grid"] = list(self.layout.sr_grid), list(self.layout.tmpl_grid)
        bonus = dataclasses.asdict(self.bonus)
        bonus["bbox"] = list(self.bonus.bbox) if self.bonus.bbox is not None else None
        return {
            "layout": lay,
            "encoder": dataclasses.asdict(self.encoder),
            "schedule": self.schedule.to_dict(),
            "bonus": bonus,
            "text_guidance": list(self.text_guidance),
            "seed": self.seed,
            "io": dataclasses.asdict(self.io),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"layout", "encoder", "schedule", "bonus", "text_guidance", "seed", "io"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                layout=SegmentLayout(**d["layout"]),
                encoder=EncoderConfig(**d["encoder"]),
                schedule=PruningSchedule.from_dict(d.get("schedule", {})),
                bonus=BonusConfig(**d.get("bonus", {})),
                text_guidance=tuple(d.get("text_guidance", ())),
                seed=int(d.get("seed", 0)),
                io=IOConfig(**d.get("io", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def preset(cls, name: str) -> "RunConfig":
        for base in FAMILIES:
            sfx = name[len(base):]
            if name.startswith(base) and sfx in STAGE_SUFFIXES:
                break
        else:
            raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        family = FAMILIES[base]
        layout = SegmentLayout.preset(base)
        return cls(
            layout=layout,
            encoder=EncoderConfig.preset(base),
            schedule=staged_schedule(family, STAGE_SUFFIXES[sfx]),
            bonus=BonusConfig(),
            text_guidance=("DT",) if layout.n_text else (),
            io=IOConfig(out_dir=f"out/{name}"),
        )


def _embedding(path, rng, rows, cols, what):
    if path is None:
        return rng.standard_normal((rows, cols))
    m = read_fixture(path)
    if m.shape != (rows, cols):
        raise ValueError(f"{what} fixture {path} has shape {m.shape}, expected {(rows, cols)}")
    return m


def build_inputs(cfg: RunConfig) -> TokenBatch:
    """Token embeddings from fixtures, or seeded normals where none are given."""
    lay, io = cfg.layout, cfg.io
    rng = np.random.default_rng(cfg.seed)
    d = lay.embed_dim
    sr = _embedding(io.sr_fixture, rng, lay.n_sr, d, "SR")
    st = _embedding(io.st_fixture, rng, lay.n_st, d, "ST")
    dt = _embedding(io.dt_fixture, rng, lay.n_dt, d, "DT")
    text = None
    if lay.n_text:
        if io.text_fixture is not None:
            text = _embedding(io.text_fixture, rng, 1, d, "text")
        elif io.dummy_text:
            text = np.random.default_rng(DUMMY_TEXT_SEED).standard_normal((1, d))
        else:
            raise ValueError("layout has a text token but no text fixture and dummy_text is off")
    return assemble_batch(lay, sr, st, dt, text)
