"""Pipeline configuration: one JSON file drives every subcommand."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from dysflux.core import InvalidInputError, PhonemeInventory, default_inventory
from dysflux.detect import DetectConfig
from dysflux.recursion import RecursionConfig
from dysflux.search import SearchConfig
from dysflux.simulate import CorpusParams, InjectionSpec, default_lexicon


@dataclass(frozen=True)
class Thresholds:
    assign: float = 0.6
    merge: float = 0.6
    match: float = 0.6
    pause_min_s: float = 0.25

    def __post_init__(self):
        for name in ("assign", "merge", "match", "pause_min_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"threshold {name}={v} outside [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    inventory_path: str | None = None  # None: shipped ARPABET inventory
    lexicon_path: str | None = None  # None: shipped lexicon
    lm_path: str | None = None  # None: estimate from the manifest references
    lm_add_k: float = 1.0
    search: SearchConfig = field(default_factory=SearchConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    max_order: int = 3
    workers: int = 1
    seed: int = 0
    dper_sub_cost: str = "max"
    sim: CorpusParams = field(default_factory=CorpusParams)

    def __post_init__(self):
        if self.max_order < 0:
            raise InvalidInputError("max_order must be >= 0")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.dper_sub_cost not in ("max", "mean"):
            raise InvalidInputError("dper_sub_cost must be 'max' or 'mean'")

    def recursion(self) -> RecursionConfig:
        return RecursionConfig(
            search=self.search,
            tau_assign=self.thresholds.assign,
            tau_merge=self.thresholds.merge,
            max_order=self.max_order,
        )

    def detect(self) -> DetectConfig:
        return DetectConfig(
            tau_match=self.thresholds.match, pause_min_s=self.thresholds.pause_min_s
        )


_SECTIONS = {
    "inventory_path",
    "lexicon_path",
    "lm_path",
    "lm_add_k",
    "search",
    "thresholds",
    "max_order",
    "workers",
    "seed",
    "dper_sub_cost",
    "sim",
}


def config_from_dict(doc: dict) -> PipelineConfig:
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(doc)
    if "search" in kwargs:
        kwargs["search"] = SearchConfig(**kwargs["search"])
    if "thresholds" in kwargs:
        kwargs["thresholds"] = Thresholds(**kwargs["thresholds"])
    if "sim" in kwargs:
        sim = dict(kwargs["sim"])
        if "injection" in sim:
            sim["injection"] = InjectionSpec(**sim["injection"])
        for key in ("words_per_utt", "phoneme_frames", "edge_sil_frames", "gap_sil_frames"):
            if key in sim:
                sim[key] = tuple(sim[key])
        kwargs["sim"] = CorpusParams(**sim)
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    import json

    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def resolve_inventory(cfg: PipelineConfig) -> PhonemeInventory:
    if cfg.inventory_path is None:
        return default_inventory()
    from dysflux.io import read_inventory

    return read_inventory(cfg.inventory_path)


def resolve_lexicon(cfg: PipelineConfig) -> dict[str, tuple[str, ...]]:
    if cfg.lexicon_path is None:
        return default_lexicon()
    from dysflux.io import read_lexicon

    return read_lexicon(cfg.lexicon_path)


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg
