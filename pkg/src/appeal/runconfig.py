"""Run configuration: one TOML file drives every pipeline stage.

Relative paths inside the file resolve against the file's own directory, so
a run directory can be checked out and moved wholesale.
"""

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .appealmap import EnhanceConfig, HeatmapConfig
from .domain import DomainConfig, load_domain_config
from .errors import ConfigFormatError, ValidationError
from .models import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_TOP_LEVEL_KEYS = {
    "seed",
    "workdir",
    "domain_config",
    "backends",
    "training",
    "heatmap",
    "enhance",
    "fetch",
    "filter",
    "synthesis",
    "pairs",
    "labeling",
}


@dataclass(frozen=True)
class RunConfig:
    path: Path
    seed: int
    workdir: Path
    domain_config_path: Path
    backends: dict
    training: TrainConfig
    heatmap: HeatmapConfig
    enhance: EnhanceConfig
    fetch_top_k: int = 50
    fetch_delay: float = 0.0
    aggregate: str = "max"
    n_bases: int = 40
    exemplars_per_embedding: int = 50
    exclude_nouns: tuple[str, ...] = ()
    mask_threshold: float = 0.5
    synthesis_strength: float = 1.0
    per_base_pairs: int = 12
    n_exemplars: int = 100

    _domain_cache: list = field(default_factory=list, compare=False, repr=False)

    def domain(self) -> DomainConfig:
        if not self._domain_cache:
            self._domain_cache.append(load_domain_config(self.domain_config_path))
        return self._domain_cache[0]


def _pick(block: dict, key: str, default):
    value = block.get(key, default)
    if value is None:
        return default
    return value


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"run config not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFormatError(f"{path}: {exc}") from exc

    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("seed", "workdir", "domain_config"):
        if key not in raw:
            raise ValidationError(f"{path}: missing key {key!r}")

    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    workdir = resolve(raw["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    domain_config_path = resolve(raw["domain_config"])
    if not domain_config_path.exists():
        raise ValidationError(f"{path}: domain_config {domain_config_path} does not exist")

    backends = dict(raw.get("backends", {}))
    # Resolve relative paths in backend options against the config directory.
    for role, spec in backends.items():
        if isinstance(spec, dict):
            for opt in ("corpus", "captions"):
                if opt in spec:
                    spec[opt] = str(resolve(spec[opt]))

    training_raw = raw.get("training")
    if training_raw is None:
        training = TrainConfig.default(seed=raw["seed"])
    else:
        if "stages" not in training_raw:
            training_raw = dict(training_raw)
            training_raw["stages"] = TrainConfig.default().to_dict()["stages"]
        training = TrainConfig.from_dict(
            {"seed": raw["seed"], **training_raw}
        )

    heatmap_raw = raw.get("heatmap", {})
    heatmap = HeatmapConfig(
        window=_pick(heatmap_raw, "window", 224),
        stride=_pick(heatmap_raw, "stride", 32),
        normalization=_pick(heatmap_raw, "normalization", "minmax"),
    )

    enhance_raw = raw.get("enhance", {})
    defaults = EnhanceConfig()
    enhance = EnhanceConfig(
        denoising_strength=_pick(enhance_raw, "denoising_strength", defaults.denoising_strength),
        guidance_scale=_pick(enhance_raw, "guidance_scale", defaults.guidance_scale),
        sampler=_pick(enhance_raw, "sampler", defaults.sampler),
        negative_prompt=_pick(enhance_raw, "negative_prompt", defaults.negative_prompt),
        depth_conditioning=_pick(enhance_raw, "depth_conditioning", defaults.depth_conditioning),
        depth_preprocessor=_pick(enhance_raw, "depth_preprocessor", defaults.depth_preprocessor),
        seed=_pick(enhance_raw, "seed", raw["seed"]),
    )

    fetch_raw = raw.get("fetch", {})
    filter_raw = raw.get("filter", {})
    synthesis_raw = raw.get("synthesis", {})
    pairs_raw = raw.get("pairs", {})
    labeling_raw = raw.get("labeling", {})

    return RunConfig(
        path=path,
        seed=raw["seed"],
        workdir=workdir,
        domain_config_path=domain_config_path,
        backends=backends,
        training=training,
        heatmap=heatmap,
        enhance=enhance,
        fetch_top_k=_pick(fetch_raw, "top_k", 50),
        fetch_delay=_pick(fetch_raw, "delay", 0.0),
        aggregate=_pick(filter_raw, "aggregate", "max"),
        n_bases=_pick(synthesis_raw, "n_bases", 40),
        exemplars_per_embedding=_pick(synthesis_raw, "exemplars_per_embedding", 50),
        exclude_nouns=tuple(_pick(synthesis_raw, "exclude_nouns", [])),
        mask_threshold=_pick(synthesis_raw, "mask_threshold", 0.5),
        synthesis_strength=_pick(synthesis_raw, "denoising_strength", 1.0),
        per_base_pairs=_pick(pairs_raw, "per_base_pairs", 12),
        n_exemplars=_pick(labeling_raw, "n_exemplars", 100),
    )
