"""Run configuration: one JSON or TOML file, flag overrides win.

The config hash identifies a run semantically: it covers every field that
can change results and skips the ones that cannot (output directory, worker
count), so reruns and differently-parallelized runs of the same experiment
hash identically.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .metrics import EditCostConfig
from .providers import (
    CassetteChatProvider,
    ChatProvider,
    MockChatProvider,
    RemoteChatProvider,
)
from .retrieval import (
    CachedEmbeddingProvider,
    EmbeddingProvider,
    HashEmbeddingProvider,
    RemoteEmbeddingProvider,
)

STRATEGIES = ("single_shot", "rule_based", "m2io")

DEFAULT_PROVIDERS: dict[str, dict] = {
    "generator": {"type": "mock"},
    "inserter": {"type": "mock"},
    "embedder": {"type": "hash", "dim": 256},
}


def _load_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


@dataclass
class RunConfig:
    dataset: str
    strategy: str = "m2io"
    inserter_style: str = "r1"
    k: int = 2
    alpha: float = 0.8
    edit_costs: dict = field(
        default_factory=lambda: {"p1": 1.0, "p2": 0.8, "p3": 0.5, "p": 1.0}
    )
    seed: int = 0
    output_dir: str = "runs/out"
    workers: int = 1
    rule_threshold: float = 0.5
    candidates: str = "sample"  # insertion candidates: sample | retrieved
    use_gt_answer: bool = False
    corpus: str | None = None
    order_sources: tuple[str, ...] = ("recipe", "manual")
    rel_norm: str = "offset"
    providers: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.inserter_style not in ("r1", "base"):
            raise ConfigError(f"inserter_style must be r1 or base, got {self.inserter_style!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.candidates not in ("sample", "retrieved"):
            raise ConfigError(f"candidates must be sample or retrieved, got {self.candidates!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.edit_cost_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        merged = dict(DEFAULT_PROVIDERS)
        merged.update(self.providers or {})
        self.providers = merged
        self.order_sources = tuple(s.lower() for s in self.order_sources)

    @classmethod
    def load(cls, path: str | Path, overrides: Mapping[str, object] | None = None) -> "RunConfig":
        data = _load_config_file(path)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be an object")
        if overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})
        if "dataset" not in data:
            raise ConfigError(f"{path}: config must name a dataset")
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        if "order_sources" in data:
            data["order_sources"] = tuple(data["order_sources"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def edit_cost_config(self) -> EditCostConfig:
        return EditCostConfig(**self.edit_costs)

    def semantic_dict(self) -> dict:
        """Every field that can change results; excludes output_dir/workers."""
        return {
            "dataset": self.dataset,
            "strategy": self.strategy,
            "inserter_style": self.inserter_style,
            "k": self.k,
            "alpha": self.alpha,
            "edit_costs": dict(self.edit_costs),
            "seed": self.seed,
            "rule_threshold": self.rule_threshold,
            "candidates": self.candidates,
            "use_gt_answer": self.use_gt_answer,
            "corpus": self.corpus,
            "order_sources": list(self.order_sources),
            "rel_norm": self.rel_norm,
            "providers": self.providers,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.semantic_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_chat_provider(spec: Mapping[str, object]) -> ChatProvider:
    kind = str(spec.get("type", "mock"))
    if kind == "mock":
        return MockChatProvider()
    if kind == "remote":
        try:
            return RemoteChatProvider(
                base_url=str(spec["base_url"]),
                model=str(spec["model"]),
                api_key_env=str(spec.get("api_key_env", "OPENAI_API_KEY")),
                timeout=float(spec.get("timeout", 60.0)),
                max_attempts=int(spec.get("max_attempts", 3)),
            )
        except KeyError as exc:
            raise ConfigError(f"remote chat provider needs {exc}") from exc
    if kind == "cassette":
        inner = spec.get("inner")
        return CassetteChatProvider(
            path=str(spec["path"]),
            mode=str(spec.get("mode", "replay")),
            inner=build_chat_provider(inner) if isinstance(inner, Mapping) else None,
        )
    raise ConfigError(f"unknown chat provider type {kind!r}")


def build_embedder(spec: Mapping[str, object]) -> EmbeddingProvider:
    kind = str(spec.get("type", "hash"))
    if kind == "hash":
        provider: EmbeddingProvider = HashEmbeddingProvider(dim=int(spec.get("dim", 256)))
    elif kind == "remote":
        try:
            provider = RemoteEmbeddingProvider(
                base_url=str(spec["base_url"]),
                model=str(spec["model"]),
                api_key_env=str(spec.get("api_key_env", "OPENAI_API_KEY")),
                timeout=float(spec.get("timeout", 30.0)),
                parallelism=int(spec.get("parallelism", 4)),
                max_attempts=int(spec.get("max_attempts", 3)),
            )
        except KeyError as exc:
            raise ConfigError(f"remote embedding provider needs {exc}") from exc
    else:
        raise ConfigError(f"unknown embedding provider type {kind!r}")
    cache_dir = spec.get("cache_dir")
    if cache_dir:
        provider = CachedEmbeddingProvider(provider, str(cache_dir))
    return provider
