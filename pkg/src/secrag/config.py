"""Service configuration: TOML file loading with sensible all-stub defaults."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import BackendConfig
from .structured import RetrieverConfig, default_retriever_configs
from .unstructured import BufferConfig, TransformConfig, default_buffer_configs


@dataclass
class EvalDefaults:
    k: float = 4.0
    rounds: int = 1000
    seed: Optional[int] = None


@dataclass
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8080"
    kb_root: Path = Path("./kb")
    backends: list[BackendConfig] = field(default_factory=list)
    retrievers: dict[str, RetrieverConfig] = field(default_factory=default_retriever_configs)
    buffers: list[BufferConfig] = field(default_factory=default_buffer_configs)
    transform: TransformConfig = field(default_factory=TransformConfig)
    eval: EvalDefaults = field(default_factory=EvalDefaults)
    template_id: str = "default"
    cve_fixture: Optional[Path] = None
    cwe_catalog: Optional[Path] = None
    cve_api_url: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.backends:
            self.backends = default_backends()

    def backend(self, backend_id: str) -> BackendConfig:
        for cfg in self.backends:
            if cfg.backend_id == backend_id:
                return cfg
        raise KeyError(f"no backend {backend_id!r} configured")

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_addr.rsplit(":", 1)[1])


def default_backends() -> list[BackendConfig]:
    return [
        BackendConfig(backend_id="alpha", kind="embedder", model_name="embedder-large"),
        BackendConfig(
            backend_id="beta",
            kind="embedder",
            model_name="embedder-large-v1.5",
            options={"seed": 1},
        ),
        BackendConfig(backend_id="question_gen", kind="question_gen"),
        BackendConfig(backend_id="ner", kind="ner"),
        BackendConfig(backend_id="generator", kind="generator"),
        BackendConfig(backend_id="judge", kind="judge"),
    ]


def load_config(path: Optional[Path | str] = None) -> ServiceConfig:
    """Parse the TOML config file; every section is optional."""
    if path is None:
        return ServiceConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)

    service = data.get("service", {})
    config = ServiceConfig(
        listen_addr=service.get("listen_addr", "127.0.0.1:8080"),
        kb_root=Path(service.get("kb_root", "./kb")),
        template_id=service.get("template", "default"),
        backends=[
            BackendConfig(
                backend_id=entry["backend_id"],
                kind=entry["kind"],
                endpoint=entry.get("endpoint", "stub"),
                model_name=entry.get("model_name", ""),
                timeout_ms=entry.get("timeout_ms", 30_000),
                max_retries=entry.get("max_retries", 2),
                options=entry.get("options", {}),
            )
            for entry in data.get("backends", [])
        ],
    )

    retrievers = default_retriever_configs()
    for rid, overrides in data.get("retrievers", {}).items():
        base = retrievers[rid]
        retrievers[rid] = RetrieverConfig(
            retriever_id=rid,
            mode=overrides.get("mode", base.mode),
            threshold=overrides.get("threshold", base.threshold),
            top_k=overrides.get("top_k", base.top_k),
            embedder_backend=overrides.get("embedder", base.embedder_backend),
            kb_partition=overrides.get("kb_partition", base.kb_partition),
        )
    config.retrievers = retrievers

    buffer_section = data.get("buffers", {})
    if buffer_section:
        counts = {
            family: entry.get("count", 0) for family, entry in buffer_section.items()
        }
        config.buffers = [
            BufferConfig(
                buffer_id=f"buffer/{family}/{i}",
                family=family,
                embedder_backend=buffer_section[family].get(
                    "embedder", "beta" if family == "paper" else "alpha"
                ),
                top_k=buffer_section[family].get("top_k", 5),
            )
            for family, count in counts.items()
            for i in range(count)
        ]

    transform = data.get("transform", {})
    if transform:
        config.transform = TransformConfig(
            split_chars=transform.get("split_chars", 300),
            redundancy_threshold=transform.get("redundancy_threshold", 0.95),
            relevance_threshold=transform.get("relevance_threshold", 0.6),
            embedder_backend=transform.get("embedder", "beta"),
        )

    eval_section = data.get("eval", {})
    config.eval = EvalDefaults(
        k=eval_section.get("k", 4.0),
        rounds=eval_section.get("rounds", 1000),
        seed=eval_section.get("seed"),
    )

    vuln = data.get("vuln", {})
    if vuln.get("cve_fixture"):
        config.cve_fixture = Path(vuln["cve_fixture"])
    if vuln.get("cwe_catalog"):
        config.cwe_catalog = Path(vuln["cwe_catalog"])
    if vuln.get("cve_api_url"):
        config.cve_api_url = vuln["cve_api_url"]
    return config
