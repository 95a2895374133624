"""Run configuration: defaults < config.json (or --config) < command-line flags; ECOPLEX_THREADS caps threads."""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from errors import InputError

DEFAULT_CONFIG = "config.json"
THREADS_ENV = "ECOPLEX_THREADS"
ROUTES = ("svd", "eigen", "mor")
PRUNE_POLICIES = ("component", "strict")


@dataclass
class RunConfig:
    input: Optional[str] = None
    years: List[int] = field(default_factory=list)
    rca_threshold: float = 1.0
    prune_policy: str = "component"
    route: str = "svd"
    tol: float = 1e-10
    max_iter: int = 10_000
    mor_iters: int = 20
    verify: bool = False
    gmm_tol: float = 1e-8
    gmm_max_iter: int = 500
    gmm_restarts: int = 1
    high_threshold: float = 0.997
    borderline_threshold: float = 0.6
    target: Optional[str] = None
    candidates: Optional[str] = None
    greedy_max_iter: int = 200
    audit: bool = False
    seed: int = 0
    threads: int = 1
    out: str = "output"
    bench_sizes: List[List[int]] = field(default_factory=lambda: [[60, 120], [150, 300], [300, 600]])
    bench_density: float = 0.3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InputError(f"Unknown config key(s): {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"Config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def resolve(cls, overrides: dict, config_path: Optional[str] = None) -> "RunConfig":
        """Layer config file values and explicit (non-None) overrides over the defaults."""
        if config_path:
            config = cls.load(config_path)
        elif Path(DEFAULT_CONFIG).exists():
            config = cls.load(DEFAULT_CONFIG)
        else:
            config = cls()
        for key, value in overrides.items():
            if value is not None:
                setattr(config, key, value)
        threads = os.environ.get(THREADS_ENV)
        if threads:
            try:
                cap = int(threads)
            except ValueError:
                raise InputError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
            if cap < 1:
                raise InputError(f"{THREADS_ENV} must be at least 1, got {cap}")
            config.threads = min(config.threads, cap)
        config.validate()
        return config

    def validate(self):
        if self.prune_policy not in PRUNE_POLICIES:
            raise InputError(f"prune_policy must be one of {PRUNE_POLICIES}, got {self.prune_policy!r}")
        if self.route not in ROUTES:
            raise InputError(f"route must be one of {ROUTES}, got {self.route!r}")
        if not self.rca_threshold > 0:
            raise InputError("rca_threshold must be positive")
        if not self.tol > 0 or not self.gmm_tol > 0:
            raise InputError("tolerances must be positive")
        if self.mor_iters < 1 or self.greedy_max_iter < 1 or self.max_iter < 1:
            raise InputError("iteration budgets must be at least 1")
        if not 0.5 < self.borderline_threshold < self.high_threshold <= 1.0:
            raise InputError("thresholds must satisfy 0.5 < borderline_threshold < high_threshold <= 1")
        if self.threads < 1:
            raise InputError("threads must be at least 1")
