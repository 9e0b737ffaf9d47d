"""Run configuration files (YAML)."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from .kam import ConfigError, KamConfig
from .spectral import PotentialSpec

SCHEMA_VERSION = 1
_PHYSICS = {f.name for f in fields(KamConfig)}
_SECTIONS = {"schema_version", "seed", "physics", "potentials", "omega", "measure", "evolve", "output_dir"}


@dataclass
class MeasureSettings:
    K: List[float] = field(default_factory=lambda: [4, 8])
    N_samples: int = 20000
    gamma: Optional[float] = None
    tau: Optional[float] = None


@dataclass
class EvolveSettings:
    T: float = 10.0
    n_out: int = 101
    tol: float = 1e-9
    orders: List[float] = field(default_factory=lambda: [0.0, 1.0])
    initial_k_max: int = 2


@dataclass
class RunConfig:
    kam: KamConfig
    V: Optional[PotentialSpec]
    W: Optional[PotentialSpec]
    omegas: np.ndarray
    seed: int = 0
    measure: MeasureSettings = field(default_factory=MeasureSettings)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)
    source: Optional[str] = None
    output_dir: Optional[str] = None

    def initial_state(self) -> np.ndarray:
        """Normalized random state on the blocks k <= initial_k_max, fixed by the seed."""
        from .spectral import SphereSpec
        sp = SphereSpec(self.kam.n, self.kam.K_max)
        rng = np.random.default_rng(self.seed)
        u = np.zeros(sp.size, dtype=complex)
        sel = sp.block_of <= self.evolve.initial_k_max
        u[sel] = rng.normal(size=sel.sum()) + 1j * rng.normal(size=sel.sum())
        return u / np.linalg.norm(u)

    def as_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "seed": self.seed, "physics": self.kam.as_dict(),
                "omega": self.omegas.tolist(), "measure": vars(self.measure), "evolve": vars(self.evolve)}


def _section(raw: dict, name: str, cls):
    data = raw.get(name) or {}
    if not isinstance(data, dict):
        raise ConfigError(name, "must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return cls(**data)


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("config", "empty configuration")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    physics = raw.get("physics") or {}
    bad = set(physics) - _PHYSICS
    if bad:
        raise ConfigError(f"physics.{sorted(bad)[0]}", "unknown parameter")
    kam = KamConfig(**physics)
    pots = raw.get("potentials") or {}
    loaded = {}
    for key in ("V", "W"):
        path = pots.get(key)
        if path is None:
            loaded[key] = None
            continue
        full = base / path
        if not full.exists():
            raise ConfigError(f"potentials.{key}", f"file {full} not found")
        spec = PotentialSpec.from_file(full, d=kam.d)
        if not spec.is_real():
            raise ConfigError(f"potentials.{key}", "coefficients do not describe a real function")
        loaded[key] = spec
    omegas = np.atleast_2d(np.asarray(raw.get("omega", []), dtype=float))
    if omegas.size == 0 or omegas.shape[1] != kam.d:
        raise ConfigError("omega", f"expected a list of length-{kam.d} frequency vectors")
    if np.any(omegas < 0.5) or np.any(omegas > 1.5):
        raise ConfigError("omega", "frequencies must lie in [1/2, 3/2]^d")
    return RunConfig(kam, loaded["V"], loaded["W"], omegas, int(raw.get("seed", 0)),
                     _section(raw, "measure", MeasureSettings), _section(raw, "evolve", EvolveSettings),
                     output_dir=raw.get("output_dir"))


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    cfg = parse_config(raw, path.parent)
    cfg.source = str(path)
    return cfg


def golden_config_path() -> Path:
    return Path(str(resources.files("sphkam") / "data" / "golden.yaml"))


def load_golden() -> RunConfig:
    return load_config(golden_config_path())
