"""Experiment configuration: YAML documents with a versioned schema.

Example::

    schema_version: 1
    seed: 7
    domain: {kind: disc, radius: 1.0}
    strategy: {name: perverse}
    simulation: {x0: [0.3, 0.0], y0: [-0.3, 0.0], h: 1.0e-4, horizon: 40.0,
                 epsilon: 0.5, record_stride: 100}
    certificate: {mode: simple, p: [2.0, 0.0], resolution: 0.02}
    ensemble: {replicas: 100, checkpoints: 10, confidence: 0.99}
    output: {dir: out, trajectories: true}
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import SimConfig
from .errors import ConfigError, DomainError
from .geometry import ConvexDomain, domain_from_dict
from .strategies import Strategy, strategy_from_config

SCHEMA_VERSION = 1
TOP_KEYS = {"schema_version", "seed", "domain", "strategy", "simulation", "certificate", "ensemble", "output"}


@dataclass
class CertificateSpec:
    mode: str
    p: tuple | None = None
    R: float | None = None
    sigma: float | None = None
    center: tuple | None = None
    resolution: float | None = None
    verify_resolution: float | None = None
    path: str | None = None


@dataclass
class EnsembleSpec:
    replicas: int = 100
    checkpoints: list = field(default_factory=list)
    confidence: float = 0.99
    threads: int = 1


@dataclass
class ExperimentConfig:
    seed: int
    domain: ConvexDomain
    strategy: Strategy
    simulation: SimConfig
    certificate: CertificateSpec | None
    ensemble: EnsembleSpec
    out_dir: Path
    write_trajectories: bool = True
    raw: dict = field(default_factory=dict)

    def with_overrides(self, seed=None, replicas=None, out=None, threads=None) -> "ExperimentConfig":
        from dataclasses import replace

        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), simulation=replace(cfg.simulation, seed=int(seed)))
        if replicas is not None:
            if replicas < 0:
                raise ConfigError("must be >= 0", key="ensemble.replicas")
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, replicas=int(replicas)))
        if threads is not None:
            if threads < 1:
                raise ConfigError("must be >= 1", key="ensemble.threads")
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, threads=int(threads)))
        if out is not None:
            cfg = replace(cfg, out_dir=Path(out))
        return cfg


def _need(block: dict, key: str, prefix: str):
    if key not in block:
        raise ConfigError("required key missing", key=f"{prefix}.{key}" if prefix else key)
    return block[key]


def _block(doc: dict, key: str, required=True) -> dict:
    val = doc.get(key)
    if val is None:
        if required:
            raise ConfigError("required block missing", key=key)
        return {}
    if not isinstance(val, dict):
        raise ConfigError("must be a mapping", key=key)
    return val


def _positive(val, key, allow_zero=False):
    try:
        v = float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {val!r}", key=key) from None
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(f"must be {'>= 0' if allow_zero else '> 0'}, got {val!r}", key=key)
    return v


def _point(val, key, dim=None):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a coordinate list, got {val!r}", key=key) from None
    if arr.ndim != 1 or (dim is not None and len(arr) != dim) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"expected {dim or 'n'} finite coordinates, got {val!r}", key=key)
    return tuple(arr.tolist())


def _int(val, key, minimum=0):
    if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
        raise ConfigError(f"expected an integer, got {val!r}", key=key)
    if val < minimum:
        raise ConfigError(f"must be >= {minimum}", key=key)
    return int(val)


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"expected {SCHEMA_VERSION}, got {version!r}", key="schema_version")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError("unknown top-level key", key=sorted(unknown)[0])
    seed = _int(doc.get("seed", 0), "seed")

    try:
        domain = domain_from_dict(_block(doc, "domain"))
    except DomainError as exc:
        raise ConfigError(str(exc), key="domain") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid domain block: {exc}", key="domain") from None

    strat_spec = doc.get("strategy")
    if strat_spec is None:
        raise ConfigError("required block missing", key="strategy")
    strategy = strategy_from_config(strat_spec)

    sim = _block(doc, "simulation")
    x0 = _point(_need(sim, "x0", "simulation"), "simulation.x0", domain.dim)
    y0 = _point(_need(sim, "y0", "simulation"), "simulation.y0", domain.dim)
    for name, pt in (("x0", x0), ("y0", y0)):
        if not domain.contains(np.array(pt), tol=domain.boundary_tol):
            raise ConfigError("starting point lies outside the domain", key=f"simulation.{name}")
    simcfg = SimConfig(
        x0=x0,
        y0=y0,
        h=_positive(_need(sim, "h", "simulation"), "simulation.h"),
        horizon=_positive(_need(sim, "horizon", "simulation"), "simulation.horizon", allow_zero=True),
        epsilon=_positive(_need(sim, "epsilon", "simulation"), "simulation.epsilon"),
        seed=seed,
        record_stride=_int(sim.get("record_stride", 1), "simulation.record_stride", 1),
    )

    cert = None
    cblock = _block(doc, "certificate", required=False)
    if cblock:
        mode = cblock.get("mode")
        if mode not in ("simple", "planar", "file"):
            raise ConfigError(f"expected simple, planar or file, got {mode!r}", key="certificate.mode")
        cert = CertificateSpec(mode=mode)
        if mode == "simple":
            cert.p = _point(_need(cblock, "p", "certificate"), "certificate.p", domain.dim)
            if domain.contains(np.array(cert.p), tol=domain.boundary_tol):
                raise ConfigError("pole must lie outside the closed domain", key="certificate.p")
        elif mode == "planar":
            cert.R = _positive(_need(cblock, "R", "certificate"), "certificate.R")
            cert.sigma = _positive(_need(cblock, "sigma", "certificate"), "certificate.sigma")
            if not 1 < cert.sigma < 2:
                raise ConfigError("must lie strictly between 1 and 2", key="certificate.sigma")
            if "center" in cblock:
                cert.center = _point(cblock["center"], "certificate.center", domain.dim)
        else:
            cert.path = str(_need(cblock, "path", "certificate"))
            if base_dir is not None and not os.path.isabs(cert.path):
                cert.path = str(base_dir / cert.path)
        if "resolution" in cblock:
            cert.resolution = _positive(cblock["resolution"], "certificate.resolution")
        if "verify_resolution" in cblock:
            cert.verify_resolution = _positive(cblock["verify_resolution"], "certificate.verify_resolution")

    eblock = _block(doc, "ensemble", required=False)
    ens = EnsembleSpec(
        replicas=_int(eblock.get("replicas", 100), "ensemble.replicas"),
        confidence=_positive(eblock.get("confidence", 0.99), "ensemble.confidence"),
        threads=_int(eblock.get("threads", os.cpu_count() or 1), "ensemble.threads", 1),
    )
    if not ens.confidence < 1:
        raise ConfigError("must lie in (0, 1)", key="ensemble.confidence")
    cps = eblock.get("checkpoints", 10)
    if isinstance(cps, list):
        ens.checkpoints = [_positive(c, "ensemble.checkpoints", allow_zero=True) for c in cps]
        if any(b <= a for a, b in zip(ens.checkpoints, ens.checkpoints[1:])):
            raise ConfigError("must be strictly increasing", key="ensemble.checkpoints")
        if ens.checkpoints and ens.checkpoints[-1] > simcfg.horizon:
            raise ConfigError("checkpoint beyond the horizon", key="ensemble.checkpoints")
    else:
        k = _int(cps, "ensemble.checkpoints", 1)
        ens.checkpoints = np.linspace(0.0, simcfg.horizon, k + 1).tolist()

    oblock = _block(doc, "output", required=False)
    out_dir = Path(oblock.get("dir", "out"))
    return ExperimentConfig(
        seed=seed,
        domain=domain,
        strategy=strategy,
        simulation=simcfg,
        certificate=cert,
        ensemble=ens,
        out_dir=out_dir,
        write_trajectories=bool(oblock.get("trajectories", True)),
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    """Parse a YAML config; a relative certificate path resolves against its directory."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    return parse_config(doc, base_dir=path.parent)
