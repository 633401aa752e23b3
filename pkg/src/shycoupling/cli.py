"""Command line entry points: simulate, certify, verify, stats."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .certificates import (
    CertificateFormatError,
    attach_certificate,
    build_planar_certificate,
    load_certificate,
    save_certificate,
    select_simple_certificate,
    verify_boundary_drift,
)
from .config import ExperimentConfig, load_config
from .dynamics import read_trajectory_csv, simulate_ensemble, write_trajectory_csv
from .errors import (
    ConfigError,
    CriterionRatioError,
    NoFeasibleDeltaError,
    PreconditionError,
    RTooSmallError,
)
from .montecarlo import EnsembleSummary, coupling_time_stats, supermartingale_test

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY = 4


class CommandFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command", key="config")
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, replicas=args.replicas, out=args.out, threads=args.threads)


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_certificate(cfg: ExperimentConfig):
    spec = cfg.certificate
    if spec is None:
        raise ConfigError("required block missing", key="certificate")
    if spec.mode == "file":
        return load_certificate(spec.path)
    eps = cfg.simulation.epsilon
    if spec.mode == "simple":
        return select_simple_certificate(cfg.domain, eps, spec.p, resolution=spec.resolution, verify_resolution=spec.verify_resolution)
    return build_planar_certificate(cfg.domain, eps, spec.R, spec.sigma, center=spec.center, resolution=spec.resolution)


def _write_summary(out: Path, summary: EnsembleSummary, extra: dict | None = None) -> None:
    doc = yaml.safe_load(summary.to_text()) or {}
    if extra:
        doc.update(extra)
    (out / "summary.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    if summary.checkpoints:
        (out / "checkpoints.csv").write_text(summary.checkpoint_csv())


def _write_coupling_times(out: Path, trajs) -> None:
    lines = ["replica,coupling_time,stop_reason"]
    for tr in trajs:
        ct = "" if tr.coupling_time is None else repr(float(tr.coupling_time))
        lines.append(f"{tr.replica},{ct},{tr.stop_reason}")
    (out / "coupling_times.csv").write_text("\n".join(lines) + "\n")


def _summarize(trajs, cert, checkpoints, confidence):
    summary = coupling_time_stats(trajs)
    if cert is not None and trajs:
        sm = supermartingale_test(trajs, cert, checkpoints, confidence)
        summary.checkpoints = sm.checkpoints
        summary.tests = sm.tests
        summary.confidence = confidence
    return summary


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg.out_dir)
    cert = build_certificate(cfg) if cfg.certificate is not None else None
    trajs = simulate_ensemble(cfg.domain, cfg.strategy, cfg.simulation, cfg.ensemble.replicas, threads=cfg.ensemble.threads)
    if cert is not None:
        trajs = [attach_certificate(cert, tr) for tr in trajs]
        save_certificate(cert, out / "certificate.json")
    if cfg.write_trajectories and trajs:
        tdir = _out_dir(out / "trajectories")
        for tr in trajs:
            write_trajectory_csv(tr, tdir / f"replica_{tr.replica:05d}.csv")
    _write_coupling_times(out, trajs)
    summary = _summarize(trajs, cert, cfg.ensemble.checkpoints, cfg.ensemble.confidence)
    _write_summary(out, summary, {"seed": cfg.seed, "strategy": cfg.strategy.name})
    print(f"simulated {len(trajs)} replicas -> {out}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg.out_dir)
    cert = build_certificate(cfg)
    save_certificate(cert, out / "certificate.json")
    res = cfg.certificate.verify_resolution or cert.grid_resolution
    report = verify_boundary_drift(cert, res)
    (out / "verification.yaml").write_text(yaml.safe_dump(report.as_dict(), sort_keys=False))
    print(f"{cert.kind} certificate: delta={cert.delta:.6g} a={cert.a:.6g} lambda={cert.lam:.6g} log_c={cert.log_c:.6g}")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_verify(args) -> int:
    path = args.certificate
    if path is None:
        cfg = _load(args)
        if cfg.certificate is None or cfg.certificate.mode != "file":
            raise ConfigError("needs --certificate or a certificate block with mode: file", key="certificate")
        path = cfg.certificate.path
    cert = load_certificate(path)
    res = args.resolution if args.resolution is not None else cert.grid_resolution / args.refine
    report = verify_boundary_drift(cert, res)
    if args.out:
        out = _out_dir(args.out)
        (out / "verification.yaml").write_text(yaml.safe_dump(report.as_dict(), sort_keys=False))
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_stats(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*.csv"))
    trajs = [read_trajectory_csv(f) for f in files]
    trajs.sort(key=lambda tr: tr.replica)
    cert = load_certificate(args.certificate) if args.certificate else None
    confidence = 0.99
    checkpoints = None
    if args.config:
        cfg = _load(args)
        checkpoints, confidence = cfg.ensemble.checkpoints, cfg.ensemble.confidence
    if cert is not None and trajs:
        if any(tr.phi is None for tr in trajs):
            trajs = [attach_certificate(cert, tr) for tr in trajs]
        if checkpoints is None:
            horizon = min(tr.t[-1] for tr in trajs if tr.coupling_time is None) if any(
                tr.coupling_time is None for tr in trajs
            ) else max(tr.t[-1] for tr in trajs)
            checkpoints = np.linspace(0.0, horizon, 11).tolist()
    summary = _summarize(trajs, cert, checkpoints, confidence)
    out = _out_dir(args.out or src.parent)
    _write_summary(out, summary)
    print(summary.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--replicas", type=int, help="override the replica count")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes for ensembles")

    p = argparse.ArgumentParser(prog="shycoupling", description="Co-adapted couplings of reflected Brownian motion.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run a coupled ensemble").set_defaults(func=cmd_simulate)
    sub.add_parser("certify", parents=[common], help="build and verify a certificate").set_defaults(func=cmd_certify)
    v = sub.add_parser("verify", parents=[common], help="re-verify a saved certificate")
    v.add_argument("--certificate", help="certificate JSON file")
    v.add_argument("--resolution", type=float, help="grid spacing (default: saved spacing / refine)")
    v.add_argument("--refine", type=float, default=1.0, help="divide the saved spacing by this factor")
    v.set_defaults(func=cmd_verify)
    s = sub.add_parser("stats", parents=[common], help="summarize trajectory CSVs")
    s.add_argument("--input", required=True, help="directory of trajectory CSV files")
    s.add_argument("--certificate", help="certificate JSON for the supermartingale test")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateFormatError as exc:
        print(f"certificate error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoFeasibleDeltaError, CriterionRatioError, RTooSmallError, PreconditionError) as exc:
        print(f"certificate infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
