"""JSON round trip for certificates."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..errors import ShyCouplingError
from ..geometry import domain_from_dict
from .types import PlanarCertificate, SimpleCertificate

FORMAT_VERSION = 1


class CertificateFormatError(ShyCouplingError, ValueError):
    pass


def _num(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _unnum(v):
    return float(v)


def certificate_to_dict(cert) -> dict:
    common = {
        "format_version": FORMAT_VERSION,
        "kind": cert.kind,
        "domain": cert.domain.to_dict(),
        "domain_hash": cert.domain.domain_hash(),
        "epsilon": cert.epsilon,
        "delta": cert.delta,
        "S": _num(cert.S),
        "a": cert.a,
        "b": cert.b,
        "lambda": cert.lam,
        "log_c": cert.log_c,
        "max_phi": cert.max_phi,
        "poles": np.asarray(cert.poles).tolist(),
        "grid_resolution": cert.grid_resolution,
        "worst_margins": {k: _num(v) for k, v in cert.worst_margins.items()},
    }
    if isinstance(cert, PlanarCertificate):
        common.update(
            R=cert.R,
            sigma=cert.sigma,
            phi=cert.phi,
            eta=cert.eta,
            xi=cert.xi,
            center=np.asarray(cert.center).tolist(),
            pole_segments=list(cert.pole_segments),
            pole_signs=list(cert.pole_signs),
        )
    return common


def certificate_from_dict(doc: dict):
    try:
        if doc.get("format_version") != FORMAT_VERSION:
            raise CertificateFormatError(f"unsupported format_version {doc.get('format_version')!r}")
        domain = domain_from_dict(doc["domain"])
        if domain.domain_hash() != doc["domain_hash"]:
            raise CertificateFormatError("domain hash does not match the domain block")
        margins = {k: _unnum(v) for k, v in doc.get("worst_margins", {}).items()}
        shared = dict(
            domain=domain,
            delta=float(doc["delta"]),
            epsilon=float(doc["epsilon"]),
            a=float(doc["a"]),
            b=float(doc["b"]),
            lam=float(doc["lambda"]),
            log_c=float(doc["log_c"]),
            max_phi=float(doc["max_phi"]),
            grid_resolution=float(doc["grid_resolution"]),
            worst_margins=margins,
        )
        if doc["kind"] == "simple":
            return SimpleCertificate(p=np.asarray(doc["poles"][0], dtype=float), **shared)
        if doc["kind"] == "planar":
            return PlanarCertificate(
                poles=np.asarray(doc["poles"], dtype=float),
                pole_segments=list(doc["pole_segments"]),
                pole_signs=list(doc["pole_signs"]),
                S=_unnum(doc["S"]),
                R=float(doc["R"]),
                sigma=float(doc["sigma"]),
                phi=float(doc["phi"]),
                eta=float(doc["eta"]),
                xi=float(doc["xi"]),
                center=np.asarray(doc["center"], dtype=float),
                **shared,
            )
        raise CertificateFormatError(f"unknown certificate kind {doc['kind']!r}")
    except KeyError as exc:
        raise CertificateFormatError(f"missing field {exc.args[0]!r}") from None


def save_certificate(cert, path) -> None:
    Path(path).write_text(json.dumps(certificate_to_dict(cert), indent=2) + "\n")


def load_certificate(path):
    """Read a certificate; OSError propagates for missing files."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CertificateFormatError(f"not a certificate document: {exc}") from None
    return certificate_from_dict(doc)
