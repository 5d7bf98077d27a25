"""
Field and ensemble persistence.

Binary checkpoint:
    b"GMNSECKP" | version byte | uint32 little-endian header length |
    JSON header {dimension, resolution, edge_length} |
    little-endian complex128 coefficients in C order

Text checkpoint:
    GMNSE-CHECKPOINT 1
    dimension <d>
    resolution <M>
    edge_length <L>
    <component> <k_1> .. <k_d> <re> <im>     (one line per nonzero coefficient)

Ensembles are directories holding manifest.json and member_0000.ckpt, ...
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..gmnse_integration.errors import CheckpointError
from ..gmnse_integration.spectral_core import SpectralVelocityField, TorusDomain
from .attractor_model import EnsembleLabel, EnsembleState

MAGIC = b"GMNSECKP"
VERSION = 1
TEXT_MAGIC = "GMNSE-CHECKPOINT 1"
MANIFEST_NAME = "manifest.json"

PathLike = Union[str, Path]


def _domain_header(domain: TorusDomain) -> Dict[str, Any]:
    return {
        "dimension": domain.dimension,
        "resolution": domain.resolution_per_axis,
        "edge_length": domain.edge_length,
    }


def _domain_from_header(header: Dict[str, Any], source: str) -> TorusDomain:
    try:
        return TorusDomain(int(header["resolution"]), int(header["dimension"]), float(header["edge_length"]))
    except (KeyError, TypeError, ValueError) as error:
        raise CheckpointError(f"{source}: bad domain header ({error})")


def write_checkpoint(u: SpectralVelocityField, path: PathLike, fmt: str = "binary") -> Path:
    path = Path(path)
    if fmt == "binary":
        header = json.dumps(_domain_header(u.domain), sort_keys=True).encode("utf-8")
        payload = np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes()
        path.write_bytes(MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)) + header + payload)
    elif fmt == "text":
        domain = u.domain
        lines = [
            TEXT_MAGIC,
            f"dimension {domain.dimension}",
            f"resolution {domain.resolution_per_axis}",
            f"edge_length {domain.edge_length!r}",
        ]
        n = domain.integer_wavenumbers
        for index in zip(*np.nonzero(u.coeffs)):
            component, spatial = index[0], index[1:]
            k = " ".join(str(int(n[(axis,) + spatial])) for axis in range(domain.dimension))
            value = u.coeffs[index]
            lines.append(f"{component} {k} {float(value.real)!r} {float(value.imag)!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown checkpoint format '{fmt}'")
    return path


def _read_binary(data: bytes, source: str) -> SpectralVelocityField:
    offset = len(MAGIC)
    if len(data) < offset + 5:
        raise CheckpointError(f"{source}: truncated header")
    version = data[offset]
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    (header_len,) = struct.unpack("<I", data[offset + 1:offset + 5])
    start = offset + 5
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointError(f"{source}: bad JSON header ({error})")
    domain = _domain_from_header(header, source)
    payload = data[start + header_len:]
    expected = int(np.prod(domain.coeff_shape)) * 16
    if len(payload) != expected:
        raise CheckpointError(f"{source}: expected {expected} coefficient bytes, found {len(payload)}")
    coeffs = np.frombuffer(payload, dtype="<c16").reshape(domain.coeff_shape)
    return SpectralVelocityField(domain, coeffs)


def _read_text(text: str, source: str) -> SpectralVelocityField:
    lines = text.splitlines()
    if len(lines) < 4:
        raise CheckpointError(f"{source}: truncated header")
    header = {}
    for number, line in enumerate(lines[1:4], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise CheckpointError(f"{source}: line {number}: expected '<key> <value>'")
        header[parts[0]] = parts[1]
    domain = _domain_from_header(header, source)
    coeffs = np.zeros(domain.coeff_shape, dtype=np.complex128)
    for number, line in enumerate(lines[4:], start=5):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != domain.dimension + 3:
            raise CheckpointError(f"{source}: line {number}: expected {domain.dimension + 3} fields")
        try:
            component = int(parts[0])
            index = domain.index_of([int(v) for v in parts[1:-2]])
            value = complex(float(parts[-2]), float(parts[-1]))
        except ValueError as error:
            raise CheckpointError(f"{source}: line {number}: {error}")
        if not 0 <= component < domain.dimension:
            raise CheckpointError(f"{source}: line {number}: component {component} out of range")
        coeffs[(component,) + index] = value
    return SpectralVelocityField(domain, coeffs)


def read_checkpoint(path: PathLike, domain: Optional[TorusDomain] = None) -> SpectralVelocityField:
    """
    Load a binary or text checkpoint, detected from its magic.

    Raises:
        CheckpointError: unknown magic, malformed content, or a domain other
            than the one requested
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as error:
        raise CheckpointError(f"cannot read checkpoint {path}: {error}")
    if data.startswith(MAGIC):
        u = _read_binary(data, str(path))
    elif data.startswith(TEXT_MAGIC.encode("ascii")):
        u = _read_text(data.decode("utf-8"), str(path))
    else:
        raise CheckpointError(f"{path}: not a GMNSE checkpoint")
    if domain is not None and u.domain != domain:
        raise CheckpointError(f"{path}: checkpoint domain {u.domain} does not match {domain}")
    return u


def write_ensemble(
    ensemble: EnsembleState, directory: PathLike, params_hash: str = "", fmt: str = "binary"
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, member in enumerate(ensemble.members):
        write_checkpoint(member, directory / f"member_{i:04d}.ckpt", fmt)
    manifest = {
        "member_count": len(ensemble),
        "label": ensemble.label.value,
        "domain": _domain_header(ensemble.domain),
        "params_hash": params_hash,
        "metadata": ensemble.metadata,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def read_ensemble(directory: PathLike) -> EnsembleState:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as error:
        raise CheckpointError(f"{directory}: unreadable ensemble manifest ({error})")
    domain = _domain_from_header(manifest.get("domain", {}), str(directory))
    count = int(manifest.get("member_count", 0))
    members = tuple(read_checkpoint(directory / f"member_{i:04d}.ckpt", domain) for i in range(count))
    try:
        label = EnsembleLabel(manifest.get("label", EnsembleLabel.INITIAL_SET.value))
    except ValueError:
        raise CheckpointError(f"{directory}: unknown ensemble label {manifest.get('label')!r}")
    if not members:
        raise CheckpointError(f"{directory}: ensemble has no members")
    return EnsembleState(members, label, manifest.get("metadata", {}))
