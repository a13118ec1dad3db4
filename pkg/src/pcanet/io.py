"""Run directories: a JSON manifest plus one little-endian binary block.

A directory holds ``manifest.json`` and ``data.bin``.  The manifest lists
the named arrays in the block (dtype, shape, byte offset) and the sha256 of
the block, which is checked before anything is returned.
"""
from dataclasses import dataclass, field as dc_field, asdict
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
BLOCK = "data.bin"
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class ChecksumError(IOError):
    pass


class SchemaError(IOError):
    pass


def code_version():
    from . import __version__
    return __version__


@dataclass
class DatasetManifest:
    generator: str
    params: dict
    seed: int
    sample_count: int
    geometry: dict = None
    channels: int = 1
    partitions: dict = dc_field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    checksum: str = ""
    blocks: list = dc_field(default_factory=list)
    kind: str = "dataset"
    provenance: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for name, idx in self.partitions.items():
            s = set(int(i) for i in idx)
            if s & seen:
                raise ValueError(f"partition {name!r} overlaps another partition")
            seen |= s

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _encode_arrays(arrays):
    blocks, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        code = "i8" if np.issubdtype(a.dtype, np.integer) else "f8"
        raw = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
        blocks.append({"name": name, "dtype": code, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return blocks, b"".join(chunks)


def _decode_arrays(blocks, raw):
    out = {}
    for b in blocks:
        end = b["offset"] + b["nbytes"]
        if end > len(raw):
            raise ChecksumError(f"block {b['name']!r} runs past the end of the data")
        a = np.frombuffer(raw[b["offset"]:end], dtype=_DTYPES[b["dtype"]]).reshape(b["shape"])
        out[b["name"]] = a.astype(a.dtype.newbyteorder("="))
    return out


def _write(path, header, arrays):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blocks, raw = _encode_arrays(arrays)
    header = dict(header, blocks=blocks, checksum=hashlib.sha256(raw).hexdigest(),
                  schema_version=SCHEMA_VERSION)
    tmp = path / (BLOCK + ".tmp")
    tmp.write_bytes(raw)
    os.replace(tmp, path / BLOCK)
    (path / MANIFEST).write_text(json.dumps(header, indent=2, sort_keys=True, default=_json_default))
    return header


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _read(path):
    path = Path(path)
    try:
        header = json.loads((path / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"unreadable manifest in {path}: {exc}") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unknown schema version {header.get('schema_version')!r}")
    raw = (path / BLOCK).read_bytes()
    if hashlib.sha256(raw).hexdigest() != header.get("checksum"):
        raise ChecksumError(f"checksum mismatch for {path / BLOCK}")
    return header, _decode_arrays(header["blocks"], raw)


def write_dataset(path, manifest, samples):
    """Store ``samples`` (name -> array) with the manifest; returns the final manifest."""
    if isinstance(manifest, dict):
        manifest = DatasetManifest.from_dict(manifest)
    header = manifest.to_dict()
    header = _write(path, header, samples)
    return DatasetManifest.from_dict(header)


def read_dataset(path):
    header, arrays = _read(path)
    if header.get("kind") != "dataset":
        raise SchemaError(f"{path} does not hold a dataset")
    return DatasetManifest.from_dict(header), arrays


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _mlp_arrays(mlp, prefix):
    arrays, layers = {}, []
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        if sp.issparse(w):
            w = sp.csr_matrix(w)
            arrays[f"{prefix}w{k}.data"] = w.data
            arrays[f"{prefix}w{k}.indices"] = w.indices.astype(np.int64)
            arrays[f"{prefix}w{k}.indptr"] = w.indptr.astype(np.int64)
            layers.append({"sparse": True, "shape": list(w.shape)})
        else:
            arrays[f"{prefix}w{k}"] = np.asarray(w)
            layers.append({"sparse": False})
        arrays[f"{prefix}b{k}"] = np.asarray(b)
    return arrays, layers


def _mlp_from(arrays, layers, prefix, validate=True):
    from .nn import Mlp
    ws, bs = [], []
    for k, meta in enumerate(layers):
        if meta["sparse"]:
            ws.append(sp.csr_matrix((arrays[f"{prefix}w{k}.data"], arrays[f"{prefix}w{k}.indices"],
                                     arrays[f"{prefix}w{k}.indptr"]), shape=tuple(meta["shape"])))
        else:
            ws.append(arrays[f"{prefix}w{k}"])
        bs.append(arrays[f"{prefix}b{k}"])
    return Mlp(ws, bs, validate=validate)


def _spec_to_dict(spec):
    return spec.to_dict() if hasattr(spec, "to_dict") else {"kind": spec.kind}


def _spec_from_dict(d):
    from .pca import EUCLIDEAN
    from .field import InnerProductSpec
    if d["kind"] == "euclidean":
        return EUCLIDEAN
    return InnerProductSpec.from_dict(d)


def _basis_arrays(basis, prefix):
    arrays = {f"{prefix}eigenvalues": basis.eigenvalues, f"{prefix}basis": basis.basis,
              f"{prefix}coder": basis.coder}
    if basis.mean is not None:
        arrays[f"{prefix}mean"] = basis.mean
    meta = {"sample_count": basis.sample_count, "spec": _spec_to_dict(basis.spec),
            "geometry": basis.geometry.to_dict() if basis.geometry is not None else None,
            "channels": basis.channels, "centered": basis.centered, "warnings": list(basis.warnings)}
    return arrays, meta


def _basis_from(arrays, meta, prefix):
    from .pca import PcaBasis
    from .field import GridGeometry
    geom = GridGeometry.from_dict(meta["geometry"]) if meta["geometry"] else None
    return PcaBasis(arrays[f"{prefix}eigenvalues"], arrays[f"{prefix}basis"], arrays[f"{prefix}coder"],
                    meta["sample_count"], _spec_from_dict(meta["spec"]), geom, meta["channels"],
                    meta["centered"], arrays.get(f"{prefix}mean"), tuple(meta["warnings"]))


def save_checkpoint(path, obj, provenance=None):
    """Persist a PcaBasis, Mlp, PcaNetModel or UnrolledNet."""
    from .nn import Mlp
    from .pca import PcaBasis
    from .model import PcaNetModel
    from .ns_relu import UnrolledNet
    header = {"kind": None, "provenance": dict(provenance or {}), "code_version": code_version()}
    if isinstance(obj, PcaBasis):
        arrays, meta = _basis_arrays(obj, "")
        header.update(kind="PcaBasis", basis=meta)
    elif isinstance(obj, Mlp):
        arrays, layers = _mlp_arrays(obj, "")
        header.update(kind="Mlp", layers=layers)
    elif isinstance(obj, PcaNetModel):
        ax, mx = _basis_arrays(obj.input_basis, "x.")
        ay, my = _basis_arrays(obj.output_basis, "y.")
        an, layers = _mlp_arrays(obj.net, "net.")
        arrays = {**ax, **ay, **an}
        header.update(kind="PcaNetModel", input_basis=mx, output_basis=my, layers=layers,
                      model_provenance=obj.provenance)
    elif isinstance(obj, UnrolledNet):
        base = obj.step.layers()
        uniq, order = [], []
        for w, b in base:
            hit = next((i for i, (uw, ub) in enumerate(uniq) if uw is w and ub is b), None)
            if hit is None:
                uniq.append((w, b))
                hit = len(uniq) - 1
            order.append(hit)
        from .nn import Mlp as _M
        arrays, layers = _mlp_arrays(_M([w for w, _ in uniq], [b for _, b in uniq], validate=False), "")
        header.update(kind="UnrolledNet", layers=layers, block_list=order, n_steps=obj.n_steps,
                      config=obj.step.config.to_dict(), size=obj.size(), depth=obj.depth())
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    return _write(path, header, arrays)


class _StoredStep:
    def __init__(self, layers, config):
        self._layers = layers
        self.config = config

    def layers(self):
        return list(self._layers)


def load_checkpoint(path):
    header, arrays = _read(path)
    kind = header.get("kind")
    if kind == "PcaBasis":
        return _basis_from(arrays, header["basis"], "")
    if kind == "Mlp":
        return _mlp_from(arrays, header["layers"], "")
    if kind == "PcaNetModel":
        from .model import PcaNetModel
        bx = _basis_from(arrays, header["input_basis"], "x.")
        by = _basis_from(arrays, header["output_basis"], "y.")
        net = _mlp_from(arrays, header["layers"], "net.")
        return PcaNetModel(bx, by, net, header.get("model_provenance", {}), bx.geometry, by.geometry)
    if kind == "UnrolledNet":
        from .ns_relu import UnrolledNet
        from .spectral_ns import NsRunConfig
        uniq = _mlp_from(arrays, header["layers"], "", validate=False)
        pairs = list(zip(uniq.weights, uniq.biases))
        step = _StoredStep([pairs[i] for i in header["block_list"]], NsRunConfig.from_dict(header["config"]))
        return UnrolledNet(step, header["n_steps"])
    raise SchemaError(f"unknown checkpoint kind {kind!r}")


def read_header(path):
    return json.loads((Path(path) / MANIFEST).read_text())
