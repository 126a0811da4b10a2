"""ModelBundle: the trained pipeline, normality models and config in one file.

File layout (all integers little-endian)::

    8 bytes   magic b"AHOPBNDL"
    u32       format version
    u64       header length n
    n bytes   UTF-8 JSON header (config, structure, array directory)
    ...       float32 little-endian arrays, offsets relative to this point
    8 bytes   BLAKE2b-64 digest of everything between magic and digest
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ClassConfig
from .errors import CorruptBundleError, UnsupportedBundleError
from .normality import GaussianParams, NormalityModel
from .saab import HopLayer, HopPipeline, HopSpec

MAGIC = b"AHOPBNDL"
FORMAT_VERSION = 1
_DIGEST = 8


@dataclass
class ModelBundle:
    config: ClassConfig
    pipeline: HopPipeline
    models: dict[int, NormalityModel]
    hop_scales: dict[int, float] = field(default_factory=dict)
    train_quantiles: dict[str, float] = field(default_factory=dict)
    config_text: str = ""
    format_version: int = FORMAT_VERSION

    @property
    def parameter_count(self) -> int:
        return self.pipeline.parameter_count


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_DIGEST).digest()


class _Payload:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.directory: list[dict] = []
        self.offset = 0

    def add(self, name: str, arr: np.ndarray) -> None:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        self.directory.append({"name": name, "shape": list(arr.shape), "offset": self.offset})
        self.chunks.append(raw)
        self.offset += len(raw)


def header_dict(bundle: ModelBundle, directory: list[dict]) -> dict:
    p = bundle.pipeline
    return {
        "config": bundle.config.to_dict(),
        "config_text": bundle.config_text,
        "pipeline": {
            "input_shape": list(p.input_shape),
            "energy_threshold": p.energy_threshold,
            "hops": [{"window": l.spec.window, "keep": l.spec.keep, "pool_after": l.spec.pool_after,
                      "in_channels": l.in_channels, "keep_index": [int(i) for i in l.keep]}
                     for l in p.layers],
        },
        "normality": {str(h): {"kind": m.kind, "epsilon": m.epsilon, "hop_index": m.hop_index,
                               "fitted": m.params is not None}
                      for h, m in sorted(bundle.models.items())},
        "hop_scales": {str(h): float(v) for h, v in sorted(bundle.hop_scales.items())},
        "train_quantiles": {k: float(v) for k, v in sorted(bundle.train_quantiles.items())},
        "parameter_count": bundle.parameter_count,
        "arrays": directory,
    }


def dumps_bundle(bundle: ModelBundle) -> bytes:
    payload = _Payload()
    for h, layer in enumerate(bundle.pipeline.layers, start=1):
        payload.add(f"hop{h}/patch_means", layer.patch_means)
        payload.add(f"hop{h}/filters", layer.filters)
        payload.add(f"hop{h}/biases", layer.biases)
        payload.add(f"hop{h}/energies", layer.energies)
        payload.add(f"hop{h}/channel_energy", layer.channel_energy)
    for h, m in sorted(bundle.models.items()):
        if m.params is not None:
            payload.add(f"model{h}/mean", m.params.mean)
            payload.add(f"model{h}/chol", m.params.chol)
    header = json.dumps(header_dict(bundle, payload.directory), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    body = struct.pack("<IQ", bundle.format_version, len(header)) + header + b"".join(payload.chunks)
    return MAGIC + body + _digest(body)


def save_bundle(bundle: ModelBundle, path) -> None:
    Path(path).write_bytes(dumps_bundle(bundle))


def read_header(data: bytes) -> tuple[dict, bytes]:
    if len(data) < len(MAGIC) + 12 + _DIGEST or data[: len(MAGIC)] != MAGIC:
        raise CorruptBundleError("not a bundle file (bad magic or truncated)")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise UnsupportedBundleError(f"bundle format version {version}; this build reads {FORMAT_VERSION}")
    body = data[len(MAGIC): -_DIGEST]
    if _digest(body) != data[-_DIGEST:]:
        raise CorruptBundleError("bundle checksum mismatch")
    (hlen,) = struct.unpack_from("<Q", body, 4)
    try:
        header = json.loads(body[12: 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBundleError(f"unreadable bundle header: {exc}") from exc
    return header, body[12 + hlen:]


def loads_bundle(data: bytes) -> ModelBundle:
    header, payload = read_header(data)
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + 4 * n
        if end > len(payload):
            raise CorruptBundleError(f"array {entry['name']} runs past the payload")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f4", count=n,
                                              offset=entry["offset"]).reshape(entry["shape"]).astype(np.float32)
    p = header["pipeline"]
    layers = []
    for h, hop in enumerate(p["hops"], start=1):
        layers.append(HopLayer(
            spec=HopSpec(hop["window"], hop["keep"], hop["pool_after"]),
            patch_means=arrays[f"hop{h}/patch_means"],
            filters=arrays[f"hop{h}/filters"],
            biases=arrays[f"hop{h}/biases"],
            energies=arrays[f"hop{h}/energies"],
            keep=np.asarray(hop["keep_index"], dtype=np.int64),
            channel_energy=arrays[f"hop{h}/channel_energy"],
        ))
    pipeline = HopPipeline(tuple(p["input_shape"]), layers, p["energy_threshold"])
    models = {}
    for key, m in header["normality"].items():
        params = None
        if m["fitted"]:
            params = GaussianParams(arrays[f"model{key}/mean"], arrays[f"model{key}/chol"])
        models[int(key)] = NormalityModel(m["kind"], m["hop_index"], m["epsilon"], params)
    return ModelBundle(
        config=ClassConfig.from_dict(header["config"]),
        pipeline=pipeline,
        models=models,
        hop_scales={int(k): v for k, v in header["hop_scales"].items()},
        train_quantiles=dict(header["train_quantiles"]),
        config_text=header["config_text"],
    )


def load_bundle(path) -> ModelBundle:
    return loads_bundle(Path(path).read_bytes())
