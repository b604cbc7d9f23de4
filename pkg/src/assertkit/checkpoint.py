"""Versioned checkpoint container.

Layout::

    ASSERTKIT-CKPT 1
    [config]
    <key> = <json value>          # ModelConfig fields
    [meta]
    <key> = <json value>          # training metadata
    [manifest]
    <name> <n0,n1,...>            # one line per array, storage order
    [data]
    <little-endian float32 arrays, manifest order, row-major>
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelConfig, build_model

MAGIC = "ASSERTKIT-CKPT"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, metadata: dict | None = None) -> "Checkpoint":
        return cls(model.config, model.state_dict(), dict(metadata or {}))

    def build(self, dtype=np.float32):
        model = build_model(self.model_config, dtype=dtype)
        model.load_state_dict(self.state)
        return model.eval()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [f"{MAGIC} {VERSION}", "[config]"]
    lines += [f"{k} = {json.dumps(v)}" for k, v in ckpt.model_config.to_dict().items()]
    lines.append("[meta]")
    lines += [f"{k} = {json.dumps(v)}" for k, v in ckpt.metadata.items()]
    lines.append("[manifest]")
    for name, arr in ckpt.state.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        lines.append(f"{name} {','.join(str(n) for n in arr.shape) or '-'}")
    lines.append("[data]")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in ckpt.state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    marker = b"\n[data]\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: no [data] section")
    header = raw[:cut].decode("utf-8").splitlines()
    if not header or header[0] != f"{MAGIC} {VERSION}":
        raise ValueError(f"{path}: not a version-{VERSION} checkpoint")
    sections: dict[str, list[str]] = {}
    current = None
    for line in header[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], [])
        elif line.strip():
            if current is None:
                raise ValueError(f"{path}: entry outside any section: {line!r}")
            current.append(line)

    def kv(lines):
        return {k.strip(): json.loads(v) for k, v in (ln.split("=", 1) for ln in lines)}

    config = ModelConfig.from_dict(kv(sections.get("config", [])))
    meta = kv(sections.get("meta", []))
    body = memoryview(raw)[cut + len(marker):]
    state, offset = {}, 0
    for line in sections.get("manifest", []):
        name, dims = line.rsplit(" ", 1)
        shape = () if dims == "-" else tuple(int(n) for n in dims.split(","))
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(body):
            raise ValueError(f"{path}: data section truncated at {name}")
        state[name] = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(body):
        raise ValueError(f"{path}: {len(body) - offset} trailing bytes after the manifest arrays")
    return Checkpoint(config, state, meta)
