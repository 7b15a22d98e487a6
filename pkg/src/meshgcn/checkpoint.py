"""Checkpoint directories: ``manifest.json`` plus a little-endian float64 blob.

The blob holds every parameter, then every optimizer accumulator, each in
sorted-name order. The manifest records names, shapes and offsets along
with the network and training configuration, so a checkpoint is readable
without this package.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "meshgcn-ckpt/1"


@dataclass
class Checkpoint:
    params: dict
    net_config: dict
    train_config: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)  # name -> accumulator
    meta: dict = field(default_factory=dict)  # phase, step, template, abort reason

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries, chunks, off = [], [], 0
        for group, arrays in (("params", self.params), ("optimizer", self.optimizer)):
            for name in sorted(arrays):
                a = np.ascontiguousarray(arrays[name], dtype="<f8")
                entries.append({"group": group, "name": name, "shape": list(a.shape), "offset": off})
                chunks.append(a.tobytes())
                off += a.size
        manifest = {"format": FORMAT, "net_config": self.net_config, "train_config": self.train_config,
                    "meta": self.meta, "tensors": entries, "count": off}
        (d / "params.bin").write_bytes(b"".join(chunks))
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{d}: unsupported checkpoint format {manifest.get('format')!r}")
        blob = np.frombuffer((d / "params.bin").read_bytes(), dtype="<f8")
        if blob.size != manifest["count"]:
            raise ValueError(f"{d}: blob has {blob.size} values, manifest says {manifest['count']}")
        groups: dict = {"params": {}, "optimizer": {}}
        for e in manifest["tensors"]:
            n = int(np.prod(e["shape"], dtype=np.int64))
            groups[e["group"]][e["name"]] = blob[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
        return cls(groups["params"], manifest["net_config"], manifest["train_config"],
                   groups["optimizer"], manifest["meta"])
