"""Self-contained model checkpoints.

Layout::

    b"VSFCKPT1"
    uint64 LE   length of the JSON header
    bytes       UTF-8 JSON header (config, vocabulary, tokenizer metadata,
                model sizes, tensor names and shapes in storage order)
    float64 LE  tensor data, concatenated in header order
    uint32 LE   CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from vsformer.model import ModelSpec, VSFormer
from vsformer.pipeline import Tokenizer
from vsformer.priors import FeatureImportanceTable, PrototypeWeight
from vsformer.shape_tokenizer import Prototype
from vsformer.trainer.config import TrainConfig

MAGIC = b"VSFCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


@dataclass
class ModelCheckpoint:
    config: TrainConfig
    tokenizer: Tokenizer
    spec: ModelSpec
    state: dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.tokenizer.class_names

    def build_model(self) -> VSFormer:
        model = VSFormer(self.spec, seed=self.config.seed)
        model.load_state_dict(self.state)
        return model.eval()


def _tokenizer_payload(tok: Tokenizer):
    fi = tok.feature_importance
    n, B, C = fi.n_positions, fi.bins, fi.n_classes
    edges = np.full((n, B - 1), np.nan)
    counts = np.zeros((n, B, C))
    for j in range(n):
        edges[j, : fi.edges[j].size] = fi.edges[j]
        counts[j, : fi.counts[j].shape[0]] = fi.counts[j]
    meta = {
        "V": tok.V,
        "T": tok.T,
        "class_names": list(tok.class_names),
        "k": tok.k,
        "M": tok.M,
        "m": tok.m,
        "alpha": tok.alpha,
        "beta": tok.beta,
        "kind_code": tok.kind_code,
        "znorm_shapes": tok.znorm_shapes,
        "bins": B,
        "prototypes": [
            {"variable": p.variable, "klass": p.klass, "rank": p.rank, "position": p.position,
             "instance": p.instance, "offset": p.offset}
            for p in tok.prototypes
        ],
    }
    tensors = {
        "tokenizer.prototype_values": np.stack([p.values for p in tok.prototypes]),
        "tokenizer.prototype_weights": np.stack([w.as_array() for w in tok.prototype_weights]),
        "tokenizer.feature_importance": fi.importance,
        "tokenizer.bin_edges": edges,
        "tokenizer.bin_counts": counts,
    }
    return meta, tensors


def _tokenizer_from_payload(meta, tensors) -> Tokenizer:
    values = tensors["tokenizer.prototype_values"]
    protos = tuple(
        Prototype(values=values[i].copy(), **pm) for i, pm in enumerate(meta["prototypes"])
    )
    weights = tuple(PrototypeWeight.from_array(r) for r in tensors["tokenizer.prototype_weights"])
    edges, counts = [], []
    for e_row, c_block in zip(tensors["tokenizer.bin_edges"], tensors["tokenizer.bin_counts"]):
        e = e_row[~np.isnan(e_row)].copy()
        edges.append(e)
        counts.append(c_block[: e.size + 1].copy())
    C = len(meta["class_names"])
    fi = FeatureImportanceTable(
        tuple(edges), tuple(counts), tensors["tokenizer.feature_importance"].copy(), C, meta["bins"]
    )
    return Tokenizer(
        meta["V"], meta["T"], tuple(meta["class_names"]), meta["k"], meta["M"], meta["m"],
        meta["alpha"], meta["beta"], meta["kind_code"], meta["znorm_shapes"], protos, weights, fi,
    )


def save_checkpoint(cp: ModelCheckpoint, path) -> None:
    tok_meta, tok_tensors = _tokenizer_payload(cp.tokenizer)
    tensors = {**{f"model.{k}": v for k, v in cp.state.items()}, **tok_tensors}
    header = {
        "format_version": cp.format_version,
        "config": cp.config.to_dict(),
        "spec": asdict(cp.spec),
        "tokenizer": tok_meta,
        "tensors": [{"name": n, "shape": list(np.shape(t))} for n, t in tensors.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<Q", len(head))
    body += head
    for t in tensors.values():
        body += np.ascontiguousarray(t, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> ModelCheckpoint:
    """Read and fully validate a checkpoint before constructing anything.

    Raises
    ------
    TruncatedCheckpointError, ChecksumError, VersionMismatchError, CheckpointError
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12:
        raise TruncatedCheckpointError(f"{path}: file too short to be a checkpoint")
    (stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted or truncated")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    if pos + hlen > len(raw) - 4:
        raise TruncatedCheckpointError(f"{path}: header extends past end of file")
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint format version {version} does not match supported version {FORMAT_VERSION}"
        )
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(raw) - 4:
            raise TruncatedCheckpointError(f"{path}: tensor {entry['name']} extends past end of file")
        tensors[entry["name"]] = np.frombuffer(raw[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    if pos != len(raw) - 4:
        raise CheckpointError(f"{path}: {len(raw) - 4 - pos} unexpected trailing bytes")
    state = {n[len("model.") :]: t for n, t in tensors.items() if n.startswith("model.")}
    return ModelCheckpoint(
        config=TrainConfig.from_dict(header["config"]),
        tokenizer=_tokenizer_from_payload(header["tokenizer"], tensors),
        spec=ModelSpec(**header["spec"]),
        state=state,
        format_version=version,
    )
