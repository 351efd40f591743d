"""Graph-transformer encoder with pretraining heads and a multitask regression head.

The encoder runs two message-passing views in parallel:

* atom view: node states updated from the sum of neighbor states;
* bond view: directed-edge states updated from incoming edges, excluding
  the reverse edge, then summed onto their destination atoms.

The atom view is refined by one multi-head self-attention block that only
attends within each molecule. The graph embedding is the mean-pooled atom
view concatenated with the mean-pooled bond view.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, CorruptFile, MissingTensor, SchemaMismatch, ShapeMismatch, VersionMismatch
from .featurize import ATOM_DIM, BOND_DIM, DESCRIPTOR_DIM, SCHEMA_VERSION, FeatureBatch

CHECKPOINT_VERSION = 1
_MAGIC = b"KRMTCKPT"


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    mp_layers: int = 3
    attention_heads: int = 4
    ffn_layers: int = 2
    n_tasks: int = 1
    descriptor_dim: int = DESCRIPTOR_DIM
    atom_vocab_size: int = 0
    bond_vocab_size: int = 0
    n_motifs: int = 0
    use_descriptors: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.attention_heads:
            raise ConfigError("hidden_dim must be divisible by attention_heads")
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be >= 1")
        if self.mp_layers < 1 or self.ffn_layers < 1:
            raise ConfigError("mp_layers and ffn_layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    tensors: dict[str, np.ndarray]
    config: ModelConfig
    schema_version: int = SCHEMA_VERSION
    meta: dict = field(default_factory=dict)

    def as_tensors(self) -> dict[str, Tensor]:
        """Leaf tensors sharing memory with the parameter arrays."""
        return {name: Tensor(arr, requires_grad=True, name=name) for name, arr in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()}, self.config, self.schema_version, json.loads(json.dumps(self.meta))
        )

    def encoder_names(self) -> list[str]:
        return [n for n in self.tensors if n.startswith("encoder.")]

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))


def _shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    H = config.hidden_dim
    out: list[tuple[str, tuple[int, ...]]] = []

    def linear(name, fan_in, fan_out):
        out.append((f"{name}.weight", (fan_in, fan_out)))
        out.append((f"{name}.bias", (fan_out,)))

    linear("encoder.atom_in", ATOM_DIM, H)
    for layer in range(config.mp_layers):
        linear(f"encoder.atom_mp.{layer}", 2 * H, H)
    linear("encoder.bond_in", ATOM_DIM + BOND_DIM, H)
    for layer in range(config.mp_layers):
        linear(f"encoder.bond_mp.{layer}", H, H)
    linear("encoder.bond_out", ATOM_DIM + H, H)
    for proj in "qvo":
        linear(f"encoder.attn.{proj}", H, H)
    # a key bias only shifts each query's scores by a constant, which softmax ignores
    out.append(("encoder.attn.k.weight", (H, H)))
    if config.atom_vocab_size:
        linear("pretrain.atom", H, config.atom_vocab_size)
    if config.bond_vocab_size:
        linear("pretrain.bond", 2 * H, config.bond_vocab_size)
    if config.n_motifs:
        linear("pretrain.motif", 2 * H, config.n_motifs)
    width = 2 * H + (config.descriptor_dim if config.use_descriptors else 0)
    for layer in range(config.ffn_layers):
        last = layer == config.ffn_layers - 1
        linear(f"task.ffn.{layer}", width, config.n_tasks if last else H)
        width = H
    return out


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Glorot-uniform weights and zero biases, drawn in a fixed name order."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tensors = {}
    for name, shape in _shapes(config):
        if name.endswith(".weight"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(tensors, config)


def _linear(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    return ad.add_row(ad.matmul(x, p[f"{name}.weight"]), p[f"{name}.bias"])


def _mean_pool(x: Tensor, batch: FeatureBatch) -> Tensor:
    counts = batch.atoms_per_mol.astype(np.float64)
    summed = ad.scatter_add_rows(x, batch.atom_to_mol, batch.n_molecules)
    inv = np.repeat((1.0 / counts)[:, None], x.shape[1], axis=1)
    return ad.mul(summed, Tensor(inv))


@dataclass
class Encoding:
    node_states: Tensor  # [total_atoms, H]
    graph_embedding: Tensor  # [n_molecules, 2H]


def encode(batch: FeatureBatch, params: dict[str, Tensor], config: ModelConfig, schema_version: int = SCHEMA_VERSION) -> Encoding:
    if batch.schema_version != schema_version:
        raise SchemaMismatch(f"batch schema v{batch.schema_version} does not match parameters v{schema_version}")
    n_atoms = batch.n_atoms
    src, dst = batch.edge_index[0], batch.edge_index[1]
    X = Tensor(batch.atom_features.astype(np.float64))
    E = Tensor(batch.bond_features.astype(np.float64))

    # atom view
    h = ad.relu(_linear(X, params, "encoder.atom_in"))
    for layer in range(config.mp_layers):
        msg = ad.scatter_add_rows(ad.gather_rows(h, src), dst, n_atoms)
        h = ad.relu(_linear(ad.concat([h, msg]), params, f"encoder.atom_mp.{layer}"))

    # bond view on directed edges
    e0 = ad.relu(_linear(ad.concat([ad.gather_rows(X, src), E]), params, "encoder.bond_in"))
    e = e0
    for layer in range(config.mp_layers):
        incoming = ad.scatter_add_rows(e, dst, n_atoms)
        msg = ad.sub(ad.gather_rows(incoming, src), ad.gather_rows(e, batch.reverse_edge))
        e = ad.relu(ad.add(e0, _linear(msg, params, f"encoder.bond_mp.{layer}")))
    bond_atoms = ad.scatter_add_rows(e, dst, n_atoms)
    hb = ad.layer_norm_rows(ad.relu(_linear(ad.concat([X, bond_atoms]), params, "encoder.bond_out")))

    # per-molecule self-attention with residual
    q = _linear(h, params, "encoder.attn.q")
    k = ad.matmul(h, params["encoder.attn.k.weight"])
    v = _linear(h, params, "encoder.attn.v")
    att = ad.segment_attention(q, k, v, batch.graph_offsets, config.attention_heads)
    nodes = ad.layer_norm_rows(ad.add(h, _linear(att, params, "encoder.attn.o")))

    graph_emb = ad.concat([_mean_pool(nodes, batch), _mean_pool(hb, batch)])
    return Encoding(nodes, graph_emb)


@dataclass
class PretrainLogits:
    atom: Tensor
    bond: Tensor
    motif: Tensor


def pretrain_heads(enc: Encoding, batch: FeatureBatch, params: dict[str, Tensor]) -> PretrainLogits:
    for name in ("pretrain.atom.weight", "pretrain.bond.weight", "pretrain.motif.weight"):
        if name not in params:
            raise MissingTensor(f"{name} (model built without pretraining heads)")
    src, dst = batch.edge_index[0], batch.edge_index[1]
    atom_logits = _linear(enc.node_states, params, "pretrain.atom")
    pair = ad.concat([ad.gather_rows(enc.node_states, src), ad.gather_rows(enc.node_states, dst)])
    bond_logits = _linear(pair, params, "pretrain.bond")
    motif_logits = _linear(enc.graph_embedding, params, "pretrain.motif")
    return PretrainLogits(atom_logits, bond_logits, motif_logits)


def descriptor_transform(descriptors: np.ndarray) -> np.ndarray:
    """Signed log1p squashing so raw descriptors of very different scales can feed the head."""
    d = np.asarray(descriptors, dtype=np.float64)
    return np.sign(d) * np.log1p(np.abs(d))


def multitask_head(graph_embedding: Tensor, descriptors: np.ndarray, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Predictions in standardized target space, one column per task."""
    z = graph_embedding
    if config.use_descriptors:
        z = ad.concat([z, Tensor(descriptor_transform(descriptors))])
    for layer in range(config.ffn_layers):
        z = _linear(z, params, f"task.ffn.{layer}")
        if layer < config.ffn_layers - 1:
            z = ad.relu(z)
    return z


def predict_standardized(batch: FeatureBatch, params: ModelParams) -> np.ndarray:
    p = params.as_tensors()
    enc = encode(batch, p, params.config, params.schema_version)
    return multitask_head(enc.graph_embedding, batch.descriptors, p, params.config).data


# -- checkpoints ------------------------------------------------------------

_DTYPE_CODES = {np.dtype("<f8"): 1}


def checkpoint_bytes(params: ModelParams) -> bytes:
    header = json.dumps({"config": params.config.to_dict(), "meta": params.meta}, sort_keys=True).encode()
    parts = [_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, params.schema_version, len(header)), header]
    parts.append(struct.pack("<I", len(params.tensors)))
    payload = []
    for name, arr in params.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes())
    body = b"".join(parts + payload)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def checkpoint_from_bytes(data: bytes) -> ModelParams:
    if len(data) < len(_MAGIC) + 16:
        raise CorruptFile("checkpoint too short")
    if data[: len(_MAGIC)] != _MAGIC:
        raise CorruptFile("bad checkpoint magic")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checkpoint checksum mismatch (truncated or corrupted)")
    pos = len(_MAGIC)
    version, schema, hlen = struct.unpack_from("<III", body, pos)
    pos += 12
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format v{version}, expected v{CHECKPOINT_VERSION}")
    try:
        header = json.loads(body[pos : pos + hlen])
        pos += hlen
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        directory = []
        for _ in range(n):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode()
            pos += nlen
            _code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            directory.append((name, shape))
        tensors = {}
        for name, shape in directory:
            count = int(np.prod(shape)) if shape else 1
            if pos + 8 * count > len(body):
                raise CorruptFile("checkpoint payload truncated")
            tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable checkpoint: {exc}") from None
    if pos != len(body):
        raise CorruptFile("trailing bytes in checkpoint")
    config = ModelConfig.from_dict(header["config"])
    params = ModelParams(tensors, config, schema, header.get("meta", {}))
    for name, shape in _shapes(config):
        if name not in tensors:
            raise MissingTensor(f"checkpoint lacks tensor {name}")
        if tensors[name].shape != shape:
            raise CorruptFile(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return params


def load_checkpoint(path) -> ModelParams:
    return checkpoint_from_bytes(Path(path).read_bytes())


def transfer_encoder(pretrained: ModelParams, config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Fresh parameters for ``config`` whose encoder tensors are copied from ``pretrained``."""
    if pretrained.schema_version != SCHEMA_VERSION:
        raise SchemaMismatch(f"pretrained checkpoint uses feature schema v{pretrained.schema_version}")
    params = init_params(config, seed)
    for name in params.encoder_names():
        if name not in pretrained.tensors:
            raise MissingTensor(f"pretrained checkpoint lacks {name}")
        src = pretrained.tensors[name]
        if src.shape != params.tensors[name].shape:
            raise ShapeMismatch(f"{name}: pretrained {src.shape} vs model {params.tensors[name].shape}")
        params.tensors[name] = src.copy()
    return params
