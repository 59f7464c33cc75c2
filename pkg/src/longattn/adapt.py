"""Checkpoint format and weight-surgery recipes.

A checkpoint is a directory:
    manifest.json  -- {"format_version": 1, "params": {name: {shape, dtype, offset}}}
    params.bin     -- little-endian float32 blob, concatenated in manifest order
    config.json    -- the ModelConfig the parameters belong to

Storage is 32-bit; core math upcasts to 64-bit on load. Surgeries are pure
checkpoint -> checkpoint transforms and never touch parameter bytes they are
not about.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor
from .model import ModelConfig, param_shapes, count_params
from .attention import AttentionSpec, Variant
from .posenc import Scheme, replicate

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Checkpoint:
    """In-memory named-parameter store with float32 array values."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = {k: np.asarray(v, dtype="<f4") for k, v in arrays.items()}

    @classmethod
    def from_params(cls, config: ModelConfig, params: dict[str, Tensor]) -> "Checkpoint":
        expect = param_shapes(config)
        _check_inventory(expect, {k: v.shape for k, v in params.items()})
        return cls(config, {k: params[k].data for k in expect})

    def to_params(self) -> dict[str, Tensor]:
        return {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
                for k, v in self.arrays.items()}

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest: dict = {"format_version": FORMAT_VERSION, "params": {}}
        offset = 0
        blobs = []
        for name, arr in self.arrays.items():
            manifest["params"][name] = {
                "shape": list(arr.shape), "dtype": "float32", "offset": offset}
            raw = arr.tobytes()
            blobs.append(raw)
            offset += len(raw)
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
        (path / "params.bin").write_bytes(b"".join(blobs))
        (path / "config.json").write_text(json.dumps(self.config.to_dict(), indent=1))

    @classmethod
    def load_dir(cls, path) -> "Checkpoint":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {manifest.get('format_version')} "
                f"!= supported {FORMAT_VERSION}")
        config = ModelConfig.from_dict(json.loads((path / "config.json").read_text()))
        blob = (path / "params.bin").read_bytes()
        arrays = {}
        for name, meta in manifest["params"].items():
            shape = tuple(meta["shape"])
            n = int(np.prod(shape)) if shape else 1
            off = meta["offset"]
            arrays[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        return cls(config, arrays)


def _check_inventory(expect: dict[str, tuple], got: dict[str, tuple]) -> None:
    for name, shape in expect.items():
        if name not in got:
            raise CheckpointError(f"missing parameter '{name}'")
        if tuple(got[name]) != tuple(shape):
            raise CheckpointError(
                f"parameter '{name}' has shape {tuple(got[name])}, config requires {tuple(shape)}")
    extra = set(got) - set(expect)
    if extra:
        raise CheckpointError(f"unexpected parameters: {sorted(extra)}")


def save(model_config: ModelConfig, params: dict[str, Tensor], path) -> Checkpoint:
    ckpt = Checkpoint.from_params(model_config, params)
    ckpt.save(path)
    return ckpt


def load(path, cfg: ModelConfig | None = None) -> tuple[ModelConfig, dict[str, Tensor]]:
    """Load a checkpoint; if cfg is given it must hash-match the stored config.

    The hash check rejects silent architecture drift, e.g. turning staggering
    off at inference time on a model trained with it.
    """
    ckpt = Checkpoint.load_dir(path)
    if cfg is not None and cfg.hash() != ckpt.config.hash():
        raise CheckpointError(
            "supplied config does not match the checkpoint's stored config "
            f"(hash {cfg.hash()[:12]} vs {ckpt.config.hash()[:12]})")
    _check_inventory(param_shapes(ckpt.config), {k: v.shape for k, v in ckpt.arrays.items()})
    return ckpt.config, ckpt.to_params()


# ---------------------------------------------------------------------------
# surgeries

def _with_attention(cfg: ModelConfig, spec: AttentionSpec) -> ModelConfig:
    d = cfg.to_dict()
    d["attention"] = {
        "variant": spec.variant.value, "block_size": spec.block_size,
        "num_global": spec.num_global, "staggered": spec.staggered,
        "num_heads": spec.num_heads, "head_dim": spec.head_dim}
    return ModelConfig.from_dict(d)


def port_to_local(ckpt: Checkpoint, new_attn: AttentionSpec) -> Checkpoint:
    """Swap the attention spec to BlockLocal; dense projections carry over."""
    if new_attn.variant != Variant.BLOCK_LOCAL:
        raise CheckpointError(f"port_to_local needs a BlockLocal spec, got {new_attn.variant}")
    if ckpt.config.attention.variant == Variant.GLOBAL_LOCAL:
        raise CheckpointError("source already has global parameters; cannot port to plain local")
    cfg = _with_attention(ckpt.config, new_attn)
    return Checkpoint(cfg, dict(ckpt.arrays))


def port_to_global_local(ckpt: Checkpoint, new_attn: AttentionSpec, rng_seed: int) -> Checkpoint:
    """Add global parameters per the adaptation recipe.

    Each of the g new global embedding rows is a copy of a uniformly sampled
    vocabulary embedding row (with replacement); each encoder layer's global
    input LayerNorm is cloned from that layer's token input LayerNorm.
    """
    if new_attn.variant != Variant.GLOBAL_LOCAL:
        raise CheckpointError(f"port_to_global_local needs a GlobalLocal spec, got {new_attn.variant}")
    if ckpt.config.attention.variant == Variant.GLOBAL_LOCAL:
        raise CheckpointError("source already has global parameters")
    cfg = _with_attention(ckpt.config, new_attn)
    rng = np.random.default_rng(rng_seed)
    vocab = ckpt.arrays["embed.tok"]
    rows = rng.integers(0, vocab.shape[0], size=new_attn.num_global)
    new_arrays = dict(ckpt.arrays)
    new_arrays["embed.global"] = vocab[rows].copy()
    for i in range(cfg.enc_layers):
        new_arrays[f"enc.{i}.ln1g.gain"] = ckpt.arrays[f"enc.{i}.ln1.gain"].copy()
        new_arrays[f"enc.{i}.ln1g.bias"] = ckpt.arrays[f"enc.{i}.ln1.bias"].copy()
    ordered = {name: new_arrays[name] for name in param_shapes(cfg)}
    return Checkpoint(cfg, ordered)


def replicate_positions(ckpt: Checkpoint, new_max_len: int) -> Checkpoint:
    """Tile the learned encoder position table up to new_max_len rows."""
    if ckpt.config.posenc.scheme != Scheme.LEARNED_ABSOLUTE:
        raise CheckpointError(
            f"replicate_positions needs LearnedAbsolute positions, "
            f"config has {ckpt.config.posenc.scheme.value}")
    old = ckpt.config.max_input_len
    if new_max_len < old:
        raise CheckpointError(f"new_max_len {new_max_len} < current {old}")
    d = ckpt.config.to_dict()
    d["max_input_len"] = new_max_len
    cfg = ModelConfig.from_dict(d)
    new_arrays = dict(ckpt.arrays)
    new_arrays["embed.pos_enc"] = replicate(
        np.asarray(ckpt.arrays["embed.pos_enc"]), new_max_len)
    return Checkpoint(cfg, {name: new_arrays[name] for name in param_shapes(cfg)})


def drop_cross_attention(ckpt: Checkpoint, keep_layers) -> Checkpoint:
    """Remove cross-attention parameter groups for all layers not kept."""
    keep = tuple(sorted(set(keep_layers)))
    existing = ckpt.config.cross_layers()
    if not keep:
        raise CheckpointError("keep_layers must be non-empty")
    if not set(keep) <= set(existing):
        raise CheckpointError(
            f"keep_layers {keep} not a subset of existing cross layers {existing}")
    d = ckpt.config.to_dict()
    d["cross_attn_layers"] = list(keep)
    cfg = ModelConfig.from_dict(d)
    dropped = set(existing) - set(keep)
    new_arrays = {
        name: arr for name, arr in ckpt.arrays.items()
        if not _is_cross_param(name, dropped)}
    return Checkpoint(cfg, {name: new_arrays[name] for name in param_shapes(cfg)})


def _is_cross_param(name: str, dropped_layers: set) -> bool:
    parts = name.split(".")
    return (len(parts) >= 3 and parts[0] == "dec" and parts[1].isdigit()
            and int(parts[1]) in dropped_layers and parts[2] in ("cross", "gx"))
