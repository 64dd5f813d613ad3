"""CatBERT network: embeddings, a mixed plan of transformer and adapter
blocks, and a context-fusing sigmoid classifier.

The compressed model keeps a subset of a donor's transformer blocks and fills
the removed positions with full-width residual adapters (dense d→d, ReLU,
dense d→d, plus the skip connection). The classifier reads the CLS hidden
state, concatenates the 4 header-context features, and applies dense → ReLU →
dense → sigmoid. ``surgery_from_donor`` builds the compressed model from a
donor checkpoint; ``set_trainable`` applies freeze masks for partial
fine-tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

TRANSFORMER = "transformer"
ADAPTER = "adapter"
_PLAN_ALIASES = {"t": TRANSFORMER, "transformer": TRANSFORMER,
                 "a": ADAPTER, "adapter": ADAPTER}

LN_EPS = 1e-12
MASK_OFF = -1e9  # additive attention penalty for padded key positions


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    hidden: int = 768
    ffn_dim: int = 3072
    heads: int = 12
    max_positions: int = 512
    block_plan: tuple[str, ...] = (TRANSFORMER, ADAPTER) * 3
    context_dim: int = 4
    classifier_hidden: int | None = None
    cls_from: str = "last_block"  # or "last_transformer"
    seed: int = 0

    def __post_init__(self):
        try:
            self.block_plan = tuple(_PLAN_ALIASES[str(b).lower()] for b in self.block_plan)
        except KeyError as e:
            raise ConfigError(f"unknown block kind {e.args[0]!r}") from None
        if not self.block_plan:
            raise ConfigError("block plan must be non-empty")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.classifier_hidden is None:
            self.classifier_hidden = self.hidden
        if self.cls_from not in ("last_block", "last_transformer"):
            raise ConfigError(f"cls_from must be last_block|last_transformer, got {self.cls_from!r}")
        if self.cls_from == "last_transformer" and TRANSFORMER not in self.block_plan:
            raise ConfigError("cls_from=last_transformer needs a transformer in the plan")
        if self.vocab_size < 1 or self.max_positions < 1 or self.context_dim < 0:
            raise ConfigError("vocab_size/max_positions must be >= 1, context_dim >= 0")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "hidden": self.hidden,
            "ffn_dim": self.ffn_dim, "heads": self.heads,
            "max_positions": self.max_positions, "block_plan": list(self.block_plan),
            "context_dim": self.context_dim, "classifier_hidden": self.classifier_hidden,
            "cls_from": self.cls_from, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter's name and shape, in canonical order. The single
    source of truth shared by init, counting, and checkpoint validation."""
    d, f = config.hidden, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_positions, d),
        "embeddings.ln.gain": (d,),
        "embeddings.ln.bias": (d,),
    }
    for i, kind in enumerate(config.block_plan):
        p = f"blocks.{i}"
        if kind == TRANSFORMER:
            for proj in ("q", "k", "v", "o"):
                shapes[f"{p}.attn.{proj}.w"] = (d, d)
                shapes[f"{p}.attn.{proj}.b"] = (d,)
            shapes[f"{p}.attn.ln.gain"] = (d,)
            shapes[f"{p}.attn.ln.bias"] = (d,)
            shapes[f"{p}.ffn.w1"] = (d, f)
            shapes[f"{p}.ffn.b1"] = (f,)
            shapes[f"{p}.ffn.w2"] = (f, d)
            shapes[f"{p}.ffn.b2"] = (d,)
            shapes[f"{p}.ffn.ln.gain"] = (d,)
            shapes[f"{p}.ffn.ln.bias"] = (d,)
        else:
            shapes[f"{p}.dense1.w"] = (d, d)
            shapes[f"{p}.dense1.b"] = (d,)
            shapes[f"{p}.dense2.w"] = (d, d)
            shapes[f"{p}.dense2.b"] = (d,)
    dh = config.classifier_hidden
    shapes["classifier.fusion.w"] = (d + config.context_dim, dh)
    shapes["classifier.fusion.b"] = (dh,)
    shapes["classifier.out.w"] = (dh, 1)
    shapes["classifier.out.b"] = (1,)
    return shapes


@dataclass
class ParamReport:
    embedding: int
    per_transformer: int
    per_adapter: int
    classifier: int
    total: int

    @property
    def non_embedding(self) -> int:
        return self.total - self.embedding


def count_params(config: ModelConfig) -> ParamReport:
    """Closed-form parameter counts per section of the network."""
    d, f, dh = config.hidden, config.ffn_dim, config.classifier_hidden
    embedding = config.vocab_size * d + config.max_positions * d + 2 * d
    transformer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    adapter = 2 * (d * d + d)
    classifier = (d + config.context_dim) * dh + dh + dh + 1
    n_t = sum(1 for b in config.block_plan if b == TRANSFORMER)
    n_a = len(config.block_plan) - n_t
    total = embedding + n_t * transformer + n_a * adapter + classifier
    return ParamReport(embedding=embedding, per_transformer=transformer,
                       per_adapter=adapter, classifier=classifier, total=total)


def millions(n: int) -> int:
    return n // 1_000_000


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with redraws outside ±2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def _init_tensor(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gain"):
        return np.ones(shape, dtype=np.float32)
    if name.endswith(".b") or name.endswith(".bias"):
        return np.zeros(shape, dtype=np.float32)
    return _trunc_normal(rng, shape)


class CatBertModel:
    """Parameter container plus forward pass. Immutable for inference;
    training mutates Parameter.data in place."""

    def __init__(self, config: ModelConfig, params: dict[str, Parameter],
                 provenance: dict[str, str] | None = None):
        self.config = config
        self.params = params
        self.provenance = provenance or {name: "fresh" for name in params}

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def astype(self, dtype) -> "CatBertModel":
        """Copy with every parameter cast (float64 for gradient oracles)."""
        fresh = {
            name: Parameter(name, p.data.astype(dtype), trainable=p.trainable, dtype=dtype)
            for name, p in self.params.items()
        }
        return CatBertModel(self.config, fresh, dict(self.provenance))


def init_random(config: ModelConfig, seed: int | None = None) -> CatBertModel:
    """Fresh model: truncated-normal weights (std 0.02), zero biases,
    identity layer norms. Deterministic per seed."""
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    params = {
        name: Parameter(name, _init_tensor(name, shape, rng))
        for name, shape in param_shapes(config).items()
    }
    return CatBertModel(config, params)


def _linear(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return T.add(T.matmul(x, w), b)


def _attention(x: Tensor, p: dict, prefix: str, heads: int, add_mask: np.ndarray) -> Tensor:
    B, L, d = x.data.shape
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)

    def heads_first(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = heads_first(_linear(x, p[f"{prefix}.attn.q.w"], p[f"{prefix}.attn.q.b"]))
    k = heads_first(_linear(x, p[f"{prefix}.attn.k.w"], p[f"{prefix}.attn.k.b"]))
    v = heads_first(_linear(x, p[f"{prefix}.attn.v.w"], p[f"{prefix}.attn.v.b"]))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
    scores = T.add(scores, add_mask)  # (B,h,L,L) + (B,1,1,L)
    weights = T.softmax_rows(scores)
    mixed = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (B, L, d))
    return _linear(mixed, p[f"{prefix}.attn.o.w"], p[f"{prefix}.attn.o.b"])


def _transformer_block(x: Tensor, p: dict, prefix: str, heads: int,
                       add_mask: np.ndarray) -> Tensor:
    # post-norm residual wiring: LayerNorm(x + sublayer(x))
    attn = _attention(x, p, prefix, heads, add_mask)
    x = T.layer_norm(T.add(x, attn), p[f"{prefix}.attn.ln.gain"],
                     p[f"{prefix}.attn.ln.bias"], eps=LN_EPS)
    h = T.gelu(_linear(x, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"]))
    ffn = _linear(h, p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
    return T.layer_norm(T.add(x, ffn), p[f"{prefix}.ffn.ln.gain"],
                        p[f"{prefix}.ffn.ln.bias"], eps=LN_EPS)


def _adapter_block(x: Tensor, p: dict, prefix: str) -> Tensor:
    h = T.relu(_linear(x, p[f"{prefix}.dense1.w"], p[f"{prefix}.dense1.b"]))
    return T.add(x, _linear(h, p[f"{prefix}.dense2.w"], p[f"{prefix}.dense2.b"]))


def forward_probs(model: CatBertModel, ids: np.ndarray, mask: np.ndarray,
                  ctx: np.ndarray | None, return_hidden: bool = False):
    """Batched forward pass. ``ids``/``mask`` are (B, L) arrays, ``ctx`` is
    (B, context_dim) or None when context_dim = 0. Returns a (B,) Tensor of
    probabilities; with ``return_hidden`` also the per-block hidden states.

    Ops record onto the active tape, so this same path serves training.
    """
    cfg = model.config
    p = model.params
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError(f"ids must be (B, L), got shape {ids.shape}")
    B, L = ids.shape
    if L > cfg.max_positions:
        raise ValueError(f"sequence length {L} exceeds max positions {cfg.max_positions}")
    mask = np.asarray(mask)
    if mask.shape != (B, L):
        raise ValueError(f"mask shape {mask.shape} does not match ids {(B, L)}")
    dtype = p["embeddings.token"].data.dtype

    tok = T.embedding_lookup(p["embeddings.token"], ids)
    pos = T.embedding_lookup(p["embeddings.position"], np.arange(L))
    h = T.layer_norm(T.add(tok, pos), p["embeddings.ln.gain"],
                     p["embeddings.ln.bias"], eps=LN_EPS)

    add_mask = np.where(mask.astype(bool), 0.0, MASK_OFF).astype(dtype)
    add_mask = add_mask.reshape(B, 1, 1, L)

    hiddens = []
    cls_hidden = None
    for i, kind in enumerate(cfg.block_plan):
        prefix = f"blocks.{i}"
        if kind == TRANSFORMER:
            h = _transformer_block(h, p, prefix, cfg.heads, add_mask)
            cls_hidden = h
        else:
            h = _adapter_block(h, p, prefix)
        if return_hidden:
            hiddens.append(h)
    read = cls_hidden if cfg.cls_from == "last_transformer" else h

    cls = T.reshape(T.slice_axis(read, 1, 0, 1), (B, cfg.hidden))
    if cfg.context_dim:
        if ctx is None:
            raise ValueError("model takes context features but ctx is None")
        ctx = np.asarray(ctx, dtype=dtype)
        if ctx.shape != (B, cfg.context_dim):
            raise ValueError(f"ctx shape {ctx.shape} != {(B, cfg.context_dim)}")
        cls = T.concat([cls, Tensor._wrap(ctx)], axis=1)
    fused = T.relu(_linear(cls, p["classifier.fusion.w"], p["classifier.fusion.b"]))
    logit = _linear(fused, p["classifier.out.w"], p["classifier.out.b"])
    probs = T.sigmoid(T.reshape(logit, (B,)))
    if return_hidden:
        return probs, hiddens
    return probs


def forward(model: CatBertModel, tokens, context=None, return_hidden: bool = False):
    """Single-record convenience wrapper over :func:`forward_probs`.

    ``tokens`` is a TokenSequence, ``context`` a ContextFeatures (ignored
    when the model has no context inputs). Returns the probability as a
    float, plus per-block hidden-state arrays when requested.
    """
    from .mail import context_vector

    ids = np.asarray([tokens.ids])
    mask = np.asarray([tokens.attention_mask])
    ctx = None
    if model.config.context_dim:
        if context is None:
            raise ValueError("model takes context features but none were given")
        ctx = context_vector(context).reshape(1, -1)
    out = forward_probs(model, ids, mask, ctx, return_hidden=return_hidden)
    if return_hidden:
        probs, hiddens = out
        return float(probs.data[0]), [hh.data[0] for hh in hiddens]
    return float(out.data[0])


PARTIAL_FINETUNE = "partial-finetune"


def freeze_preset(config: ModelConfig, name: str = PARTIAL_FINETUNE,
                  include_embeddings: bool = True) -> list[str]:
    """Named freeze masks. ``partial-finetune`` freezes the embeddings and
    every transformer except the last one, leaving adapters, the top
    transformer, and the classifier trainable."""
    if name != PARTIAL_FINETUNE:
        raise ValueError(f"unknown preset {name!r}; known: {PARTIAL_FINETUNE}")
    t_positions = [i for i, b in enumerate(config.block_plan) if b == TRANSFORMER]
    prefixes = [f"blocks.{i}" for i in t_positions[:-1]]
    if include_embeddings:
        prefixes = ["embeddings"] + prefixes
    return prefixes


def set_trainable(model: CatBertModel, freeze_prefixes: list[str]) -> None:
    """Mark parameters under any of the prefixes non-trainable; everything
    else becomes trainable. An empty list unfreezes the whole model."""
    known = sorted({name.split(".")[0] for name in model.params} |
                   {".".join(name.split(".")[:2]) for name in model.params
                    if name.startswith("blocks.")})
    for prefix in freeze_prefixes:
        hit = any(n == prefix or n.startswith(prefix + ".") for n in model.params)
        if not hit:
            raise ValueError(f"freeze prefix {prefix!r} matches nothing; known: {known}")
    for name, p in model.params.items():
        p.trainable = not any(name == pre or name.startswith(pre + ".")
                              for pre in freeze_prefixes)


def surgery_from_donor(donor: CatBertModel, keep: list[int] | None = None,
                       context_dim: int = 4, seed: int = 0,
                       cls_from: str = "last_block") -> CatBertModel:
    """Compress a donor into a transformer+adapter model.

    The donor's embeddings and the transformer blocks at ``keep`` indices are
    copied bit-exactly; each kept transformer is followed by a freshly
    initialized adapter, and the classifier is fresh. Default ``keep`` takes
    every other donor block starting at 0 (for a 6-block donor: 0, 2, 4).
    Provenance of every tensor (copied vs fresh) is recorded.
    """
    dcfg = donor.config
    n_donor = len(dcfg.block_plan)
    if keep is None:
        keep = list(range(0, n_donor, 2))
    for j in keep:
        if not (0 <= j < n_donor):
            raise ValueError(f"keep index {j} out of range for {n_donor}-block donor")
        if dcfg.block_plan[j] != TRANSFORMER:
            raise ValueError(f"donor block {j} is not a transformer")
    if not keep:
        raise ValueError("keep must name at least one donor block")

    cfg = replace(dcfg, block_plan=(TRANSFORMER, ADAPTER) * len(keep),
                  context_dim=context_dim, classifier_hidden=None,
                  cls_from=cls_from, seed=seed)
    fresh = init_random(cfg, seed)
    params: dict[str, Parameter] = {}
    provenance: dict[str, str] = {}
    for name, shape in param_shapes(cfg).items():
        src = None
        if name.startswith("embeddings."):
            src = name
        elif name.startswith("blocks."):
            pos = int(name.split(".")[1])
            if pos % 2 == 0:  # transformer slots
                donor_name = name.replace(f"blocks.{pos}.", f"blocks.{keep[pos // 2]}.", 1)
                src = donor_name
        if src is not None:
            dsrc = donor.params[src].data
            if dsrc.shape != shape:
                raise ValueError(f"donor tensor {src} has shape {dsrc.shape}, need {shape}")
            params[name] = Parameter(name, dsrc.copy())
            provenance[name] = f"copied:{src}"
        else:
            params[name] = fresh.params[name]
            provenance[name] = "fresh"
    return CatBertModel(cfg, params, provenance)
