"""End-to-end multi-layer node classifiers.

Two architectures share the attention stack from :mod:`multiplex_gat.attention`:

``SupraGraphModel``
    one attention stack over the supra graph (intra-layer edges plus pillar
    edges), then the ``L`` copies of every node are averaged and classified.

``LayerFusionModel``
    one attention stack per layer, ``K`` nonnegative layer weightings
    ``gamma[k]``, an optional feed-forward map per weighting, and an overall
    nonnegative weighting ``kappa`` producing the consensus representation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import FusionHead, ParallelAttentionStack, glorot, parallel_union
from .autodiff import Tensor
from .graph import MultiLayerGraph, build_supra_graph, random_features
from .neighborhoods import Adjacency

VARIANTS = ("sg", "fusion")
CHECKPOINT_FORMAT = "multiplex_gat.checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "fusion"
    T: int = 2
    H: int = 2
    K: int = 5
    D: int = 64
    d: int = 32
    use_ff_before_overall_fusion: bool = False
    # None resolves per variant: shared for fusion, per-copy for sg.
    share_features_across_layers: bool | None = None
    logit_slope: float | None = 0.2
    activation: str = "elu"
    normalize_fusion: bool = False
    head_aggregation: str = "fusion"
    gamma_jitter: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        variant = str(self.variant).lower()
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        for key in ("T", "H", "K", "D", "d"):
            if int(getattr(self, key)) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.logit_slope is not None and not 0.0 <= self.logit_slope <= 1.0:
            raise ValueError("logit_slope must lie in [0, 1] or be None")
        if self.activation not in ("elu", "none"):
            raise ValueError(f"activation must be 'elu' or 'none', got {self.activation!r}")
        if self.head_aggregation not in ("fusion", "concat"):
            raise ValueError("head_aggregation must be 'fusion' or 'concat'")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")
        if self.gamma_jitter < 0:
            raise ValueError("gamma_jitter must be nonnegative")

    @property
    def shared_features(self) -> bool:
        if self.share_features_across_layers is None:
            return self.variant == "fusion"
        return bool(self.share_features_across_layers)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model keys {sorted(unknown)}; valid keys: {sorted(known)}")
        return cls(**data)


class Linear:
    """Affine map ``x W^T + b``; with ``copies=K``, ``K`` independent maps applied to ``x[k]``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64, name: str = "linear",
                 copies: int | None = None):
        lead = () if copies is None else (copies,)
        w = np.stack([glorot(rng, (out_dim, in_dim), in_dim, out_dim, dtype) for _ in range(copies or 1)])
        self.weight = Tensor(w.reshape(lead + (out_dim, in_dim)), requires_grad=True, name=f"{name}.weight")
        bias_shape = (out_dim,) if copies is None else (copies, 1, out_dim)
        self.bias = Tensor(np.zeros(bias_shape, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, ad.transpose(self.weight)), self.bias)


def across_layer_pool(z_supra, n_nodes: int, n_layers: int) -> Tensor:
    """Average the ``L`` copies of each node (rows ``l*N + i``) into an ``N x d`` matrix."""
    z = ad.as_tensor(z_supra)
    if z.shape[0] != n_nodes * n_layers:
        raise ad.ShapeError("across_layer_pool", z.shape, (n_nodes * n_layers,))
    node_of = np.tile(np.arange(n_nodes), n_layers)
    return ad.scale(ad.segment_sum(z, node_of, n_nodes), 1.0 / n_layers)


@dataclass(frozen=True)
class GraphContext:
    """Attention neighborhoods for one graph, reusable across realizations.

    ``adjacencies`` holds the supra graph (one entry) or one entry per layer.
    """

    n_nodes: int
    n_layers: int
    adjacencies: tuple[Adjacency, ...]
    _unions: dict = field(default_factory=dict, compare=False, repr=False)

    def union(self, n_heads: int) -> Adjacency:
        if n_heads not in self._unions:
            self._unions[n_heads] = parallel_union(self.adjacencies, n_heads)
        return self._unions[n_heads]


def build_context(g: MultiLayerGraph, variant: str, detect_blocks: bool = True) -> GraphContext:
    if variant == "sg":
        adjs = (Adjacency.supra(build_supra_graph(g), g, detect_blocks),)
    else:
        adjs = tuple(Adjacency.from_layer(layer, detect_blocks=detect_blocks) for layer in g.layers)
    return GraphContext(g.n_nodes, g.n_layers, adjs)


class _Model:
    config: ModelConfig
    n_layers: int
    n_classes: int
    classifier: Linear

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def fusion_heads(self) -> list[FusionHead]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for p in self.parameters():
            if p.name in out:
                raise RuntimeError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def input_shape(self, n_nodes: int) -> tuple[int, ...]:
        raise NotImplementedError

    def make_features(self, n_nodes: int, seed) -> np.ndarray:
        """Random node attributes in this model's input layout."""
        cfg = self.config
        rows = n_nodes if cfg.shared_features else n_nodes * self.n_layers
        x = random_features(rows, cfg.D, seed).astype(cfg.np_dtype)
        if cfg.variant == "sg" and cfg.shared_features:
            x = np.tile(x, (self.n_layers, 1))
        return x.reshape(self.input_shape(n_nodes))

    def context(self, g: MultiLayerGraph, detect_blocks: bool = True) -> GraphContext:
        return build_context(g, self.config.variant, detect_blocks)

    def _check_input(self, ctx: GraphContext, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape != self.input_shape(ctx.n_nodes):
            raise ad.ShapeError(f"{self.config.variant}_forward", x.shape, self.input_shape(ctx.n_nodes))
        return x

    def embed(self, ctx: GraphContext, x) -> Tensor:
        raise NotImplementedError

    def logits(self, ctx: GraphContext, x) -> Tensor:
        return self.classifier(self.embed(ctx, x))

    __call__ = logits


class SupraGraphModel(_Model):
    def __init__(self, config: ModelConfig, n_layers: int, n_classes: int, rng: np.random.Generator):
        self.config, self.n_layers, self.n_classes = config, n_layers, n_classes
        dt = config.np_dtype
        self.stack = ParallelAttentionStack(1, config.D, config.d, config.T, config.H, rng, config.head_aggregation,
                                            config.normalize_fusion, dt, name="supra")
        self.classifier = Linear(self.stack.out_dim, n_classes, rng, dt, name="classifier")

    def parameters(self) -> list[Tensor]:
        return self.stack.parameters() + self.classifier.parameters()

    def fusion_heads(self) -> list[FusionHead]:
        return [layer.fusion for layer in self.stack.layers]

    def input_shape(self, n_nodes: int) -> tuple[int, ...]:
        return (n_nodes * self.n_layers, self.config.D)

    def supra_representations(self, ctx: GraphContext, x) -> Tensor:
        x = self._check_input(ctx, x)
        z = self.stack(x, ctx.union(self.config.H), self.config.logit_slope, self.config.activation)
        return ad.reshape(z, z.shape[1:])

    def embed(self, ctx: GraphContext, x) -> Tensor:
        return across_layer_pool(self.supra_representations(ctx, x), ctx.n_nodes, ctx.n_layers)


class LayerFusionModel(_Model):
    def __init__(self, config: ModelConfig, n_layers: int, n_classes: int, rng: np.random.Generator):
        self.config, self.n_layers, self.n_classes = config, n_layers, n_classes
        dt = config.np_dtype
        self.stack = ParallelAttentionStack(n_layers, config.D, config.d, config.T, config.H, rng,
                                            config.head_aggregation, config.normalize_fusion, dt, name="layers")
        width = self.stack.out_dim
        # Jitter breaks the symmetry between the K layer weightings.
        self.gamma = FusionHead((config.K, n_layers), config.normalize_fusion, jitter=config.gamma_jitter,
                                rng=rng, name="gamma", dtype=dt)
        self.kappa = FusionHead(config.K, config.normalize_fusion, name="kappa", dtype=dt)
        self.ff = None
        if config.use_ff_before_overall_fusion:
            self.ff = Linear(width, width, rng, dt, name="ff", copies=config.K)
        self.classifier = Linear(width, n_classes, rng, dt, name="classifier")

    def parameters(self) -> list[Tensor]:
        params = self.stack.parameters() + self.gamma.parameters() + self.kappa.parameters()
        if self.ff is not None:
            params += self.ff.parameters()
        return params + self.classifier.parameters()

    def fusion_heads(self) -> list[FusionHead]:
        return [layer.fusion for layer in self.stack.layers] + [self.gamma, self.kappa]

    def input_shape(self, n_nodes: int) -> tuple[int, ...]:
        if self.config.shared_features:
            return (n_nodes, self.config.D)
        return (self.n_layers, n_nodes, self.config.D)

    def layer_representations(self, ctx: GraphContext, x) -> Tensor:
        """``(L, N, d)`` outputs of the per-layer attention stacks."""
        x = self._check_input(ctx, x)
        return self.stack(x, ctx.union(self.config.H), self.config.logit_slope, self.config.activation)

    def fused_representations(self, ctx: GraphContext, x) -> Tensor:
        """``(K, N, d)``: ``s_k = sum_l gamma[k, l] Z_l``, then the optional feed-forward map."""
        z = self.layer_representations(ctx, x)
        L, N, d = z.shape
        s = ad.reshape(ad.matmul(self.gamma.weights(), ad.reshape(z, (L, N * d))), (-1, N, d))
        if self.ff is not None:
            s = ad.elu(self.ff(s))
        return s

    def embed(self, ctx: GraphContext, x) -> Tensor:
        s = self.fused_representations(ctx, x)
        K, N, d = s.shape
        kappa = ad.reshape(self.kappa.weights(), (1, K))
        return ad.reshape(ad.matmul(kappa, ad.reshape(s, (K, N * d))), (N, d))


def build_model(config: ModelConfig, n_layers: int, n_classes: int, seed) -> SupraGraphModel | LayerFusionModel:
    rng = np.random.default_rng(seed)
    cls = SupraGraphModel if config.variant == "sg" else LayerFusionModel
    return cls(config, n_layers, n_classes, rng)


def supra_graph_forward(model: SupraGraphModel, ctx: GraphContext, x) -> Tensor:
    return model.logits(ctx, x)


def layer_fusion_forward(model: LayerFusionModel, ctx: GraphContext, x) -> Tensor:
    return model.logits(ctx, x)


# -- checkpoints -----------------------------------------------------------------------------

def _fixed_heads(model) -> dict[str, list]:
    return {h.raw.name: h.fixed.tolist() for h in model.fusion_heads() if h.fixed is not None}


def save_checkpoint(model, path) -> Path:
    """Write an ``.npz`` archive: one array per named parameter plus JSON metadata.

    Keys ``__format__`` and ``__meta__`` hold the format tag and a JSON object
    with the model config, layer/class counts and any pinned fusion weights.
    """
    path = Path(path)
    meta = {"config": model.config.to_dict(), "n_layers": model.n_layers, "n_classes": model.n_classes,
            "fixed": _fixed_heads(model)}
    arrays = {name: p.value for name, p in model.named_parameters().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __format__=np.array(CHECKPOINT_FORMAT), __meta__=np.array(json.dumps(meta, sort_keys=True)),
                 **arrays)
    return path


def load_checkpoint(path):
    with np.load(Path(path), allow_pickle=False) as data:
        if "__format__" not in data.files or str(data["__format__"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        meta = json.loads(str(data["__meta__"]))
        model = build_model(ModelConfig.from_dict(meta["config"]), meta["n_layers"], meta["n_classes"], 0)
        heads = {h.raw.name: h for h in model.fusion_heads()}
        for name, weights in meta["fixed"].items():
            heads[name].fix(weights)
        params = model.named_parameters()
        missing = set(params) - set(data.files)
        if missing:
            raise ValueError(f"{path}: checkpoint lacks parameters {sorted(missing)}")
        for name, p in params.items():
            value = data[name]
            if value.shape != p.shape:
                raise ValueError(f"{path}: parameter {name} has shape {value.shape}, expected {p.shape}")
            p.value = value.astype(p.value.dtype)
    return model

