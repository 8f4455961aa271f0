"""Network building blocks.

The per-layer pipeline: encode each neighbor edge from coordinate offsets,
distances, and feature differences; pool the encoded neighborhood into one
vector per point with a channel-wise attention branch and a max branch; then
run offset self-attention over all points, with the pooled local feature
squashed through a sigmoid and multiplied into the value matrix as a
per-point, per-channel gate.

All feature tensors are channels-last: [B, N, D] for points, [B, N, K, D]
for neighborhood edges. Coordinates and neighbor tables are plain numpy
arrays (they never need gradients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .errors import ConfigError, DataError


class Linear(Module):
    """y = x @ W (+ b), applied to the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(ad.uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.bias = Parameter(ad.uniform_init(rng, in_dim, (out_dim,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        # flatten leading axes so the product runs as one GEMM, not a
        # broadcast loop of tiny ones
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        y = ad.matmul(flat, self.weight)
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return ad.reshape(y, lead + (self.weight.shape[1],)) if x.ndim != 2 else y


class BatchNorm(Module):
    """Batch normalization over the last (channel) axis. eps=1e-5, momentum=0.1."""

    def __init__(self, num_channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(num_channels))
        self.beta = Parameter(np.zeros(num_channels))
        self.running_mean = np.zeros(num_channels)
        self.running_var = np.ones(num_channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, self.training,
                             eps=self.eps, momentum=self.momentum)


class Dropout(Module):
    """Inverted dropout; identity in eval mode. Draws from ``rng`` (set by the trainer)."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.rng: np.random.Generator | None = None

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p <= 0.0:
            return x
        rng = self.rng if self.rng is not None else np.random.default_rng(0)
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return ad.mul(x, Tensor(mask))


class SharedMlp(Module):
    """Pointwise stack of linear -> batch norm -> ReLU, one triple per width step."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        super().__init__()
        self.linears = [Linear(dims[i], dims[i + 1], rng, bias=False)
                        for i in range(len(dims) - 1)]
        self.norms = [BatchNorm(dims[i + 1]) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for lin, norm in zip(self.linears, self.norms):
            x = ad.relu(norm(lin(x)))
        return x


@dataclass
class AblationSwitches:
    """Feature toggles mirroring the ablation grid.

    The first three remove whole modules; the rest remove options inside a
    module. At least one pooling branch must stay enabled whenever the
    pooling module itself is on.
    """

    use_position_encoding: bool = True
    use_pooling: bool = True
    use_transformer: bool = True
    use_max_pool: bool = True
    use_attention_pool: bool = True
    use_channel_gate_w: bool = True
    use_position_embedding: bool = True

    def validate(self) -> None:
        if self.use_pooling and not (self.use_max_pool or self.use_attention_pool):
            raise ConfigError("ablation: max pooling and attention pooling cannot both be off")
        if not self.use_pooling and not self.use_transformer:
            raise ConfigError("ablation: pooling and transformer cannot both be off")
        if not self.use_pooling and self.use_channel_gate_w:
            raise ConfigError("ablation: channel gate needs the pooling module")
        if not self.use_pooling and self.use_position_encoding:
            raise ConfigError("ablation: position encoding feeds pooling; enable pooling too")


def _batched_neighbor_geometry(coords: np.ndarray, graphs: np.ndarray):
    # coords [B, N, 3], graphs [B, N, K] -> offsets [B, N, K, 3], lengths [B, N, K, 1]
    b = np.arange(coords.shape[0])[:, None, None]
    neigh = coords[b, graphs]
    deltas = coords[:, :, None, :] - neigh
    dists = np.sqrt(np.einsum("bnkc,bnkc->bnk", deltas, deltas))[..., None]
    return deltas, dists


def gather_neighbors(features: Tensor, graphs: np.ndarray) -> Tensor:
    """Look up neighbor feature rows: [B, N, D] + [B, N, K] -> [B, N, K, D]."""
    bsz, n, d = features.shape
    k = graphs.shape[2]
    flat = ad.reshape(features, (bsz * n, d))
    idx = (graphs + (np.arange(bsz) * n)[:, None, None]).reshape(bsz * n, k)
    return ad.reshape(ad.gather_rows(flat, idx), (bsz, n, k, d))


class RelativePositionEncoding(Module):
    """Per-edge geometric encoding fused with neighbor features.

    Edge input is [center - neighbor coords, their distance,
    center - neighbor features], width 3 + 1 + D; an MLP lifts it to the edge
    width, then a second MLP fuses it with the raw neighbor feature. Uses
    only coordinate differences and distances, so the output is invariant to
    global translation.
    """

    def __init__(self, feat_dim: int, edge_dim: int, rng: np.random.Generator):
        super().__init__()
        self.pos_mlp = SharedMlp([3 + 1 + feat_dim, edge_dim], rng)
        self.fuse_mlp = SharedMlp([edge_dim + feat_dim, edge_dim], rng)

    def __call__(self, features: Tensor, coords: np.ndarray, graphs: np.ndarray) -> Tensor:
        deltas, dists = _batched_neighbor_geometry(coords, graphs)
        neigh = gather_neighbors(features, graphs)              # [B, N, K, D]
        center = ad.reshape(features, features.shape[:2] + (1,) + features.shape[2:])
        feat_diff = ad.sub(center, neigh)
        edge = ad.concat([Tensor(deltas), Tensor(dists), feat_diff], axis=-1)
        p = self.pos_mlp(edge)
        return self.fuse_mlp(ad.concat([p, neigh], axis=-1))    # [B, N, K, E]


class AttentiveFeaturePooling(Module):
    """Collapse the K-neighbor axis into one feature vector per point.

    The attention branch scores every channel of every edge, softmaxes the
    scores over the neighbors, and sums; the max branch takes the
    channel-wise maximum. Enabled branches are concatenated and mixed by a
    final MLP. Both branches are symmetric in the neighbors, so the output
    is invariant to neighbor order.
    """

    def __init__(self, edge_dim: int, out_dim: int, rng: np.random.Generator,
                 use_max: bool = True, use_attention: bool = True):
        super().__init__()
        if not (use_max or use_attention):
            raise ConfigError("attentive pooling: at least one branch must be enabled")
        self.use_max = use_max
        self.use_attention = use_attention
        if use_attention:
            self.score = Linear(edge_dim, edge_dim, rng, bias=False)
        self.out_mlp = SharedMlp([edge_dim * (int(use_max) + int(use_attention)), out_dim], rng)

    def __call__(self, h: Tensor) -> Tensor:
        branches = []
        if self.use_attention:
            scores = ad.softmax(self.score(h), axis=2)          # sums to 1 over K, per channel
            branches.append(ad.reduce_sum(ad.mul(h, scores), axis=2))
        if self.use_max:
            branches.append(ad.reduce_max(h, axis=2)[0])
        pooled = branches[0] if len(branches) == 1 else ad.concat(branches, axis=-1)
        return self.out_mlp(pooled)                             # [B, N, D]


class LocalityAwareTransformer(Module):
    """Offset self-attention with a locality-derived channel gate.

    A coordinate embedding delta is added to the input stream and the value
    projection; the pooled local feature, squashed by a sigmoid into (0, 1),
    multiplies the value matrix channel-wise. Query/key width is D/4. The
    output is input + MBR(input - attention), the offset-attention residual.
    """

    def __init__(self, dim: int, rng: np.random.Generator,
                 use_gate: bool = True, use_delta: bool = True,
                 locality_stream: str = "gate_only"):
        super().__init__()
        if dim % 4 != 0:
            raise ConfigError(f"transformer width {dim} must be divisible by 4 (q/k width is D/4)")
        if locality_stream not in ("gate_only", "feed_forward"):
            raise ConfigError(f"unknown locality_stream '{locality_stream}'")
        self.dim = dim
        self.qk_dim = dim // 4
        self.use_gate = use_gate
        self.use_delta = use_delta
        self.locality_stream = locality_stream
        if use_delta:
            self.delta_mlp = SharedMlp([3, 64, dim], rng)
        self.wq = Linear(dim, self.qk_dim, rng, bias=False)
        self.wk = Linear(dim, self.qk_dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.mbr_linear = Linear(dim, dim, rng, bias=False)
        self.mbr_norm = BatchNorm(dim)

    def __call__(self, features: Tensor, coords: np.ndarray,
                 f_hat: Tensor | None = None, return_internals: bool = False):
        uses_local = self.use_gate or self.locality_stream == "feed_forward"
        if uses_local and f_hat is None:
            raise ConfigError("transformer: configured to use local features but none given")

        delta = self.delta_mlp(Tensor(coords)) if self.use_delta else None
        base = f_hat if self.locality_stream == "feed_forward" else features
        f_in = ad.add(base, delta) if delta is not None else base

        q = self.wq(f_in)                                       # [B, N, d]
        k = self.wk(f_in)
        att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))),
                                  1.0 / math.sqrt(self.qk_dim)), axis=-1)
        v = self.wv(f_in)
        if delta is not None:
            v = ad.add(v, delta)
        gate = ad.sigmoid(f_hat) if self.use_gate else None
        if gate is not None:
            v = ad.mul(v, gate)                                 # channel gate in (0, 1)
        f_sa = ad.matmul(att, v)

        out = ad.add(ad.relu(self.mbr_norm(self.mbr_linear(ad.sub(f_in, f_sa)))), f_in)
        if return_internals:
            return out, {"f_in": f_in, "f_sa": f_sa, "attention": att, "gate": gate}
        return out


class IbtLayer(Module):
    """One full layer: edge encoding -> neighborhood pooling -> gated transformer.

    Ablation switches remove modules: without the transformer the layer
    returns the pooled local feature; without pooling the transformer runs
    ungated; without position encoding a plain MLP lifts raw neighbor
    features before pooling. The local branch is only built when something
    downstream consumes it, so switching it off shrinks the parameter count.
    """

    def __init__(self, dim: int, edge_dim: int, switches: AblationSwitches,
                 rng: np.random.Generator, locality_stream: str = "gate_only",
                 afp_on_fused_edges: bool = True):
        super().__init__()
        switches.validate()
        if locality_stream == "feed_forward" and not switches.use_pooling:
            raise ConfigError("locality_stream=feed_forward needs the pooling module")
        self.switches = switches
        self.afp_on_fused_edges = afp_on_fused_edges

        needs_local = switches.use_pooling and (
            switches.use_channel_gate_w
            or locality_stream == "feed_forward"
            or not switches.use_transformer)
        self.has_local_branch = needs_local
        if needs_local:
            if not afp_on_fused_edges:
                pooled_in = dim  # pool raw neighbor features directly
            elif switches.use_position_encoding:
                self.rpe = RelativePositionEncoding(dim, edge_dim, rng)
                pooled_in = edge_dim
            else:
                # module removed: plain MLP on raw neighbor features instead
                self.neighbor_mlp = SharedMlp([dim, edge_dim], rng)
                pooled_in = edge_dim
            self.afp = AttentiveFeaturePooling(
                pooled_in, dim, rng,
                use_max=switches.use_max_pool,
                use_attention=switches.use_attention_pool)
        if switches.use_transformer:
            self.lat = LocalityAwareTransformer(
                dim, rng,
                use_gate=switches.use_channel_gate_w,
                use_delta=switches.use_position_embedding,
                locality_stream=locality_stream)

    def local_feature(self, features: Tensor, coords: np.ndarray,
                      graphs: np.ndarray) -> Tensor:
        if not self.afp_on_fused_edges:
            return self.afp(gather_neighbors(features, graphs))
        if self.switches.use_position_encoding:
            return self.afp(self.rpe(features, coords, graphs))
        return self.afp(self.neighbor_mlp(gather_neighbors(features, graphs)))

    def __call__(self, features: Tensor, coords: np.ndarray,
                 graphs: np.ndarray) -> Tensor:
        f_hat = self.local_feature(features, coords, graphs) if self.has_local_branch else None
        if not self.switches.use_transformer:
            return f_hat
        return self.lat(features, coords, f_hat)
