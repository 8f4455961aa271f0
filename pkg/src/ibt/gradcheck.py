"""Central finite-difference oracle for every differentiable block.

The check runs the model in eval mode so the loss is a pure function of the
parameters (training-mode batch statistics would couple the perturbations).
The bundled scenarios also randomize the running normalization statistics:
with virgin stats (mean 0) and zero-initialized shifts, the all-zero
self-loop edge parks pre-activations exactly on the ReLU kink, where no
two-sided derivative exists; random stats keep kinks measure-zero.
For big tensors only a seeded random subset of coordinates is probed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ContractError

DEFAULT_TOL = 1e-4
ABS_FALLBACK = 1e-7
H_SCALE = 1e-5
SUBSAMPLE_THRESHOLD = 2000
SUBSAMPLE_SIZE = 500


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int
    size: int


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[ParamCheck] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err <= self.tolerance or e.max_abs_err <= ABS_FALLBACK
                   for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_rel_err": self.max_rel_err,
            "elapsed_seconds": self.elapsed,
            "parameters": [vars(e) for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'max rel err':>12}  {'max abs err':>12}  checked"]
        for e in self.entries:
            ok = e.max_rel_err <= self.tolerance or e.max_abs_err <= ABS_FALLBACK
            lines.append(f"{e.name:<{width}}  {e.max_rel_err:>12.3e}  "
                         f"{e.max_abs_err:>12.3e}  {e.checked}/{e.size}"
                         f"{'' if ok else '  FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"(tol {self.tolerance:g}, {self.elapsed:.2f}s)")
        return "\n".join(lines)


def finite_diff_check(fn, params: list[Parameter], tol: float = DEFAULT_TOL,
                      seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``fn() -> scalar Tensor`` against central
    differences with h = 1e-5 * max(1, |theta|).

    ``fn`` must be deterministic; the baseline is evaluated twice to verify.
    """
    start = time.perf_counter()
    base_a = fn()
    if not isinstance(base_a, Tensor) or base_a.size != 1:
        raise ContractError("finite_diff_check: fn must return a scalar Tensor")
    if fn().item() != base_a.item():
        raise ContractError("finite_diff_check: fn is not deterministic")

    for p in params:
        p.zero_grad()
    ad.backward(base_a)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tol)
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        if flat.size > SUBSAMPLE_THRESHOLD:
            coords = np.sort(rng.choice(flat.size, size=SUBSAMPLE_SIZE, replace=False))
        else:
            coords = np.arange(flat.size)
        max_rel = 0.0
        max_abs = 0.0
        for i in coords:
            old = flat[i]
            h = H_SCALE * max(1.0, abs(old))
            flat[i] = old + h
            f_plus = fn().item()
            flat[i] = old - h
            f_minus = fn().item()
            flat[i] = old
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = gflat[i]
            abs_err = abs(a - numeric)
            denom = max(abs(a), abs(numeric))
            rel_err = abs_err / denom if denom > 0 else 0.0
            if abs_err > ABS_FALLBACK:  # near-zero grads judged by abs error only
                max_rel = max(max_rel, rel_err)
            max_abs = max(max_abs, abs_err)
        report.entries.append(ParamCheck(
            name=p.name or f"param{params.index(p)}",
            max_rel_err=max_rel, max_abs_err=max_abs,
            checked=len(coords), size=flat.size))
    report.elapsed = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# ready-made check scenarios for the CLI

def _randomize_normalization(module, rng: np.random.Generator) -> None:
    from .layers import BatchNorm
    stack = [module]
    while stack:
        m = stack.pop()
        if isinstance(m, BatchNorm):
            m.running_mean[:] = rng.normal(0.0, 0.3, size=m.running_mean.shape)
            m.running_var[:] = rng.uniform(0.5, 1.5, size=m.running_var.shape)
        stack.extend(child for _, child in m._children())


def _op_cases(seed: int = 0):
    """Small randomized loss functions, one per registered tensor op."""
    rng = np.random.default_rng(seed)

    def case(name, params, build):
        w = Tensor(rng.standard_normal(build().shape))  # frozen so fn is pure
        return name, params, (lambda: ad.reduce_sum(ad.mul(build(), w)))

    a = Parameter(rng.standard_normal((4, 5)), name="a")
    b = Parameter(rng.standard_normal((5, 3)), name="b")
    yield case("matmul", [a, b], lambda: ad.matmul(a, b))

    ab = Parameter(rng.standard_normal((2, 3, 4)), name="a")
    bb = Parameter(rng.standard_normal((1, 4, 2)), name="b")
    yield case("matmul_batched", [ab, bb], lambda: ad.matmul(ab, bb))

    x = Parameter(rng.standard_normal((3, 6)), name="x")
    yield case("softmax", [x], lambda: ad.softmax(x, axis=1))
    yield case("log_softmax", [x], lambda: ad.log_softmax(x, axis=1))
    yield case("relu", [x], lambda: ad.relu(x))
    yield case("sigmoid", [x], lambda: ad.sigmoid(x))
    yield case("scale", [x], lambda: ad.scale(x, -2.5))
    yield case("reduce_max", [x], lambda: ad.reduce_max(x, axis=1)[0])
    yield case("reduce_sum", [x], lambda: ad.reduce_sum(x, axis=0))
    yield case("reduce_mean", [x], lambda: ad.reduce_mean(x, axis=1))
    yield case("reshape", [x], lambda: ad.reshape(x, (6, 3)))
    yield case("transpose", [x], lambda: ad.transpose(x, (1, 0)))

    y = Parameter(rng.standard_normal((3, 6)), name="y")
    z = Parameter(rng.standard_normal((1, 6)), name="z")
    yield case("add_broadcast", [y, z], lambda: ad.add(y, z))
    yield case("sub_broadcast", [y, z], lambda: ad.sub(y, z))
    yield case("mul_broadcast", [y, z], lambda: ad.mul(y, z))
    yield case("concat", [y, z], lambda: ad.concat(
        [y, ad.broadcast_to(z, (3, 6))], axis=1))
    yield case("broadcast", [z], lambda: ad.broadcast_to(z, (4, 6)))

    src = Parameter(rng.standard_normal((5, 3)), name="src")
    idx = rng.integers(0, 5, size=(4, 2))
    yield case("gather_rows", [src], lambda: ad.gather_rows(src, idx))

    from .layers import BatchNorm
    bn = BatchNorm(4)
    xb = Parameter(rng.standard_normal((6, 4)), name="x")
    bn_params = [xb, bn.gamma, bn.beta]
    for name, p in bn.named_parameters():
        p.name = name
    w_bn = Tensor(rng.standard_normal((6, 4)))

    def bn_train():
        bn.running_mean[:] = 0.0  # keep fn pure despite running-stat updates
        bn.running_var[:] = 1.0
        return ad.reduce_sum(ad.mul(bn(xb), w_bn))

    yield "batch_norm_train", bn_params, bn_train
    bn_eval = BatchNorm(4)
    bn_eval.eval()
    yield "batch_norm_eval", [xb, bn_eval.gamma, bn_eval.beta], (
        lambda: ad.reduce_sum(ad.mul(bn_eval(xb), w_bn)))


def check_ops(tol: float = DEFAULT_TOL, seed: int = 0) -> dict[str, GradCheckReport]:
    return {name: finite_diff_check(fn, params, tol=tol, seed=seed)
            for name, params, fn in _op_cases(seed)}


def _layer_cases(seed: int = 0):
    from .geometry import PointCloud, knn_graph
    from .layers import (AblationSwitches, AttentiveFeaturePooling, IbtLayer,
                         LocalityAwareTransformer, RelativePositionEncoding)

    rng = np.random.default_rng(seed)
    n, d, k = 10, 8, 4
    coords = rng.standard_normal((1, n, 3))
    graphs = knn_graph(PointCloud(coords[0]), k).indices[None]
    feats = Parameter(rng.standard_normal((1, n, d)), name="features")
    w = Tensor(rng.standard_normal((1, n, d)))

    def loss_of(module, forward):
        module.eval()
        params = [feats] + module.parameters()
        for name, p in module.named_parameters():
            p.name = name
        return params, (lambda: ad.reduce_sum(ad.mul(forward(), w)))

    rpe = RelativePositionEncoding(d, d, np.random.default_rng(seed + 1))
    _randomize_normalization(rpe, rng)
    w_edge = Tensor(rng.standard_normal((1, n, k, d)))
    params = [feats] + rpe.parameters()
    for name, p in rpe.named_parameters():
        p.name = name
    rpe.eval()
    yield "relative_position_encoding", params, (
        lambda: ad.reduce_sum(ad.mul(rpe(feats, coords, graphs), w_edge)))

    afp = AttentiveFeaturePooling(d, d, np.random.default_rng(seed + 2))
    _randomize_normalization(afp, rng)
    h = Parameter(rng.standard_normal((1, n, k, d)), name="edges")
    afp.eval()
    afp_params = [h] + afp.parameters()
    for name, p in afp.named_parameters():
        p.name = name
    yield "attentive_feature_pooling", afp_params, (
        lambda: ad.reduce_sum(ad.mul(afp(h), w)))

    lat = LocalityAwareTransformer(d, np.random.default_rng(seed + 3))
    _randomize_normalization(lat, rng)
    fhat = Parameter(rng.standard_normal((1, n, d)), name="f_hat")
    lat.eval()
    lat_params = [feats, fhat] + lat.parameters()
    for name, p in lat.named_parameters():
        p.name = name
    yield "locality_aware_transformer", lat_params, (
        lambda: ad.reduce_sum(ad.mul(lat(feats, coords, fhat), w)))

    layer = IbtLayer(d, d, AblationSwitches(), np.random.default_rng(seed + 4))
    _randomize_normalization(layer, rng)
    params, fn = loss_of(layer, lambda: layer(feats, coords, graphs))
    yield "ibt_layer", params, fn


def check_layers(tol: float = DEFAULT_TOL, seed: int = 0) -> dict[str, GradCheckReport]:
    return {name: finite_diff_check(fn, params, tol=tol, seed=seed)
            for name, params, fn in _layer_cases(seed)}


def check_model(tol: float = DEFAULT_TOL, seed: int = 0) -> GradCheckReport:
    """Full classification loss at B=2, N=12, D=8, K=4, eval-mode normalization."""
    from .model import IbtClassifier, IbtConfig, build_graphs
    from .trainer import cross_entropy

    config = IbtConfig(embed_dim=8, k=4, num_classes=3, global_dim=16,
                       head_dims=(16, 8), dropout=0.0)
    model = IbtClassifier(config, seed=seed)
    model.eval()
    rng = np.random.default_rng(seed)
    _randomize_normalization(model, rng)
    coords = rng.standard_normal((2, 12, 3))
    graphs = build_graphs(coords, config.k)
    targets = rng.integers(0, config.num_classes, size=2)
    params = model.parameters()
    for name, p in model.named_parameters():
        p.name = name
    return finite_diff_check(
        lambda: cross_entropy(model(coords, graphs=graphs), targets),
        params, tol=tol, seed=seed)
