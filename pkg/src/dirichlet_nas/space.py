"""Cell search space, partial-channel mixed operations and the super-network.

A cell is a DAG over ``n_nodes`` nodes; node 0 is the cell input and every
other node sums the mixed operations on its incoming edges.  The cell output
is the last node.  Every edge carries its own list of surviving operations
(indices into the space's global registry), which lets the progressive
scheme prune per edge while genotypes keep global indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import dirichlet as dr
from . import nn
from .errors import ConfigError, ContractError, NumericError

PARAMETRIC_OPS = ("affine", "affine_relu")
KNOWN_OPS = ("zero", "identity", "affine", "affine_relu", "scale_half")


@dataclass(frozen=True)
class CellSpec:
    name: str
    n_nodes: int
    edges: tuple
    op_registry: tuple

    def __post_init__(self):
        if not self.op_registry:
            raise ConfigError("empty operation registry")
        for op in self.op_registry:
            if op not in KNOWN_OPS:
                raise ConfigError(f"unknown op {op!r}")
        for i, j in self.edges:
            if not (0 <= i < j < self.n_nodes):
                raise ConfigError(f"edge {(i, j)} violates the DAG ordering")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_ops(self) -> int:
        return len(self.op_registry)


def micro_space() -> CellSpec:
    return CellSpec("micro", 3, ((0, 1), (0, 2), (1, 2)),
                    ("zero", "identity", "affine", "affine_relu"))


def nb201_like_space() -> CellSpec:
    edges = tuple((i, j) for j in range(1, 4) for i in range(j))
    return CellSpec("nb201-like", 4, edges,
                    ("zero", "identity", "affine", "affine_relu", "scale_half"))


SPACES = {"micro": micro_space, "nb201-like": nb201_like_space}


def get_space(name: str) -> CellSpec:
    try:
        return SPACES[name]()
    except KeyError:
        raise ConfigError(f"unknown space {name!r}") from None


@dataclass(frozen=True)
class Genotype:
    space: str
    ops: tuple
    choices: tuple

    def key(self) -> str:
        return "-".join(str(c) for c in self.choices)

    def names(self) -> list[str]:
        return [self.ops[c] for c in self.choices]

    def to_dict(self) -> dict:
        return {"space": self.space, "ops": list(self.ops), "choices": [int(c) for c in self.choices]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        g = cls(d["space"], tuple(d["ops"]), tuple(int(c) for c in d["choices"]))
        if any(not 0 <= c < len(g.ops) for c in g.choices):
            raise ContractError("genotype choice outside registry")
        return g


@dataclass
class SuperNet:
    spec: CellSpec
    in_dim: int
    n_classes: int
    channels: int
    n_cells: int
    k: int
    edge_ops: list
    params: nn.ParamStore = field(repr=False)
    subset_policy: str = "random"

    @property
    def width(self) -> int:
        return self.channels // self.k

    def op_prefix(self, cell: int, edge: int, op: int) -> str:
        return f"cell{cell}.e{edge}.{self.spec.op_registry[op]}"


def _init_weight(rng, n_out, n_in, scale):
    return rng.standard_normal((n_out, n_in)) * (scale / np.sqrt(n_in))


def _add_op_params(net: SuperNet, cell, edge, op, rng, scale):
    if net.spec.op_registry[op] in PARAMETRIC_OPS:
        p = net.op_prefix(cell, edge, op)
        net.params.add(p + ".W", _init_weight(rng, net.width, net.width, scale))
        net.params.add(p + ".b", np.zeros(net.width))


def build_supernet(spec: CellSpec, channels: int, n_cells: int, k: int, rng: np.random.Generator,
                   in_dim: int = 2, n_classes: int = 2, init_scale: float = 0.1,
                   edge_ops=None, subset_policy: str = "random") -> SuperNet:
    if k < 1 or channels % k:
        raise ConfigError(f"channels {channels} not divisible by K={k}")
    if subset_policy not in ("random", "fixed"):
        raise ConfigError(f"unknown subset policy {subset_policy!r}")
    if edge_ops is None:
        edge_ops = [list(range(spec.n_ops)) for _ in spec.edges]
    edge_ops = [list(map(int, ops)) for ops in edge_ops]
    if len(edge_ops) != spec.n_edges:
        raise ConfigError("edge_ops length does not match the number of edges")
    net = SuperNet(spec, in_dim, n_classes, channels, n_cells, k, edge_ops, nn.ParamStore(), subset_policy)
    p = net.params
    p.add("stem.W", _init_weight(rng, channels, in_dim, init_scale))
    p.add("stem.b", np.zeros(channels))
    for c in range(n_cells):
        for e, ops in enumerate(edge_ops):
            for o in ops:
                _add_op_params(net, c, e, o, rng, init_scale)
    p.add("cls.W", _init_weight(rng, n_classes, channels, init_scale))
    p.add("cls.b", np.zeros(n_classes))
    return net


def param_count_formula(spec: CellSpec, channels, n_cells, k, in_dim, n_classes, edge_ops=None) -> int:
    """Closed-form parameter count, independent of any built network."""
    w = channels // k
    if edge_ops is None:
        edge_ops = [range(spec.n_ops)] * spec.n_edges
    per_cell = sum((w * w + w) for ops in edge_ops for o in ops if spec.op_registry[o] in PARAMETRIC_OPS)
    return in_dim * channels + channels + n_cells * per_cell + channels * n_classes + n_classes


def activation_footprint(net: SuperNet) -> int:
    """Mixed-op output features per sample: sum over edges of |ops| * C/K."""
    return net.n_cells * sum(len(ops) for ops in net.edge_ops) * net.width


def draw_masks(net: SuperNet, rng: np.random.Generator | None):
    """Per (cell, edge) feature subsets sent into the mixed op; None means all."""
    if net.k == 1:
        return [[None] * net.spec.n_edges for _ in range(net.n_cells)]
    if net.subset_policy == "fixed" or rng is None:
        fixed = np.arange(net.width)
        return [[fixed] * net.spec.n_edges for _ in range(net.n_cells)]
    return [[np.sort(rng.choice(net.channels, net.width, replace=False)) for _ in net.spec.edges]
            for _ in range(net.n_cells)]


# single operations -----------------------------------------------------------

def op_forward(net: SuperNet, name: str, prefix: str, x):
    if name == "zero":
        return nn.zero_op(x), None
    if name == "identity":
        return nn.identity_op(x), None
    if name == "scale_half":
        return nn.scale_forward(x, 0.5)
    y, c1 = nn.affine_forward(x, net.params[prefix + ".W"], net.params[prefix + ".b"])
    if name == "affine":
        return y, c1
    z, c2 = nn.relu_forward(y)
    return z, (c1, c2)


def op_backward(name: str, g, cache):
    """Returns (grad_x, grad_W or None, grad_b or None)."""
    if name == "zero":
        return np.zeros_like(g), None, None
    if name == "identity":
        return g, None, None
    if name == "scale_half":
        return nn.scale_backward(g, cache), None, None
    if name == "affine_relu":
        c1, c2 = cache
        g = nn.relu_backward(g, c2)
        cache = c1
    return nn.affine_backward(g, cache)


# mixed operation ---------------------------------------------------------------

def mixed_op_forward(net: SuperNet, x, theta, cell: int, edge: int, mask):
    """Weighted sum of the edge's ops on the masked features; others bypass."""
    ops = net.edge_ops[edge]
    if len(theta) != len(ops):
        raise ContractError("theta length does not match the edge registry")
    if mask is not None and len(mask) != net.width:
        raise ContractError(f"mask size {len(mask)} != C/K = {net.width}")
    xs = x if mask is None else x[:, mask]
    if xs.shape[1] != net.width:
        raise ContractError("input width does not match the op width")
    outs, caches = [], []
    acc = None
    for t, o in zip(theta, ops):
        y, c = op_forward(net, net.spec.op_registry[o], net.op_prefix(cell, edge, o), xs)
        outs.append(y)
        caches.append(c)
        acc = t * y if acc is None else acc + t * y
    if mask is None:
        out = acc
    else:
        out = x.copy()
        out[:, mask] = acc
    return out, (mask, outs, caches, np.asarray(theta, dtype=np.float64))


def mixed_op_backward(net: SuperNet, g_out, cache, cell: int, edge: int, grads: dict):
    """Accumulates parameter grads into ``grads``; returns (grad_x, grad_theta)."""
    mask, outs, caches, theta = cache
    gs = g_out if mask is None else g_out[:, mask]
    g_theta = np.array([np.sum(gs * y) for y in outs])
    gx_sub = np.zeros_like(gs)
    for t, o, c in zip(theta, net.edge_ops[edge], caches):
        name = net.spec.op_registry[o]
        gx, gW, gb = op_backward(name, t * gs, c)
        gx_sub += gx
        if gW is not None:
            p = net.op_prefix(cell, edge, o)
            grads[p + ".W"] = grads.get(p + ".W", 0.0) + gW
            grads[p + ".b"] = grads.get(p + ".b", 0.0) + gb
    if mask is None:
        return gx_sub, g_theta
    gx = g_out.copy()
    gx[:, mask] = gx_sub
    return gx, g_theta


# whole network -------------------------------------------------------------------

def supernet_forward(net: SuperNet, x, y, thetas, masks=None, rng=None):
    """Loss and logits for one batch; ``thetas`` holds one simplex vector per edge."""
    if masks is None:
        masks = draw_masks(net, rng)
    h, stem_cache = nn.affine_forward(x, net.params["stem.W"], net.params["stem.b"])
    cell_caches = []
    for c in range(net.n_cells):
        nodes = [h]
        edge_caches = {}
        for j in range(1, net.spec.n_nodes):
            acc = None
            for e, (i, jj) in enumerate(net.spec.edges):
                if jj != j:
                    continue
                out, ec = mixed_op_forward(net, nodes[i], thetas[e], c, e, masks[c][e])
                edge_caches[e] = ec
                acc = out if acc is None else acc + out
            nodes.append(acc if acc is not None else np.zeros_like(h))
        cell_caches.append(edge_caches)
        h = nodes[-1]
    logits, cls_cache = nn.affine_forward(h, net.params["cls.W"], net.params["cls.b"])
    loss, g_logits = nn.softmax_xent(logits, y)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss; logits range [{logits.min()}, {logits.max()}]")
    return loss, logits, (stem_cache, cell_caches, cls_cache, g_logits)


def supernet_backward(net: SuperNet, cache):
    """Exact gradients: (param grads dict, list of per-edge theta grads)."""
    stem_cache, cell_caches, cls_cache, g_logits = cache
    grads = {}
    g_h, grads["cls.W"], grads["cls.b"] = nn.affine_backward(g_logits, cls_cache)
    g_thetas = [np.zeros(len(ops)) for ops in net.edge_ops]
    n = net.spec.n_nodes
    for c in reversed(range(net.n_cells)):
        edge_caches = cell_caches[c]
        g_nodes = [None] * n
        g_nodes[-1] = g_h
        for j in reversed(range(1, n)):
            gj = g_nodes[j]
            if gj is None:
                continue
            for e, (i, jj) in enumerate(net.spec.edges):
                if jj != j:
                    continue
                gx, gt = mixed_op_backward(net, gj, edge_caches[e], c, e, grads)
                g_thetas[e] += gt
                g_nodes[i] = gx if g_nodes[i] is None else g_nodes[i] + gx
        g_h = g_nodes[0] if g_nodes[0] is not None else np.zeros_like(g_h)
    _, grads["stem.W"], grads["stem.b"] = nn.affine_backward(g_h, stem_cache)
    return grads, g_thetas


def predict(net: SuperNet, x, thetas, masks=None):
    _, logits, _ = supernet_forward(net, x, np.zeros(len(x), dtype=int), thetas, masks)
    return logits.argmax(axis=1)


# discretization --------------------------------------------------------------------

def _edge_argmax(values, ops):
    # np.argmax returns the first maximum, i.e. the lowest registry index
    return ops[int(np.argmax(values))]


def select_genotype(spec: CellSpec, betas, edge_ops=None) -> Genotype:
    """Per edge, the op with the largest Dirichlet mean."""
    edge_ops = edge_ops or [list(range(spec.n_ops))] * spec.n_edges
    choices = tuple(_edge_argmax(dr.mean(b), ops) for b, ops in zip(betas, edge_ops))
    return Genotype(spec.name, spec.op_registry, choices)


def discretize_sample(spec: CellSpec, thetas, edge_ops=None) -> Genotype:
    edge_ops = edge_ops or [list(range(spec.n_ops))] * spec.n_edges
    choices = tuple(_edge_argmax(t, ops) for t, ops in zip(thetas, edge_ops))
    return Genotype(spec.name, spec.op_registry, choices)


def build_discrete(genotype: Genotype, spec: CellSpec, channels: int, n_cells: int,
                   rng: np.random.Generator, in_dim: int = 2, n_classes: int = 2,
                   init_scale: float = 0.1) -> SuperNet:
    """A stand-alone network for one genotype: full width, one op per edge."""
    if genotype.space != spec.name or tuple(genotype.ops) != tuple(spec.op_registry):
        raise ContractError("genotype does not belong to this space")
    return build_supernet(spec, channels, n_cells, 1, rng, in_dim, n_classes, init_scale,
                          edge_ops=[[c] for c in genotype.choices])


def unit_thetas(net: SuperNet):
    """Weight 1 on the single op of every edge of a discrete network."""
    return [np.ones(1) for _ in net.edge_ops]
