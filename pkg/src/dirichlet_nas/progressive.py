"""Stage transitions: prune each edge's operations by Dirichlet mean, then
widen the surviving operation weights with a random index mapping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dirichlet as dr
from . import space as sp
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class StageSpec:
    epochs: int
    partial_k: int
    registry_size: int

    @classmethod
    def parse(cls, text: str) -> list["StageSpec"]:
        """Parse ``"25:2:4,25:1:2"`` (epochs:K:|O| per stage)."""
        stages = []
        for chunk in text.split(","):
            parts = chunk.strip().split(":")
            if len(parts) != 3:
                raise ConfigError(f"bad stage {chunk!r}; expected epochs:K:ops")
            stages.append(cls(*(int(p) for p in parts)))
        return stages


def validate_schedule(stages, channels: int, n_ops: int):
    if not stages:
        raise ConfigError("empty stage schedule")
    prev_ops, prev_k = n_ops, None
    for s in stages:
        if s.epochs < 0 or s.partial_k < 1 or channels % s.partial_k:
            raise ConfigError(f"stage {s}: K must divide channels={channels}")
        if not 1 <= s.registry_size <= prev_ops:
            raise ConfigError(f"stage {s}: registry size must be in [1, {prev_ops}]")
        if prev_k is not None and s.partial_k > prev_k:
            raise ConfigError(f"stage {s}: K may not grow between stages")
        prev_ops, prev_k = s.registry_size, s.partial_k
    if stages[0].registry_size != n_ops:
        raise ConfigError("first stage must use the full registry")


@dataclass
class WidenMapping:
    n: int
    q: int
    table: np.ndarray  # 0-based: table[j] = j for j < n

    def __call__(self, j):
        return self.table[j]


def widen_mapping(n: int, q: int, rng: np.random.Generator) -> WidenMapping:
    if not 1 <= n <= q:
        raise ContractError(f"widen mapping needs 1 <= n <= q, got n={n}, q={q}")
    table = np.concatenate([np.arange(n), rng.integers(0, n, size=q - n)])
    return WidenMapping(n, q, table)


def widen_weights(W, g_out: WidenMapping, g_in: WidenMapping):
    """U[o, i] = W[g_out(o), g_in(i)]; entries are copied without rescaling."""
    if W.shape != (g_out.n, g_in.n):
        raise ContractError(f"weight shape {W.shape} does not match mappings ({g_out.n}, {g_in.n})")
    return W[np.ix_(g_out.table, g_in.table)]


def widen_vector(b, g: WidenMapping):
    if b.shape != (g.n,):
        raise ContractError("bias length does not match mapping")
    return b[g.table]


def widen_supernet(net: sp.SuperNet, k_new: int, rng: np.random.Generator) -> sp.SuperNet:
    """Grow every op weight from C/K to C/k_new features; stem/classifier untouched."""
    if k_new >= net.k or net.channels % k_new:
        raise ContractError(f"cannot widen from K={net.k} to K={k_new}")
    n, q = net.width, net.channels // k_new
    for c in range(net.n_cells):
        for e, ops in enumerate(net.edge_ops):
            for o in ops:
                if net.spec.op_registry[o] not in sp.PARAMETRIC_OPS:
                    continue
                p = net.op_prefix(c, e, o)
                g_out = widen_mapping(n, q, rng)
                g_in = widen_mapping(n, q, rng)
                W = widen_weights(net.params[p + ".W"], g_out, g_in)
                b = widen_vector(net.params[p + ".b"], g_out)
                net.params.add(p + ".W", W)  # resets moments
                net.params.add(p + ".b", b)
    net.k = k_new
    return net


def prune_ops(etas, edge_ops, keep: int):
    """Per edge keep the ``keep`` ops with the largest Dirichlet mean.

    Returns (new edge_ops, new etas, kept local positions per edge); order
    within an edge follows the global registry and eta values are carried over
    unchanged.
    """
    new_ops, new_etas, kept = [], [], []
    for eta, ops in zip(etas, edge_ops):
        if not 1 <= keep <= len(ops):
            raise ContractError(f"keep={keep} outside [1, {len(ops)}]")
        m = dr.mean(dr.beta_from_eta(eta))
        # stable sort: ties favour the lower registry index
        order = sorted(range(len(ops)), key=lambda i: (-m[i], i))[:keep]
        order.sort()
        kept.append(order)
        new_ops.append([ops[i] for i in order])
        new_etas.append(np.asarray(eta)[order].copy())
    return new_ops, new_etas, kept


def stage_transition(state, nxt: StageSpec, rng: np.random.Generator) -> dict:
    """Prune then widen ``state`` in place for the next stage; returns a report."""
    net = state.net
    before = {"k": net.k, "edge_ops": [list(o) for o in net.edge_ops],
              "param_count": net.params.count(), "footprint": sp.activation_footprint(net)}
    report = {"type": "transition", "epoch": state.epoch, "from_stage": state.stage,
              "mapping_rng": int(rng.bit_generator.state["state"]["state"])}
    keep = nxt.registry_size
    if any(len(ops) > keep for ops in net.edge_ops):
        new_ops, new_etas, kept = prune_ops(state.etas(), net.edge_ops, keep)
        for e, (ops, pos) in enumerate(zip(net.edge_ops, kept)):
            dropped = [o for i, o in enumerate(ops) if i not in pos]
            for c in range(net.n_cells):
                for o in dropped:
                    p = net.op_prefix(c, e, o)
                    net.params.remove(p + ".W")
                    net.params.remove(p + ".b")
            state.set_eta(e, new_etas[e], pos, reset=state.config.prune_reset_eta)
        net.edge_ops = new_ops
    if nxt.partial_k < net.k:
        widen_supernet(net, nxt.partial_k, rng)
    report.update({
        "registry": [[net.spec.op_registry[o] for o in ops] for ops in net.edge_ops],
        "before": before,
        "after": {"k": net.k, "edge_ops": [list(o) for o in net.edge_ops],
                  "param_count": net.params.count(), "footprint": sp.activation_footprint(net)},
    })
    return report
