"""Alternating first-order bilevel search over weights and Dirichlet
concentrations, with progressive stages."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from . import dirichlet as dr
from . import nn
from . import space as sp
from .bench import ToyDataset
from .errors import ConfigError, NumericError
from .progressive import StageSpec, stage_transition, validate_schedule
from .rng import from_state, get_state, stream

log = logging.getLogger(__name__)

RNG_STREAMS = ("data", "subsets", "dirichlet", "widen")
CHECKPOINT_FORMAT = "dirichlet-nas-checkpoint/1"


def default_stages():
    return [StageSpec(25, 2, 4), StageSpec(25, 1, 2)]


@dataclass
class SearchConfig:
    seed: int = 0
    lambda_anchor: float = 1e-3
    eta_init_scale: float = 1e-3
    distance: str = "eta-l2"          # eta-l2 | kl
    penalty_form: str = "squared"     # squared | norm (eta-l2 only)
    w_lr: float = 0.1
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    grad_clip: float = 5.0
    arch_lr: float = 0.01
    arch_b1: float = 0.5
    arch_b2: float = 0.999
    batch_size: int = 32
    mc_samples: int = 1
    channels: int = 16
    n_cells: int = 2
    init_scale: float = 1.0
    subset_policy: str = "random"     # random | fixed
    prune_reset_eta: bool = False
    stages: list = field(default_factory=default_stages)

    def validate(self, spec: sp.CellSpec | None = None):
        if self.lambda_anchor < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.w_lr < 0 or self.arch_lr < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.distance not in ("eta-l2", "kl"):
            raise ConfigError(f"unknown distance {self.distance!r}")
        if self.penalty_form not in ("squared", "norm"):
            raise ConfigError(f"unknown penalty form {self.penalty_form!r}")
        if self.subset_policy not in ("random", "fixed"):
            raise ConfigError(f"unknown subset policy {self.subset_policy!r}")
        if self.batch_size < 1 or self.mc_samples < 1:
            raise ConfigError("batch size and mc_samples must be positive")
        stages = [s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages]
        self.stages = stages
        if spec is not None:
            validate_schedule(stages, self.channels, spec.n_ops)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) if isinstance(s, StageSpec) else dict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        if "stages" in d:
            d["stages"] = [StageSpec(**s) if isinstance(s, dict) else s for s in d["stages"]]
        return cls(**d)

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)


@dataclass
class TrainState:
    config: SearchConfig
    net: sp.SuperNet
    arch: nn.ParamStore
    rngs: dict
    epoch: int = 0
    stage: int = 0

    def etas(self):
        return [self.arch[f"eta.{e}"] for e in range(self.net.spec.n_edges)]

    def betas(self):
        return [dr.beta_from_eta(eta) for eta in self.etas()]

    def set_eta(self, e: int, eta, kept=None, reset: bool = False):
        """Replace edge ``e``'s eta; adaptive moments of surviving entries are kept."""
        name = f"eta.{e}"
        old = self.arch.state.get(name)
        steps = self.arch.steps.get(name, 0)
        self.arch.add(name, eta)
        if reset:
            self.arch.params[name] = self.config.eta_init_scale * self.rngs["dirichlet"].standard_normal(len(eta))
        elif old is not None and kept is not None:
            for k in ("m", "v"):
                self.arch.state[name][k] = old[k][kept].copy()
            self.arch.steps[name] = steps

    def genotype(self) -> sp.Genotype:
        return sp.select_genotype(self.net.spec, self.betas(), self.net.edge_ops)


class TrajectoryLog:
    """Append-only list of JSON-serializable records."""

    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, record: dict):
        self.records.append(record)

    def epochs(self):
        return [r for r in self.records if r.get("type") == "epoch"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path, header: dict | None = None):
        with open(path, "w") as f:
            if header is not None:
                f.write(json.dumps(header, sort_keys=True) + "\n")
            f.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "TrajectoryLog":
        with open(path) as f:
            return cls(json.loads(line) for line in f if line.strip())


def init_state(config: SearchConfig, spec: sp.CellSpec, dataset: ToyDataset) -> TrainState:
    config.validate(spec)
    first = config.stages[0]
    net = sp.build_supernet(spec, config.channels, config.n_cells, first.partial_k,
                            stream(config.seed, "weights-init"), dataset.in_dim, dataset.n_classes,
                            config.init_scale, subset_policy=config.subset_policy)
    arch = nn.ParamStore()
    eta_rng = stream(config.seed, "eta-init")
    for e in range(spec.n_edges):
        arch.add(f"eta.{e}", config.eta_init_scale * eta_rng.standard_normal(spec.n_ops))
    rngs = {name: stream(config.seed, name) for name in RNG_STREAMS}
    return TrainState(config, net, arch, rngs)


def _sample_thetas(state: TrainState):
    rng = state.rngs["dirichlet"]
    return [dr.sample(b, rng) for b in state.betas()]


def step_weights(state: TrainState, x, y, lr: float) -> float:
    """One momentum-SGD step on the weights with a fresh Dirichlet sample."""
    net, cfg = state.net, state.config
    thetas = _sample_thetas(state)
    masks = sp.draw_masks(net, state.rngs["subsets"])
    loss, _, cache = sp.supernet_forward(net, x, y, thetas, masks)
    grads, _ = sp.supernet_backward(net, cache)
    names = list(net.params.params)
    for k in names:
        net.params.grads[k] = grads[k] if k in grads else np.zeros_like(net.params[k])
    nn.clip_grad_norm(net.params, cfg.grad_clip)
    nn.sgd_momentum_step(net.params, lr, cfg.w_momentum, cfg.w_weight_decay)
    return loss


def penalty(state: TrainState):
    """Distance term and its gradient w.r.t. each edge's eta."""
    cfg = state.config
    total, grads = 0.0, []
    for eta in state.etas():
        if cfg.distance == "kl":
            beta = dr.beta_from_eta(eta)
            total += cfg.lambda_anchor * dr.kl_to_symmetric(beta)
            grads.append(cfg.lambda_anchor * dr.kl_to_symmetric_grad(beta) * dr.elu_grad(eta))
        else:
            v, g = dr.anchor_penalty(eta, cfg.lambda_anchor, cfg.penalty_form)
            total += v
            grads.append(g)
    return total, grads


def arch_gradient(state: TrainState, x, y):
    """Monte-Carlo validation loss and pathwise gradient w.r.t. each eta."""
    net, cfg = state.net, state.config
    etas = state.etas()
    betas = [dr.beta_from_eta(eta) for eta in etas]
    g_etas = [np.zeros_like(eta) for eta in etas]
    losses = []
    for _ in range(cfg.mc_samples):
        thetas = _sample_thetas(state)
        masks = sp.draw_masks(net, state.rngs["subsets"])
        loss, _, cache = sp.supernet_forward(net, x, y, thetas, masks)
        _, g_thetas = sp.supernet_backward(net, cache)
        for e in range(len(etas)):
            g_etas[e] += dr.grad_eta_from_grad_theta(g_thetas[e], thetas[e], betas[e], etas[e]) / cfg.mc_samples
        losses.append(loss)
    return float(np.mean(losses)), g_etas


def step_architecture(state: TrainState, x, y) -> float:
    """One adaptive-moment step on eta; network weights are left untouched."""
    cfg = state.config
    loss, g_etas = arch_gradient(state, x, y)
    _, g_pen = penalty(state)
    for e, (g, gp) in enumerate(zip(g_etas, g_pen)):
        state.arch.grads[f"eta.{e}"] = g + gp
    nn.adam_step(state.arch, cfg.arch_lr, cfg.arch_b1, cfg.arch_b2)
    return loss


def _batches(idx, batch_size):
    n = max(1, len(idx) // batch_size)
    return [idx[i * batch_size:(i + 1) * batch_size] for i in range(n)]


def run_epoch(state: TrainState, dataset: ToyDataset) -> dict:
    """All weight steps for the epoch, then the same number of architecture steps."""
    cfg = state.config
    rng = state.rngs["data"]
    w_batches = _batches(rng.permutation(dataset.weight_idx), cfg.batch_size)
    a_batches = _batches(rng.permutation(dataset.arch_idx), cfg.batch_size)
    lr = nn.cosine_lr(state.epoch, cfg.total_epochs, cfg.w_lr)
    X, Y = dataset.features, dataset.labels
    train = [step_weights(state, X[b], Y[b], lr) for b in w_batches]
    val = [step_architecture(state, X[a_batches[i % len(a_batches)]], Y[a_batches[i % len(a_batches)]])
           for i in range(len(w_batches))]
    pen, _ = penalty(state)
    rec = {
        "type": "epoch", "epoch": state.epoch, "stage": state.stage, "k": state.net.k,
        "w_lr": lr, "train_loss": float(np.mean(train)), "val_loss": float(np.mean(val)),
        "anchor_penalty": pen,
        "eta": [eta.tolist() for eta in state.etas()],
        "beta": [b.tolist() for b in state.betas()],
        "edge_ops": [list(o) for o in state.net.edge_ops],
        "genotype": list(state.genotype().choices),
    }
    if not (np.isfinite(rec["train_loss"]) and np.isfinite(rec["val_loss"])):
        raise NumericError(f"non-finite loss at epoch {state.epoch}")
    return rec


def run_search(config: SearchConfig, spec: sp.CellSpec, dataset: ToyDataset, state: TrainState | None = None,
               log_: TrajectoryLog | None = None, epoch_hooks=(), stage_hook=None):
    """Run (or resume) the staged search.

    ``epoch_hooks`` are called as ``hook(state, record)`` after every epoch and
    may add keys to the record (diagnostics); ``stage_hook(state)`` runs after
    the last epoch of each stage, before the transition.
    """
    if len(dataset.weight_idx) < config.batch_size or len(dataset.arch_idx) < config.batch_size:
        raise ConfigError("dataset too small for the batch size")
    state = state or init_state(config, spec, dataset)
    config = state.config
    log_ = log_ if log_ is not None else TrajectoryLog()
    ends = np.cumsum([s.epochs for s in config.stages])
    while state.stage < len(config.stages):
        if state.epoch >= ends[state.stage]:
            if stage_hook is not None:
                stage_hook(state)
            if state.stage + 1 < len(config.stages):
                rep = stage_transition(state, config.stages[state.stage + 1], state.rngs["widen"])
                log.info("stage %d -> %d: %s", state.stage, state.stage + 1, rep["registry"])
                log_.append(rep)
            state.stage += 1
            continue
        rec = run_epoch(state, dataset)
        state.epoch += 1
        for hook in epoch_hooks:
            hook(state, rec)
        log_.append(rec)
        log.debug("epoch %d train %.4f val %.4f", rec["epoch"], rec["train_loss"], rec["val_loss"])
    return state.genotype(), log_, state


# checkpoints -----------------------------------------------------------------------

def _store_to_dict(store: nn.ParamStore) -> dict:
    return {k: {"value": store.params[k].tolist(), "shape": list(store.params[k].shape),
                "mom": store.state[k]["mom"].tolist(), "m": store.state[k]["m"].tolist(),
                "v": store.state[k]["v"].tolist(), "steps": store.steps[k]}
            for k in store.params}


def _store_from_dict(d: dict) -> nn.ParamStore:
    store = nn.ParamStore()
    for k, v in d.items():
        shape = tuple(v["shape"])
        store.add(k, np.array(v["value"], dtype=np.float64).reshape(shape))
        for key in ("mom", "m", "v"):
            store.state[k][key] = np.array(v[key], dtype=np.float64).reshape(shape)
        store.steps[k] = v["steps"]
    return store


def state_to_dict(state: TrainState) -> dict:
    net = state.net
    return {
        "format": CHECKPOINT_FORMAT, "code_version": __version__,
        "config": state.config.to_dict(), "epoch": state.epoch, "stage": state.stage,
        "net": {"space": net.spec.name, "in_dim": net.in_dim, "n_classes": net.n_classes,
                "channels": net.channels, "n_cells": net.n_cells, "k": net.k,
                "edge_ops": net.edge_ops, "subset_policy": net.subset_policy,
                "params": _store_to_dict(net.params)},
        "arch": _store_to_dict(state.arch),
        "rngs": {k: get_state(g) for k, g in state.rngs.items()},
    }


def state_from_dict(d: dict) -> TrainState:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {d.get('format')!r}")
    n = d["net"]
    net = sp.SuperNet(sp.get_space(n["space"]), n["in_dim"], n["n_classes"], n["channels"], n["n_cells"],
                      n["k"], [list(o) for o in n["edge_ops"]], _store_from_dict(n["params"]),
                      n["subset_policy"])
    return TrainState(SearchConfig.from_dict(d["config"]), net, _store_from_dict(d["arch"]),
                      {k: from_state(s) for k, s in d["rngs"].items()}, d["epoch"], d["stage"])


def save_checkpoint(state: TrainState, path):
    with open(path, "w") as f:
        json.dump(state_to_dict(state), f)


def load_checkpoint(path) -> TrainState:
    with open(path) as f:
        return state_from_dict(json.load(f))


def with_overrides(config: SearchConfig, **kw) -> SearchConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
