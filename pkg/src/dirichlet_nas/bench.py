"""Toy datasets and the exhaustive genotype -> accuracy oracle for small spaces."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from . import space as sp
from .errors import ConfigError, ContractError
from .rng import stream

log = logging.getLogger(__name__)

ENUMERATION_CAP = 4096
DATASET_KINDS = ("moons", "blobs", "spirals")


@dataclass
class ToyDataset:
    kind: str
    features: np.ndarray
    labels: np.ndarray
    weight_idx: np.ndarray
    arch_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int

    @property
    def in_dim(self) -> int:
        return self.features.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.labels, self.weight_idx, self.arch_idx, self.test_idx):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _moons(t, labels):
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return np.where(labels[:, None] == 0, outer, inner)


SPIRAL_TURNS = 1.25


def _spirals(t, labels):
    # two interleaved arms, radius grows with t
    r = 0.2 + t
    ang = 2.0 * np.pi * SPIRAL_TURNS * t + np.pi * labels
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


BLOB_CENTERS = np.array([[2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0]])


def gen_dataset(kind: str, n: int, noise: float, seed: int) -> ToyDataset:
    """Seeded 2-D classification set with a 40/40/20 weight/arch/test split."""
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if n < 64:
        raise ConfigError("need at least 64 samples")
    rng = stream(seed, "dataset", kind)
    n_classes = 4 if kind == "blobs" else 2
    labels = np.arange(n) % n_classes
    if kind == "moons":
        t = rng.uniform(0.0, np.pi, n)
        x = _moons(t, labels)
    elif kind == "spirals":
        t = rng.uniform(0.0, 1.0, n)
        x = _spirals(t, labels)
    else:
        x = BLOB_CENTERS[labels].copy()
    x = x + noise * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    x, labels = x[perm], labels[perm]
    n_w = int(0.4 * n)
    n_a = int(0.4 * n)
    idx = np.arange(n)
    return ToyDataset(kind, x, labels.astype(np.int64), idx[:n_w], idx[n_w:n_w + n_a],
                      idx[n_w + n_a:], n_classes)


def linear_probe_accuracy(ds: ToyDataset, steps: int = 500, lr: float = 0.5, seed: int = 0) -> float:
    """Softmax regression on raw features, trained on weight+arch halves."""
    train = np.concatenate([ds.weight_idx, ds.arch_idx])
    x, y = ds.features[train], ds.labels[train]
    rng = stream(seed, "probe")
    W = 0.01 * rng.standard_normal((ds.n_classes, ds.in_dim))
    b = np.zeros(ds.n_classes)
    for t in range(steps):
        logits, cache = nn.affine_forward(x, W, b)
        _, g = nn.softmax_xent(logits, y)
        _, gW, gb = nn.affine_backward(g, cache)
        W -= lr * gW
        b -= lr * gb
    pred = (ds.features[ds.test_idx] @ W.T + b).argmax(axis=1)
    return float(np.mean(pred == ds.labels[ds.test_idx]))


@dataclass
class DiscreteTrainConfig:
    channels: int = 16
    n_cells: int = 2
    budget_steps: int = 500
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 3e-4
    init_scale: float = 1.0
    grad_clip: float = 5.0


def train_discrete(genotype: sp.Genotype, dataset: ToyDataset, budget_steps: int | None = None,
                   seed: int = 0, cfg: DiscreteTrainConfig | None = None, spec: sp.CellSpec | None = None):
    """Train the stand-alone network of ``genotype`` and return test accuracy."""
    cfg = cfg or DiscreteTrainConfig()
    steps = cfg.budget_steps if budget_steps is None else budget_steps
    spec = spec or sp.get_space(genotype.space)
    key = genotype.key()
    net = sp.build_discrete(genotype, spec, cfg.channels, cfg.n_cells, stream(seed, "init", key),
                            dataset.in_dim, dataset.n_classes, cfg.init_scale)
    data_rng = stream(seed, "batches", key)
    train = np.concatenate([dataset.weight_idx, dataset.arch_idx])
    thetas = sp.unit_thetas(net)
    names = list(net.params.params)
    for t in range(steps):
        batch = data_rng.choice(train, size=min(cfg.batch_size, len(train)), replace=False)
        _, _, cache = sp.supernet_forward(net, dataset.features[batch], dataset.labels[batch], thetas)
        grads, _ = sp.supernet_backward(net, cache)
        for k in names:
            net.params.grads[k] = grads.get(k, 0.0 * net.params[k])
        nn.clip_grad_norm(net.params, cfg.grad_clip)
        nn.sgd_momentum_step(net.params, nn.cosine_lr(t, steps, cfg.lr), cfg.momentum, cfg.weight_decay)
    pred = sp.predict(net, dataset.features[dataset.test_idx], thetas)
    return float(np.mean(pred == dataset.labels[dataset.test_idx]))


def enumerate_space(spec: sp.CellSpec, cap: int = ENUMERATION_CAP) -> list[sp.Genotype]:
    total = spec.n_ops ** spec.n_edges
    if total > cap:
        raise ConfigError(f"space has {total} genotypes, above the enumeration cap {cap}")
    return [sp.Genotype(spec.name, spec.op_registry, c)
            for c in itertools.product(range(spec.n_ops), repeat=spec.n_edges)]


@dataclass
class OracleTable:
    space: str
    accuracies: dict
    metadata: dict = field(default_factory=dict)

    def metadata_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.metadata, sort_keys=True).encode()).hexdigest()

    def __getitem__(self, genotype: sp.Genotype) -> float:
        try:
            return self.accuracies[genotype.key()]
        except KeyError:
            raise ContractError(f"genotype {genotype.key()} not in oracle table") from None

    def best(self) -> sp.Genotype:
        spec = sp.get_space(self.space)
        key = max(self.accuracies, key=lambda k: (self.accuracies[k], [-int(c) for c in k.split("-")]))
        return sp.Genotype(spec.name, spec.op_registry, tuple(int(c) for c in key.split("-")))

    def to_dict(self) -> dict:
        return {"space": self.space, "metadata": self.metadata, "metadata_hash": self.metadata_hash(),
                "accuracies": self.accuracies}

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path, dataset: ToyDataset | None = None) -> "OracleTable":
        with open(path) as f:
            d = json.load(f)
        table = cls(d["space"], d["accuracies"], d["metadata"])
        if table.metadata_hash() != d.get("metadata_hash"):
            raise ContractError("oracle metadata hash mismatch")
        if dataset is not None and table.metadata.get("dataset_hash") != dataset.digest():
            raise ContractError("oracle table was built on a different dataset")
        return table


def _train_job(args):
    genotype, dataset, seeds, cfg, spec = args
    return genotype.key(), [train_discrete(genotype, dataset, seed=s, cfg=cfg, spec=spec) for s in seeds]


def build_oracle(spec: sp.CellSpec, dataset: ToyDataset, cfg: DiscreteTrainConfig | None = None,
                 r_seeds: int = 3, workers: int = 1, base_seed: int = 0) -> OracleTable:
    """Train every genotype ``r_seeds`` times; store the mean test accuracy.

    Each run's randomness is keyed by (genotype, seed), so the table does not
    depend on the worker count or scheduling.
    """
    cfg = cfg or DiscreteTrainConfig()
    genotypes = enumerate_space(spec)
    seeds = [base_seed + i for i in range(r_seeds)]
    jobs = [(g, dataset, seeds, cfg, spec) for g in genotypes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_job, jobs, chunksize=4))
    else:
        results = [_train_job(j) for j in jobs]
    acc = {k: float(np.mean(v)) for k, v in results}
    meta = {"budget": cfg.budget_steps, "seeds": seeds, "dataset_hash": dataset.digest(),
            "dataset_kind": dataset.kind, "train_config": asdict(cfg)}
    return OracleTable(spec.name, acc, meta)


def rank_of(genotype: sp.Genotype, table: OracleTable) -> float:
    """Fraction of genotypes with strictly higher accuracy; 0 is best."""
    acc = table[genotype]
    vals = np.array(list(table.accuracies.values()))
    return float(np.sum(vals > acc) / len(vals))
