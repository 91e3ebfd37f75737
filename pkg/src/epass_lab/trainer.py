"""Joint training loop: supervised + pseudo-label + contrastive objectives
with ensemble projector embeddings, memory bank and EMA teacher."""
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import data as data_mod
from . import kernels
from . import losses
from . import model
from . import numcore as nc
from .augment import AugmentPolicy
from .ensemble import EnsembleStrategy, combine
from .errors import (CorruptCheckpoint, EpassError, InvalidSpec, ShapeMismatch,
                     TrainingAborted)
from .evalcalib import PredictionLog
from .membank import MemoryBank


ALGORITHMS = ("simmatch", "comatch", "supervised")


@dataclass
class RunConfig:
    algorithm: str = "simmatch"
    num_projectors: int = 3
    strategy: str = "mean"
    epass: bool = True
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    steps: int = 2000
    batch_size: int = 16
    mu: int = 4
    tau: float = 0.95
    tau_c: float = 0.8
    T: float = 0.1
    lambda_u: float = 1.0
    lambda_c: float = 1.0
    bank_momentum: float = 0.7
    ema_momentum: float = 0.999
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0
    pseudo_label_source: str = "live"
    hard_labels: bool = True
    da_window: int = 32
    queue_size: int = 256

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidSpec(f"unknown algorithm {self.algorithm!r}")
        self.strategy = EnsembleStrategy(self.strategy).value
        if self.pseudo_label_source not in ("live", "ema"):
            raise InvalidSpec("pseudo_label_source must be 'live' or 'ema'")
        if not self.epass and self.num_projectors != 1:
            raise InvalidSpec("the single-projector baseline needs num_projectors = 1")
        for name in ("num_projectors", "steps", "batch_size", "mu", "da_window", "queue_size"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        for name in ("bank_momentum", "ema_momentum"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise InvalidSpec("lr must be positive; momentum and weight_decay nonnegative")
        self.loss_weights()

    def loss_weights(self):
        try:
            return losses.LossWeights(self.lambda_u, self.lambda_c, self.tau, self.tau_c, self.T)
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class StepRecord:
    step: int
    ls: float
    lu: float
    lc: float
    total: float
    lr: float
    quantity: float
    quality: float = None
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self, with_time=False):
        d = asdict(self)
        if not with_time:
            d.pop("wall_time")
        return json.dumps(d)


def cosine_lr(k, total_steps, eta0):
    """``eta0 * cos(7 pi k / (16 K))``."""
    if not 0 <= k <= total_steps:
        raise ValueError(f"step {k} outside [0, {total_steps}]")
    return eta0 * math.cos(7.0 * math.pi * k / (16.0 * total_steps))


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=0.0):
    """Heavy-ball SGD with coupled L2 decay, in place.

    ``v <- momentum * v + grad + weight_decay * p`` then ``p <- p - lr * v``.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        kernels.sgd_update_(p, velocity[name], g, lr, momentum, weight_decay)
    return params


def pseudo_stats(p_hat_w, mask, true_labels):
    """(fraction of rows passing the threshold, accuracy among those rows)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0.0, None
    quantity = float(mask.mean())
    if not mask.any():
        return quantity, None
    pred = np.asarray(p_hat_w).argmax(axis=1)
    quality = float((pred[mask] == np.asarray(true_labels)[mask]).mean())
    return quantity, quality


def _flat(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(len(x), -1)


class Trainer:
    """Owns model, EMA copy, optimizer state, memory bank and DA state."""

    def __init__(self, spec, config, labeled, unlabeled, policy=None):
        if spec.num_projectors != config.num_projectors:
            raise InvalidSpec("network and run config disagree on the projector count")
        self.spec = spec
        self.config = config
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.policy = policy or AugmentPolicy(kind=labeled.kind)
        self.weights = config.loss_weights()
        self.state = model.init(spec, config.seed)
        self.ema = model.EmaState.from_model(self.state, config.ema_momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in self.state.params.items()}
        self.da = losses.DaState(spec.num_classes, config.da_window)
        self.bank = self._init_bank()
        self.step = 0

    # --- embeddings -------------------------------------------------------------

    def embed(self, params, feats):
        """Normalized embedding from encoder features (ensemble or single head)."""
        if not self.config.epass:
            return nc.l2_normalize(model.project(params, feats, 0))
        outs = [model.project(params, feats, k) for k in range(self.spec.num_projectors)]
        return combine(outs, self.config.strategy)

    def _embed_inputs(self, params, x):
        return nc.value(self.embed(params, model.encode(params, self.spec, _flat(x))))

    def _init_bank(self):
        params = self.state.params
        if self.config.algorithm == "supervised":
            return None
        if self.config.algorithm == "simmatch":
            z = self._embed_inputs(params, self.labeled.inputs)
            return MemoryBank(z, np.arange(len(self.labeled)), self.config.bank_momentum,
                              labels=self.labeled.one_hot(), mode="momentum")
        n = min(self.config.queue_size, len(self.unlabeled))
        z = self._embed_inputs(params, self.unlabeled.inputs[:n])
        return MemoryBank(z, np.arange(n), mode="fifo")

    # --- one optimization step ----------------------------------------------------

    def batches(self, start=None):
        return data_mod.batches(self.labeled, self.unlabeled, self.config.batch_size,
                                self.config.mu, self.config.seed, self.policy,
                                start=self.step if start is None else start,
                                two_strong=self.config.algorithm == "comatch")

    def teacher_params(self):
        return self.state.params if self.config.pseudo_label_source == "live" else self.ema.params

    def targets(self, batch):
        """Weak-view quantities that act as constants in the loss."""
        teacher = self.teacher_params()
        feats = model.encode(teacher, self.spec, _flat(batch.u_weak))
        p_w = nc.softmax_t(model.logits(teacher, feats), 1.0)
        p_hat = losses.distribution_align(self.da, p_w)
        z_w = nc.value(self.embed(teacher, feats))
        q_w = self.bank.similarity_dist(z_w, self.config.T) if self.config.algorithm == "simmatch" else None
        return p_hat, z_w, q_w

    def loss_terms(self, params, batch, p_hat, q_w):
        """Differentiable (ls, lu, lc, total, mask, labeled embedding)."""
        cfg = self.config
        ls, feats_l = self.supervised_terms(params, batch)

        feats_s = model.encode(params, self.spec, _flat(batch.u_strong))
        p_s = nc.softmax_t(model.logits(params, feats_s), 1.0)
        lu, mask = losses.unsupervised_loss(p_hat, p_s, cfg.tau, cfg.hard_labels)
        z_s = self.embed(params, feats_s)
        if cfg.algorithm == "simmatch":
            q_s = self.bank.similarity_dist(z_s, cfg.T)
            lc = losses.simmatch_contrastive(q_w, q_s)
        else:
            feats_s2 = model.encode(params, self.spec, _flat(batch.u_strong2))
            z_s2 = self.embed(params, feats_s2)
            Wq, Wz = losses.comatch_graphs(p_hat, z_s, z_s2, cfg.tau_c, cfg.T)
            lc = losses.comatch_contrastive(Wq, Wz)
        total = losses.total_loss(ls, lu, lc, self.weights)
        return ls, lu, lc, total, mask, feats_l

    def supervised_terms(self, params, batch):
        y = np.zeros((len(batch.y), self.spec.num_classes))
        y[np.arange(len(batch.y)), batch.y] = 1.0
        feats_l = model.encode(params, self.spec, _flat(batch.x))
        p_l = nc.softmax_t(model.logits(params, feats_l), 1.0)
        return losses.supervised_loss(y, p_l), feats_l

    def train_step(self, batch):
        t0 = time.perf_counter()
        cfg = self.config
        if cfg.algorithm == "supervised":
            return self._supervised_step(batch, t0)
        try:
            p_hat, z_w, q_w = self.targets(batch)
            with nc.Tape() as tape:
                nodes = {k: tape.watch(v, copy=False) for k, v in self.state.params.items()}
                ls, lu, lc, total, mask, feats_l = self.loss_terms(nodes, batch, p_hat, q_w)
                tape.backward(total)
            grads = {k: n.grad if n.grad is not None else np.zeros_like(n.value)
                     for k, n in nodes.items()}
            # bank entries use the pre-update parameters of this step
            if cfg.algorithm == "simmatch":
                z_l = nc.value(self.embed(self.state.params, nc.value(feats_l)))
            lr = cosine_lr(self.step, cfg.steps, cfg.lr)
            sgd_step(self.state.params, grads, self.velocity, lr, cfg.momentum, cfg.weight_decay)
            if cfg.algorithm == "simmatch":
                self.bank.update_many(batch.labeled_idx, z_l)
            else:
                self.bank.enqueue(batch.unlabeled_idx, z_w)
            model.ema_update(self.ema, self.state)
        except (EpassError, FloatingPointError) as exc:
            raise TrainingAborted(self.step, exc) from exc
        quantity, quality = pseudo_stats(p_hat, mask, batch.u_labels)
        rec = StepRecord(self.step, float(ls), float(lu), float(lc), float(total), lr,
                         quantity, quality, time.perf_counter() - t0)
        self.step += 1
        return rec

    def _supervised_step(self, batch, t0):
        """Labeled-only step: the baseline that never looks at unlabeled data."""
        cfg = self.config
        try:
            with nc.Tape() as tape:
                nodes = {k: tape.watch(v, copy=False) for k, v in self.state.params.items()}
                ls, _ = self.supervised_terms(nodes, batch)
                tape.backward(ls)
            grads = {k: n.grad if n.grad is not None else np.zeros_like(n.value)
                     for k, n in nodes.items()}
            lr = cosine_lr(self.step, cfg.steps, cfg.lr)
            sgd_step(self.state.params, grads, self.velocity, lr, cfg.momentum, cfg.weight_decay)
            model.ema_update(self.ema, self.state)
        except (EpassError, FloatingPointError) as exc:
            raise TrainingAborted(self.step, exc) from exc
        rec = StepRecord(self.step, float(ls), 0.0, 0.0, float(ls), lr, 0.0, None,
                         time.perf_counter() - t0)
        self.step += 1
        return rec

    def run(self, steps=None, on_record=None):
        """Train up to ``steps`` total steps (default: the configured budget)."""
        steps = self.config.steps if steps is None else steps
        records = []
        if self.step >= steps:
            return records
        for batch in self.batches():
            rec = self.train_step(batch)
            records.append(rec)
            if on_record is not None:
                on_record(rec, self)
            if self.step >= steps:
                break
        return records

    # --- evaluation ---------------------------------------------------------------

    def predict(self, dataset, use_ema=True):
        params = self.ema.params if use_ema else self.state.params
        probs = model.classify(model.ModelState(self.spec, params, self.config.seed),
                               _flat(dataset.inputs))
        return PredictionLog(probs, dataset.labels)

    def accuracy(self, dataset, use_ema=True):
        return self.predict(dataset, use_ema).accuracy()

    # --- checkpoints --------------------------------------------------------------

    def save(self, path, extra=None):
        arrays = {}
        for prefix, group in (("params", self.state.params), ("ema", self.ema.params),
                              ("velocity", self.velocity)):
            for k, v in group.items():
                arrays[f"{prefix}/{k}"] = v
        bank = self.bank.state() if self.bank is not None else None
        if bank is not None:
            arrays["bank/slots"] = bank["slots"]
            arrays["bank/ids"] = bank["ids"]
            if bank["labels"] is not None:
                arrays["bank/labels"] = bank["labels"]
        hist = list(self.da.history)
        arrays["da/history"] = (np.stack(hist) if hist
                                else np.zeros((0, self.spec.num_classes)))
        arrays["da/target"] = self.da.target
        meta = {
            "format": "epass-lab-checkpoint/1",
            "spec": self.spec.to_dict(),
            "config": asdict(self.config),
            "step": self.step,
            "seed": self.state.seed,
            "projector_seeds": self.state.projector_seeds,
            "bank": (None if bank is None else
                     {k: bank[k] for k in ("momentum", "mode", "renormalize", "head")}),
            "extra": extra or {},
        }
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, labeled, unlabeled, policy=None):
        meta, arrays = read_checkpoint(path)
        spec = model.NetworkSpec(**meta["spec"])
        config = RunConfig(**meta["config"])
        tr = cls.__new__(cls)
        tr.spec, tr.config = spec, config
        tr.labeled, tr.unlabeled = labeled, unlabeled
        tr.policy = policy or AugmentPolicy(kind=labeled.kind)
        tr.weights = config.loss_weights()
        params = _group(arrays, "params")
        tr.state = model.ModelState(spec, params, meta["seed"], meta["projector_seeds"])
        tr.ema = model.EmaState(_group(arrays, "ema"), config.ema_momentum)
        tr.velocity = _group(arrays, "velocity")
        tr.da = losses.DaState(spec.num_classes, config.da_window, arrays["da/target"])
        for row in arrays["da/history"]:
            tr.da.history.append(row.copy())
        bmeta = meta["bank"]
        tr.bank = None if bmeta is None else MemoryBank.from_state({
            "slots": arrays["bank/slots"], "ids": arrays["bank/ids"],
            "labels": arrays.get("bank/labels"), **bmeta})
        tr.step = meta["step"]
        return tr


def _group(arrays, prefix):
    return {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + "/")}


def read_checkpoint(path):
    """Return ``(meta, arrays)``; raises :class:`CorruptCheckpoint` on any defect."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        meta = json.loads(str(arrays.pop("meta")))
        if meta.get("format") != "epass-lab-checkpoint/1":
            raise ValueError("unknown checkpoint format")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    for k, v in arrays.items():
        if v.dtype == np.float64:
            arrays[k] = np.array(v)  # writable copies
    return meta, arrays
