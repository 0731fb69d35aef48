"""Training loop, schedule and inference for the UNet.

Modes select the head and objective:

============  ==========  ================================================
mode          head        objective
============  ==========  ================================================
dice-only     logistic    Dice on the predicted probabilities
sdm-only      tanh        product + L1 on the predicted SDM
l1-joint      tanh        Dice(Heaviside(SDM)) + lambda * L1
sdm-joint     tanh        Dice(Heaviside(SDM)) + lambda * (product + L1)
============  ==========  ================================================

Batches hold one case. Each epoch visits every case once in an order drawn
from the run's seeded generator.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .heaviside import HeavisideConfig, seg_from_sdm, seg_from_sdm_grad
from .losses import LossConfig, dice_loss, l1_loss, one_hot_channels, product_loss
from .nn.tensor import Tensor, no_grad
from .nn.unet import NetworkConfig, UNet
from .volume import LabelVolume, ScalarVolume, SdmVolume

__all__ = [
    "MODES",
    "TrainConfig",
    "TrainCase",
    "EpochRecord",
    "TrainLog",
    "AdamState",
    "lr_at",
    "adam_step",
    "objective",
    "train",
    "infer",
    "labels_from_sdm",
    "labels_from_probabilities",
]

MODES = ("dice-only", "sdm-only", "l1-joint", "sdm-joint")
LOG_COLUMNS = ("epoch", "lr", "dice_loss", "l1_loss", "product_loss", "total")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "sdm-joint"
    lr0: float = 5e-4
    decay: float = 0.8
    decay_every: int = 25
    epochs: int = 50
    batch_size: int = 1
    lam: float = 10.0
    k: float = 1500.0
    dice_epsilon: float = 1e-5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    snapshot_every: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not self.lr0 > 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise ConfigurationError("only batch size 1 is supported")
        if self.decay_every < 1 or not self.decay > 0:
            raise ConfigurationError("decay schedule must have decay > 0 and decay_every >= 1")

    @property
    def head(self) -> str:
        return "seg-sigmoid" if self.mode == "dice-only" else "sdm-tanh"

    def loss_config(self) -> LossConfig:
        return LossConfig(epsilon=self.dice_epsilon, lam=self.lam)


class TrainCase(NamedTuple):
    image: ScalarVolume
    labels: LabelVolume
    gt_sdm: SdmVolume


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    dice_loss: Optional[float]
    l1_loss: Optional[float]
    product_loss: Optional[float]
    total: float
    wall_time: float = 0.0

    def values(self) -> tuple:
        """Everything except wall time, for run-to-run comparison."""
        return (self.epoch, self.lr, self.dice_loss, self.l1_loss, self.product_loss, self.total)


@dataclass
class TrainLog:
    header: dict = field(default_factory=dict)
    records: list[EpochRecord] = field(default_factory=list)
    snapshots: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.header.items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + ["" if v is None else repr(float(v)) for v in r.values()[1:]])
        return buf.getvalue()


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` (arrays or tensors)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        m = state.m.setdefault(name, np.zeros_like(arr))
        v = state.v.setdefault(name, np.zeros_like(arr))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        arr -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)).astype(arr.dtype)
    return state


def objective(mode: str, pred: np.ndarray, gt_sdm: np.ndarray, gt_onehot: np.ndarray,
              hcfg: HeavisideConfig, lcfg: LossConfig):
    """Loss components, total and ``d total / d pred`` for one case.

    ``pred`` is the head output without the batch axis, ``(N, x, y, z)``.
    Components a mode does not use come back as ``None``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    parts = {"dice_loss": None, "l1_loss": None, "product_loss": None}
    if mode == "dice-only":
        total, grad = dice_loss(pred, gt_onehot, lcfg)
        parts["dice_loss"] = total
        return parts, total, grad
    grad = np.zeros_like(pred)
    total = 0.0
    weight = 1.0
    if mode in ("l1-joint", "sdm-joint"):
        weight = lcfg.lam
        seg = seg_from_sdm(pred, hcfg)
        dval, dgrad = dice_loss(seg, gt_onehot, lcfg)
        parts["dice_loss"] = dval
        total += dval
        grad += dgrad * seg_from_sdm_grad(pred, hcfg)
    lval, lgrad = l1_loss(pred, gt_sdm, lcfg)
    parts["l1_loss"] = lval
    reg, rgrad = lval, lgrad
    if mode in ("sdm-only", "sdm-joint"):
        pval, pgrad = product_loss(pred, gt_sdm, lcfg)
        parts["product_loss"] = pval
        reg, rgrad = reg + pval, rgrad + pgrad
    total += weight * reg
    grad += weight * rgrad
    return parts, total, grad


def _input(image: ScalarVolume, dtype) -> np.ndarray:
    return np.asarray(image.data, dtype=dtype)[None, None]


def _check_cases(cases: Sequence[TrainCase], net_cfg: NetworkConfig):
    if not cases:
        raise DomainError("training needs at least one case")
    dims = cases[0].image.dims
    for i, c in enumerate(cases):
        if c.image.dims != dims or c.labels.dims != dims or c.gt_sdm.dims != dims:
            raise DomainError(f"case {i}: image, labels and SDM must share dims {dims}")
        if c.gt_sdm.num_classes != net_cfg.num_classes:
            raise DomainError(f"case {i}: SDM has {c.gt_sdm.num_classes} classes, network {net_cfg.num_classes}")
        if not c.gt_sdm.normalized:
            raise DomainError(f"case {i}: ground-truth SDM must be normalized")
    net_cfg.check_input(dims)


def train(cases: Sequence[TrainCase], net_cfg: NetworkConfig, cfg: TrainConfig, progress=None):
    """Fit a fresh network; returns ``(params, log)``.

    The network is initialized from ``cfg.seed`` and its head set by the mode,
    so ``(cases, net_cfg, cfg)`` determine the run. ``progress`` is called
    with each :class:`EpochRecord` if given.
    """
    cases = list(cases)
    net_cfg = net_cfg.replace(head=cfg.head, seed=cfg.seed)
    _check_cases(cases, net_cfg)
    net = UNet(net_cfg)
    dtype = np.dtype(net_cfg.dtype)
    hcfg = HeavisideConfig(cfg.k)
    lcfg = cfg.loss_config()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(7,))))
    inputs = [_input(c.image, dtype) for c in cases]
    sdms = [np.asarray(c.gt_sdm.data) for c in cases]
    onehots = [one_hot_channels(c.labels.data, net_cfg.num_classes) for c in cases]

    log = TrainLog(header={
        "mode": cfg.mode, "seed": cfg.seed, "lr0": cfg.lr0, "decay": cfg.decay,
        "decay_every": cfg.decay_every, "lambda": cfg.lam, "k": cfg.k,
        "adam": f"beta1={cfg.beta1} beta2={cfg.beta2} eps={cfg.adam_eps}",
        "levels": net_cfg.levels, "init_channels": net_cfg.init_channels,
    })
    state = AdamState()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        if cfg.snapshot_every and epoch % cfg.snapshot_every == 0:
            log.snapshots[epoch] = net.snapshot()
        lr = lr_at(epoch, cfg)
        sums: dict[str, float] = {}
        for i in rng.permutation(len(cases)):
            out = net(Tensor(inputs[i]))
            parts, total, grad = objective(cfg.mode, out.data[0], sdms[i], onehots[i], hcfg, lcfg)
            for p in net.params.values():
                p.zero_grad()
            out.backward(grad[None].astype(dtype))
            adam_step(net.params, {k: p.grad for k, p in net.params.items()}, state, lr, cfg)
            for key, val in list(parts.items()) + [("total", total)]:
                if val is not None:
                    sums[key] = sums.get(key, 0.0) + val
        n = len(cases)
        rec = EpochRecord(
            epoch=epoch,
            lr=lr,
            dice_loss=sums["dice_loss"] / n if "dice_loss" in sums else None,
            l1_loss=sums["l1_loss"] / n if "l1_loss" in sums else None,
            product_loss=sums["product_loss"] / n if "product_loss" in sums else None,
            total=sums["total"] / n,
            wall_time=time.perf_counter() - start,
        )
        log.records.append(rec)
        if progress is not None:
            progress(rec)
    return net.params, log


def evaluate_loss(case: TrainCase, params, net_cfg: NetworkConfig, cfg: TrainConfig):
    """Recompute ``(parts, total)`` for one case under fixed parameters."""
    net_cfg = net_cfg.replace(head=cfg.head)
    net = UNet(net_cfg)
    net.load({k: getattr(v, "data", v) for k, v in params.items()})
    with no_grad():
        out = net(Tensor(_input(case.image, np.dtype(net_cfg.dtype))))
    onehot = one_hot_channels(case.labels.data, net_cfg.num_classes)
    parts, total, _ = objective(cfg.mode, out.data[0], case.gt_sdm.data, onehot,
                                HeavisideConfig(cfg.k), cfg.loss_config())
    return parts, total


def labels_from_sdm(sdm: np.ndarray) -> np.ndarray:
    """Label grid from ``(N, x, y, z)`` SDMs: the most negative class wins, 0 if none."""
    sdm = np.asarray(sdm)
    if sdm.ndim == 3:
        sdm = sdm[None]
    best = np.argmin(sdm, axis=0)
    inside = np.take_along_axis(sdm, best[None], axis=0)[0] < 0
    return np.where(inside, best + 1, 0).astype(np.uint8)


def labels_from_probabilities(prob: np.ndarray) -> np.ndarray:
    prob = np.asarray(prob)
    if prob.ndim == 3:
        prob = prob[None]
    best = np.argmax(prob, axis=0)
    organ = np.take_along_axis(prob, best[None], axis=0)[0] > 0.5
    return np.where(organ, best + 1, 0).astype(np.uint8)


def infer(image: ScalarVolume, params, net_cfg: NetworkConfig, k: float = 1500.0):
    """Run the network and turn its head into labels.

    SDM heads return ``(SdmVolume, labels)`` using the exact step (which
    agrees with thresholding the smooth step of steepness ``k`` at 0.5);
    logistic heads return ``(list of probability ScalarVolumes, labels)``.
    """
    HeavisideConfig(k)
    net = UNet(net_cfg)
    net.load({name: getattr(v, "data", v) for name, v in params.items()})
    with no_grad():
        out = net(Tensor(_input(image, np.dtype(net_cfg.dtype)))).data[0].astype(np.float64)
    if net_cfg.head == "sdm-tanh":
        labels = labels_from_sdm(out)
        head = SdmVolume(np.clip(out, -1.0, 1.0), image.spacing, normalized=True)
    else:
        labels = labels_from_probabilities(out)
        head = [ScalarVolume(c, image.spacing) for c in out]
    return head, LabelVolume(labels, image.spacing, net_cfg.num_classes)
