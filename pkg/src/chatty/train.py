"""Minimax training via gradient reversal, metric capture and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from . import losses as L
from .data import BatchPair, BatchSampler, DomainPair
from .errors import NonFiniteLossError, ParameterError
from .model import ChattyModel, SINGLE, bind, forward, init, predict

log = logging.getLogger(__name__)

# lambda2 = LAMBDA2_K / c reproduces 0.0016 at 31 classes
LAMBDA2_K = 0.0496
METRIC_FIELDS = ("iter", "l_c", "l_adv", "l_tl", "l_mcc", "l_total", "src_acc", "tgt_acc")
TL_VARIANTS = ("plain", "cosine", "embedded")
MINIMAX_MODES = ("reversal", "alternating")


def default_lambda2(c: int) -> float:
    """Transport-loss weight inversely proportional to the class count.

    A heuristic: ``LAMBDA2_K / c``. It matches the 31-class setting but not the
    65-class one (0.0002), so both benchmark values also exist as presets in
    :data:`chatty.losses.PRESETS`.
    """
    if c < 2:
        raise ParameterError(f"need at least 2 classes, got {c}")
    return LAMBDA2_K / c


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    iterations: int = 10000
    batch_size: int = 16
    lam: float = 0.5
    lambda1: float = 1.0
    lambda2: Optional[float] = None          # None -> default_lambda2(c)
    temperature: float = 2.5
    grl_scale: float = 1.0
    grl_schedule: str = "constant"           # or "warmup"
    mcc_enabled: bool = False
    tl_enabled: bool = True
    tl_variant: str = "plain"
    single_tl: str = "self"                  # single-transport mode: "self" (Y = T1 T1^T) or "off"
    minimax: str = "reversal"
    mode: str = "dual"
    seed: int = 0
    eval_every: int = 500
    snapshot_at: tuple = (0, 2500, 5000, 10000)
    snapshot_every: Optional[int] = None

    def __post_init__(self):
        if not self.lr > 0 and self.lr != 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be at least 1, got {self.iterations}")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be at least 1")
        if self.tl_variant not in TL_VARIANTS:
            raise ParameterError(f"tl_variant must be one of {TL_VARIANTS}, got {self.tl_variant!r}")
        if self.minimax not in MINIMAX_MODES:
            raise ParameterError(f"minimax must be one of {MINIMAX_MODES}, got {self.minimax!r}")
        if self.grl_schedule not in ("constant", "warmup"):
            raise ParameterError(f"grl_schedule must be 'constant' or 'warmup', got {self.grl_schedule!r}")
        if self.single_tl not in ("self", "off"):
            raise ParameterError(f"single_tl must be 'self' or 'off', got {self.single_tl!r}")
        if self.mode not in ("dual", "single"):
            raise ParameterError(f"mode must be 'dual' or 'single', got {self.mode!r}")
        self.snapshot_at = tuple(int(i) for i in self.snapshot_at)

    def weights(self, n_classes: int, class_info=None, confusion_embed=None) -> L.LossWeights:
        lam2 = default_lambda2(n_classes) if self.lambda2 is None else self.lambda2
        w = L.LossWeights(self.lambda1, lam2, self.temperature, class_info, confusion_embed)
        w.check_classes(n_classes)
        return w

    def grl_at(self, it: int) -> float:
        if self.grl_schedule == "constant":
            return self.grl_scale
        # the usual DANN ramp 2/(1+exp(-10p)) - 1 over training progress p
        p = it / self.iterations
        return self.grl_scale * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)

    def snapshot_iters(self) -> list[int]:
        if self.snapshot_every:
            its = list(range(0, self.iterations + 1, self.snapshot_every))
        else:
            its = [i for i in self.snapshot_at if 0 <= i <= self.iterations]
        return sorted(set(its))


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS)
            for r in self.rows:
                w.writerow([r["iter"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])

    def to_json(self, path) -> None:
        record = {
            "fields": list(METRIC_FIELDS),
            "rows": self.rows,
            "snapshot_iters": sorted(self.snapshots),
        }
        Path(path).write_text(json.dumps(record, indent=1) + "\n")

    def write_snapshots(self, directory) -> list[Path]:
        out = []
        for it in sorted(self.snapshots):
            p = Path(directory) / f"snapshot_{it}.csv"
            write_matrix_csv(self.snapshots[it], p)
            out.append(p)
        return out


def write_matrix_csv(m: np.ndarray, path, prefix: str = "l") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{j}" for j in range(m.shape[1])])
        for row in m:
            w.writerow([repr(float(v)) for v in row])


class SGD:
    """Plain SGD with heavy-ball momentum."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.buf: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], names=None) -> None:
        for k in (grads if names is None else names):
            g = grads[k]
            b = self.buf.get(k)
            b = g if b is None else self.momentum * b + g
            self.buf[k] = b
            params[k] -= self.lr * b


def _transport_term(bundle, weights: L.LossWeights, config: TrainConfig) -> ad.Node:
    t1 = bundle.t1
    t2 = bundle.t2 if bundle.t2 is not None else t1
    if bundle.t2 is None and config.single_tl == "off":
        return t1.tape.constant(0.0)
    if config.tl_variant == "cosine":
        return L.transport_loss_cos(t1, t2)
    if config.tl_variant == "embedded":
        m = weights.confusion_embed
        return L.transport_loss_embedded(t1, t2, m)
    return L.transport_loss(L.transport_yield(t1, weights.class_info, t2))


def compute_losses(model: ChattyModel, src_x, src_y, tgt_x, weights: L.LossWeights,
                   config: TrainConfig, grl_scale: float = 1.0, tape=None):
    """Forward both domains in one batch and build every loss term.

    Returns ``(total_node, breakdown, params)`` where ``params`` maps names to
    the leaves the total was built from.
    """
    tape = ad.Tape() if tape is None else tape
    params = bind(model, tape)
    ns = len(src_x)
    x = np.vstack([src_x, tgt_x])
    b = forward(model, x, tape, params, grl_scale)
    n = x.shape[0]
    interp_s, interp_t = _rows(b.interp_logits, 0, ns), _rows(b.interp_logits, ns, n)
    disc_s, disc_t = _rows(b.disc_out, 0, ns), _rows(b.disc_out, ns, n)
    l_c = _finite("l_c", L.cross_entropy(interp_s, src_y))
    if not np.isfinite(b.disc_out.value).all():
        raise NonFiniteLossError("l_adv")
    l_adv = _finite("l_adv", L.adversarial_loss(disc_s, disc_t))
    l_tl = _transport_term(b, weights, config) if config.tl_enabled else tape.constant(0.0)
    l_tl = _finite("l_tl", l_tl)
    l_mcc = _finite("l_mcc", L.mcc_loss(interp_t, weights.temperature))
    total, parts = L.total_loss(l_c, l_adv, l_tl, l_mcc, weights, config.mcc_enabled)
    return total, parts, params


def _finite(name: str, node: ad.Node) -> ad.Node:
    if not np.isfinite(node.value).all():
        raise NonFiniteLossError(name)
    return node


def _rows(x: ad.Node, lo: int, hi: int) -> ad.Node:
    n, c = x.value.shape
    if lo == 0 and hi == n:
        return x
    shape = x.value.shape

    def bw(g):
        full = np.zeros(shape)
        full[lo:hi] = g
        x.accumulate(full)

    return ad.Node(x.value[lo:hi], x.tape, (x,), bw, "rows")


def train_step(model: ChattyModel, batch: BatchPair, weights: L.LossWeights, config: TrainConfig,
               optimizer: SGD, iteration: int = 0) -> L.LossBreakdown:
    """One update on a source+target batch.

    With ``config.minimax == "reversal"`` a single backward pass drives all
    parameters: the discriminator descends the adversarial loss while the
    reversal node makes everything upstream ascend it. ``"alternating"``
    first updates the discriminator alone, then re-runs the forward pass and
    updates the rest.
    """
    grl = config.grl_at(iteration)
    if config.minimax == "alternating":
        disc_names = model.group("D")
        tape = ad.Tape()
        params = bind(model, tape)
        ns = len(batch.src_x)
        x = np.vstack([batch.src_x, batch.tgt_x])
        b = forward(model, x, tape, params, grl)
        l_adv = L.adversarial_loss(_rows(b.disc_out, 0, ns), _rows(b.disc_out, ns, x.shape[0]))
        if not np.isfinite(l_adv.value).all():
            raise NonFiniteLossError("l_adv", iteration)
        grads = ad.backward(ad.scale(l_adv, weights.lambda1))
        optimizer.step(model.params, grads, disc_names)
        rest = [k for k in model.params if k not in set(disc_names)]
    else:
        rest = None
    try:
        total, parts, _ = compute_losses(model, batch.src_x, batch.src_y, batch.tgt_x,
                                         weights, config, grl)
    except NonFiniteLossError as e:
        raise NonFiniteLossError(e.term, iteration) from None
    grads = ad.backward(total)
    optimizer.step(model.params, grads, rest)
    return parts


def gradient_sign_report(model: ChattyModel, batch: BatchPair, config: TrainConfig,
                         h: float = 1e-5) -> dict:
    """Inner products of the update directions with the true gradient of ``l_adv``.

    The true gradient comes from central differences, so the check does not
    depend on the reversal node being right. ``disc_descends_adv`` should be
    negative (the discriminator gets better at telling domains apart) and
    ``generator_ascends_adv`` positive (everything upstream makes it worse).
    """
    from .oracles import finite_difference

    weights = config.weights(model.n_classes)
    zero_adv = L.LossWeights(0.0, weights.lambda2, weights.temperature,
                             weights.class_info, weights.confusion_embed)

    def grads(w):
        total, _, _ = compute_losses(model, batch.src_x, batch.src_y, batch.tgt_x, w, config,
                                     config.grl_scale)
        return ad.backward(total)

    def l_adv():
        _, parts, _ = compute_losses(model, batch.src_x, batch.src_y, batch.tgt_x, weights, config)
        return parts.l_adv

    full, no_adv = grads(weights), grads(zero_adv)
    true = finite_difference(l_adv, model.params, h=h)
    disc = model.group("D")
    upstream = [k for k in model.params if k not in disc]
    d_dot = sum(float(np.sum(-full[k] * true[k])) for k in disc)
    g_dot = sum(float(np.sum(-(full[k] - no_adv[k]) * true[k])) for k in upstream)
    return {"disc_descends_adv": d_dot, "generator_ascends_adv": g_dot}


def evaluate(model: ChattyModel, x, y) -> float:
    """Fraction of samples whose predicted class equals ``y``."""
    y = np.asarray(y)
    if len(y) == 0:
        return 0.0
    return float(np.mean(predict(model, x) == y))


def measure(model: ChattyModel, pair: DomainPair, weights: L.LossWeights,
            config: TrainConfig) -> L.LossBreakdown:
    """Loss terms on the full source and target sets, without updating anything."""
    _, parts, _ = compute_losses(model, pair.source_x, pair.source_y, pair.target_x,
                                 weights, config)
    return parts


def run(pair: DomainPair, config: TrainConfig, hidden=(128, 64), disc_hidden: int = 32,
        disc_input: str = "softmax", class_info=None, confusion_embed=None,
        model: Optional[ChattyModel] = None, progress=None):
    """Train from scratch (or from ``model``) and return ``(RunRecord, model)``.

    Metrics are measured on the full domains at iteration 0 and every
    ``config.eval_every`` steps; ``pair.target_y`` is read only for the
    target-accuracy column.
    """
    init_seed, batch_seed = (int(s.generate_state(1)[0])
                             for s in np.random.SeedSequence(config.seed).spawn(2))
    if model is None:
        model = init(pair.dim, pair.n_classes, hidden, disc_hidden=disc_hidden, lam=config.lam,
                     mode=config.mode, disc_input=disc_input, seed=init_seed)
    weights = config.weights(pair.n_classes, class_info, confusion_embed)
    sampler = BatchSampler(pair, config.batch_size, seed=batch_seed)
    opt = SGD(config.lr, config.momentum)
    record = RunRecord()
    snaps = set(config.snapshot_iters())

    def checkpoint(it: int) -> None:
        if it % config.eval_every == 0 or it == config.iterations:
            m = measure(model, pair, weights, config)
            row = {"iter": it, **m.as_dict(),
                   "src_acc": evaluate(model, pair.source_x, pair.source_y),
                   "tgt_acc": evaluate(model, pair.target_x, pair.target_y)}
            record.rows.append(row)
            log.debug("iter %d: %s", it, row)
            if progress is not None:
                progress(row)
        if it in snaps:
            record.snapshots[it] = forward(model, pair.target_x).interp_logits.value.copy()

    checkpoint(0)
    for it in range(1, config.iterations + 1):
        train_step(model, sampler.next_batch(), weights, config, opt, it - 1)
        checkpoint(it)
    return record, model


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["snapshot_at"] = list(config.snapshot_at)
    return d
