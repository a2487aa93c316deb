"""The CHATTY network: feature extractor, classifier head, two transport heads
and a domain discriminator, all as plain affine/relu stacks.

Parameters live in an ordered ``dict`` of float64 arrays keyed ``"G.W0"``,
``"C.b"``, ``"T1.W"``, ``"D.W1"`` and so on. Weight matrices are stored
``[fan_in x fan_out]`` so a layer is ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import ParameterError, ShapeError

DUAL = "dual"
SINGLE = "single"
CHECKPOINT_FORMAT = "chatty-checkpoint"
CHECKPOINT_VERSION = 1

TRANSPORT_INIT_SCALE = 0.1


@dataclass
class ChattyModel:
    input_dim: int
    hidden: tuple
    n_classes: int
    disc_hidden: int = 32
    lam: float = 0.5
    mode: str = DUAL
    disc_input: str = "softmax"
    params: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.mode not in (DUAL, SINGLE):
            raise ParameterError(f"mode must be 'dual' or 'single', got {self.mode!r}")
        if self.disc_input not in ("softmax", "logits"):
            raise ParameterError(f"disc_input must be 'softmax' or 'logits', got {self.disc_input!r}")
        if self.mode == SINGLE:
            self.lam = 1.0
        elif not 0.0 < self.lam < 1.0:
            raise ParameterError(f"lambda must lie in (0, 1) in dual mode, got {self.lam}")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]

    @property
    def n_generator_layers(self) -> int:
        return len(self.hidden)

    def spec(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "n_classes": self.n_classes,
            "disc_hidden": self.disc_hidden,
            "lam": self.lam,
            "mode": self.mode,
            "disc_input": self.disc_input,
        }

    def clone(self) -> "ChattyModel":
        return ChattyModel(**self.spec(), params={k: v.copy() for k, v in self.params.items()})

    def group(self, prefix: str) -> list[str]:
        """Parameter names belonging to one sub-network (``"G"``, ``"D"``, ...)."""
        return [k for k in self.params if k.split(".", 1)[0] == prefix]


@dataclass
class ForwardBundle:
    features: Node
    logits_C: Node
    t1: Node
    t2: Optional[Node]
    o1: Node
    o2: Optional[Node]
    interp_logits: Node
    disc_in: Node
    disc_out: Node


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init(input_dim: int, n_classes: int, hidden: Sequence[int] = (128, 64), *,
         disc_hidden: int = 32, lam: float = 0.5, mode: str = DUAL,
         disc_input: str = "softmax", seed: int = 0) -> ChattyModel:
    """Build a model with Glorot-uniform weights and zero biases.

    Transport-head weights are scaled down by ``TRANSPORT_INIT_SCALE`` so the
    heads start close to the identity transport.
    """
    widths = [input_dim, *hidden, n_classes, disc_hidden]
    if any(int(w) != w or w <= 0 for w in widths):
        raise ParameterError(f"layer widths must be positive integers, got {widths}")
    if n_classes < 2:
        raise ParameterError("need at least two classes")
    model = ChattyModel(input_dim, tuple(hidden), n_classes, disc_hidden, lam, mode, disc_input)
    rng = np.random.default_rng(seed)
    p = model.params
    dims = [input_dim, *model.hidden]
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        p[f"G.W{i}"] = _glorot(rng, fi, fo)
        p[f"G.b{i}"] = np.zeros((1, fo))
    f = model.feature_dim
    p["C.W"] = _glorot(rng, f, n_classes)
    p["C.b"] = np.zeros((1, n_classes))
    heads = ("T1",) if mode == SINGLE else ("T1", "T2")
    for h in heads:
        p[f"{h}.W"] = TRANSPORT_INIT_SCALE * _glorot(rng, f, n_classes)
        p[f"{h}.b"] = np.zeros((1, n_classes))
    p["D.W0"] = _glorot(rng, n_classes, disc_hidden)
    p["D.b0"] = np.zeros((1, disc_hidden))
    p["D.W1"] = _glorot(rng, disc_hidden, 1)
    p["D.b1"] = np.zeros((1, 1))
    return model


def bind(model: ChattyModel, tape: Tape) -> Dict[str, Node]:
    """Put every parameter on ``tape`` as a named leaf."""
    return {k: tape.leaf(v, name=k) for k, v in model.params.items()}


def _affine(x: Node, params: Dict[str, Node], prefix: str, suffix: str = "") -> Node:
    return ad.add(ad.matmul(x, params[f"{prefix}.W{suffix}"]), params[f"{prefix}.b{suffix}"])


def forward(model: ChattyModel, x, tape: Optional[Tape] = None,
            params: Optional[Dict[str, Node]] = None, grl_scale: float = 1.0) -> ForwardBundle:
    """Run the full network on a batch ``x`` of shape ``[B x input_dim]``.

    The discriminator sees ``lam*softmax(o1) + (1-lam)*softmax(o2)`` (or the raw
    interpolated logits when ``model.disc_input == "logits"``) behind a
    gradient-reversal node scaled by ``grl_scale``.
    """
    if tape is None:
        tape = params[next(iter(params))].tape if params else Tape()
    if params is None:
        params = bind(model, tape)
    xn = x if isinstance(x, Node) else tape.constant(x)
    if xn.value.shape[1] != model.input_dim:
        raise ShapeError(f"input has {xn.value.shape[1]} columns, model expects {model.input_dim}")

    h = xn
    for i in range(model.n_generator_layers):
        h = ad.relu(_affine(h, params, "G", str(i)))
    logits = _affine(h, params, "C")
    t1 = _affine(h, params, "T1")
    o1 = ad.add(logits, t1)
    if model.mode == SINGLE:
        t2 = o2 = None
        interp = o1
        disc_in = ad.softmax_rows(o1) if model.disc_input == "softmax" else o1
    else:
        t2 = _affine(h, params, "T2")
        o2 = ad.add(logits, t2)
        lam = model.lam
        interp = ad.add(ad.scale(o1, lam), ad.scale(o2, 1.0 - lam))
        if model.disc_input == "softmax":
            disc_in = ad.add(ad.scale(ad.softmax_rows(o1), lam),
                             ad.scale(ad.softmax_rows(o2), 1.0 - lam))
        else:
            disc_in = interp
    r = ad.grad_reverse(disc_in, grl_scale)
    d = ad.relu(_affine(r, params, "D", "0"))
    disc_out = ad.sigmoid(_affine(d, params, "D", "1"))
    return ForwardBundle(h, logits, t1, t2, o1, o2, interp, disc_in, disc_out)


def interp_logits(model: ChattyModel, x) -> np.ndarray:
    """Interpolated output as a plain array (no graph kept around)."""
    return forward(model, np.asarray(x, dtype=np.float64)).interp_logits.value


def predict(model: ChattyModel, x) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(interp_logits(model, x), axis=1)


def save(model: ChattyModel, path) -> None:
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec(),
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(record, indent=1) + "\n")


def load(path) -> ChattyModel:
    record = json.loads(Path(path).read_text())
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a chatty checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    spec = dict(record["spec"])
    spec["hidden"] = tuple(spec["hidden"])
    params = {k: np.array(v, dtype=np.float64).reshape(len(v), -1) for k, v in record["params"].items()}
    return ChattyModel(**spec, params=params)
