"""Self-check suite: independent oracles against the autodiff, losses and trainer.

Each check returns a :class:`Check`; :func:`run_suite` runs them all with a
fixed internal seed so two invocations print the same report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import oracles as O
from .data import BatchPair, gen_moons
from .model import init
from .train import TrainConfig, compute_losses, gradient_sign_report, run

SUITE_SEED = 20240611


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


def transport_oracle(seed: int = SUITE_SEED, n: int = 200, tol: float = 1e-10) -> Check:
    """Plain and embedded transport losses agree with a triple loop."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        b, c = int(rng.integers(1, 9)), int(rng.integers(2, 7))
        t1, t2, m = rng.normal(size=(b, c)), rng.normal(size=(b, c)), rng.normal(size=(c, c))
        tape = ad.Tape()
        n1, n2 = tape.constant(t1), tape.constant(t2)
        plain = L.transport_loss(L.transport_yield(n1, m, n2)).item()
        emb = L.transport_loss_embedded(n1, n2, m).item()
        ref = O.transport_loss_loop(t1, t2, m)
        for got in (plain, emb):
            worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    return Check("transport-loss oracle", worst <= tol, f"{n} instances, max rel err {worst:.2e}")


def transport_gradient_identity(seed: int = SUITE_SEED, n: int = 50, tol: float = 1e-8) -> Check:
    """d|sum(Y) - tr(Y)|/dT1 = sign(s) (J - I) T2 M^T for Y = T1 M T2^T."""
    rng = np.random.default_rng(seed + 1)
    worst, done = 0.0, 0
    while done < n:
        b, c = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        t1, t2, m = rng.normal(size=(b, c)), rng.normal(size=(b, c)), rng.normal(size=(c, c))
        y = t1 @ m @ t2.T
        s = y.sum() - np.trace(y)
        if abs(s) < 1e-6:
            continue
        tape = ad.Tape()
        n1 = tape.leaf(t1, "t1")
        g = ad.backward(L.transport_loss(L.transport_yield(n1, m, tape.constant(t2))))["t1"]
        closed = np.sign(s) * (np.ones((b, b)) - np.eye(b)) @ t2 @ m.T
        worst = max(worst, float(np.max(np.abs(g - closed))))
        done += 1
    return Check("transport closed-form gradient", worst <= tol,
                 f"{n} instances, max abs err {worst:.2e}")


def _tiny_setup(seed: int, b: int = 4, c: int = 3, d: int = 3):
    rng = np.random.default_rng(seed)
    model = init(d, c, (5, 4), disc_hidden=4, seed=seed)
    # zero biases put dead-unit rows exactly on the next relu kink, where
    # central differences are meaningless; jitter them off it
    for k, v in model.params.items():
        if ".b" in k:
            v += rng.normal(scale=0.1, size=v.shape)
    batch = BatchPair(rng.normal(size=(b, d)), rng.integers(0, c, b), rng.normal(size=(b, d)))
    return model, batch


def full_model_gradients(seed: int = SUITE_SEED, n: int = 10, h: float = 1e-5,
                         rtol: float = 1e-4) -> Check:
    """Every parameter gradient of the total loss against central differences.

    Discriminator gradients must equal d(total)/dD. Upstream gradients carry
    the reversal, so they must equal d(total)/dθ - (1 + grl) * lambda1 * d(l_adv)/dθ.
    """
    worst, where = 0.0, ""
    for s in range(seed, seed + n):
        model, batch = _tiny_setup(s)
        config = TrainConfig(mcc_enabled=True, lambda2=0.05, seed=s)
        weights = config.weights(model.n_classes, np.random.default_rng(s).normal(size=(3, 3)))
        grl = config.grl_scale

        def value(term):
            def f():
                _, parts, _ = compute_losses(model, batch.src_x, batch.src_y, batch.tgt_x,
                                             weights, config, grl)
                return getattr(parts, term)
            return f

        total, _, _ = compute_losses(model, batch.src_x, batch.src_y, batch.tgt_x, weights,
                                     config, grl)
        auto = ad.backward(total)
        fd_total = O.finite_difference(value("l_total"), model.params, h)
        fd_adv = O.finite_difference(value("l_adv"), model.params, h)
        disc = set(model.group("D"))
        for k in model.params:
            want = fd_total[k] if k in disc else fd_total[k] - (1 + grl) * weights.lambda1 * fd_adv[k]
            e = O.rel_error(auto[k], want, rtol=rtol)
            if e > worst:
                worst, where = e, f"{k} (seed {s})"
    return Check("full-model gradient check", worst < rtol,
                 f"{n} seeds, max rel err {worst:.2e}" + (f" at {where}" if where else ""))


def mcc_properties(seed: int = SUITE_SEED, n: int = 100, tol: float = 1e-9) -> Check:
    tape = ad.Tape()
    onehot = L.mcc_loss(tape.constant(np.eye(4)[[0, 1, 2, 3, 1, 0]] * 200.0)).item()
    uniform = L.mcc_loss(tape.constant(np.zeros((7, 4)))).item()
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for _ in range(n):
        b, c = int(rng.integers(1, 17)), int(rng.integers(2, 7))
        z = rng.normal(scale=3.0, size=(b, c))
        t = float(rng.uniform(0.5, 4.0))
        worst = max(worst, abs(L.mcc_loss(ad.Tape().constant(z), t).item() - O.mcc_loop(z, t)))
    ok = onehot < tol and abs(uniform - 0.75) <= tol and worst <= tol
    return Check("MCC properties", ok,
                 f"one-hot {onehot:.1e}, uniform c=4 {uniform:.12f}, loop max err {worst:.1e}")


def adversarial_fixed_point(seed: int = SUITE_SEED, tol: float = 1e-12) -> Check:
    tape = ad.Tape()
    half = tape.constant(np.full((5, 1), 0.5))
    v = L.adversarial_loss(half, tape.constant(np.full((3, 1), 0.5))).item()
    err = abs(v - 2 * np.log(2))
    return Check("adversarial fixed point", err <= tol, f"|L - 2 ln 2| = {err:.1e}")


def gradient_sign_contract(seed: int = SUITE_SEED, n: int = 3) -> Check:
    """The discriminator descends the adversarial loss and everything upstream ascends it."""
    bad = []
    for s in range(seed, seed + n):
        model, batch = _tiny_setup(s, b=6, c=2, d=2)
        r = gradient_sign_report(model, batch, TrainConfig(seed=s))
        if not (r["disc_descends_adv"] < 0 and r["generator_ascends_adv"] > 0):
            bad.append(f"seed {s}: disc {r['disc_descends_adv']:+.2e}, "
                       f"upstream {r['generator_ascends_adv']:+.2e}")
    return Check("gradient-sign contract", not bad, "; ".join(bad) or f"{n} seeds consistent")


def determinism_replay(seed: int = SUITE_SEED) -> Check:
    pair = gen_moons(30, 0.1, 80, seed=seed % 1000)
    config = TrainConfig(iterations=60, eval_every=20, mcc_enabled=True, seed=seed % 1000,
                         snapshot_at=(0, 60))
    rows = []
    for _ in range(2):
        rec, model = run(pair, config, hidden=(8,), disc_hidden=4)
        rows.append((repr(rec.rows), {k: v.tobytes() for k, v in rec.snapshots.items()},
                     {k: v.tobytes() for k, v in model.params.items()}))
    ok = rows[0] == rows[1]
    return Check("determinism replay", ok, "two runs bit-identical" if ok else "runs differ")


CHECKS: List[Callable[[int], Check]] = [
    transport_oracle, transport_gradient_identity, full_model_gradients, mcc_properties,
    adversarial_fixed_point, gradient_sign_contract, determinism_replay,
]


def run_suite(seed: int = SUITE_SEED, checks=None) -> List[Check]:
    out = []
    for fn in checks or CHECKS:
        t0 = time.perf_counter()
        try:
            c = fn(seed)
        except Exception as e:  # a crash is a failed property, not a crashed suite
            c = Check(fn.__name__.replace("_", " "), False, f"raised {type(e).__name__}: {e}")
        c.seconds = time.perf_counter() - t0
        out.append(c)
    return out


def report(checks: List[Check]) -> str:
    """Report text; timings are left out so it is reproducible."""
    lines = [c.line() for c in checks]
    failed = [c.name for c in checks if not c.ok]
    lines.append(f"{len(checks) - len(failed)}/{len(checks)} properties hold"
                 + (f"; failing: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
