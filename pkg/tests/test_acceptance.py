"""Acceptance criteria, each at its stated tolerance.

Every test records one line through ``acceptance_log``; the lines are printed
in a summary section after the run. The moons experiment (criteria 6 to 8)
trains 4 configurations x 5 seeds once per session and shares the runs.
"""

import time

import numpy as np
import pytest

from chatty import cli, verify
from chatty.data import gen_moons
from chatty.losses import PRESETS
from chatty.oracles import silhouette
from chatty.train import TrainConfig, run

SEEDS = range(5)
ITERATIONS = 10_000
# Shared settings for every arm of the moons experiment. The learning rate is
# raised from the library default of 0.001 so that adversarial alignment
# finishes inside 10k steps; the transport weight is the 31-class preset,
# because 0.0496 / 2 diverges at this learning rate (see the README).
COMMON = dict(lr=0.02, iterations=ITERATIONS, eval_every=2500, snapshot_at=(0, ITERATIONS))
TL_WEIGHT = PRESETS["office31"].lambda2
ARMS = {
    "source-only": dict(lambda1=0.0, lambda2=0.0),
    "adv": dict(lambda1=1.0, lambda2=0.0),
    "adv+TL": dict(lambda1=1.0, lambda2=TL_WEIGHT),
    "adv+TL+MCC": dict(lambda1=1.0, lambda2=TL_WEIGHT, mcc_enabled=True),
}


def test_c1_transport_oracle(acceptance_log):
    t0 = time.perf_counter()
    c = verify.transport_oracle(n=200, tol=1e-10)
    dt = time.perf_counter() - t0
    ok = c.ok and dt < 5.0
    acceptance_log.append((1, ok, f"transport loss vs triple loop: {c.detail}, {dt:.2f} s"))
    assert ok


def test_c2_closed_form_gradient(acceptance_log):
    c = verify.transport_gradient_identity(n=50, tol=1e-8)
    acceptance_log.append((2, c.ok, f"transport gradient identity: {c.detail}"))
    assert c.ok


def test_c3_full_model_gradient_check(acceptance_log):
    t0 = time.perf_counter()
    c = verify.full_model_gradients(seed=0, n=10, h=1e-5, rtol=1e-4)
    dt = time.perf_counter() - t0
    ok = c.ok and dt < 30.0
    acceptance_log.append((3, ok, f"all-term gradients vs central differences: {c.detail}, {dt:.1f} s"))
    assert ok


def test_c4_mcc_properties(acceptance_log):
    c = verify.mcc_properties(n=100, tol=1e-9)
    acceptance_log.append((4, c.ok, f"class confusion: {c.detail}"))
    assert c.ok


def test_c5_adversarial_fixed_point(acceptance_log):
    c = verify.adversarial_fixed_point(tol=1e-12)
    acceptance_log.append((5, c.ok, f"adversarial loss at D = 0.5: {c.detail}"))
    assert c.ok


@pytest.fixture(scope="session")
def moons_runs():
    t0 = time.process_time()
    out = {}
    for arm, kw in ARMS.items():
        out[arm] = []
        for seed in SEEDS:
            pair = gen_moons(30, 0.1, 600, seed=seed)
            rec, _ = run(pair, TrainConfig(seed=seed, **COMMON, **kw))
            out[arm].append((pair, rec))
    return out, time.process_time() - t0


def _mean_final(runs, arm, key):
    return float(np.mean([rec.final[key] for _, rec in runs[arm]]))


def test_c6_desk_scale_gain(moons_runs, acceptance_log):
    runs, cpu = moons_runs
    acc = {arm: _mean_final(runs, arm, "tgt_acc") for arm in ARMS}
    gain = acc["adv+TL"] - acc["source-only"]
    ordering = acc["adv+TL+MCC"] >= acc["adv"]
    ok = gain >= 0.10 and ordering and cpu < 600
    summary = ", ".join(f"{a} {v:.3f}" for a, v in acc.items())
    acceptance_log.append((6, ok, f"moons-30 mean target accuracy: {summary}; "
                                  f"adv+TL gain {100 * gain:+.1f} pts (need +10), "
                                  f"adv+TL+MCC >= adv: {ordering}; {cpu:.0f} s CPU"))
    assert gain >= 0.10
    assert ordering
    assert cpu < 600


def test_c7_cluster_spread_grows(moons_runs, acceptance_log):
    runs, _ = moons_runs
    grew = []
    for pair, rec in runs["adv+TL"]:
        s0 = silhouette(rec.snapshots[0], pair.target_y)
        s1 = silhouette(rec.snapshots[ITERATIONS], pair.target_y)
        grew.append(s1 > s0)
    ok = sum(grew) >= 4
    acceptance_log.append((7, ok, f"target-logit silhouette rises in {sum(grew)}/5 seeds (need 4)"))
    assert ok


def test_c8_transport_loss_lowers_confusion(moons_runs, acceptance_log):
    runs, _ = moons_runs
    with_tl = _mean_final(runs, "adv+TL", "l_mcc")
    without = _mean_final(runs, "adv", "l_mcc")
    per_seed = " ".join(f"{a.final['l_mcc']:.3f}/{b.final['l_mcc']:.3f}"
                        for (_, a), (_, b) in zip(runs["adv+TL"], runs["adv"]))
    ok = with_tl < without
    acceptance_log.append((8, ok, f"measured class confusion, MCC not trained: "
                                  f"with TL {with_tl:.4f}, without {without:.4f} "
                                  f"(per seed with/without: {per_seed})"))
    assert ok


def _csv_bytes(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def test_c9_cli_determinism(tmp_path, acceptance_log, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text("iterations = 300\neval_every = 100\nsnapshot_at = [0, 300]\nhidden = [16, 8]\n"
                   "mcc_enabled = true\nn = 200\n")
    outputs = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        assert cli.main(["train", str(cfg), "--out", str(out / "train"), "--quiet"]) == 0
        assert cli.main(["compare", str(cfg), str(cfg), "--out", str(out / "compare"), "--quiet"]) == 0
        capsys.readouterr()
        assert cli.main(["scatter", str(out / "train" / "snapshot_300.csv"),
                         "--labels", str(out / "train" / "target_labels.csv"),
                         "--out", str(out / "scatter")]) == 0
        (out / "scatter" / "stdout.csv").write_text(
            capsys.readouterr().out.replace(str(out), "<out>"))
        outputs.append(_csv_bytes(out))
    same = outputs[0] == outputs[1] and len(outputs[0]) >= 8
    acceptance_log.append((9, same, f"{len(outputs[0])} CSV outputs of train/compare/scatter "
                                    f"byte-identical on rerun: {same}"))
    assert same


def test_c10_presets(acceptance_log, tmp_path):
    lib = (PRESETS["office31"].lambda2, PRESETS["officehome"].lambda2)
    via_cli = []
    for name, c in (("office31", 31), ("officehome", 65)):
        cfg = cli.resolve_seed(cli.parse_config(f'preset = "{name}"\n'), None)
        via_cli.append(cli.build_train_config(cfg, c).lambda2)
    ok = lib == (0.0016, 0.0002) and tuple(via_cli) == lib
    acceptance_log.append((10, ok, f"presets office31 lambda2={lib[0]}, officehome lambda2={lib[1]}"))
    assert ok
