"""``chatty`` command line: train, compare, scatter, verify.

Experiments are described by flat TOML files (``key = value`` lines, no
tables). Every key has a default, so an empty file is a valid experiment;
unknown keys are rejected with the line they appear on.

Exit codes: 0 success, 1 verification failure, 2 bad config or input,
3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import data as D
from . import model as M
from . import plotting, verify
from .errors import ChattyError, NonFiniteLossError
from .losses import PRESETS
from .oracles import silhouette
from .train import METRIC_FIELDS, TrainConfig, default_lambda2, run

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3
SEED_ENV = "CHATTY_SEED"


class ConfigError(ChattyError):
    """Bad experiment file; ``str()`` carries ``path:line: field ...``."""


@dataclass(frozen=True)
class Field:
    kind: str                  # float, int, bool, str, ints, floats
    default: Any
    doc: str
    choices: tuple = ()


_TRAIN_DOCS = {
    "lr": "SGD learning rate", "momentum": "SGD momentum",
    "iterations": "number of optimizer steps", "batch_size": "samples per domain per step",
    "lam": "interpolation weight between the two transport branches",
    "lambda1": "adversarial loss weight",
    "lambda2": "transport loss weight; negative means 0.0496 / classes or the preset",
    "temperature": "softmax temperature of the class-confusion term",
    "grl_scale": "gradient reversal strength", "grl_schedule": "constant or warmup ramp",
    "mcc_enabled": "add the class-confusion term to the objective",
    "tl_enabled": "add the transport loss to the objective",
    "tl_variant": "plain, cosine or embedded transport loss",
    "single_tl": "transport loss in single mode: self or off",
    "minimax": "reversal (one step) or alternating (two passes)",
    "mode": "dual or single transport branch",
    "seed": "initialisation and batch-order seed",
    "eval_every": "iterations between metric rows",
    "snapshot_at": "iterations at which target logits are saved",
    "snapshot_every": "save logits every this many iterations (0 = use snapshot_at)",
}
_TRAIN_CHOICES = {
    "grl_schedule": ("constant", "warmup"), "tl_variant": ("plain", "cosine", "embedded"),
    "single_tl": ("self", "off"), "minimax": ("reversal", "alternating"), "mode": ("dual", "single"),
}


def _train_fields() -> Dict[str, Field]:
    out = {}
    for f in fields(TrainConfig):
        default = f.default
        if f.name == "lambda2":
            kind, default = "float", -1.0
        elif f.name == "snapshot_at":
            kind, default = "ints", list(default)
        elif f.name == "snapshot_every":
            kind, default = "int", 0
        else:
            kind = {bool: "bool", int: "int", float: "float", str: "str"}[type(default)]
        out[f.name] = Field(kind, default, _TRAIN_DOCS[f.name], _TRAIN_CHOICES.get(f.name, ()))
    return out


SCHEMA: Dict[str, Field] = {
    "dataset": Field("str", "moons", "generator: moons, blobs or csv", ("moons", "blobs", "csv")),
    "rotation": Field("float", 30.0, "target rotation in degrees"),
    "noise": Field("float", -1.0, "noise level; negative means the generator default"),
    "n": Field("int", 600, "moons: samples per domain"),
    "classes": Field("int", 3, "blobs: class count"),
    "n_per_class": Field("int", 200, "blobs: samples per class and domain"),
    "dim": Field("int", 2, "blobs: input dimension"),
    "translation": Field("floats", [], "blobs: target translation (empty = none)"),
    "standardized": Field("bool", True, "scale inputs by source statistics"),
    "data_csv": Field("str", "", "csv: path to an x0..,y,domain file"),
    "dataset_seed": Field("int", -1, "data seed; negative means the training seed"),
    "hidden": Field("ints", [128, 64], "feature extractor layer widths"),
    "disc_hidden": Field("int", 32, "discriminator hidden width"),
    "disc_input": Field("str", "softmax", "what the discriminator sees", ("softmax", "logits")),
    "preset": Field("str", "", "loss-weight preset: office31 or officehome",
                    ("", *sorted(PRESETS))),
    **_train_fields(),
    "out": Field("str", "chatty-out", "output directory"),
}


# ---------------------------------------------------------------- config parsing

def _line_of(text: str, key: str) -> int:
    pat = re.compile(rf'^[ \t]*("{re.escape(key)}"|{re.escape(key)})\s*=', re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _where(path: str, text: str, key: str) -> str:
    line = _line_of(text, key)
    return f"{path}:{line}" if line else path


def _coerce(key: str, f: Field, value):
    def bad(expect):
        return f"field '{key}': expected {expect}, got {type(value).__name__} {value!r}"

    if f.kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(bad("true or false"))
        return value
    if f.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(bad("an integer"))
        return value
    if f.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(bad("a number"))
        return float(value)
    if f.kind == "str":
        if not isinstance(value, str):
            raise ValueError(bad("a string"))
        if f.choices and value not in f.choices:
            raise ValueError(f"field '{key}': {value!r} is not one of {list(f.choices)}")
        return value
    if not isinstance(value, list):
        raise ValueError(bad("a list"))
    item = "int" if f.kind == "ints" else "float"
    return [_coerce(f"{key}[{i}]", Field(item, None, ""), v) for i, v in enumerate(value)]


def parse_config(text: str, path: str = "<config>") -> Dict[str, Any]:
    """Validate a flat TOML document and fill in every default."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    cfg = {k: (list(f.default) if isinstance(f.default, list) else f.default)
           for k, f in SCHEMA.items()}
    for key, value in raw.items():
        if isinstance(value, dict):
            line = next((i + 1 for i, ln in enumerate(text.splitlines())
                         if re.match(rf"^[ \t]*\[+[ \t]*{re.escape(key)}\b", ln)), 0)
            where = f"{path}:{line}" if line else _where(path, text, key)
            raise ConfigError(f"{where}: '{key}' is a table; experiment files are flat key = value")
        if key not in SCHEMA:
            raise ConfigError(f"{_where(path, text, key)}: unknown field '{key}'")
        try:
            cfg[key] = _coerce(key, SCHEMA[key], value)
        except ValueError as e:
            raise ConfigError(f"{_where(path, text, key)}: {e}") from None
    return cfg


def load_config(path) -> Dict[str, Any]:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    return parse_config(text, path)


def resolve_seed(cfg: Dict[str, Any], flag: Optional[int]) -> Dict[str, Any]:
    """Apply the seed precedence: config < CHATTY_SEED < ``--seed``."""
    cfg = dict(cfg)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if flag is not None:
        cfg["seed"] = flag
    if cfg["dataset_seed"] < 0:
        cfg["dataset_seed"] = cfg["seed"]
    return cfg


def build_pair(cfg: Dict[str, Any]) -> D.DomainPair:
    ds, seed = cfg["dataset"], cfg["dataset_seed"]
    if ds == "csv":
        if not cfg["data_csv"]:
            raise ConfigError("field 'data_csv': required when dataset = \"csv\"")
        return D.from_csv(cfg["data_csv"])
    if ds == "moons":
        noise = 0.1 if cfg["noise"] < 0 else cfg["noise"]
        return D.gen_moons(cfg["rotation"], noise, cfg["n"], seed=seed,
                           standardized=cfg["standardized"])
    noise = 0.5 if cfg["noise"] < 0 else cfg["noise"]
    return D.gen_blobs(cfg["classes"], cfg["n_per_class"], cfg["dim"], rotation=cfg["rotation"],
                       translation=cfg["translation"] or None, noise=noise, seed=seed,
                       standardized=cfg["standardized"])


def build_train_config(cfg: Dict[str, Any], n_classes: int) -> TrainConfig:
    kw = {f.name: cfg[f.name] for f in fields(TrainConfig)}
    if kw["lambda2"] < 0:
        kw["lambda2"] = PRESETS[cfg["preset"]].lambda2 if cfg["preset"] else default_lambda2(n_classes)
    kw["snapshot_every"] = kw["snapshot_every"] or None
    kw["snapshot_at"] = tuple(kw["snapshot_at"])
    return TrainConfig(**kw)


def resolved(cfg: Dict[str, Any], pair: D.DomainPair, config: TrainConfig) -> Dict[str, Any]:
    """The experiment with every default made explicit, as it actually ran."""
    out = dict(cfg)
    out["lambda2"] = config.lambda2
    if cfg["noise"] < 0 and cfg["dataset"] != "csv":
        out["noise"] = float(pair.shift_spec.get("noise", cfg["noise"]))
    return out


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    return "[" + ", ".join(_toml_value(x) for x in v) + "]"


def dump_config(cfg: Dict[str, Any]) -> str:
    lines = []
    for k, f in SCHEMA.items():
        lines.append(f"# {f.doc}")
        lines.append(f"{k} = {_toml_value(cfg[k])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands

def _emit(args, text: str) -> None:
    if not args.quiet:
        print(text, flush=True)


def _experiment(path, args):
    cfg = resolve_seed(load_config(path), args.seed)
    try:
        pair = build_pair(cfg)
        config = build_train_config(cfg, pair.n_classes)
    except (ChattyError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path}: {e}") from None
    return cfg, pair, config


def _train_one(cfg, pair, config, out: Path, args, label: str = ""):
    out.mkdir(parents=True, exist_ok=True)
    prefix = f"{label}," if label else ""

    def progress(row):
        _emit(args, prefix + ",".join([str(row["iter"])] + [repr(float(row[k]))
                                                            for k in METRIC_FIELDS[1:]]))

    record, model = run(pair, config, hidden=tuple(cfg["hidden"]), disc_hidden=cfg["disc_hidden"],
                        disc_input=cfg["disc_input"], progress=progress)
    record.to_csv(out / "metrics.csv")
    record.to_json(out / "metrics.json")
    record.write_snapshots(out)
    with open(out / "target_labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"])
        w.writerows([[int(y)] for y in pair.target_y])
    M.save(model, out / "checkpoint.json")
    (out / "config.resolved.toml").write_text(dump_config(resolved(cfg, pair, config)))
    plotting.accuracy_overlay({label or "target": (record.column("iter"), record.column("tgt_acc"))},
                              out / "accuracy.svg")
    if pair.n_classes <= 3:
        for it, z in sorted(record.snapshots.items()):
            plotting.logit_scatter(z, pair.target_y, out / f"scatter_{it}.svg",
                                   title=f"target logits, iteration {it}")
    return record


def cmd_train(args) -> int:
    cfg, pair, config = _experiment(args.config, args)
    out = Path(args.out or cfg["out"])
    _emit(args, ",".join(METRIC_FIELDS))
    _train_one(cfg, pair, config, out, args)
    return EXIT_OK


def _labels(paths: List[str]) -> List[str]:
    stems = [Path(p).stem for p in paths]
    return [s if stems.count(s) == 1 else f"{s}{i}" for i, s in enumerate(stems)]


def cmd_compare(args) -> int:
    exps = [_experiment(p, args) for p in args.configs]
    seeds = {cfg["dataset_seed"] for cfg, _, _ in exps}
    if len(seeds) > 1:
        raise ConfigError("configs use different dataset seeds "
                          f"({', '.join(str(c['dataset_seed']) for c, _, _ in exps)}); "
                          "a comparison needs the same data")
    out = Path(args.out or exps[0][0]["out"])
    labels = _labels(args.configs)
    _emit(args, "config," + ",".join(METRIC_FIELDS))
    records = {}
    for label, (cfg, pair, config) in zip(labels, exps):
        records[label] = _train_one(cfg, pair, config, out / label, args, label)
    iters = sorted({int(i) for r in records.values() for i in r.column("iter")})
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter"] + [f"tgt_acc_{lb}" for lb in labels])
        for it in iters:
            row = [it]
            for lb in labels:
                hit = [r["tgt_acc"] for r in records[lb].rows if r["iter"] == it]
                row.append(repr(float(hit[0])) if hit else "")
            w.writerow(row)
    plotting.accuracy_overlay({lb: (r.column("iter"), r.column("tgt_acc")) for lb, r in records.items()},
                              out / "compare.svg", title="target accuracy by configuration")
    finals = {lb: r.final["tgt_acc"] for lb, r in records.items()}
    _emit(args, "final," + ",".join(f"{lb}={v!r}" for lb, v in finals.items()))
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    return body.reshape(len(rows) - 1, len(rows[0]))


def cmd_scatter(args) -> int:
    labels = _read_matrix(args.labels).astype(int).reshape(-1)
    out = Path(args.out or ".")
    _emit(args, "snapshot,svg,silhouette")
    for snap in args.snapshots:
        z = _read_matrix(snap)
        if z.shape[1] > 3 and not args.pca:
            raise ConfigError(f"{snap}: {z.shape[1]} logit columns; pass --pca to project them")
        if len(z) != len(labels):
            raise ConfigError(f"{snap}: {len(z)} rows but {args.labels} has {len(labels)} labels")
        svg = out / f"scatter_{Path(snap).stem}.svg"
        plotting.logit_scatter(z, labels, svg, title=Path(snap).stem, pca=args.pca)
        s = silhouette(z, labels) if len(z) and len(np.unique(labels)) > 1 else float("nan")
        _emit(args, f"{snap},{svg},{s!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = verify.SUITE_SEED if args.seed is None else args.seed
    env = os.environ.get(SEED_ENV)
    if args.seed is None and env is not None and env.strip():
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    checks = verify.run_suite(seed)
    text = verify.report(checks)
    _emit(args, text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify.txt").write_text(text + "\n")
    failed = [c.name for c in checks if not c.ok]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("--seed", type=int, help=f"training seed (overrides config and {SEED_ENV})")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = argparse.ArgumentParser(prog="chatty", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"chatty {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="run one experiment")
    t.add_argument("config", help="flat TOML experiment file (may be empty)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", parents=[common], help="run experiments on the same data and overlay them")
    c.add_argument("configs", nargs="+", metavar="config")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("scatter", parents=[common], help="plot logit snapshots coloured by class")
    s.add_argument("snapshots", nargs="+", metavar="snapshot")
    s.add_argument("--labels", required=True, help="CSV with one label per snapshot row")
    s.add_argument("--pca", action="store_true", help="project onto two principal axes")
    s.set_defaults(func=cmd_scatter)

    v = sub.add_parser("verify", parents=[common], help="run the gradient and loss oracle suite")
    v.set_defaults(func=cmd_verify)
    p.epilog = "Keys for experiment files:\n" + "\n".join(
        f"  {k} = {_toml_value(f.default)}  ({f.doc})" for k, f in SCHEMA.items())
    p.formatter_class = argparse.RawDescriptionHelpFormatter
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as e:
        print(f"error: training aborted: {e}", file=sys.stderr)
        return EXIT_NAN
    except (ChattyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
