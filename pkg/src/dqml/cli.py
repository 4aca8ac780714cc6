"""Experiment runner: ``python -m dqml <subcommand>``.

Each subcommand resolves its configuration (built-in defaults, then an
optional JSON file, then flags), runs its grid of cells and writes CSV
tables plus a ``manifest.json`` holding the resolved configuration.
Exit status is 0 on success, 2 for configuration errors and 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets, dnn, effdim, model
from .circuit import CircuitConfig
from .train import Classifier, TrainConfig, load_checkpoint, save_checkpoint, train, write_history

WORKERS_ENV = "DQML_WORKERS"


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


DEFAULTS = {
    "chsh": {"seed": 0, "repeats": 10, "depth": 20, "bell": [0, 1],
             "embedding": ["optimal", "alternative"], "loss": ["product", "mse"],
             "iterations": 2000, "learning_rate": 0.05, "batch_fraction": 0.25,
             "optimizer": "adam", "workers": None},
    "synth": {"seed": 0, "dataset_seed": 0, "dataset": None, "repeats": 3, "depth": [10],
              "bell": [0, 1, 2, 3, 4], "mixing_depth": 0, "second_stage_depth": None,
              "mixing_scope": "global", "loss": "mse", "omega_mode": "free",
              "iterations": 2000, "learning_rate": 0.05, "batch_fraction": 0.25,
              "optimizer": "adam", "workers": None},
    "effdim": {"seed": 0, "bell": [0, 1, 2, 3, 4], "depth": 30, "mixing_depth": 0,
               "second_stage_depth": None, "mixing_scope": "global", "n_haar": 100,
               "n_paramsets": 20, "rank_tol_rel": 1e-10, "patience": 3, "workers": None},
    "dnn": {"seed": 0, "dataset_seed": 0, "dataset": None, "repeats": 3, "iterations": 2000,
            "learning_rate": 0.01, "batch_fraction": 0.25, "optimizer": "adam", "workers": None},
}
LIST_KEYS = {"chsh": ("bell", "embedding", "loss"), "synth": ("bell", "depth"),
             "effdim": ("bell",), "dnn": ()}


def derive_seed(*keys) -> int:
    """Independent per-cell seed from the base seed and cell coordinates."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key in LIST_KEYS[command]:
        if not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    if cfg.get("workers") is None:
        cfg["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    validate(command, cfg)
    return cfg


def validate(command: str, cfg: dict) -> None:
    try:
        if cfg.get("repeats", 1) < 1:
            raise ValueError("repeats must be >= 1")
        if cfg["workers"] < 1:
            raise ValueError("workers must be >= 1")
        if command == "chsh":
            for emb in cfg["embedding"]:
                if emb not in ("optimal", "alternative"):
                    raise ValueError(f"unknown CHSH embedding {emb!r}")
            for bell in cfg["bell"]:
                CircuitConfig(qubits_per_proc=2, n_bell=bell, depth=cfg["depth"])
            for loss in cfg["loss"]:
                _train_config(cfg, loss=loss, omega_mode="parity_fixed_unit", seed=0)
        elif command == "synth":
            for bell in cfg["bell"]:
                for depth in cfg["depth"]:
                    _synth_circuit(cfg, bell, depth)
            _train_config(cfg, loss=cfg["loss"], omega_mode=cfg["omega_mode"], seed=0)
        elif command == "effdim":
            for bell in cfg["bell"]:
                _effdim_circuit(cfg, bell, cfg["mixing_depth"] + 1)
            if cfg["depth"] < 1 or cfg["n_haar"] < 1 or cfg["n_paramsets"] < 1:
                raise ValueError("depth, n_haar and n_paramsets must be >= 1")
        elif command == "dnn":
            _train_config(cfg, loss="mse", omega_mode="free", seed=0)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg: dict, loss: str, omega_mode: str, seed: int) -> TrainConfig:
    return TrainConfig(optimizer=cfg["optimizer"], learning_rate=float(cfg["learning_rate"]),
                       iterations=int(cfg["iterations"]), batch_fraction=float(cfg["batch_fraction"]),
                       seed=seed, loss=loss, omega_mode=omega_mode)


def _synth_circuit(cfg: dict, bell: int, depth: int) -> CircuitConfig:
    return CircuitConfig(qubits_per_proc=4, n_bell=bell, depth=depth,
                         second_stage_depth=cfg["second_stage_depth"],
                         mixing_depth=cfg["mixing_depth"], mixing_scope=cfg["mixing_scope"])


def _effdim_circuit(cfg: dict, bell: int, total_depth: int) -> CircuitConfig:
    return CircuitConfig(qubits_per_proc=4, n_bell=bell, depth=total_depth - cfg["mixing_depth"],
                         second_stage_depth=cfg["second_stage_depth"],
                         mixing_depth=cfg["mixing_depth"], mixing_scope=cfg["mixing_scope"],
                         embedding="haar_random")


def _map(fn, cells, workers: int):
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def _check_finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite value encountered during training")


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _write_manifest(out: Path, command: str, cfg: dict, files: list[str]) -> None:
    payload = {"command": command, "config": cfg, "files": files,
               "run_info": {"created": time.strftime("%Y-%m-%dT%H:%M:%S")}}
    (out / "manifest.json").write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# chsh

CHSH_FIELDS = ["bell", "embedding", "loss", "repeat", "seed", "depth", "accuracy",
               "success", "S", "P_win", "omega", "final_loss"]


def chsh_cell(cell: tuple) -> tuple[dict, list[dict]]:
    cfg, bell, emb, loss, rep = cell
    seed = derive_seed(cfg["seed"], bell, ("optimal", "alternative").index(emb),
                       ("product", "mse").index(loss), rep)
    omega_mode = "parity_fixed_unit" if loss == "product" else "parity_trainable"
    circ = CircuitConfig(qubits_per_proc=2, n_bell=bell, depth=cfg["depth"])
    x, y = datasets.chsh_dataset(emb)
    state = train(circ, _train_config(cfg, loss, omega_mode, seed), (x, y))
    clf = Classifier(circ, omega_mode)
    E = clf.expectations(state.opt.params, clf.prepare(x))
    _check_finite(E, state.opt.params)
    scale = state.omega.scale
    norm = np.clip(y * E / scale, -1.0, 1.0)
    corr = {}
    for inp, v in zip(datasets.chsh_inputs(), norm):
        # undo the s1 t1 sign flip to recover the <A_s1 B_t1> analog
        corr.setdefault((inp.s1, inp.t1), []).append(v * (-1) ** (inp.s1 * inp.t1))
    c = {k: float(np.mean(v)) for k, v in corr.items()}
    S, p_win = model.chsh_correlator(c[0, 0], c[0, 1], c[1, 0], c[1, 1])
    row = {"bell": bell, "embedding": emb, "loss": loss, "repeat": rep, "seed": seed,
           "depth": cfg["depth"], "accuracy": model.accuracy(y, E),
           "success": float(np.mean(model.chsh_success(norm, 1.0))), "S": S, "P_win": p_win,
           "omega": scale, "final_loss": state.history[-1]["loss"]}
    per_input = [{"bell": bell, "embedding": emb, "loss": loss, "repeat": rep,
                  "s1": i.s1, "s2": i.s2, "t1": i.t1, "t2": i.t2, "label": i.label,
                  "normalized": float(v)} for i, v in zip(datasets.chsh_inputs(), norm)]
    return row, per_input


def cmd_chsh(cfg: dict, out: Path) -> None:
    cells = [(cfg, b, e, l, r) for b in cfg["bell"] for e in cfg["embedding"]
             for l in cfg["loss"] for r in range(cfg["repeats"])]
    results = _map(chsh_cell, cells, cfg["workers"])
    rows = [r for r, _ in results]
    hist = [h for _, hs in results for h in hs]
    _write_csv(out / "chsh_runs.csv", rows, CHSH_FIELDS)
    _write_csv(out / "chsh_inputs.csv", hist,
               ["bell", "embedding", "loss", "repeat", "s1", "s2", "t1", "t2", "label", "normalized"])
    _write_manifest(out, "chsh", cfg, ["chsh_runs.csv", "chsh_inputs.csv"])
    for row in summarize(rows, ["bell", "embedding", "loss"], ["accuracy", "success"]):
        print(f"Bell-{row['bell']} {row['embedding']:<11} {row['loss']:<7} "
              f"acc {row['accuracy_mean']:.3f}  success {row['success_mean']:.4f} "
              f"+- {row['success_std']:.4f}")


# ---------------------------------------------------------------------------
# synth and dnn

SYNTH_FIELDS = ["dataset_seed", "bell", "depth", "mixing_depth", "repeat", "seed",
                "param_count", "train_acc", "val_acc", "final_loss"]


def _load_dataset(cfg: dict):
    if cfg.get("dataset"):
        root = Path(cfg["dataset"])
        try:
            x_tr, y_tr, _ = datasets.read_csv(root / "train.csv")
            x_va, y_va, _ = datasets.read_csv(root / "val.csv")
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load dataset: {exc}") from None
        return (x_tr, y_tr), (x_va, y_va)
    ds = datasets.gen_synthetic(cfg["dataset_seed"])
    return ds.train, ds.val


def synth_cell(cell: tuple) -> dict:
    cfg, bell, depth, rep, out = cell
    seed = derive_seed(cfg["seed"], bell, depth, cfg["mixing_depth"], rep)
    circ = _synth_circuit(cfg, bell, depth)
    tcfg = _train_config(cfg, cfg["loss"], cfg["omega_mode"], seed)
    tr, va = _load_dataset(cfg)
    stem = Path(out) / f"bell{bell}_d{depth}_m{cfg['mixing_depth']}_r{rep}"
    ckpt = stem.with_suffix(".ckpt.json")
    state = None
    if ckpt.exists():
        state = load_checkpoint(ckpt)
    state = train(circ, tcfg, tr, va, state=state, log_path=stem.with_suffix(".log.csv"))
    _check_finite(state.opt.params)
    save_checkpoint(state, ckpt)
    last = state.history[-1]
    return {"dataset_seed": cfg["dataset_seed"], "bell": bell, "depth": depth,
            "mixing_depth": cfg["mixing_depth"], "repeat": rep, "seed": seed,
            "param_count": state.n_circuit, "train_acc": last["train_acc"],
            "val_acc": last["val_acc"], "final_loss": last["loss"]}


def cmd_synth(cfg: dict, out: Path) -> None:
    cells = [(cfg, b, d, r, str(out)) for b in cfg["bell"] for d in cfg["depth"]
             for r in range(cfg["repeats"])]
    rows = _map(synth_cell, cells, cfg["workers"])
    _write_csv(out / "synth_runs.csv", rows, SYNTH_FIELDS)
    summary = summarize(rows, ["bell", "depth", "mixing_depth"], ["val_acc"])
    _write_csv(out / "synth_summary.csv", summary,
               ["bell", "depth", "mixing_depth", "n", "val_acc_mean", "val_acc_std"])
    _write_manifest(out, "synth", cfg, ["synth_runs.csv", "synth_summary.csv"])
    for row in summary:
        print(f"Bell-{row['bell']} depth {row['depth']} mixing {row['mixing_depth']}: "
              f"val acc {row['val_acc_mean']:.3f} +- {row['val_acc_std']:.3f}")


DNN_FIELDS = ["dataset_seed", "repeat", "seed", "param_count", "train_acc", "val_acc", "final_loss"]


def dnn_cell(cell: tuple) -> dict:
    cfg, rep, out = cell
    seed = derive_seed(cfg["seed"], rep)
    tr, va = _load_dataset(cfg)
    net, history = dnn.train_dnn(_train_config(cfg, "mse", "free", seed), tr, va)
    _check_finite(net.params)
    write_history(history, Path(out) / f"dnn_r{rep}.log.csv")
    last = history[-1]
    return {"dataset_seed": cfg["dataset_seed"], "repeat": rep, "seed": seed,
            "param_count": net.params.size, "train_acc": last["train_acc"],
            "val_acc": last["val_acc"], "final_loss": last["loss"]}


def cmd_dnn(cfg: dict, out: Path) -> None:
    print(f"parameters: {dnn.dnn_param_count()}")
    rows = _map(dnn_cell, [(cfg, r, str(out)) for r in range(cfg["repeats"])], cfg["workers"])
    _write_csv(out / "dnn_runs.csv", rows, DNN_FIELDS)
    _write_manifest(out, "dnn", cfg, ["dnn_runs.csv"])
    s = summarize(rows, ["dataset_seed"], ["val_acc"])[0]
    print(f"val acc {s['val_acc_mean']:.3f} +- {s['val_acc_std']:.3f}")


# ---------------------------------------------------------------------------
# effdim

def effdim_cell(cell: tuple) -> list[dict]:
    cfg, bell = cell
    protocol = effdim.EDProtocol(cfg["n_haar"], cfg["n_paramsets"], cfg["rank_tol_rel"], cfg["seed"])
    rows = effdim.depth_sweep(_effdim_circuit(cfg, bell, cfg["mixing_depth"] + 1), protocol,
                              d_max=cfg["depth"], patience=cfg["patience"])
    for row in rows:
        if not np.isfinite(row["gap"]) and row["ed"] < row["param_count"]:
            raise NumericalError("Fisher spectrum without a finite gap")
    return rows


def cmd_effdim(cfg: dict, out: Path) -> None:
    rows = [r for rs in _map(effdim_cell, [(cfg, b) for b in cfg["bell"]], cfg["workers"]) for r in rs]
    effdim.write_sweep_csv(rows, out / "effdim.csv")
    _write_manifest(out, "effdim", cfg, ["effdim.csv"])
    for bell in cfg["bell"]:
        eds = [str(r["ed"]) for r in rows if r["n_bell"] == bell]
        print(f"Bell-{bell}: " + " ".join(eds))


# ---------------------------------------------------------------------------
# report

REPORT_SCHEMAS = {
    "chsh_runs.csv": (["bell", "embedding", "loss"], ["accuracy", "success", "S", "P_win"]),
    "synth_runs.csv": (["dataset_seed", "bell", "depth", "mixing_depth"], ["val_acc", "train_acc"]),
    "dnn_runs.csv": (["dataset_seed"], ["val_acc", "train_acc"]),
}


def summarize(rows: list[dict], keys: list[str], metrics: list[str]) -> list[dict]:
    """Mean and sample std of ``metrics`` per distinct ``keys`` tuple."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, grp in groups.items():
        rec = dict(zip(keys, key))
        rec["n"] = len(grp)
        for m in metrics:
            vals = np.array([float(r[m]) for r in grp])
            rec[f"{m}_mean"] = float(vals.mean())
            rec[f"{m}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append(rec)
    return out


def cmd_report(paths: list[str], out: Path) -> None:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.rglob("*_runs.csv"))
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"no such run output: {p}")
    if not files:
        raise ConfigError("no run outputs found")
    kinds = {f.name for f in files}
    if len(kinds) != 1 or next(iter(kinds)) not in REPORT_SCHEMAS:
        raise ConfigError(f"cannot merge run outputs of different kinds: {sorted(kinds)}")
    kind = kinds.pop()
    keys, metrics = REPORT_SCHEMAS[kind]
    rows, header = [], None
    for f in files:
        with open(f, newline="") as fh:
            reader = csv.DictReader(fh)
            if header is None:
                header = reader.fieldnames
            elif reader.fieldnames != header:
                raise ConfigError(f"{f}: columns differ from {files[0]}")
            rows += list(reader)
    if not rows:
        raise ConfigError("run outputs contain no rows")
    summary = summarize(rows, keys, metrics)
    fields = keys + ["n"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    _write_csv(out / "report.csv", summary, fields)
    (out / "report.json").write_text(json.dumps({"source": [str(f) for f in files],
                                                  "rows": summary}, indent=2) + "\n")
    for row in summary:
        print(", ".join(f"{k}={row[k]}" for k in keys) + ": " +
              ", ".join(f"{m} {row[f'{m}_mean']:.4f} +- {row[f'{m}_std']:.4f}" for m in metrics))


# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _str_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("chsh", "extended-CHSH training campaign"),
                           ("synth", "synthetic-dataset classification campaign"),
                           ("effdim", "effective-dimension depth sweeps"),
                           ("dnn", "classical two-branch baseline"),
                           ("report", "aggregate run outputs")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        if name == "report":
            p.add_argument("paths", nargs="*", help="run directories or *_runs.csv files")
            continue
        p.add_argument("--config", help="JSON file with configuration keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
        if name != "effdim":
            p.add_argument("--repeats", type=int)
            p.add_argument("--iterations", type=int)
        if name in ("chsh", "synth", "effdim"):
            p.add_argument("--bell", type=_int_list, help="comma-separated Bell-pair counts")
        if name == "chsh":
            p.add_argument("--depth", type=int, help="conv depth")
            p.add_argument("--loss", type=_str_list, help="product,mse")
            p.add_argument("--embedding", type=_str_list, help="optimal,alternative")
        if name == "synth":
            p.add_argument("--depth", type=_int_list, help="comma-separated conv depths")
            p.add_argument("--loss", help="mse or product")
        if name == "effdim":
            p.add_argument("--depth", type=int, help="maximum total depth of the sweep")
            p.add_argument("--n-haar", dest="n_haar", type=int)
            p.add_argument("--n-paramsets", dest="n_paramsets", type=int)
        if name in ("synth", "effdim"):
            p.add_argument("--mixing-depth", dest="mixing_depth", type=int)
            p.add_argument("--second-stage-depth", dest="second_stage_depth", type=int)
        if name in ("synth", "dnn"):
            p.add_argument("--dataset-seed", dest="dataset_seed", type=int)
            p.add_argument("--dataset", help="directory with train.csv and val.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "report":
            out.mkdir(parents=True, exist_ok=True)
            cmd_report(args.paths, out)
            return 0
        cfg = resolve(args.command, args)
        out.mkdir(parents=True, exist_ok=True)
        {"chsh": cmd_chsh, "synth": cmd_synth, "effdim": cmd_effdim, "dnn": cmd_dnn}[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
