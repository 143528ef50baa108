"""Command-line entry point: ``fscil-replay {toy-demo,run-fscil,gen-data,report}``.

Every command writes ``run_manifest.json`` before doing any work and fills in
artifact checksums when it finishes. The exit code is 0 only when every
requested artifact was written; configuration problems exit with 2, runtime
failures with 1.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .datasets import ToyConfig, gen_pattern_set, gen_toy_gaussians, save_dataset, toy_class_specs
from .errors import ContractViolation
from .metrics import SessionReport, export_report, final_improvement, load_report, softmax_entropy
from .models import argmax_class, save_model
from .presets import build_protocol, dataset_errors, preset
from .replay import GenTrainConfig, dump_replay_csv, sample_replay, train_generator
from .session import ABLATION_ARMS, Ablation, ProtocolConfig, base_train, run_protocol

logger = logging.getLogger("fscil_replay")

OUT_ENV = "FSCIL_REPLAY_OUT"
MANIFEST = "run_manifest.json"
TOP_KEYS = {"seed", "dataset", "protocol"}
TOY_DEMO_KEYS = TOP_KEYS | {"samples", "grid_size"}


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# -- configuration ------------------------------------------------------------

def parse_override(text: str) -> tuple:
    """``key=value`` with a JSON value (bare words fall back to strings)."""
    if "=" not in text:
        raise ConfigError([f"--set expects key=value, got {text!r}"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(cfg: dict, key: str, value) -> None:
    """Dotted keys address nested sections; keys not rooted at a top-level name go to ``protocol``."""
    parts = key.split(".")
    if parts[0] not in TOY_DEMO_KEYS:
        parts = ["protocol"] + parts
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"--set {key}: {p!r} is not a section"])
    node[parts[-1]] = value


def load_config(path: Optional[str], preset_name: Optional[str], overrides: list, seed: Optional[int]) -> dict:
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}:{exc.lineno}: invalid JSON ({exc.msg})"]) from None
        if not isinstance(cfg, dict):
            raise ConfigError([f"{path}: top level must be an object"])
    else:
        cfg = preset(preset_name or "toy")
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    cfg.setdefault("protocol", {})
    cfg.setdefault("dataset", {"kind": "toy"})
    return cfg


def _dataclass_errors(cls, data, where: str) -> list:
    if not isinstance(data, dict):
        return [f"{where} must be an object"]
    known = {f.name for f in fields(cls)}
    return [f"{where}.{k} is not a known option" for k in sorted(set(data) - known)]


def _construct_errors(build, where: str) -> list:
    try:
        build()
    except ContractViolation as exc:
        return [f"{where}: {msg}" for msg in str(exc).split("; ")]
    except (TypeError, ValueError) as exc:
        return [f"{where}: {exc}"]
    return []


def validate_config(cfg: dict, allowed_top=TOP_KEYS) -> list:
    """Every problem in ``cfg`` at once, as human-readable lines."""
    errors = [f"{k} is not a known top-level key" for k in sorted(set(cfg) - allowed_top)]
    if not isinstance(cfg.get("seed"), int) or isinstance(cfg.get("seed"), bool):
        errors.append(f"seed must be an integer (got {cfg.get('seed')!r})")
    ds = cfg.get("dataset")
    errors += dataset_errors(ds) if isinstance(ds, dict) else ["dataset must be an object"]
    proto = cfg.get("protocol")
    errors += _dataclass_errors(ProtocolConfig, proto, "protocol")
    if isinstance(proto, dict):
        gen = proto.get("gen_cfg", {})
        abl = proto.get("ablation", {})
        gen_errs = _dataclass_errors(GenTrainConfig, gen, "protocol.gen_cfg")
        abl_errs = _dataclass_errors(Ablation, abl, "protocol.ablation")
        errors += gen_errs + abl_errs
        if not gen_errs:
            errors += _construct_errors(lambda: GenTrainConfig(**gen), "protocol.gen_cfg")
        known = {f.name for f in fields(ProtocolConfig)}
        rest = {k: v for k, v in proto.items() if k in known and k not in ("gen_cfg", "ablation")}
        errors += _construct_errors(lambda: ProtocolConfig(**rest), "protocol")
    if not errors:
        errors += _construct_errors(lambda: build_protocol(ds, cfg["seed"]), "dataset")
    return errors


def protocol_config(cfg: dict) -> ProtocolConfig:
    proto = copy.deepcopy(cfg["protocol"])
    proto["seed"] = cfg["seed"]
    return ProtocolConfig.from_dict(proto)


# -- manifest -----------------------------------------------------------------

def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    """Command, resolved config and artifact checksums for one output directory."""

    def __init__(self, out_dir: Path, command: str, config: dict, config_path: Optional[str], argv: list):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / MANIFEST
        self.data = {
            "command": command,
            "argv": argv,
            "config_path": config_path,
            "config": config,
            "seed": config.get("seed"),
            "output_dir": str(self.out_dir),
            "package_version": __version__,
            "started": _now(),
            "finished": None,
            "status": "running",
            "artifacts": {},
        }

    def write(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")

    def finish(self, status: str) -> None:
        arts = {}
        for p in sorted(self.out_dir.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                arts[p.relative_to(self.out_dir).as_posix()] = sha256_file(p)
        self.data.update(finished=_now(), status=status, artifacts=arts)
        self.write()


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- toy-demo -----------------------------------------------------------------

def toy_demo(cfg: dict, out: Path) -> dict:
    """Teacher on the toy base classes, then generators with and without the entropy term."""
    pcfg = protocol_config(cfg)
    sessions, _ = build_protocol(cfg["dataset"], cfg["seed"])
    teacher = base_train(sessions[0], pcfg)
    n = int(cfg.get("samples", 1000))
    weight_on = pcfg.gen_cfg.entropy_weight or 1.0
    summary = {"seed": cfg["seed"], "samples": n, "entropy_weight": weight_on,
               "teacher_classes": list(teacher.class_ids)}
    for tag, weight in (("er", weight_on), ("noer", 0.0)):
        gcfg = copy.deepcopy(pcfg.effective_gen_cfg(1))
        gcfg.entropy_weight = weight
        gen, _ = train_generator(teacher, gcfg)
        batch = sample_replay(gen, teacher, n, np.random.default_rng(cfg["seed"] + 77))
        dump_replay_csv(batch, out / f"samples_{tag}.csv")
        summary[f"mean_entropy_{tag}"] = float(batch.teacher_entropy.mean())
        counts = np.bincount(batch.labels, minlength=max(teacher.class_ids) + 1)
        summary[f"label_histogram_{tag}"] = {str(c): int(counts[c]) for c in teacher.class_ids}

    k = int(cfg.get("grid_size", 61))
    axis = np.linspace(-1.0, 1.0, k)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float32)
    logits = teacher.logits(pts)
    ent = softmax_entropy(logits)
    pred = argmax_class(logits, teacher.class_ids)
    rows = [["%.6g" % p[0], "%.6g" % p[1], int(c), "%.9g" % h] + ["%.9g" % v for v in lg]
            for p, c, h, lg in zip(pts, pred, ent, logits)]
    _write_csv(out / "grid.csv", ["x0", "x1", "label", "entropy"] + [f"logit_{c}" for c in teacher.class_ids], rows)
    summary["er_exceeds_noer"] = summary["mean_entropy_er"] > summary["mean_entropy_noer"]
    _write_json(out / "summary.json", summary)
    return summary


# -- run-fscil ----------------------------------------------------------------

def _save_session_checkpoints(out: Path, runs: list, final_model) -> None:
    models = [runs[0].model_before] + [r.model_after for r in runs] if runs else [final_model]
    for i, m in enumerate(models):
        if m is not None:
            save_model(m, out / "checkpoints" / f"session_{i}")


def _write_histograms(out: Path, report: SessionReport) -> None:
    rows = [[s, c, n] for s, h in enumerate(report.replay_histograms) for c, n in sorted(h.items())]
    _write_csv(out / "replay_histograms.csv", ["session", "class_id", "count"], rows)


def run_single(cfg: dict, out: Path) -> dict:
    """One protocol run into ``out``; returns a summary row. Never raises on run failure."""
    out.mkdir(parents=True, exist_ok=True)
    pcfg = protocol_config(cfg)
    _write_json(out / "config.json", {**cfg, "protocol": {**pcfg.to_dict()}})
    sessions, tests = build_protocol(cfg["dataset"], cfg["seed"])
    runs: list = []
    try:
        report = run_protocol(sessions, tests, pcfg, runs=runs)
    except Exception as exc:  # the partial report and an error record are artifacts of a failed run
        partial = getattr(exc, "partial_report", None)
        if partial is not None:
            export_report(partial, out / "report.json", "json")
            export_report(partial, out / "report.csv", "csv")
            _write_histograms(out, partial)
        if runs:
            _save_session_checkpoints(out, runs, None)
        _write_json(out / "error.json", {
            "type": type(exc).__name__, "message": str(exc),
            "completed_sessions": len(partial.per_session_accuracy) if partial else 0,
            "traceback": traceback.format_exc().splitlines()[-6:],
        })
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "dir": str(out)}
    export_report(report, out / "report.json", "json")
    export_report(report, out / "report.csv", "csv")
    _write_histograms(out, report)
    _save_session_checkpoints(out, runs, report.final_model)
    return {"ok": True, "dir": str(out), "average_accuracy": report.average_accuracy,
            "final_accuracy": report.final_accuracy,
            "final_base_accuracy": report.per_session_base_accuracy[-1]}


def _job(args):
    cfg, out = args
    return run_single(cfg, Path(out))


def _variants(cfg: dict, grid: Optional[list], sweep: Optional[list]) -> list:
    if grid is not None and sweep is not None:
        raise ConfigError(["--ablation-grid and --replay-sweep are separate experiments; pass one"])
    if grid is not None:
        out = []
        for arm in grid:
            c = copy.deepcopy(cfg)
            c["protocol"]["ablation"] = dict(ABLATION_ARMS[arm].__dict__)
            out.append((arm, c))
        return out
    if sweep is not None:
        out = []
        for n in sweep:
            c = copy.deepcopy(cfg)
            c["protocol"]["replay_count"] = n
            out.append((f"replay_{n}", c))
        return out
    return [("", cfg)]


def run_fscil(cfg: dict, out: Path, seeds: list, grid: Optional[list], sweep: Optional[list], jobs: int = 1) -> bool:
    jobs_list, keys = [], []
    for name, vcfg in _variants(cfg, grid, sweep):
        for s in seeds:
            c = copy.deepcopy(vcfg)
            c["seed"] = s
            d = out / name if name else out
            if len(seeds) > 1:
                d = d / f"seed_{s}"
            jobs_list.append((c, str(d)))
            keys.append((name, s))
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, jobs_list))
    else:
        results = [_job(j) for j in jobs_list]
    for (name, s), r in zip(keys, results):
        tag = f"{name or 'run'} seed {s}"
        if r["ok"]:
            logger.info("%s: average %.4f final %.4f", tag, r["average_accuracy"], r["final_accuracy"])
        else:
            logger.error("%s failed: %s", tag, r["error"])

    def aggregate(name):
        rs = [r for (n, _), r in zip(keys, results) if n == name and r["ok"]]
        if not rs:
            return ["nan", "nan", "nan", 0]
        return ["%.6f" % np.mean([r[k] for r in rs]) for k in ("average_accuracy", "final_accuracy",
                                                              "final_base_accuracy")] + [len(rs)]

    if grid is not None:
        _write_csv(out / "ablation.csv", ["arm", "average_accuracy", "final_accuracy", "final_base_accuracy", "runs"],
                   [[arm] + aggregate(arm) for arm in grid])
    if sweep is not None:
        _write_csv(out / "replay_sweep.csv",
                   ["replay_count", "average_accuracy", "final_accuracy", "final_base_accuracy", "runs"],
                   [[n] + aggregate(f"replay_{n}") for n in sweep])
    return all(r["ok"] for r in results)


# -- gen-data -----------------------------------------------------------------

GEN_DATA_KEYS = {
    "toy": {"kind", "seed", "classes", "per_class", "radius", "std"},
    "pattern": {"kind", "seed", "classes", "per_class", "size", "noise"},
    "gaussians": {"kind", "seed", "classes"},
}


def gen_data_errors(spec: dict) -> list:
    kind = spec.get("kind")
    if kind not in GEN_DATA_KEYS:
        return [f"kind must be one of {sorted(GEN_DATA_KEYS)} (got {kind!r})"]
    errors = [f"{k} is not a {kind} option" for k in sorted(set(spec) - GEN_DATA_KEYS[kind])]
    if kind == "gaussians":
        classes = spec.get("classes")
        if not isinstance(classes, list) or not classes:
            errors.append("gaussians.classes must be a non-empty list of {mean, cov, count}")
        else:
            for i, c in enumerate(classes):
                miss = {"mean", "cov", "count"} - set(c)
                if miss:
                    errors.append(f"classes[{i}] lacks {sorted(miss)}")
    if not errors:
        errors += _construct_errors(lambda: build_dataset(spec), "spec")
    return errors


def build_dataset(spec: dict):
    seed = int(spec.get("seed", 0))
    kind = spec["kind"]
    if kind == "toy":
        tc = ToyConfig(**{k: spec[k] for k in ("radius", "std") if k in spec})
        classes = int(spec.get("classes", 3))
        all_specs = toy_class_specs(tc, int(spec.get("per_class", 200)))
        if not 1 <= classes <= len(all_specs):
            raise ContractViolation(f"toy classes must be in 1..{len(all_specs)} (got {classes})")
        return gen_toy_gaussians(all_specs[:classes], seed=seed)
    if kind == "pattern":
        return gen_pattern_set(int(spec.get("classes", 10)), int(spec.get("per_class", 30)),
                               int(spec.get("size", 8)), seed=seed, noise=float(spec.get("noise", 0.3)))
    return gen_toy_gaussians([(c["mean"], c["cov"], c["count"]) for c in spec["classes"]], seed=seed)


# -- report -------------------------------------------------------------------

def summarize_run_dir(run_dir: Path) -> dict:
    """Re-derive summaries from every ``report.json`` under ``run_dir``."""
    rows = []
    for path in sorted(run_dir.rglob("report.json")):
        rep = load_report(path)
        rel = path.parent.relative_to(run_dir).as_posix()
        rows.append({"run": rel if rel != "." else "", "seed": rep.seed, "sessions": len(rep.per_session_accuracy),
                     "average_accuracy": rep.average_accuracy, "final_accuracy": rep.final_accuracy,
                     "final_base_accuracy": rep.per_session_base_accuracy[-1] if rep.per_session_base_accuracy
                     else None, "_report": rep})
    if not rows:
        raise ContractViolation(f"no report.json found under {run_dir}")
    groups: dict = {}
    for r in rows:
        groups.setdefault(r["run"].split("/seed_")[0] if "/seed_" in r["run"] or r["run"].startswith("seed_")
                          else r["run"], []).append(r)
    for g in list(groups):
        if g.startswith("seed_"):
            groups.setdefault("", []).extend(groups.pop(g))
    summary = {"runs": [{k: v for k, v in r.items() if k != "_report"} for r in rows], "groups": {}}
    for g, rs in sorted(groups.items()):
        summary["groups"][g or "."] = {
            "runs": len(rs),
            "mean_average_accuracy": float(np.mean([r["average_accuracy"] for r in rs])),
            "mean_final_accuracy": float(np.mean([r["final_accuracy"] for r in rs])),
        }
    if "full" in groups:
        ref = {r["seed"]: r["_report"] for r in groups["full"]}
        imp = {}
        for g, rs in groups.items():
            pairs = [final_improvement(ref[r["seed"]], r["_report"]) for r in rs if r["seed"] in ref and g != "full"]
            if pairs:
                imp[g] = float(np.mean(pairs))
        summary["final_improvement_of_full_over"] = dict(sorted(imp.items()))
    return summary


# -- argument parsing ---------------------------------------------------------

def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _arm_list(text: str) -> list:
    arms = [a.strip() for a in text.split(",") if a.strip()] if text else list(ABLATION_ARMS)
    bad = [a for a in arms if a not in ABLATION_ARMS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown arms {bad}; choose from {list(ABLATION_ARMS)}")
    return arms


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fscil-replay", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_preset=True):
        sp.add_argument("--config", help="JSON run config (default: the built-in preset)")
        if with_preset:
            sp.add_argument("--preset", choices=["toy", "pattern"], help="built-in config to start from")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value; dotted keys reach nested sections, bare keys go to protocol")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./runs, plus the command name)")

    common(sub.add_parser("toy-demo", help="toy teacher + generators with and without the entropy term"),
           with_preset=False)
    rf = sub.add_parser("run-fscil", help="run the few-shot class-incremental protocol")
    common(rf)
    rf.add_argument("--seeds", type=_int_list, help="comma-separated seeds; one subdirectory per seed")
    rf.add_argument("--ablation-grid", nargs="?", const="", type=_arm_list, metavar="ARMS",
                    help=f"one subdirectory per arm (default all of {','.join(ABLATION_ARMS)})")
    rf.add_argument("--replay-sweep", type=_int_list, metavar="COUNTS", help="replay counts to compare, e.g. 0,5,25")
    rf.add_argument("--jobs", type=int, default=1, help="parallel worker processes for grids and sweeps")

    gd = sub.add_parser("gen-data", help="materialise a synthetic dataset (manifest JSON + CSV body)")
    gd.add_argument("--spec", help="JSON spec file or inline JSON object")
    gd.add_argument("--kind", choices=sorted(GEN_DATA_KEYS), help="shortcut for a default spec of this kind")
    gd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    gd.add_argument("--seed", type=int)
    gd.add_argument("--out", required=True, help="output path stem (writes <stem>.json and <stem>.csv)")

    rp = sub.add_parser("report", help="re-derive summaries from a run directory")
    rp.add_argument("run_dir")
    rp.add_argument("--out", help="where to write summary.json (default: inside run_dir)")
    return p


def _default_out(command: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / command


def _fail_config(errors: list) -> int:
    print("configuration errors:", file=sys.stderr)
    for e in errors:
        print(f"  - {e}", file=sys.stderr)
    return 2


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-data":
            return _main_gen_data(args, argv)
        if args.command == "report":
            return _main_report(args)
        cfg = load_config(args.config, getattr(args, "preset", None), args.set, args.seed)
    except ConfigError as exc:
        return _fail_config(exc.errors)
    errors = validate_config(cfg, TOY_DEMO_KEYS if args.command == "toy-demo" else TOP_KEYS)
    if args.command == "toy-demo" and not errors and cfg["dataset"].get("kind") != "toy":
        errors.append("toy-demo needs dataset.kind = 'toy' (the grid covers a 2-D input plane)")
    if args.command == "run-fscil" and args.ablation_grid is not None and args.replay_sweep is not None:
        errors.append("--ablation-grid and --replay-sweep are separate experiments; pass one")
    if errors:
        return _fail_config(errors)

    out = Path(args.out) if args.out else _default_out(args.command)
    manifest = RunManifest(out, args.command, cfg, args.config, argv)
    manifest.write()
    try:
        if args.command == "toy-demo":
            summary = toy_demo(cfg, out)
            print(f"mean teacher entropy: with entropy term {summary['mean_entropy_er']:.4f}, "
                  f"without {summary['mean_entropy_noer']:.4f}")
            ok = True
        else:
            seeds = args.seeds or [cfg["seed"]]
            ok = run_fscil(cfg, out, seeds, args.ablation_grid, args.replay_sweep, args.jobs)
    except Exception as exc:
        _write_json(out / "error.json", {"type": type(exc).__name__, "message": str(exc)})
        manifest.finish("failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    manifest.finish("complete" if ok else "failed")
    print(f"wrote {out}")
    return 0 if ok else 1


def _main_gen_data(args, argv) -> int:
    if args.spec:
        text = args.spec
        try:
            spec = json.loads(text) if text.lstrip().startswith("{") else json.loads(Path(text).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            return _fail_config([f"cannot read spec {text}: {exc}"])
    else:
        spec = {"kind": args.kind or "toy"}
    for text in args.set:
        k, v = parse_override(text)
        spec[k] = v
    if args.seed is not None:
        spec["seed"] = args.seed
    errors = gen_data_errors(spec)
    if errors:
        return _fail_config(errors)
    stem = Path(args.out)
    stem = stem.with_suffix("") if stem.suffix in (".json", ".csv") else stem
    manifest = RunManifest(stem.parent, "gen-data", spec, args.spec, argv)
    manifest.path = stem.parent / f"{stem.name}.run.json"
    manifest.write()
    paths = save_dataset(build_dataset(spec), stem)
    manifest.data.update(finished=_now(), status="complete",
                         artifacts={p.name: sha256_file(p) for p in paths})
    manifest.write()
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def _main_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        print(f"error: {run_dir} is not a directory", file=sys.stderr)
        return 2
    try:
        summary = summarize_run_dir(run_dir)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    dest = Path(args.out) if args.out else run_dir / "summary.json"
    _write_json(dest, summary)
    for name, g in summary["groups"].items():
        print(f"{name:24s} runs={g['runs']}  average={g['mean_average_accuracy']:.4f}  "
              f"final={g['mean_final_accuracy']:.4f}")
    for name, v in summary.get("final_improvement_of_full_over", {}).items():
        print(f"final improvement of full over {name}: {100 * v:+.2f} points")
    return 0


if __name__ == "__main__":
    sys.exit(main())
