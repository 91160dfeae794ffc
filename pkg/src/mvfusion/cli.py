"""Command-line entry point: ``mvfusion <subcommand> [flags]``.

Subcommands: datagen, train, eval, crossval, stream, bench.  Every error
goes to stderr as one line ``mvfusion: error: <kind>: <message>`` and the
process exits non-zero (2 usage, 3 invalid input, 4 missing file).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import combiner, datagen, evaluator, fusion, inducer, temporal
from .core import TASKS, Dataset, InputError, Task, read_jsonl, write_jsonl
from .nn import TrainConfig

log = logging.getLogger("mvfusion")

METHOD_NAMES = {"nv": "NaiveVoting", "wmv": "WMV", "bmc": "BMC", "wmv_bmc": "WMV+BMC",
                "lf": "LateFusion"}
SUBSET_NAMES = {"complete-only": "complete_only", "all": "all"}
EXIT_USAGE, EXIT_INPUT, EXIT_MISSING = 2, 3, 4


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- configuration ---------------------------------------------------------------

GEN_KEYS = {f.name for f in dataclasses.fields(datagen.GenConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
FLAG_KEYS = {"seed", "task", "models", "methods", "subset", "k", "window", "sustain", "preset"}


def read_config(path) -> dict:
    """``key = value`` lines; values are JSON when they parse, strings otherwise."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in GEN_KEYS | TRAIN_KEYS | FLAG_KEYS:
            raise InputError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve(args) -> dict:
    """Config file values overlaid by whichever flags were given."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key in FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def gen_config(cfg: dict, occlusion: str | None = None) -> datagen.GenConfig:
    kw = {k: v for k, v in cfg.items() if k in GEN_KEYS}
    if "seed" in cfg:
        kw["rng_seed"] = int(cfg["seed"])
    cfg_obj = datagen.GenConfig(**kw)
    if occlusion == "off":
        cfg_obj = cfg_obj.replace(occlusion_matrix=np.zeros_like(np.asarray(cfg_obj.occlusion_matrix)))
    return cfg_obj


def train_config(cfg: dict) -> TrainConfig:
    kw = {k: v for k, v in cfg.items() if k in TRAIN_KEYS}
    if "seed" in cfg:
        kw["rng_seed"] = int(cfg["seed"])
    return TrainConfig(**kw)


def stream_config(cfg: dict) -> temporal.StreamConfig:
    return temporal.StreamConfig(window_size=int(cfg.get("window", temporal.DEFAULT_WINDOW)),
                                 sustain_threshold=int(cfg.get("sustain", temporal.DEFAULT_SUSTAIN)))


def selected_tasks(cfg: dict) -> list[Task]:
    t = cfg.get("task", "all")
    return list(TASKS) if t == "all" else [Task(t)]


def selected_methods(cfg: dict) -> list[str]:
    m = cfg.get("methods", "all")
    return list(evaluator.ENSEMBLE_METHODS) if m == "all" else [METHOD_NAMES[m]]


def architecture(cfg: dict) -> fusion.FusionArch:
    return fusion.PRESETS[cfg.get("preset", "desk")]


# -- file helpers ----------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: nan -> None, numpy scalars -> Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    evaluator.write_json(_clean(obj), path)


def out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_dataset(path) -> Dataset:
    if path is None:
        raise InputError("--dataset is required")
    return read_jsonl(path)


def inducer_path(d: Path, task: Task, view: int) -> Path:
    return d / f"inducer_{task.value}_view{view}.json"


def fusion_path(d: Path, task: Task) -> Path:
    return d / f"fusion_{task.value}.json"


def discounts_path(d: Path, task: Task) -> Path:
    return d / f"discounts_{task.value}.json"


def save_models(models: evaluator.TrainedModels, d: Path) -> list[dict]:
    """Write checkpoints; return training-curve rows."""
    rows = []
    for task, ms in models.inducers.items():
        for m in ms:
            m.save(inducer_path(d, task, m.view_id))
            rows += [{"model": "inducer", "task": task.value, "view": m.view_id, **h} for h in m.history]
        disc = models.discounts[task]
        write_json({"mistakes": disc.mistakes.tolist(), "d": disc.d.tolist()}, discounts_path(d, task))
    for task, m in models.fusion.items():
        m.save(fusion_path(d, task))
        rows += [{"model": "fusion", "task": task.value, "view": "", **h} for h in m.history]
    return rows


def load_models(d, tasks, methods, num_views: int) -> evaluator.TrainedModels:
    if d is None:
        raise InputError("--checkpoints is required")
    d = Path(d)
    if not d.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {d}")
    out = evaluator.TrainedModels()
    for task in tasks:
        if any(m in evaluator.VOTING_METHODS for m in methods):
            out.inducers[task] = [inducer.InducerModel.load(inducer_path(d, task, j))
                                  for j in range(num_views)]
            p = discounts_path(d, task)
            if not p.exists():
                raise FileNotFoundError(f"discounts not found: {p}")
            out.discounts[task] = combiner.discounts_from_mistakes(json.loads(p.read_text())["mistakes"])
        if "LateFusion" in methods:
            out.fusion[task] = fusion.FusionModel.load(fusion_path(d, task))
    return out


def write_curves(rows: list[dict], path) -> None:
    fields = ("model", "task", "view", "epoch", "train_loss", "val_loss")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k.endswith("loss") else r[k]) for k in fields})


def evaluate(models: evaluator.TrainedModels, test: Dataset, tasks, methods, subsets) -> list:
    reports = []
    for task in tasks:
        if task in models.inducers:
            reports += evaluator.eval_single_views(models.inducers[task], test, task).reports
        for subset in subsets:
            reports += evaluator.eval_ensembles(models.inducers.get(task, []), models.fusion.get(task),
                                                models.discounts.get(task), test, task, subset, methods)
    return reports


def write_reports(reports, d: Path, stem: str) -> None:
    evaluator.write_csv(reports, d / f"{stem}.csv")
    write_json([r.summary() for r in reports], d / f"{stem}.json")
    bars = {f"{r.task_id.value} {r.method} ({r.subset})": r.macro_accuracy for r in reports}
    evaluator.write_svg(bars, d / f"{stem}.svg")


def test_part(ds: Dataset) -> Dataset:
    return ds.tagged("test") if ds.split is not None else ds


# -- subcommands -----------------------------------------------------------------


def cmd_datagen(args) -> None:
    cfg = resolve(args)
    gc = gen_config(cfg, args.occlusion)
    ds = datagen.generate(gc)
    if args.split == "random":
        ds = datagen.split(ds, seed=gc.rng_seed)
    out = Path(args.out or "dataset.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(ds, out)
    write_json(gc.to_dict(), out.with_suffix(".config.json"))
    print(f"wrote {len(ds)} collections to {out} (complete fraction {ds.complete_fraction():.4f})")


def cmd_train(args) -> None:
    cfg = resolve(args)
    ds = load_dataset(args.dataset)
    if ds.split is None:
        raise InputError("dataset has no train/val/test tags; regenerate with --split random")
    d = out_dir(args.out or "checkpoints")
    which = cfg.get("models", "all")
    models = evaluator.train_models(ds, selected_tasks(cfg), train_config(cfg), architecture(cfg),
                                    which=which)
    write_curves(save_models(models, d), d / "training_curves.csv")
    print(f"wrote checkpoints to {d}")


def cmd_eval(args) -> None:
    cfg = resolve(args)
    ds = load_dataset(args.dataset)
    tasks, methods = selected_tasks(cfg), selected_methods(cfg)
    models = load_models(args.checkpoints, tasks, methods, ds.num_views)
    subset = SUBSET_NAMES[cfg.get("subset", "all")]
    reports = evaluate(models, test_part(ds), tasks, methods, [subset])
    d = out_dir(args.out or "reports")
    write_reports(reports, d, "eval")
    print(f"wrote {len(reports)} reports to {d}")


def cmd_crossval(args) -> None:
    cfg = resolve(args)
    ds = load_dataset(args.dataset)
    tasks, methods = selected_tasks(cfg), selected_methods(cfg)
    tc, arch = train_config(cfg), architecture(cfg)
    which = "all" if ("LateFusion" in methods and len(methods) > 1) else (
        "fusion" if methods == ["LateFusion"] else "inducers")
    res = evaluator.loso_crossval(
        ds, tasks, cfg.get("k"), lambda d, ts: evaluator.train_models(d, ts, tc, arch, which=which),
        methods=methods, split_seed=tc.rng_seed)
    d = out_dir(args.out or "crossval")
    with open(d / "crossval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=("task", "method", "fold", "macro_accuracy"), lineterminator="\n")
        w.writeheader()
        for r in res.reports:
            w.writerow({"task": r.task_id.value, "method": r.method, "fold": r.fold_id,
                        "macro_accuracy": repr(r.macro_accuracy)})
    evaluator.write_csv(res.reports, d / "crossval_per_class.csv")
    write_json({f"{t}/{m}": {"mean": mu, "variance": var}
                for (t, m), (mu, var) in sorted(res.summary().items())}, d / "crossval.json")
    print(f"wrote {len(res.folds)} folds to {d}")


def fused_probabilities(models: evaluator.TrainedModels, ds: Dataset, task: Task, method: str) -> np.ndarray:
    if method == "LateFusion":
        return fusion.predict_features(models.fusion[task], ds.features, ds.present)
    probs = evaluator.view_probabilities(models.inducers[task], ds)
    P = combiner.bmc_weights(ds.present)
    d = models.discounts[task]
    return {"NaiveVoting": lambda: combiner.naive_vote(probs),
            "WMV": lambda: combiner.wmv(probs, d),
            "BMC": lambda: combiner.bmc(probs, P),
            "WMV+BMC": lambda: combiner.wmv_bmc(probs, d, P)}[method]()[1]


def cmd_stream(args) -> None:
    cfg = resolve(args)
    ds = load_dataset(args.dataset)
    tasks = selected_tasks(cfg)
    methods = selected_methods(cfg)
    method = "LateFusion" if cfg.get("methods", "lf") == "all" else methods[0]
    models = load_models(args.checkpoints, tasks, [method], ds.num_views)
    order = np.lexsort((ds.collection_ids, ds.timestamps))
    sc = stream_config(cfg)
    procs = {t: temporal.StreamProcessor(t, sc) for t in tasks}
    probs = {t: fused_probabilities(models, ds, t, method)[order] for t in tasks}
    out = Path(args.out or "stream.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    alerts = 0
    with open(out, "w", encoding="utf-8") as fh:
        for i in range(len(order)):
            for t in tasks:
                res = procs[t].push(probs[t][i])
                alerts += res.alert is not None
                fh.write(json.dumps(res.to_dict(), sort_keys=True) + "\n")
    print(f"wrote {len(order)} frames to {out} ({alerts} alerts)")


def acceptance_summary(ds: Dataset, models: evaluator.TrainedModels, reports) -> dict:
    by = {(r.task_id.value, r.method, r.subset): r.macro_accuracy for r in reports}
    tasks = {}
    for task in TASKS:
        t = task.value
        views = [by[(t, evaluator.view_method(j), "all")] for j in range(ds.num_views)]
        lf_all, lf_comp = by[(t, "LateFusion", "all")], by[(t, "LateFusion", "complete_only")]
        best_vote = max(by[(t, m, "all")] for m in evaluator.VOTING_METHODS)
        tasks[t] = {
            "single_view": {"best": max(views), "average": float(np.mean(views)), "worst": min(views)},
            "all": {m: by[(t, m, "all")] for m in evaluator.ENSEMBLE_METHODS},
            "complete_only": {m: by[(t, m, "complete_only")] for m in evaluator.ENSEMBLE_METHODS},
            "late_fusion_margin_over_voting": lf_all - best_vote,
            "late_fusion_complete_minus_all": lf_comp - lf_all,
            "checks": {
                "late_fusion_beats_voting_by_0.10": lf_all - best_vote >= 0.10,
                "late_fusion_gap_within_0.05": lf_comp - lf_all <= 0.05,
                "voting_drops_on_all": all(by[(t, m, "all")] < by[(t, m, "complete_only")]
                                           for m in evaluator.VOTING_METHODS),
                "single_view_best_gt_avg_gt_worst": max(views) > float(np.mean(views)) > min(views),
            },
        }
    frac = ds.complete_fraction()
    return {"complete_fraction": frac, "complete_fraction_in_range": 0.01 <= frac <= 0.10,
            "num_collections": len(ds), "tasks": tasks}


def cmd_bench(args) -> None:
    cfg = resolve(args)
    cfg.setdefault("seed", 42)
    gc = gen_config(cfg)
    ds = datagen.split(datagen.generate(gc), seed=gc.rng_seed)
    models = evaluator.train_models(ds, TASKS, train_config(cfg), architecture(cfg))
    reports = evaluate(models, ds.tagged("test"), TASKS, list(evaluator.ENSEMBLE_METHODS),
                       list(evaluator.SUBSETS))
    d = out_dir(args.out or "bench")
    write_reports(reports, d, "eval")
    summary = acceptance_summary(ds, models, reports)
    summary["gen_config"] = gc.to_dict()
    summary["train_config"] = train_config(cfg).to_dict()
    write_json(summary, d / "acceptance_summary.json")
    print(f"wrote benchmark reports to {d}")


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="mvfusion", description="Multi-view ensemble and late-fusion experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(sp, dataset=True, checkpoints=False):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--out")
        if dataset:
            sp.add_argument("--dataset")
        if checkpoints:
            sp.add_argument("--checkpoints", help="directory written by `train`")

    def task_flags(sp):
        sp.add_argument("--task", choices=[t.value for t in TASKS] + ["all"])
        sp.add_argument("--all-tasks", dest="task", action="store_const", const="all")

    s = sub.add_parser("datagen", help="generate a synthetic dataset")
    common(s, dataset=False)
    s.add_argument("--occlusion", choices=["on", "off"])
    s.add_argument("--split", choices=["random", "none"], default="random")
    s.set_defaults(func=cmd_datagen)

    s = sub.add_parser("train", help="train inducers and/or fusion models")
    common(s)
    task_flags(s)
    s.add_argument("--models", choices=["inducers", "fusion", "all"])
    s.add_argument("--preset", choices=sorted(fusion.PRESETS))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate trained models on the test split")
    common(s, checkpoints=True)
    task_flags(s)
    s.add_argument("--methods", choices=[*METHOD_NAMES, "all"])
    s.add_argument("--subset", choices=sorted(SUBSET_NAMES))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("crossval", help="leave-one-subject-out cross-validation")
    common(s)
    task_flags(s)
    s.add_argument("--methods", choices=[*METHOD_NAMES, "all"])
    s.add_argument("--k", type=int)
    s.add_argument("--preset", choices=sorted(fusion.PRESETS))
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("stream", help="filter and threshold fused predictions frame by frame")
    common(s, checkpoints=True)
    task_flags(s)
    s.add_argument("--methods", choices=[*METHOD_NAMES, "all"])
    s.add_argument("--window", type=int)
    s.add_argument("--sustain", type=int)
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("bench", help="datagen, split, train and eval in one go")
    common(s, dataset=False)
    s.add_argument("--preset", choices=sorted(fusion.PRESETS))
    s.set_defaults(func=cmd_bench)
    return p


def fail(kind: str, message: str, code: int) -> int:
    print(f"mvfusion: error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return fail("usage", e, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FileNotFoundError as e:
        return fail("missing", e, EXIT_MISSING)
    except (InputError, ValueError, KeyError, TypeError) as e:
        return fail("input", e, EXIT_INPUT)
    except OSError as e:
        return fail("io", e, EXIT_INPUT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
