"""Command-line workflow: gen, poison, train, eval, defend, sweep.

Every subcommand accepts ``--config FILE`` (flat ``key = value`` lines);
explicit flags override file values, which override built-in defaults.
Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from fiba import attack as atk
from fiba import config as cfgmod
from fiba import data, defense, model, pipeline, plot, pngio
from fiba.spectral import dft2

log = logging.getLogger("fiba")

DEFAULT_FRACTIONS = ",".join(f"{f:.2f}" for f in np.arange(0.0, 0.951, 0.05))


class UsageError(Exception):
    pass


# --- option table ----------------------------------------------------------

def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _mapping(text):
    out = {}
    for pair in str(text).split(","):
        s, _, t = pair.partition(":")
        if not t:
            raise ValueError(f"expected source:target pairs, got {text!r}")
        out[int(s)] = int(t)
    return out


# (flag, type, default, help); a default of None means "resolved later"
COMMON = [("seed", int, 0, "run seed")]
ATTACK = [
    ("attack", str, "fiba", "fiba, patch or blend"),
    ("alpha", float, None, "blend ratio (task default)"),
    ("beta", float, None, "low-frequency mask extent (task default)"),
    ("rho_p", float, None, "poison ratio (task default)"),
    ("trigger", str, "gradient", "fixture name (gradient, checker, noise) or PNG path"),
    ("target", int, None, "all-to-one target class"),
    ("map", str, None, "one-to-one source:target pairs, e.g. 2:1"),
    ("patch_size", int, 6, "patch attack block size"),
    ("patch_value", float, 1.0, "patch attack pixel value"),
]
TRAIN = [
    ("ptr", cfgmod.parse_bool, False, "enable pseudo-trigger robust training"),
    ("rho_n", float, None, "pseudo-trigger batch fraction (0.1 with --ptr)"),
    ("epochs", int, 30, "training epochs"),
    ("batch_size", int, 32, "mini-batch size"),
    ("lr", float, None, "learning rate (task default)"),
    ("momentum", float, 0.9, "SGD momentum"),
    ("hidden", int, None, "hidden units (task default)"),
    ("pool_size", int, 64, "pseudo-trigger pool size"),
    ("poison_mode", str, "fresh", "fresh or stored poisoned samples"),
    ("lr_schedule", str, "cosine", "cosine or constant"),
    ("class_weights", str, None, "per-class loss weights (dense task), comma separated"),
]
COMMANDS = {
    "gen": [("task", str, "classification", "classification or segmentation"),
            ("classes", int, 4, "number of classes"),
            ("per_class", int, 400, "images per class"),
            ("n_images", int, 400, "segmentation images"),
            ("size", int, 32, "image height and width")] + COMMON,
    "poison": ATTACK + [("samples", int, 4, "visualized samples")] + COMMON,
    "train": TRAIN + COMMON,
    "eval": [("model", str, None, "checkpoint path"), ("pool_size", int, 64, "pseudo-trigger pool size")] + COMMON,
    "defend": [("model", str, None, "checkpoint path"),
               ("method", str, "strip", "strip or prune"),
               ("n_inputs", int, 100, "STRIP inputs per side"),
               ("n_overlays", int, 64, "STRIP overlays per input"),
               ("fractions", str, DEFAULT_FRACTIONS, "pruning fractions")] + COMMON,
    "sweep": [("param", str, "alpha", "alpha or beta"), ("values", str, "0.05,0.10,0.15,0.20", "values to sweep")]
             + ATTACK + TRAIN + COMMON,
}
NEEDS_DATA = {"poison", "train", "eval", "defend", "sweep"}


def build_parser():
    parser = argparse.ArgumentParser(prog="fiba", description="Frequency-injection backdoor toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="key = value config file")
        if name in NEEDS_DATA:
            p.add_argument("--data", help="dataset directory")
        for key, typ, default, help_ in opts:
            flag = "--" + key.replace("_", "-")
            if typ is cfgmod.parse_bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                               help=f"{help_} (default {default})")
            else:
                p.add_argument(flag, dest=key, type=typ, default=None,
                               help=help_ if default is None else f"{help_} (default {default})")
    return parser


def resolve(args):
    """Merge defaults, config file and flags into one flat dict."""
    opts = {key: (typ, default) for key, typ, default, _ in COMMANDS[args.command]}
    file_values = cfgmod.load_config(args.config) if args.config else {}
    allowed = set(opts) | ({"data"} if args.command in NEEDS_DATA else set())
    unknown = sorted(set(file_values) - allowed)
    if unknown:
        raise UsageError(f"unknown config key(s) for {args.command}: {', '.join(unknown)}")
    out = {"command": args.command, "out": args.out}
    if args.command in NEEDS_DATA:
        out["data"] = args.data if args.data is not None else file_values.get("data")
        if out["data"] is None:
            raise UsageError("--data is required")
    for key, (typ, default) in opts.items():
        flag = getattr(args, key)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            try:
                out[key] = typ(file_values[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        else:
            out[key] = default
    return out


# --- helpers ---------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _clean_floats(obj):
    """Round floats so reports do not depend on the last ulp of a summation order."""
    if isinstance(obj, float):
        return None if np.isnan(obj) else round(obj, 10)
    if isinstance(obj, dict):
        return {str(k): _clean_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_floats(v) for v in obj]
    return obj


def _load(path):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory {path!r} not found")
    return data.load_dataset(path)


def _load_trigger(name):
    if os.path.exists(name):
        img = pngio.read_image(name)
    elif name in ("gradient", "checker", "noise"):
        img = atk.make_trigger(name)
    else:
        raise UsageError(f"trigger {name!r} is neither a fixture name nor an existing file")
    # the poisoned dataset stores the trigger as 8-bit PNG, so poison with exactly that
    return pngio.quantize(img).astype(float) / 255.0


def _task_value(cfg, key, task):
    return cfg[key] if cfg.get(key) is not None else pipeline.TASK_DEFAULTS[task][key]


def _label_fn(cfg, ds):
    if cfg.get("map") and cfg.get("target") is not None:
        raise UsageError("--target and --map are mutually exclusive")
    try:
        if cfg.get("map"):
            return data.TargetLabelFn.one_to_one(_mapping(cfg["map"]))
        if cfg.get("target") is not None:
            return data.TargetLabelFn.all_to_one(cfg["target"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return pipeline.default_label_fn(ds.task)


def _plan(cfg, ds, **override):
    kind = cfg["attack"]
    if kind not in atk.KINDS:
        raise UsageError(f"--attack must be one of {', '.join(atk.KINDS)}")
    trigger = None if kind == "patch" else _load_trigger(cfg["trigger"])
    values = {"alpha": _task_value(cfg, "alpha", ds.task), "beta": _task_value(cfg, "beta", ds.task)}
    values.update(override)
    try:
        attack = atk.AttackConfig(kind, trigger, values["alpha"], values["beta"],
                                  cfg["patch_size"], cfg["patch_value"])
        label_fn = _label_fn(cfg, ds)
        label_fn.validate(ds.n_classes)
        plan = data.PoisonPlan(_task_value(cfg, "rho_p", ds.task), attack, label_fn, cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return plan, trigger


def _train_config(cfg, ds, plan):
    task = ds.task
    ptr = bool(cfg["ptr"])
    rho_n = cfg["rho_n"] if cfg["rho_n"] is not None else (0.1 if ptr else 0.0)
    weights = tuple(_floats(cfg["class_weights"])) if cfg.get("class_weights") else None
    try:
        return pipeline.TrainConfig(
            rho_p=plan.rho_p if plan else 0.0, rho_n=rho_n, ptr=ptr, epochs=cfg["epochs"],
            batch_size=cfg["batch_size"], lr=_task_value(cfg, "lr", task), momentum=cfg["momentum"],
            seed=cfg["seed"], n_hidden=cfg["hidden"] or pipeline.TASK_DEFAULTS[task]["n_hidden"],
            attack=plan.attack if plan else None, label_fn=plan.label_fn if plan else None,
            class_weights=weights, poison_mode=cfg["poison_mode"], lr_schedule=cfg["lr_schedule"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _pools(cfg, ds, plan, need):
    if not need or ds.task != "classification":
        return (), ()
    trigger = plan.attack.trigger if plan and plan.attack.kind != "patch" else None
    return pipeline.pseudo_pools(cfg["seed"], cfg["pool_size"], ds.images.shape[1:], trigger)


def _report(cfg, **sections):
    return _clean_floats({"config": cfg, **sections})


def _gray3(img):
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def _log_amplitude(img):
    lum = img.mean(axis=2)
    la = np.log1p(np.abs(dft2(lum)))
    la = np.roll(la, (lum.shape[0] // 2, lum.shape[1] // 2), axis=(0, 1))  # DC to the centre for display
    return (la / max(la.max(), 1e-12))[:, :, None]


def panel(original, poisoned, gap=2):
    """Side-by-side original | poisoned | residual x5 | log-amplitude of the poisoned image."""
    resid = np.clip(np.abs(poisoned - original) * 5.0, 0.0, 1.0)
    tiles = [_gray3(original), _gray3(poisoned), _gray3(resid), _gray3(_log_amplitude(poisoned))]
    h = tiles[0].shape[0]
    sep = np.ones((h, gap, 3))
    parts = []
    for t in tiles:
        parts += [t, sep]
    return np.concatenate(parts[:-1], axis=1)


# --- commands --------------------------------------------------------------

def cmd_gen(cfg):
    if cfg["task"] not in ("classification", "segmentation"):
        raise UsageError("--task must be classification or segmentation")
    try:
        if cfg["task"] == "classification":
            if cfg["classes"] < 2:
                raise ValueError("--classes must be >= 2")
            ds = data.synth_classification_dataset(cfg["seed"], cfg["classes"], cfg["per_class"],
                                                   cfg["size"], cfg["size"])
        else:
            ds = data.synth_segmentation_dataset(cfg["seed"], cfg["n_images"], cfg["size"], cfg["size"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data.save_dataset(ds, cfg["out"])
    log.info("wrote %d samples (%d train) to %s", len(ds), ds.n_train, cfg["out"])


def cmd_poison(cfg):
    ds, _ = _load(cfg["data"])
    if ds.meta.get("poison"):
        raise UsageError(f"{cfg['data']} is already poisoned")
    plan, trigger = _plan(cfg, ds)
    pds = data.poison_dataset(ds, plan)
    data.save_dataset(pds, cfg["out"], trigger=trigger)
    vis = os.path.join(cfg["out"], "vis")
    os.makedirs(vis, exist_ok=True)
    idx = np.flatnonzero(pds.provenance == "poisoned")[:cfg["samples"]]
    resid = []
    for i in idx:
        plot.save(os.path.join(vis, f"sample_{i:04d}.png"), panel(ds.images[i], pds.images[i]))
        resid.append(float(np.abs(pds.images[i] - ds.images[i]).mean()))
    _write_json(os.path.join(cfg["out"], "poison_report.json"), _report(
        cfg, plan=plan.to_dict(), n_poisoned=int((pds.provenance == "poisoned").sum()),
        visualized=[int(i) for i in idx], mean_residual=float(np.mean(resid)) if resid else 0.0))


def _train(cfg, ds, plan):
    tcfg = _train_config(cfg, ds, plan)
    pool_tr, pool_ev = _pools(cfg, ds, plan, need=True)
    es = pipeline.EvalSet.build(ds, tcfg.attack, tcfg.label_fn, pool_ev, cfg["seed"])
    m, hist = pipeline.train_backdoored(ds, tcfg, pool_tr if tcfg.ptr else (), eval_set=es)
    metrics = pipeline.evaluate(m, es, tcfg.label_fn)
    return tcfg, m, hist, metrics


def cmd_train(cfg):
    ds, trigger = _load(cfg["data"])
    plan = data.plan_from_meta(ds.meta, trigger)
    tcfg, m, hist, metrics = _train(cfg, ds, plan)
    out = cfg["out"]
    model.save_model(m, os.path.join(out, "model.ckpt"))
    pipeline.write_tsv(os.path.join(out, "metrics.tsv"), hist)
    curves = [(np.arange(1, len(hist) + 1), [r[k] for r in hist]) for k in ("ba", "asr", "p_asr")]
    plot.save(os.path.join(out, "curves.png"), plot.line_plot([c for c in curves if not np.isnan(c[1]).all()]))
    _write_json(os.path.join(out, "report.json"), _report(
        cfg, train=tcfg.to_dict(), plan=plan.to_dict() if plan else None,
        metrics=metrics.to_dict(), history=hist))


def cmd_eval(cfg):
    if not cfg["model"]:
        raise UsageError("--model is required")
    ds, trigger = _load(cfg["data"])
    m = model.load_model(cfg["model"])
    plan = data.plan_from_meta(ds.meta, trigger)
    _, pool_ev = _pools(cfg, ds, plan, need=plan is not None)
    es = pipeline.EvalSet.build(ds, plan.attack if plan else None, plan.label_fn if plan else None,
                                pool_ev, cfg["seed"])
    metrics = pipeline.evaluate(m, es, plan.label_fn if plan else None)
    row = {"epoch": 0, "loss": float("nan"), **metrics.summary()}
    pipeline.write_tsv(os.path.join(cfg["out"], "eval.tsv"), [row])
    _write_json(os.path.join(cfg["out"], "report.json"), _report(
        cfg, plan=plan.to_dict() if plan else None, model=m.arch(), metrics=metrics.to_dict()))


def cmd_defend(cfg):
    if not cfg["model"]:
        raise UsageError("--model is required")
    if cfg["method"] not in ("strip", "prune"):
        raise UsageError("--method must be strip or prune")
    ds, trigger = _load(cfg["data"])
    m = model.load_model(cfg["model"])
    if not isinstance(m, model.ToyClassifier):
        raise ValueError("defenses are implemented for classification models")
    plan = data.plan_from_meta(ds.meta, trigger)
    if plan is None:
        raise ValueError("defense analysis needs a poisoned dataset (its attack is replayed)")
    x, y, _ = ds.split("test")
    elig = np.flatnonzero(plan.label_fn.eligible(y))
    out = cfg["out"]
    if cfg["method"] == "strip":
        rep = defense.strip_compare(m, x[elig[:cfg["n_inputs"]]], plan.attack, x, cfg["n_overlays"], cfg["seed"])
        with open(os.path.join(out, "strip.tsv"), "w") as fh:
            fh.write(rep.to_tsv())
        lnm = float(np.log(m.n_classes))
        plot.save(os.path.join(out, "strip_hist.png"),
                  plot.histograms([rep.clean_entropies, rep.poisoned_entropies], value_range=(0.0, lnm)))
        result = {"overlap": rep.overlap, "threshold": rep.threshold,
                  "clean_mean": float(rep.clean_entropies.mean()),
                  "poisoned_mean": float(rep.poisoned_entropies.mean()), "entropy_max": lnm}
    else:
        try:
            fractions = _floats(cfg["fractions"])
        except ValueError as exc:
            raise UsageError(f"--fractions: {exc}") from exc
        curve = defense.prune_sweep(m, x, x, y, plan.attack, plan.label_fn, fractions)
        with open(os.path.join(out, "prune.tsv"), "w") as fh:
            fh.write(curve.to_tsv())
        plot.save(os.path.join(out, "prune_curve.png"),
                  plot.line_plot([(curve.fractions, curve.ba), (curve.fractions, curve.asr)]))
        result = {"points": curve.points, "asr_below_half_at": curve.first_below(0.5)}
    _write_json(os.path.join(out, "report.json"), _report(cfg, plan=plan.to_dict(), defense=result))


SWEEP_COLUMNS = ("value", "mean_residual", "ba", "asr", "p_asr")


def cmd_sweep(cfg):
    if cfg["param"] not in ("alpha", "beta"):
        raise UsageError("--param must be alpha or beta")
    try:
        values = _floats(cfg["values"])
    except ValueError as exc:
        raise UsageError(f"--values: {exc}") from exc
    ds, _ = _load(cfg["data"])
    if ds.meta.get("poison"):
        raise UsageError("sweep starts from a clean dataset")
    x_test = ds.split("test")[0]
    rows = []
    for v in values:
        plan, _ = _plan(cfg, ds, **{cfg["param"]: v})
        pds = data.poison_dataset(ds, plan)
        _, _, _, metrics = _train(cfg, pds, plan)
        resid = float(np.mean([np.abs(atk.inject(im, plan.attack) - im).mean() for im in x_test]))
        rows.append({"value": v, "mean_residual": resid, **metrics.summary()})
        log.info("%s=%g residual=%.5f %s", cfg["param"], v, resid, metrics.summary())
    pipeline.write_tsv(os.path.join(cfg["out"], "sweep.tsv"), rows, SWEEP_COLUMNS)
    xs = [r["value"] for r in rows]
    plot.save(os.path.join(cfg["out"], "sweep.png"),
              plot.line_plot([(xs, [r["ba"] for r in rows]), (xs, [r["asr"] for r in rows])]))
    _write_json(os.path.join(cfg["out"], "report.json"), _report(cfg, rows=rows))


HANDLERS = {"gen": cmd_gen, "poison": cmd_poison, "train": cmd_train, "eval": cmd_eval,
            "defend": cmd_defend, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        os.makedirs(cfg["out"], exist_ok=True)
        HANDLERS[args.command](cfg)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"fiba {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, model.TrainingDiverged) as exc:
        print(f"fiba {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
