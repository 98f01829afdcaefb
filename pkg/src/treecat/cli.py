"""Command-line entry point: ``treecat <command> --config run.json``.

Every command reads one JSON config (plus ``--set key=value`` overrides),
logs the resolved config, and writes its artifacts under ``output_dir``.
Exit codes: 1 config error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import change as change_mod
from . import species as species_mod
from .crf import CrfModel, greedy_infer
from .errors import ConfigError, DataError, InvariantError
from .evaluation import (
    change_metrics,
    collapse_binary,
    match_detections,
    pr_from_matching,
    species_metrics,
    write_json_report,
)
from .fusion import fuse, read_candidates, write_candidates
from .mapprior import build_distance_field, read_distance_field, read_map_raster, write_distance_field
from .pipeline import SceneData, TrainConfig, run_lesions, train_model
from .scoring import FileBackedProvider, ScoreProviderConfig
from .store import SCENE_FILES, load_inventory, load_scene, read_detections, write_detections
from .synth import BENCH_PROVIDER, SynthConfig, generate_observations, generate_scene, split_configs, write_scene

log = logging.getLogger("treecat")

SPLITS = ("train", "validation", "test")

DEFAULTS = {
    "output_dir": "treecat-run",
    "jobs": 1,
    "scenes": {},
    "synth": {},
    "map": {"open_radius": 3, "close_radius": 5},
    "providers": {"aerial": dict(BENCH_PROVIDER), "street": dict(BENCH_PROVIDER)},
    "fusion": {"tau_1": None},
    "train": {},
    "infer": {"split": "test"},
    "species": {"train": None, "test": None, "model": None},
    "change": {
        "detections_a": None,
        "detections_b": None,
        "epoch_a": None,
        "epoch_b": None,
        "pair_radius": change_mod.PAIR_RADIUS,
        "labels": None,
        "predictions": None,
        "ratios": list(change_mod.CHANGE_SPLITS),
        "balance": False,
        "folds": 5,
    },
}


# ---------------------------------------------------------------------------
# config handling


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    node = cfg
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
        node = nxt
    node[parts[-1]] = _parse_value(text)


def resolve_config(path, overrides=()) -> dict:
    user = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config: file {str(p)!r} does not exist")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(user, dict):
            raise ConfigError("config: top level must be an object")
    cfg = _merge(DEFAULTS, user)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def _lookup(cfg: dict, key: str):
    node = cfg
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            return None
        node = node[p]
    return node


def require_path(cfg: dict, key: str, kind: str = "file") -> Path:
    """Resolve a path-valued key, failing with the key named."""
    val = _lookup(cfg, key)
    if val in (None, ""):
        raise ConfigError(f"missing required path for key {key!r}")
    p = Path(val)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise ConfigError(f"path for key {key!r} does not exist: {str(p)!r}")
    return p


def require_seed(cfg: dict) -> int:
    seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("key 'seed' is required for this command")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"key 'seed' must be a non-negative integer, got {seed!r}")
    return seed


def _build(cls, section: str, values: dict, **extra):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**{**values, **extra})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _jobs(cfg) -> int:
    jobs = cfg.get("jobs", 1)
    if isinstance(jobs, bool) or not isinstance(jobs, int) or jobs < 1:
        raise ConfigError(f"key 'jobs' must be a positive integer, got {jobs!r}")
    return jobs


def _providers(cfg):
    out = {}
    for name in ("aerial", "street"):
        vals = cfg["providers"].get(name) or {}
        out[name] = _build(ScoreProviderConfig, f"providers.{name}", vals)
    return out["aerial"], out["street"]


def _train_config(cfg, seed) -> TrainConfig:
    vals = dict(cfg.get("train") or {})
    vals.pop("seed", None)
    return _build(TrainConfig, "train", vals, seed=seed)


def _tau_1(cfg) -> float:
    t = cfg["fusion"].get("tau_1")
    return -math.inf if t is None else float(t)


# ---------------------------------------------------------------------------
# artifact layout


def out_dir(cfg) -> Path:
    return Path(cfg["output_dir"])


def scene_key(split: str) -> str:
    return f"scenes.{split}"


def scene_dir(cfg, split: str) -> Path:
    val = _lookup(cfg, scene_key(split))
    if val is None:
        default = out_dir(cfg) / "scenes" / split
        cfg.setdefault("scenes", {})[split] = str(default)
    return require_path(cfg, scene_key(split), "dir")


def split_dir(cfg, split: str) -> Path:
    d = out_dir(cfg) / split
    d.mkdir(parents=True, exist_ok=True)
    return d


def artifact(cfg, split: str, name: str, key: str | None = None) -> Path:
    """An artifact produced by an earlier command; missing ones are named."""
    p = out_dir(cfg) / split / name
    if not p.is_file():
        raise ConfigError(f"missing input for key {key or f'{split}.{name}'!r}: {str(p)!r} (run the earlier stage)")
    return p


def _field_for(cfg, split: str):
    cached = out_dir(cfg) / split / "distance.f32"
    if cached.is_file():
        return read_distance_field(cached)
    raster = read_map_raster(scene_dir(cfg, split) / SCENE_FILES["map"])
    m = cfg["map"]
    return build_distance_field(raster, int(m["open_radius"]), int(m["close_radius"]))


def _scene_data(cfg, split: str) -> SceneData:
    cands = read_candidates(artifact(cfg, split, "candidates.jsonl"))
    inv = scene_dir(cfg, split) / SCENE_FILES["inventory"]
    if not inv.is_file():
        raise ConfigError(f"missing ground truth for key {scene_key(split)!r}: {str(inv)!r}")
    return SceneData(cands, load_inventory(inv), _field_for(cfg, split), split)


# ---------------------------------------------------------------------------
# commands; each returns a JSON-able summary


def cmd_synth(cfg, args):
    seed = require_seed(cfg)
    synth = dict(cfg.get("synth") or {})
    synth.pop("seed", None)
    base = _build(SynthConfig, "synth", synth, seed=seed)
    written = {}
    for split, sc_cfg in split_configs(base).items():
        scene = generate_scene(sc_cfg)
        props = generate_observations(scene, sc_cfg)
        root = out_dir(cfg) / "scenes" / split
        write_scene(scene, props, root)
        cfg.setdefault("scenes", {})[split] = str(root)
        written[split] = {"path": str(root), "trees": len(scene.trees), "proposals": len(props)}
    return {"scenes": written}


def _splits_present(cfg):
    out = []
    for split in SPLITS:
        val = _lookup(cfg, scene_key(split))
        if val is not None or (out_dir(cfg) / "scenes" / split).is_dir():
            out.append(split)
    if not out:
        raise ConfigError("missing required path for key 'scenes' (no scene directories configured)")
    return out


def cmd_preprocess_map(cfg, args):
    m = cfg["map"]
    summary = {}
    for split in _splits_present(cfg):
        raster = read_map_raster(scene_dir(cfg, split) / SCENE_FILES["map"])
        field = build_distance_field(raster, int(m["open_radius"]), int(m["close_radius"]))
        path = split_dir(cfg, split) / "distance.f32"
        write_distance_field(field, path)
        summary[split] = {"path": str(path), "shape": list(field.values.shape), "no_road": field.no_road}
    return {"distance_fields": summary}


def cmd_fuse(cfg, args):
    aerial, street = _providers(cfg)
    jobs = _jobs(cfg)
    tau_1 = _tau_1(cfg)
    summary = {}
    for split in _splits_present(cfg):
        scene = load_scene(scene_dir(cfg, split))
        field = _field_for(cfg, split)
        provider = FileBackedProvider(scene.proposals, scene.index.view_ids, aerial, street)
        cands = fuse(scene.proposals, scene.index, provider, field, tau_1=tau_1, jobs=jobs)
        path = split_dir(cfg, split) / "candidates.jsonl"
        write_candidates(cands, path)
        summary[split] = {"path": str(path), "candidates": len(cands), "proposals": len(scene.proposals)}
    return {"candidates": summary}


def cmd_train(cfg, args):
    seed = require_seed(cfg)
    tcfg = _train_config(cfg, seed)
    aerial, street = _providers(cfg)
    train, val = _scene_data(cfg, "train"), _scene_data(cfg, "validation")
    res = train_model(train, val, tcfg, providers={"aerial": aerial, "street": street})
    path = out_dir(cfg) / "model.json"
    res.model.save(path)
    write_json_report(res.report, out_dir(cfg) / "train_report.json")
    return {"model": str(path), "k": list(res.model.k), "tau_2": res.report["tau_2"],
            "validation_map": res.report["validation_map"]}


def _model(cfg) -> CrfModel:
    key = "model"
    if cfg.get(key) is None:
        cfg[key] = str(out_dir(cfg) / "model.json")
    return CrfModel.load(require_path(cfg, key))


def _split(cfg) -> str:
    split = cfg["infer"].get("split", "test")
    if split not in SPLITS:
        raise ConfigError(f"key 'infer.split' must be one of {SPLITS}, got {split!r}")
    return split


def cmd_infer(cfg, args):
    model = _model(cfg)
    split = _split(cfg)
    cands = read_candidates(artifact(cfg, split, "candidates.jsonl"))
    result = greedy_infer(cands, model)
    path = split_dir(cfg, split) / "detections.geojson"
    write_detections(result.records, path)
    return {"detections": str(path), "count": len(result.records), "objective": result.objective}


def cmd_eval_detect(cfg, args):
    split = _split(cfg)
    dets = read_detections(artifact(cfg, split, "detections.geojson"))
    inv = scene_dir(cfg, split) / SCENE_FILES["inventory"]
    if not inv.is_file():
        raise ConfigError(f"missing ground truth for key {scene_key(split)!r}: {str(inv)!r}")
    gt = load_inventory(inv)
    radius = float((cfg.get("train") or {}).get("match_radius", 4.0))
    match = match_detections(dets, gt, radius)
    scores = np.array([d.score for d in dets], dtype=float)
    curve, ap = pr_from_matching(scores, match, len(gt))
    d = split_dir(cfg, split)
    curve.to_csv(d / "pr.csv")
    metrics = {
        "split": split,
        "map": ap,
        "detections": len(dets),
        "ground_truth": len(gt),
        "true_positives": match.tp,
        "false_positives": len(match.false_positives),
        "false_negatives": len(match.false_negatives),
        "match_radius": radius,
    }
    write_json_report(metrics, d / "metrics.json")
    return metrics


def cmd_lesion(cfg, args):
    seed = require_seed(cfg)
    tcfg = _train_config(cfg, seed)
    aerial, street = _providers(cfg)
    train, val, test = (_scene_data(cfg, s) for s in SPLITS)
    res = train_model(train, val, tcfg, providers={"aerial": aerial, "street": street})
    table = run_lesions(res, val, test, tcfg)
    write_json_report(table, out_dir(cfg) / "lesions.json")
    return {"lesions": table}


def _species_cfg(cfg):
    vals = {k: v for k, v in (cfg.get("species") or {}).items() if k not in ("train", "test", "model")}
    return vals


def _species_model_path(cfg) -> Path:
    val = cfg["species"].get("model")
    return Path(val) if val else out_dir(cfg) / "species_model.json"


def cmd_species_train(cfg, args):
    seed = require_seed(cfg)
    tc = _build(species_mod.TrainConfig, "species", _species_cfg(cfg), seed=seed)
    fs = species_mod.read_features(require_path(cfg, "species.train"))
    if any(lab is None for lab in fs.labels):
        raise DataError("training features must all carry species labels")
    model = species_mod.train_linear(fs.matrix, fs.labels, tc)
    path = _species_model_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    pred = model.predict(fs.matrix)
    acc = sum(p == t for p, t in zip(pred, fs.labels)) / len(pred)
    return {"model": str(path), "classes": model.classes, "train_accuracy": acc,
            "final_objective": model.history[-1]}


def cmd_species_eval(cfg, args):
    _build(species_mod.TrainConfig, "species", _species_cfg(cfg))  # validate keys only
    fs = species_mod.read_features(require_path(cfg, "species.test"))
    cfg["species"]["model"] = str(_species_model_path(cfg))
    model = species_mod.SpeciesModel.load(require_path(cfg, "species.model"))
    if any(lab is None for lab in fs.labels):
        raise DataError("evaluation features must all carry species labels")
    pred = model.predict(fs.matrix)
    report = species_metrics(pred, fs.labels).to_dict()
    path = out_dir(cfg) / "species_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json_report(report, path)
    return report


def cmd_pair(cfg, args):
    c = cfg["change"]
    dets_a = read_detections(require_path(cfg, "change.detections_a"))
    dets_b = read_detections(require_path(cfg, "change.detections_b"))
    try:
        radius = float(c["pair_radius"])
    except (TypeError, ValueError):
        raise ConfigError("key 'change.pair_radius' must be a number") from None
    pairs = change_mod.pair_epochs(dets_a, dets_b, radius, c.get("epoch_a"), c.get("epoch_b"))
    out = out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    change_mod.write_pairs(pairs, out / "pairs.jsonl")
    summary = {
        "pairs": str(out / "pairs.jsonl"),
        "count": len(pairs),
        "both": sum(p.present_in_a and p.present_in_b for p in pairs),
        "only_a": sum(p.present_in_a and not p.present_in_b for p in pairs),
        "only_b": sum(p.present_in_b and not p.present_in_a for p in pairs),
    }
    if c.get("labels") is not None:
        seed = require_seed(cfg)
        labels = change_mod.read_labels(require_path(cfg, "change.labels"))
        ds = change_mod.assemble_change_dataset(
            pairs, labels, tuple(c["ratios"]), seed, bool(c["balance"]), int(c["folds"])
        )
        change_mod.write_manifest(ds, out / "change_manifest.json")
        summary["manifest"] = str(out / "change_manifest.json")
        summary["split_sizes"] = {k: len(v) for k, v in ds.splits.items()}
    return summary


def cmd_eval_change(cfg, args):
    truth = change_mod.read_labels(require_path(cfg, "change.labels"))
    pred = change_mod.read_labels(require_path(cfg, "change.predictions"))
    missing = sorted(set(pred) - set(truth))
    if missing:
        raise DataError(f"{len(missing)} predicted pair(s) have no label, e.g. {missing[0]!r}")
    if not pred:
        raise DataError("no change predictions")
    ids = sorted(pred)
    pairs = [(truth[i], pred[i]) for i in ids]
    three = change_metrics(pairs)
    binary = change_metrics(
        zip(collapse_binary(t for t, _ in pairs), collapse_binary(p for _, p in pairs)),
        ("same", "changed"),
    )
    report = {"three_class": three.to_dict(), "binary": binary.to_dict()}
    out = out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_json_report(report, out / "change_report.json")
    return report


COMMANDS = {
    "synth": (cmd_synth, "generate seeded synthetic scenes for train/validation/test"),
    "preprocess-map": (cmd_preprocess_map, "road distance field per scene"),
    "fuse": (cmd_fuse, "pool and re-score proposals into candidate trees"),
    "train": (cmd_train, "fit priors and scalars, write model.json"),
    "infer": (cmd_infer, "greedy inference, write detections GeoJSON"),
    "eval-detect": (cmd_eval_detect, "PR curve and mAP against the inventory"),
    "lesion": (cmd_lesion, "retrain with components removed, write lesions.json"),
    "species-train": (cmd_species_train, "train the linear species classifier"),
    "species-eval": (cmd_species_eval, "species precision report"),
    "pair": (cmd_pair, "pair detections of two epochs"),
    "eval-change": (cmd_eval_change, "confusion matrices for change predictions"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treecat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--json", action="store_true", help="print the report to stdout as JSON")
        p.add_argument("--jobs", type=int, help="worker processes for scoring")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    func = COMMANDS[args.command][0]
    try:
        cfg = resolve_config(args.config, args.overrides)
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        _jobs(cfg)
        out_dir(cfg).mkdir(parents=True, exist_ok=True)
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        summary = func(cfg, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return 2
    except InvariantError as exc:
        log.error("invariant violated: %s", exc)
        return 3
    except Exception:  # noqa: BLE001 - anything unexpected is an internal fault
        log.exception("internal error")
        return 3
    if args.json:
        json.dump({"command": args.command, "config": cfg, "result": summary}, sys.stdout,
                  indent=2, sort_keys=True, default=str)
        sys.stdout.write("\n")
    else:
        log.info("%s done", args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
