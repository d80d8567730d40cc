"""Command line entry point: synth, train, predict, eval, calibrate.

Every run resolves its settings as defaults < --config file < flags < --set
overrides, rejects unknown keys, and writes the resolved settings next to
its outputs so the run can be repeated.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .annotation import SNAPSHOT_SUFFIX
from .errors import ChartKPError

log = logging.getLogger("chartkp")

SUBCOMMANDS = ("synth", "train", "predict", "eval", "calibrate")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config handling

def _defaults(cmd: str) -> Dict[str, Any]:
    from .postprocess import PostprocessParams
    from .reconstruct.cluster import ClusterParams
    from .trainer import TrainConfig

    if cmd == "synth":
        return {"type": "all", "count": 10, "seed": 0, "canvas": [256, 256], "val_fraction": 0.0}
    if cmd == "train":
        return json.loads(json.dumps(TrainConfig().to_dict()))
    if cmd == "predict":
        return {"postprocess": asdict(PostprocessParams()), "cluster": asdict(ClusterParams()),
                "legend": "learned", "oracle_type": False, "oracle_heatmaps": False, "stride": 4}
    if cmd == "eval":
        return {}
    if cmd == "calibrate":
        return {"sample": 20, "split": "val"}
    raise UsageError(cmd)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base: Dict[str, Any], updates: Dict[str, Any], where: str, prefix: str = "") -> None:
    for key, value in updates.items():
        if key not in base:
            raise UsageError(f"unknown config key {prefix + key!r} ({where})")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {prefix + key!r} needs a mapping ({where})")
            _merge(base[key], value, where, prefix + key + ".")
        else:
            base[key] = value


def _set_dotted(cfg: Dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"unknown config key {dotted!r}")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise UsageError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def resolve_config(cmd: str, config_path: Optional[Path], flags: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    cfg = copy.deepcopy(_defaults(cmd))
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        _merge(cfg, doc, str(config_path))
    for key, value in flags.items():
        if value is not None:
            _set_dotted(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(cfg, key.strip(), _parse_value(value))
    return cfg


def _snapshot(cfg: Dict[str, Any], out_dir: Path, cmd: str, extra: Dict[str, Any]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": cmd, "settings": cfg, **extra}
    (out_dir / f"{cmd}{SNAPSHOT_SUFFIX}").write_text(json.dumps(doc, indent=1, default=str), encoding="utf-8")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg) -> int:
    from .annotation import save_annotation
    from .data import ManifestEntry, write_manifest
    from .errors import LayoutOverflow
    from .synthgen import generate
    from .types import CHART_TYPES, ChartType

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    types = list(CHART_TYPES) if cfg["type"] == "all" else [ChartType(cfg["type"])]
    canvas = tuple(int(v) for v in cfg["canvas"])
    entries = []
    n_val = int(round(cfg["val_fraction"] * cfg["count"]))
    for ct in types:
        made, seed = 0, int(cfg["seed"])
        while made < cfg["count"]:
            try:
                chart = generate(ct, seed, canvas)
            except LayoutOverflow:
                seed += 1
                continue
            path = save_annotation(chart, out / f"{chart.chart_id}.json")
            entries.append(ManifestEntry(path, "val" if made >= cfg["count"] - n_val else "train"))
            made += 1
            seed += 1
    write_manifest(entries, out / "manifest.txt")
    _snapshot(cfg, out, "synth", {"out_dir": str(out)})
    print(f"wrote {len(entries)} charts to {out}")
    return 0


def cmd_train(args, cfg) -> int:
    from .trainer import TrainConfig, train

    tc = TrainConfig.from_dict(cfg)
    _snapshot(cfg, args.out_dir, "train", {"manifest": str(args.manifest) if args.manifest else None})

    def show(rec):
        log.info("epoch %d step %d total %.4f", rec["epoch"], rec["step"], rec["total"])

    with open(args.out_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
        def record(rec):
            fh.write(json.dumps(rec) + "\n")
            show(rec)

        res = train(tc, args.out_dir, manifest=args.manifest, resume=args.resume, on_record=record)
    print(json.dumps({"initial_loss": res.initial_loss, "final_epoch_loss": res.epoch_losses[-1],
                      "best_val_6a": res.best_score, "checkpoint": str(res.best_path or args.out_dir / "model.pt")}))
    return 0


def _input_paths(path: Path) -> List[Path]:
    from .annotation import annotation_paths

    return annotation_paths(path) if path.is_dir() else [path]


def cmd_predict(args, cfg) -> int:
    from .annotation import load_annotation, save_annotation
    from .pipeline import run_chain, run_oracle, oracle_inputs
    from .postprocess import PostprocessParams, dump_postprocess
    from .maskgen import dump_mask_set, build_mask_set
    from .reconstruct.cluster import ClusterParams
    from .trainer import forward_chart, load_model, predict, prediction_chart

    params = PostprocessParams(**cfg["postprocess"])
    cparams = ClusterParams(**cfg["cluster"])
    model = None
    if not cfg["oracle_heatmaps"]:
        if args.checkpoint is None:
            raise UsageError("predict needs --checkpoint unless oracle_heatmaps is set")
        model, tuned = load_model(args.checkpoint)
        if args.config is None and not any(s.startswith("postprocess.") for s in args.set):
            params = tuned
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = _input_paths(args.input)

    def one(path: Path) -> str:
        chart = load_annotation(path)
        ct = chart.chart_type if cfg["oracle_type"] or cfg["oracle_heatmaps"] else None
        if cfg["oracle_heatmaps"]:
            res = run_oracle(chart, int(cfg["stride"]), params=params, cluster_params=cparams)
        else:
            res = predict(model, chart, params, ct, cparams, cfg["legend"])
        save_annotation(prediction_chart(chart, res), out / path.name, write_image=False)
        if args.dump_heatmaps and chart.data_series:
            dump_mask_set(build_mask_set(chart, stride=int(cfg["stride"])), out / f"{path.stem}.targets.png", chart.image)
        if args.dump_postprocess and model is not None:
            from .postprocess import attach_colors, color_filter, extract_candidates

            hs, _, _ = forward_chart(model, chart)
            before = attach_colors(extract_candidates(hs.fg_regress, hs.offset, params), chart.image, hs.stride)
            after = color_filter(before, chart.image, [p.bbox for p in chart.legend_pairs], params, chart.plot_bbox)
            dump_postprocess(out / f"{path.stem}.post.png", hs.fg_regress, before, after, chart.image, params)
        return f"{path.name}: {len(res.series)} series" + (f" ({'; '.join(res.diagnostics)})" if res.diagnostics else "")

    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            lines = list(pool.map(one, paths))
    else:
        lines = [one(p) for p in paths]
    for line in lines:
        log.info(line)
    _snapshot(cfg, out, "predict", {"checkpoint": str(args.checkpoint) if args.checkpoint else None,
                                    "input": str(args.input)})
    print(f"wrote {len(paths)} predictions to {out}")
    return 0


def cmd_eval(args, cfg) -> int:
    from .metrics import evaluate

    report = evaluate(args.pred, args.gt, jobs=max(1, args.jobs))
    print(report.table())
    if args.json:
        args.json.parent.mkdir(parents=True, exist_ok=True)
        args.json.write_text(json.dumps({"per_chart": report.records(), "per_type": report.per_type,
                                         "overall": report.overall}, indent=1), encoding="utf-8")
        _snapshot(cfg, args.json.parent, "eval", {"pred": str(args.pred), "gt": str(args.gt)})
    return 0


def cmd_calibrate(args, cfg) -> int:
    from .annotation import load_annotation
    from .data import load_split
    from .nets import save_checkpoint
    from .trainer import calibrate_on, load_model

    model, params = load_model(args.checkpoint)
    if args.manifest is not None:
        charts = load_split(args.manifest, cfg["split"])
    elif args.input is not None:
        charts = [load_annotation(p) for p in _input_paths(args.input)]
    else:
        raise UsageError("calibrate needs --manifest or --input")
    new = calibrate_on(model, charts, model.cfg.stride, params, sample=int(cfg["sample"]), strict=True)
    out = args.out or args.checkpoint
    save_checkpoint(model, out, {"params": asdict(new)})
    _snapshot(cfg, Path(out).parent, "calibrate", {"checkpoint": str(args.checkpoint)})
    print(json.dumps(asdict(new)))
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", type=Path, default=Path("."), help="base for relative paths")
    common.add_argument("--config", type=Path, help="JSON settings file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a (dotted) setting; repeatable")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="chartkp", description="Keypoint-based chart data extraction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic charts")
    s.add_argument("--type", choices=["all", "line", "scatter", "bar-horizontal", "bar-vertical", "box-vertical"])
    s.add_argument("--count", type=int, help="charts per type")
    s.add_argument("--out-dir", type=Path, required=True)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--manifest", type=Path, help="annotation manifest (train/val splits)")
    t.add_argument("--out-dir", type=Path, required=True)
    t.add_argument("--resume", action="store_true", help="continue from out-dir/last.pt")

    r = sub.add_parser("predict", parents=[common], help="extract data series")
    r.add_argument("--checkpoint", type=Path)
    r.add_argument("--input", type=Path, required=True, help="annotation file or folder")
    r.add_argument("--out-dir", type=Path, required=True)
    r.add_argument("--oracle-type", action="store_true", help="use the annotated chart type")
    r.add_argument("--oracle-heatmaps", action="store_true", help="inject ground-truth targets")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--dump-heatmaps", action="store_true")
    r.add_argument("--dump-postprocess", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="score predictions")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--json", type=Path, help="write machine-readable records here")
    e.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("calibrate", parents=[common], help="tune the component threshold")
    c.add_argument("--checkpoint", type=Path, required=True)
    c.add_argument("--manifest", type=Path)
    c.add_argument("--input", type=Path)
    c.add_argument("--out", type=Path, help="output checkpoint (default: overwrite)")
    return p


_PATH_ARGS = ("out_dir", "manifest", "checkpoint", "input", "pred", "gt", "json", "out", "config")


def _flags(args) -> Dict[str, Any]:
    if args.command == "synth":
        return {"type": args.type, "count": args.count, "seed": args.seed}
    if args.command == "train":
        return {"seed": args.seed}
    if args.command == "predict":
        return {"oracle_type": True if args.oracle_type else None,
                "oracle_heatmaps": True if args.oracle_heatmaps else None}
    return {}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name in _PATH_ARGS:
            val = getattr(args, name, None)
            if isinstance(val, Path) and not val.is_absolute():
                setattr(args, name, args.workdir / val)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args.command, args.config, _flags(args), args.set)
        handler = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
                   "eval": cmd_eval, "calibrate": cmd_calibrate}[args.command]
        return handler(args, cfg)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (ChartKPError, OSError, ValueError, KeyError, TypeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
