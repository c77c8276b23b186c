"""Command-line entry point.

Subcommands mirror the experiments the library supports:

  train        one training run; emits history.csv and checkpoints
  compare      several strategies on identical data streams
  gradcheck    finite-difference validation of every analytic gradient
  analyze      convergence trace and loss-share histograms for one run
  sweep        final mAP across regularizer coefficients
  sensitivity  averaged-weight traces across head-bias initializations

Configuration is a single versioned JSON tree (see README for the schema);
`--set key.path=value` overrides individual entries and `--seed` the master
seed. Every command writes a `run.json` manifest with the fully resolved
configuration and its hash; re-running a command from its manifest
reproduces all CSV outputs byte for byte. Exit codes: 0 success, 1
configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, _svg
from .analysis import convergence_trace, init_sensitivity, lambda_sweep, loss_share_histogram
from .checks import run_gradient_battery
from .losses import RegularizerConfig
from .matching import StrategyConfig
from .nn import save_arrays
from .swn import SwnConfig
from .toydet import (SceneConfig, TrainConfig, TrainingDiverged, run_strategy_comparison,
                     standard_benchmark, train)

__all__ = ["run", "main", "ConfigError", "config_to_dict", "config_from_dict", "default_config"]

CONFIG_VERSION = 1
_FMT = "{:.9g}".format


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config tree <-> dataclasses

def _dc_to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "scene": _dc_to_dict(cfg.scene),
        "sampler": _dc_to_dict(cfg.sampler),
        "regularizer": _dc_to_dict(cfg.reg),
        "swn": _dc_to_dict(cfg.swn),
        "train": {
            "epochs": cfg.epochs,
            "iters_per_epoch": cfg.iters_per_epoch,
            "batch_scenes": cfg.batch_scenes,
            "detector_lr": cfg.detector_lr,
            "detector_momentum": cfg.detector_momentum,
            "weight_decay": cfg.weight_decay,
            "detector_hidden": list(cfg.detector_hidden),
            "swn_lr": cfg.swn_lr,
            "eval_scenes": cfg.eval_scenes,
            "eval_seed": cfg.eval_seed,
            "det_score_floor": cfg.det_score_floor,
            "det_pre_nms_top": cfg.det_pre_nms_top,
            "det_nms_iou": cfg.det_nms_iou,
            "rpn_nms_iou": cfg.rpn_nms_iou,
        },
    }


def default_config() -> dict:
    """Full default tree: the frozen standard benchmark plus per-command
    sections."""
    d = config_to_dict(standard_benchmark())
    d["compare"] = {"strategies": ["random", "ohem", "focal", "kl", "rpn", "swn"]}
    d["sweep"] = {"lambdas": [0.1, 0.3, 0.5, 0.7, 1.0]}
    d["sensitivity"] = {"biases": [-1.0, -0.5, 0.0, 0.5, 1.0], "at_iteration": 500}
    d["analyze"] = {"smooth_width": 50}
    return d


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v


def config_from_dict(d: dict) -> TrainConfig:
    if d.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {d.get('version')!r}")
    try:
        scene = SceneConfig(**{k: _tuplify(v) for k, v in d["scene"].items()})
        sampler = StrategyConfig(**d["sampler"])
        reg = RegularizerConfig(**d["regularizer"])
        swn = SwnConfig(**{k: _tuplify(v) for k, v in d["swn"].items()})
        t = d["train"]
        return TrainConfig(
            scene=scene, strategy=d["strategy"], sampler=sampler, reg=reg, swn=swn,
            seed=d["seed"],
            epochs=t["epochs"], iters_per_epoch=t["iters_per_epoch"],
            batch_scenes=t["batch_scenes"], detector_lr=t["detector_lr"],
            detector_momentum=t["detector_momentum"], weight_decay=t["weight_decay"],
            detector_hidden=tuple(t["detector_hidden"]), swn_lr=t["swn_lr"],
            eval_scenes=t["eval_scenes"], eval_seed=t["eval_seed"],
            det_score_floor=t["det_score_floor"], det_pre_nms_top=t["det_pre_nms_top"],
            det_nms_iou=t["det_nms_iou"], rpn_nms_iou=t["rpn_nms_iou"],
        )
    except (TypeError, KeyError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _check_keys(given: dict, reference: dict, path: str = "") -> None:
    for k, v in given.items():
        here = f"{path}.{k}" if path else k
        if k not in reference:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(reference[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {here} must be a table")
            _check_keys(v, reference[k], here)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def _parse_set(expr: str) -> tuple[list[str], object]:
    if "=" not in expr:
        raise ConfigError(f"--set needs key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_set(tree: dict, path: list[str], value) -> None:
    node = tree
    for part in path[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {'.'.join(path)}")
        node = node[part]
    if path[-1] not in node:
        raise ConfigError(f"unknown config key: {'.'.join(path)}")
    node[path[-1]] = value


def resolve_config(config_path: str | None, sets: list[str], seed: int | None) -> dict:
    """Defaults, then the config file (or a run manifest), then --set/--seed
    overrides; unknown keys are rejected at every level."""
    tree = default_config()
    if config_path is not None:
        p = Path(config_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from e
        if isinstance(loaded, dict) and "config" in loaded and "command" in loaded:
            loaded = loaded["config"]  # accept a run manifest directly
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        _check_keys(loaded, tree)
        tree = _merge(tree, loaded)
    for expr in sets:
        path, value = _parse_set(expr)
        _apply_set(tree, path, value)
    if seed is not None:
        tree["seed"] = int(seed)
    return tree


def config_hash(tree: dict) -> str:
    canon = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Output helpers

def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _write_manifest(out_dir: Path, command: str, tree: dict) -> None:
    manifest = {
        "artifact": "detweight",
        "version": __version__,
        "command": command,
        "config": tree,
        "config_sha256": config_hash(tree),
    }
    _write(out_dir, "run.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _csv(rows: list[list], header: list[str]) -> str:
    def cell(v):
        if isinstance(v, float):
            return _FMT(v)
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands

def _cmd_train(tree: dict, out_dir: Path) -> int:
    cfg = config_from_dict(tree)
    result = train(cfg)
    _write(out_dir, "history.csv", result.history.to_csv())
    save_arrays(out_dir / "detector.ckpt", result.detector.as_dict())
    if result.swn is not None:
        save_arrays(out_dir / "swn.ckpt", result.swn.as_dict())
    if result.final_eval is not None:
        print(f"final mAP {result.final_eval.ap:.4f} "
              f"(AP50 {result.final_eval.ap50:.4f}, AP75 {result.final_eval.ap75:.4f})")
    else:
        print("no evaluation performed (epochs or eval_scenes is 0)")
    return 0


def _cmd_compare(tree: dict, out_dir: Path) -> int:
    cfg = config_from_dict(tree)
    strategies = tree["compare"]["strategies"]
    rows = run_strategy_comparison(cfg, strategies)
    table = [[r.strategy, r.final_map, r.mean_w_cls_pos, r.mean_w_cls_neg, r.mean_w_reg_pos]
             for r in rows]
    _write(out_dir, "comparison.csv",
           _csv(table, ["strategy", "final_map", "mean_w_cls_pos", "mean_w_cls_neg",
                        "mean_w_reg_pos"]))
    for r in rows:
        print(f"{r.strategy:8s} mAP {r.final_map:.4f}")
    return 0


def _cmd_gradcheck(tree: dict, out_dir: Path) -> int:
    results = run_gradient_battery(seed=tree["seed"])
    table = [[r.name, r.max_rel_err, r.n_checked, r.n_excluded, r.tol,
              "pass" if r.passed else "FAIL"] for r in results]
    _write(out_dir, "gradcheck.csv",
           _csv(table, ["check", "max_rel_err", "n_checked", "n_excluded", "tol", "status"]))
    ok = True
    for r in results:
        print(f"{r.name:20s} max rel err {r.max_rel_err:.3e} "
              f"({r.n_checked} coords, {r.n_excluded} excluded) "
              f"{'pass' if r.passed else 'FAIL'}")
        ok = ok and r.passed
    return 0 if ok else 2


def _hist_csv(h) -> str:
    rows = [[f"{h.edges[i]:.2f}-{h.edges[i + 1]:.2f}", h.shares[i], int(h.counts[i])]
            for i in range(h.shares.shape[0])]
    return _csv(rows, ["iou_bin", "share_percent", "count"])


def _cmd_analyze(tree: dict, out_dir: Path) -> int:
    cfg = config_from_dict(tree)
    if cfg.epochs < 1:
        raise ConfigError("analyze needs at least one epoch")
    width = int(tree["analyze"]["smooth_width"])
    tag = config_hash(tree)[:8]
    result = train(cfg)
    h = result.history
    _write(out_dir, f"history_{tag}.csv", h.to_csv())

    trace = convergence_trace(h, width)
    rows = [[int(trace.iters[i]), trace.mean_lcls[i], trace.mean_lreg[i],
             trace.w_cls_pos[i], trace.w_cls_neg[i], trace.w_reg_pos[i]]
            for i in range(trace.iters.shape[0])]
    _write(out_dir, f"convergence_{tag}.csv",
           _csv(rows, ["iter", "mean_lcls", "mean_lreg", "w_cls_pos", "w_cls_neg", "w_reg_pos"]))
    _write(out_dir, f"convergence_{tag}.svg", _svg.line_chart(
        {"w_cls_pos": (trace.iters, trace.w_cls_pos),
         "w_reg_pos": (trace.iters, trace.w_reg_pos),
         "mean_lcls": (trace.iters, trace.mean_lcls),
         "mean_lreg": (trace.iters, trace.mean_lreg)},
        "weights and losses over training", "iteration", "value"))

    first, last = h.epoch_traces[0], h.epoch_traces[-1]
    labels = None
    groups: dict[str, list[float]] = {}
    for which in ("cls", "reg"):
        for name, tr in (("first", first), ("final", last)):
            vals = tr.s_cls * tr.l_cls if which == "cls" else tr.s_reg * tr.l_reg
            hist = loss_share_histogram(tr.iou, vals, which=which)
            _write(out_dir, f"loss_dist_{which}_{name}_{tag}.csv", _hist_csv(hist))
            labels = [f"{hist.edges[i]:.2f}" for i in range(hist.shares.shape[0])]
            groups[f"{which}-{name}"] = [float(s) for s in hist.shares]
    _write(out_dir, f"loss_dist_{tag}.svg", _svg.bar_chart(
        labels or [], groups, "weighted loss share by IoU bin", "IoU bin start", "share (%)"))
    if result.final_eval is not None:
        print(f"final mAP {result.final_eval.ap:.4f}")
    return 0


def _cmd_sweep(tree: dict, out_dir: Path) -> int:
    cfg = config_from_dict(tree)
    lambdas = [float(v) for v in tree["sweep"]["lambdas"]]
    tag = config_hash(tree)[:8]
    rows = lambda_sweep(cfg, lambdas)
    _write(out_dir, f"sweep_{tag}.csv", _csv([[lam, ap] for lam, ap in rows],
                                             ["lambda", "final_map"]))
    _write(out_dir, f"sweep_{tag}.svg", _svg.line_chart(
        {"final mAP": ([r[0] for r in rows], [r[1] for r in rows])},
        "regularizer sweep", "lambda", "final mAP"))
    for lam, ap in rows:
        print(f"lambda {lam:.2f} mAP {ap:.4f}")
    return 0


def _cmd_sensitivity(tree: dict, out_dir: Path) -> int:
    cfg = config_from_dict(tree)
    biases = [float(b) for b in tree["sensitivity"]["biases"]]
    at_k = int(tree["sensitivity"]["at_iteration"])
    tag = config_hash(tree)[:8]
    res = init_sensitivity(cfg, biases, at_k)
    rows = [[res.biases[i], res.cls_at_k[i], res.reg_at_k[i]] for i in range(len(biases))]
    _write(out_dir, f"sensitivity_{tag}.csv",
           _csv(rows, ["bias", f"w_cls_at_{res.at_iteration}", f"w_reg_at_{res.at_iteration}"]))
    iters = np.arange(1, res.cls_traces.shape[1] + 1)
    _write(out_dir, f"sensitivity_{tag}.svg", _svg.line_chart(
        {f"bias {b:+.1f}": (iters, res.cls_traces[i]) for i, b in enumerate(res.biases)},
        "averaged classification weight by initialization", "iteration", "mean weight"))
    print(f"max gap at iteration {res.at_iteration}: "
          f"cls {res.max_gap_cls:.4f} (mean {res.mean_cls:.4f}), "
          f"reg {res.max_gap_reg:.4f} (mean {res.mean_reg:.4f})")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "sensitivity": _cmd_sensitivity,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit with 1, not argparse's 2
        raise ConfigError(message)


def run(argv: list[str]) -> int:
    """Parse argv, run the requested command, and return the exit code."""
    parser = _Parser(prog="detweight", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="JSON config file (or a run.json manifest)")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: ./out)")
    parser.add_argument("--set", metavar="K=V", action="append", default=[],
                        dest="sets", help="override a config entry (dotted key)")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    try:
        args = parser.parse_args(argv)
        tree = resolve_config(args.config, args.sets, args.seed)
        config_from_dict(tree)  # validate before writing anything
        out_dir = Path(args.out)
        _write_manifest(out_dir, args.command, tree)
        return _COMMANDS[args.command](tree, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except TrainingDiverged as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)


def main() -> None:
    sys.exit(run(sys.argv[1:]))
