"""Command line driver: training campaigns, evaluation, ED tables, curves.

Subcommands: ``train``, ``eval``, ``ed``, ``curves``.  Options resolve in
order defaults < config file (``--config``, ``key = value`` lines) <
environment (``QCCNN_<NAME>``) < command line.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .capacity import (
    NumericError,
    dataset_input_sampler,
    effective_dimension,
    effective_dimension_from_fims,
    uniform_input_sampler,
)
from .circuits import ANSATZ_KEYS
from .data import DataError, load_dataset
from .nn import FitResult, evaluate, fit, make_model

ENV_PREFIX = "QCCNN_"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# ED rows mirroring the reference comparison table (one row per circuit).
ED_TABLE_KEYS = (
    "conv",
    "midcircuit-rx",
    "midcircuit-ry",
    "ancilla-cy",
    "ancilla-cz",
    "mod-a",
    "mod-b",
    "mod-c",
    "select-sign",
)


class ConfigError(Exception):
    """Raised for invalid flags, config files or option values."""


@dataclass
class RunConfig:
    """Effective settings of one command, echoed verbatim into run metadata."""

    ansatz: str = ""
    data: str = "synthetic"
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.001
    stride: int = 2
    seeds: tuple = (0, 1, 2)
    out: str = ""
    stop_at_train_acc: float | None = None
    classical_relu: bool = False
    gamma: float = 1.0
    n: int = 546
    theta_samples: int = 100
    data_samples: int = 100
    ed_inputs: str = "uniform"


def _parse_seeds(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(s) for s in text)
    try:
        return tuple(int(s) for s in str(text).split(","))
    except ValueError:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from None


def _coerce(name: str, value, target_type):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        lowered = str(value).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    try:
        return target_type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {target_type.__name__}, got {value!r}") from None


def read_config_file(path) -> dict:
    """Parse a ``key = value`` config file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _env_overrides(field_names) -> dict:
    values = {}
    for name in field_names:
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = raw
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file, environment and explicit CLI flags."""
    defaults = RunConfig()
    merged = asdict(defaults)
    field_types = {
        "ansatz": str, "data": str, "epochs": int, "batch_size": int, "lr": float,
        "stride": int, "seeds": _parse_seeds, "out": str, "stop_at_train_acc": float,
        "classical_relu": bool, "gamma": float, "n": int, "theta_samples": int,
        "data_samples": int, "ed_inputs": str,
    }
    layers = []
    if getattr(args, "config", None):
        layers.append(read_config_file(args.config))
    layers.append(_env_overrides(field_types))
    layers.append({k: v for k, v in vars(args).items() if k in field_types and v is not None})
    for layer in layers:
        for key, value in layer.items():
            if key not in field_types:
                raise ConfigError(f"unknown option {key!r}")
            caster = field_types[key]
            merged[key] = caster(value) if caster is _parse_seeds else _coerce(key, value, caster)
    cfg = RunConfig(**merged)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig):
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg.batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    if cfg.stride < 1:
        raise ConfigError("stride must be >= 1")
    if cfg.lr <= 0:
        raise ConfigError("learning rate must be positive")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if not 0.0 < cfg.gamma <= 1.0:
        raise ConfigError("gamma must lie in (0, 1]")
    if cfg.n <= 1:
        raise ConfigError("n must be an integer > 1")
    if cfg.theta_samples < 1 or cfg.data_samples < 1:
        raise ConfigError("theta_samples and data_samples must be >= 1")


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_metrics_csv(path: Path, per_seed: dict[int, FitResult]):
    """Per-seed epoch rows plus per-epoch mean rows keyed ``seed=agg``."""
    lines = ["epoch,seed,train_acc,train_loss,val_acc,val_loss"]
    for seed, res in per_seed.items():
        for e in range(res.epochs_run):
            lines.append(
                f"{e},{seed},{_fmt(res.train_acc[e])},{_fmt(res.train_loss[e])},"
                f"{_fmt(res.val_acc[e])},{_fmt(res.val_loss[e])}"
            )
    max_epochs = max(res.epochs_run for res in per_seed.values())
    for e in range(max_epochs):
        cols = []
        for metric in ("train_acc", "train_loss", "val_acc", "val_loss"):
            vals = [getattr(r, metric)[e] for r in per_seed.values() if e < r.epochs_run]
            cols.append(_fmt(float(np.mean(vals))))
        lines.append(f"{e},agg," + ",".join(cols))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_metrics_csv(path: Path) -> dict[str, dict[int, list]]:
    """Per-seed metric traces from a metrics.csv (aggregate rows skipped)."""
    if not path.is_file():
        raise DataError(f"missing metrics file: {path}")
    per_seed: dict[str, dict[int, list]] = {}
    with path.open() as f:
        header = f.readline().strip().split(",")
        if header != ["epoch", "seed", "train_acc", "train_loss", "val_acc", "val_loss"]:
            raise DataError(f"{path}: unexpected metrics header {header}")
        for line in f:
            epoch, seed, *values = line.strip().split(",")
            if seed == "agg":
                continue
            rec = per_seed.setdefault(seed, {})
            rec[int(epoch)] = [float(v) for v in values]
    return per_seed


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.ansatz:
        cfg.ansatz = "conv"
    known_fronts = ANSATZ_KEYS + ("classical",)
    if cfg.ansatz not in known_fronts:
        raise ConfigError(
            f"unknown ansatz {cfg.ansatz!r}; choose from {', '.join(known_fronts)}"
        )
    out_dir = Path(cfg.out or f"runs/{cfg.ansatz}")
    out_dir.mkdir(parents=True, exist_ok=True)
    train, val = load_dataset(cfg.data)
    per_seed: dict[int, FitResult] = {}
    for seed in cfg.seeds:
        model = make_model(cfg.ansatz, train.image_shape, cfg.stride, seed, cfg.classical_relu)
        result = fit(
            model, train, val,
            epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=seed,
            stop_at_train_acc=cfg.stop_at_train_acc,
        )
        per_seed[seed] = result
        _atomic_write(
            out_dir / f"checkpoint_seed{seed}.json",
            json.dumps(model.state_dict(), sort_keys=True) + "\n",
        )
        print(
            f"[{cfg.ansatz} seed {seed}] epochs={result.epochs_run}"
            f" max_train_acc={result.max_train_acc:.4f} max_val_acc={result.max_val_acc:.4f}"
        )
    write_metrics_csv(out_dir / "metrics.csv", per_seed)
    max_train = [r.max_train_acc for r in per_seed.values()]
    max_val = [r.max_val_acc for r in per_seed.values()]
    summary = {
        "config": {**asdict(cfg), "seeds": list(cfg.seeds)},
        "dataset": {"train_n": len(train), "val_n": len(val), "image_shape": list(train.image_shape)},
        "per_seed": {
            str(s): {
                "epochs_run": r.epochs_run,
                "max_train_acc": r.max_train_acc,
                "max_val_acc": r.max_val_acc,
            }
            for s, r in per_seed.items()
        },
        "max_train_acc": {"mean": float(np.mean(max_train)), "std": float(np.std(max_train))},
        "max_val_acc": {"mean": float(np.mean(max_val)), "std": float(np.std(max_val))},
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"{cfg.ansatz}: max train {summary['max_train_acc']['mean']:.4f}"
        f" +- {summary['max_train_acc']['std']:.4f},"
        f" max val {summary['max_val_acc']['mean']:.4f}"
        f" +- {summary['max_val_acc']['std']:.4f} -> {out_dir}"
    )
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    try:
        state = json.loads(Path(checkpoint).read_text())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    train, val = load_dataset(cfg.data)
    model = make_model(
        state["front"], tuple(state["image_shape"]), state["stride"], 0, state["relu"]
    )
    model.load_state_dict(state)
    for name, dataset in (("train", train), ("val", val)):
        acc, loss = evaluate(model, dataset)
        print(f"{name}: accuracy={acc:.4f} loss={loss:.6f} n={len(dataset)}")
    return EXIT_OK


def _ed_sampler(cfg: RunConfig):
    if cfg.ed_inputs == "uniform":
        return uniform_input_sampler
    train, _ = load_dataset(cfg.ed_inputs)
    return dataset_input_sampler(train, cfg.stride)


def cmd_ed(cfg: RunConfig) -> int:
    keys = cfg.ansatz.split(",") if cfg.ansatz else list(ED_TABLE_KEYS)
    known = ANSATZ_KEYS + ("debug-identity",)
    for key in keys:
        if key not in known:
            raise ConfigError(f"unknown ansatz {key!r}; choose from {', '.join(known)}")
    out_dir = Path(cfg.out or "runs/ed")
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "ed_results.csv"
    if not table_path.exists():
        table_path.write_text(
            "ansatz,seed,gamma,n,theta_samples,data_samples,d,ed,normalized_ed\n"
        )
    sampler = _ed_sampler(cfg)
    summary = {}
    for key in keys:
        values = []
        for seed in cfg.seeds:
            if key == "debug-identity":
                report = _debug_identity_report(cfg, seed)
            else:
                report = effective_dimension(
                    key, gamma=cfg.gamma, n=cfg.n,
                    theta_samples=cfg.theta_samples, data_samples=cfg.data_samples,
                    seed=seed, input_sampler=sampler,
                )
            print("\n".join(report.lines()))
            print()
            with table_path.open("a") as f:
                f.write(
                    f"{report.ansatz_key},{report.seed},{report.gamma},{report.n},"
                    f"{report.theta_samples},{report.data_samples},{report.d},"
                    f"{_fmt(report.ed)},{_fmt(report.normalized_ed)}\n"
                )
            values.append(report.normalized_ed)
        summary[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        print(f"== {key}: normalized ED {summary[key]['mean']:.3f} +- {summary[key]['std']:.3f}\n")
    _atomic_write(out_dir / "ed_summary.json", json.dumps(
        {"config": {**asdict(cfg), "seeds": list(cfg.seeds)}, "normalized_ed": summary},
        indent=2, sort_keys=True,
    ) + "\n")
    return EXIT_OK


def _debug_identity_report(cfg: RunConfig, seed: int):
    """Closed-form check row: identity FIMs of dimension 4."""
    from .capacity import EDReport

    d = 4
    fims = [np.eye(d) for _ in range(cfg.theta_samples)]
    ed, normalized = effective_dimension_from_fims(fims, cfg.gamma, cfg.n)
    return EDReport(
        ansatz_key="debug-identity", ed=ed, normalized_ed=normalized, gamma=cfg.gamma,
        n=cfg.n, d=d, theta_samples=cfg.theta_samples, data_samples=cfg.data_samples,
        seed=seed, log_param_volume=d * math.log(2 * math.pi),
    )


def cmd_curves(run_dirs, out_csv: str | None, out_svg: str | None) -> int:
    if not run_dirs:
        raise ConfigError("curves needs at least one run directory")
    series = []
    for run_dir in run_dirs:
        run_path = Path(run_dir)
        per_seed = read_metrics_csv(run_path / "metrics.csv")
        label = run_path.name
        epochs = sorted({e for rec in per_seed.values() for e in rec})
        stats = {}
        for idx, metric in enumerate(("train_acc", "train_loss", "val_acc", "val_loss")):
            rows = []
            for e in epochs:
                vals = [rec[e][idx] for rec in per_seed.values() if e in rec]
                rows.append(
                    (e, float(np.mean(vals)), float(np.std(vals)), min(vals), max(vals))
                )
            stats[metric] = rows
        series.append((label, stats))
    lines = ["label,metric,epoch,mean,std,min,max"]
    for label, stats in series:
        for metric in ("train_acc", "val_acc"):
            for e, mean, std, lo, hi in stats[metric]:
                lines.append(
                    f"{label},{metric},{e},{_fmt(mean)},{_fmt(std)},{_fmt(lo)},{_fmt(hi)}"
                )
    csv_path = Path(out_csv or "curves.csv")
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    print(f"wrote {csv_path}")
    if out_svg:
        svg_path = Path(out_svg)
        _atomic_write(svg_path, render_curves_svg(series))
        print(f"wrote {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# SVG rendering (no dependencies; static markup)
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

_PANEL_W, _PANEL_H, _MARGIN = 460, 320, 52


def _panel(series, metric: str, title: str, x0: int) -> list[str]:
    max_epoch = max(
        (row[0] for _, stats in series for row in stats[metric]), default=1
    )
    max_epoch = max(max_epoch, 1)

    def sx(e):
        return x0 + _MARGIN + (e / max_epoch) * (_PANEL_W - 2 * _MARGIN)

    def sy(v):
        return _MARGIN + (1.0 - v) * (_PANEL_H - 2 * _MARGIN)

    parts = [
        f'<rect x="{x0 + _MARGIN}" y="{_MARGIN}" width="{_PANEL_W - 2 * _MARGIN}"'
        f' height="{_PANEL_H - 2 * _MARGIN}" fill="none" stroke="#999"/>',
        f'<text x="{x0 + _PANEL_W / 2:.0f}" y="{_MARGIN - 16}" text-anchor="middle"'
        f' font-size="14">{title}</text>',
    ]
    for frac in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        y = sy(frac)
        parts.append(
            f'<line x1="{x0 + _MARGIN}" y1="{y:.1f}" x2="{x0 + _PANEL_W - _MARGIN}"'
            f' y2="{y:.1f}" stroke="#eee"/>'
        )
        parts.append(
            f'<text x="{x0 + _MARGIN - 6}" y="{y + 4:.1f}" text-anchor="end"'
            f' font-size="10">{frac:.1f}</text>'
        )
    step = max(1, max_epoch // 6)
    for e in range(0, max_epoch + 1, step):
        parts.append(
            f'<text x="{sx(e):.1f}" y="{_PANEL_H - _MARGIN + 16}" text-anchor="middle"'
            f' font-size="10">{e + 1}</text>'
        )
    for i, (label, stats) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        rows = stats[metric]
        band = [(sx(e), sy(min(1.0, m + s))) for e, m, s, _, _ in rows]
        band += [(sx(e), sy(max(0.0, m - s))) for e, m, s, _, _ in reversed(rows)]
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in band)
        parts.append(f'<polygon points="{pts}" fill="{color}" opacity="0.15"/>')
        pts = " ".join(f"{sx(e):.1f},{sy(m):.1f}" for e, m, _, _, _ in rows)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    return parts


def render_curves_svg(series) -> str:
    """Two-panel accuracy chart (train, validation) with +-std bands."""
    width = 2 * _PANEL_W + 40
    height = _PANEL_H + 24 * ((len(series) + 2) // 3) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"'
        f' font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    parts += _panel(series, "train_acc", "Training accuracy", 0)
    parts += _panel(series, "val_acc", "Validation accuracy", _PANEL_W + 40)
    for i, (label, _) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        x = _MARGIN + (i % 3) * 300
        y = _PANEL_H + 18 + (i // 3) * 24
        parts.append(f'<rect x="{x}" y="{y - 10}" width="18" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 24}" y="{y}" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qccnn",
        description="Hybrid quantum-classical CNN lab: train, evaluate, analyze.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--data", help="'synthetic', an .npz archive, or a dataset directory")
        p.add_argument("--stride", type=int, help="convolution stride (default 2)")
        p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
        p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="multi-seed training campaign")
    add_common(p_train)
    p_train.add_argument("--ansatz", help="ansatz key or 'classical'")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--stop-at-train-acc", dest="stop_at_train_acc", type=float,
                         help="stop once epoch train accuracy reaches this value")
    p_train.add_argument("--classical-relu", dest="classical_relu", action="store_const",
                         const=True, help="ReLU after the classical conv layer")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    add_common(p_eval)
    p_eval.add_argument("checkpoint", help="checkpoint_seedN.json path")

    p_ed = sub.add_parser("ed", help="effective-dimension table")
    add_common(p_ed)
    p_ed.add_argument("--ansatz", help="comma-separated ansatz keys (default: table set)")
    p_ed.add_argument("--gamma", type=float)
    p_ed.add_argument("--n", type=int)
    p_ed.add_argument("--theta-samples", dest="theta_samples", type=int)
    p_ed.add_argument("--data-samples", dest="data_samples", type=int)
    p_ed.add_argument("--ed-inputs", dest="ed_inputs",
                      help="'uniform' or a dataset source to draw patches from")

    p_curves = sub.add_parser("curves", help="combine run metrics into CSV/SVG curves")
    p_curves.add_argument("run_dirs", nargs="+", help="train output directories")
    p_curves.add_argument("--out", help="combined CSV path (default curves.csv)")
    p_curves.add_argument("--svg", help="optional SVG chart path")
    return parser


def main(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "curves":
            return cmd_curves(args.run_dirs, args.out, args.svg)
        cfg = build_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ed":
            return cmd_ed(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
