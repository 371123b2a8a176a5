"""Command-line entry point: ``mburst {generate,train,compare,mask-dump}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
failure. ``MBURST_OUTPUT_DIR`` overrides ``--out`` for every command.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .burst import BurstConfig
from .data import Dataset, IbmParams, SyntheticConfig, generate_dataset
from .loss_opt import AdamConfig
from .metrics import auc_energy, records_to_csv
from .model import VARIANTS, ArchitectureConfig, ModelGraph
from .tensor import FormatError, make_rng
from .training import NumericalFailure, TrainConfig, arch_for, train_variant

log = logging.getLogger("mburst")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
MASK_DUMP_ROWS = 150

RUN_KEYS = {"seed", "epochs", "runs", "batch_size", "variant", "feedback_init"}
SECTIONS = {
    "architecture": ArchitectureConfig,
    "synthetic": SyntheticConfig,
    "adam": AdamConfig,
    "burst": BurstConfig,
    "wbce": None,
    "run": None,
}


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")


def load_config(path: str | None) -> dict:
    """Parse and strictly validate a JSON run config (see README for the schema)."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("<top level>", raw, SECTIONS)
    for name, cls in SECTIONS.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"section '{name}' must be an object")
        if cls is not None:
            allowed = [f.name for f in fields(cls)]
            _check_keys(name, sec, allowed)
        elif name == "wbce":
            _check_keys(name, sec, ("pos_weight", "eps_log"))
        else:
            _check_keys(name, sec, RUN_KEYS)
    if "ibm" in raw.get("synthetic", {}):
        _check_keys("synthetic.ibm", raw["synthetic"]["ibm"], [f.name for f in fields(IbmParams)])
    return raw


def _build(cls, sec: dict):
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(sec)
        return cls(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def _setting(args, raw: dict, key: str, default):
    cli = getattr(args, key, None)
    if cli is not None:
        return cli
    return raw.get("run", {}).get(key, default)


def _train_config(args, raw: dict, epochs_default: int = 40) -> TrainConfig:
    wbce = raw.get("wbce", {})
    epochs = int(_setting(args, raw, "epochs", epochs_default))
    batch = int(_setting(args, raw, "batch_size", 32))
    if epochs < 0 or batch < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")
    return TrainConfig(
        epochs=epochs,
        batch_size=batch,
        adam=_build(AdamConfig, raw.get("adam", {})),
        burst=_build(BurstConfig, raw.get("burst", {})),
        pos_weight=wbce.get("pos_weight"),
        eps_log=wbce.get("eps_log", 1e-7),
        feedback_init=_setting(args, raw, "feedback_init", "symmetric"),
    )


def _arch(dataset: Dataset, raw: dict) -> ArchitectureConfig:
    sec = dict(raw.get("architecture", {}))
    arch = arch_for(dataset, **{k: v for k, v in sec.items() if k not in ("audio_input", "visual_input", "mask_bins")})
    declared = _build(ArchitectureConfig, sec) if sec else None
    if declared is not None:
        for k in ("audio_input", "visual_input", "mask_bins"):
            if k in sec and getattr(declared, k) != getattr(arch, k):
                raise ConfigError(f"architecture.{k}={getattr(declared, k)} does not match dataset {getattr(arch, k)}")
    return arch


def _out_dir(args) -> Path:
    return Path(os.environ.get("MBURST_OUTPUT_DIR") or args.out)


def _open_dataset(path) -> Dataset:
    try:
        return Dataset(path)
    except FileNotFoundError as exc:
        raise OSError(f"dataset not found: {exc.filename}") from exc


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    raw = load_config(args.config)
    sec = dict(raw.get("synthetic", {}))
    seed = _setting(args, raw, "seed", None)
    if seed is not None:
        sec["seed"] = int(seed)
    if args.n_samples is not None:
        sec["n_samples"] = args.n_samples
    cfg = _build(SyntheticConfig, sec)
    out = _out_dir(args)
    if not out.parent.exists():
        raise OSError(f"parent directory of {out} does not exist")
    manifest = generate_dataset(cfg, out)
    counts = manifest["split_counts"]
    print(
        f"wrote {manifest['n_samples']} samples to {out} "
        f"(train {counts['train']} / test {counts['test']} / proxy {counts['proxy']}), "
        f"pos_weight {manifest['pos_weight']:.4f}, seed {manifest['seed']}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    raw = load_config(args.config)
    cfg = _train_config(args, raw)
    variant = _setting(args, raw, "variant", "mburst")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}")
    seed = int(_setting(args, raw, "seed", 0))
    ds = _open_dataset(args.data)
    arch = _arch(ds, raw)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def flush(epoch, recs):
        rows.extend(recs)
        (out / "metrics.csv").write_text(records_to_csv(rows))

    (out / "metrics.csv").write_text(records_to_csv([]))
    model, opt, records = train_variant(ds, variant, seed, cfg, arch, on_epoch=flush)
    model.save(out / "checkpoint", opt)
    print(f"trained {variant} for {cfg.epochs} epoch(s); checkpoint at {out / 'checkpoint'}")
    for r in records[-2:]:
        print(f"  epoch {r.epoch} {r.split}: f1 {r.f1:.4f} acc {r.accuracy:.2f}% energy {r.energy_rate:.4f}")
    return EXIT_OK


def summarize(per_run: dict[str, list[list]]) -> dict:
    """Final-epoch metrics and energy AUC per split, mean/std over runs."""
    summary = {}
    for variant, runs in per_run.items():
        entry = {}
        for split in ("train", "test"):
            finals = [[r for r in recs if r.split == split][-1] for recs in runs]
            aucs = [auc_energy([r for r in recs if r.split == split]) for recs in runs] if len(runs[0]) >= 4 else []
            tail = [np.mean([r.energy_rate for r in recs if r.split == split][-5:]) for recs in runs]
            entry[split] = {
                "f1_mean": float(np.mean([r.f1 for r in finals])),
                "f1_std": float(np.std([r.f1 for r in finals])),
                "accuracy_mean": float(np.mean([r.accuracy for r in finals])),
                "accuracy_std": float(np.std([r.accuracy for r in finals])),
                "energy_final5_mean": float(np.mean(tail)),
                "energy_auc_mean": float(np.mean(aucs)) if aucs else None,
                "energy_auc_std": float(np.std(aucs)) if aucs else None,
                "f1_runs": [r.f1 for r in finals],
                "energy_auc_runs": aucs,
            }
        summary[variant] = entry
    return summary


def render_tables(summary: dict) -> tuple[str, str, str]:
    """(table1.csv, table2.csv, aligned text) with one column per variant."""
    variants = list(summary)
    t1 = ["split,metric," + ",".join(variants)]
    t2 = ["split," + ",".join(variants)]
    lines = [f"{'split':<6} {'metric':<8} " + " ".join(f"{v:>18}" for v in variants)]
    for split in ("train", "test"):
        for metric, fmt in (("f1", "{:.3f} ± {:.3f}"), ("accuracy", "{:.3f} ± {:.3f}")):
            cells = [fmt.format(summary[v][split][f"{metric}_mean"], summary[v][split][f"{metric}_std"]) for v in variants]
            t1.append(f"{split},{metric}," + ",".join(cells))
            lines.append(f"{split:<6} {metric:<8} " + " ".join(f"{c:>18}" for c in cells))
    lines.append("")
    lines.append(f"{'split':<6} {'AUC':<8} " + " ".join(f"{v:>18}" for v in variants))
    for split in ("train", "test"):
        vals = [summary[v][split]["energy_auc_mean"] for v in variants]
        cells = ["n/a" if x is None else f"{x:.2f}" for x in vals]
        t2.append(f"{split}," + ",".join(cells))
        lines.append(f"{split:<6} {'energy':<8} " + " ".join(f"{c:>18}" for c in cells))
    return "\n".join(t1) + "\n", "\n".join(t2) + "\n", "\n".join(lines) + "\n"


def run_compare(ds: Dataset, cfg: TrainConfig, arch: ArchitectureConfig, runs: int, seed: int, out: Path | None = None,
                variants=VARIANTS) -> dict:
    per_run = {v: [] for v in variants}
    for variant in variants:
        for r in range(runs):
            _, _, records = train_variant(ds, variant, seed + r, cfg, arch)
            per_run[variant].append(records)
            if out is not None:
                _write(out / "runs" / f"{variant}_run{r}.csv", records_to_csv(records))
    return summarize(per_run)


def cmd_compare(args) -> int:
    raw = load_config(args.config)
    cfg = _train_config(args, raw)
    runs = int(_setting(args, raw, "runs", 4))
    seed = int(_setting(args, raw, "seed", 0))
    if runs < 1 or cfg.epochs < 1:
        raise ConfigError("compare needs runs >= 1 and epochs >= 1")
    ds = _open_dataset(args.data)
    arch = _arch(ds, raw)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_compare(ds, cfg, arch, runs, seed, out)
    t1, t2, text = render_tables(summary)
    _write(out / "table1.csv", t1)
    _write(out / "table2.csv", t2)
    _write(out / "table.txt", text)
    meta = {"runs": runs, "seed": seed, "epochs": cfg.epochs, "variants": summary}
    _write(out / "summary.json", json.dumps(meta, indent=1, sort_keys=True))
    print(text, end="")
    return EXIT_OK


def write_pgm(path: Path, img: np.ndarray) -> None:
    """Binary P5 greymap, maxval 255."""
    pix = np.asarray(img, dtype=np.uint8)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def proxy_rows(n_proxy: int, seed: int, rows: int = MASK_DUMP_ROWS) -> np.ndarray:
    """``rows`` consecutive proxy indices from a random start, wrapping at the end."""
    start = int(make_rng(seed, "eval").integers(0, n_proxy))
    return (start + np.arange(rows)) % n_proxy


def cmd_mask_dump(args) -> int:
    ckpt = Path(args.checkpoint)
    if not (ckpt / "graph.json").exists():
        raise ConfigError(f"no checkpoint at {ckpt}")
    model = ModelGraph.load(ckpt)
    ds = _open_dataset(args.data)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    idx = proxy_rows(len(ds.split_index["proxy"]), args.seed if args.seed is not None else model.seed)
    batch = ds.load_batch("proxy", idx)
    pred = model.predict_mask(batch)
    write_pgm(out / "mask_true.pgm", batch.mask * 255)
    write_pgm(out / "mask_pred.pgm", pred * 255)
    print(f"wrote {out / 'mask_true.pgm'} and {out / 'mask_pred.pgm'} ({len(idx)} x {batch.mask.shape[1]})")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mburst", description="Burst-propagation audio-visual mask reconstruction")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--n-samples", type=int, dest="n_samples")
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (
        ("train", cmd_train, "train one variant"),
        ("compare", cmd_compare, "train all variants over several runs"),
    ):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--config")
        t.add_argument("--seed", type=int)
        t.add_argument("--epochs", type=int)
        t.add_argument("--batch-size", type=int, dest="batch_size")
        t.add_argument("--feedback-init", choices=("symmetric", "random"), dest="feedback_init")
        if name == "train":
            t.add_argument("--variant", choices=VARIANTS)
        else:
            t.add_argument("--runs", type=int)
        t.set_defaults(func=func)

    m = sub.add_parser("mask-dump", help="write ground-truth and predicted proxy masks as PGM")
    m.add_argument("--data", required=True)
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_mask_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
