"""Command-line interface.

Subcommands map to the library's experiment flows::

    gen       synthetic image batch -> FTKR tensor file
    verify    numerical certification suite -> verify.json
    analyze   per-layer spectra, collapse metrics, HF/LF sets, AWGN probe
    reduce    forward pass under a reduction schedule -> token counts
    compare   frequency-aware vs prune/merge/pool baselines
    flops     MAC cost model for a model and schedule
    search    schedule grid search with the CKA proxy evaluator

Exit codes: 0 success, 1 usage error, 2 configuration or schema error,
3 I/O or file-format error, 4 verification failure.  All outputs go to
``--out`` (default: $FREQTOK_OUT or ./freqtok-out) and are byte-identical
for identical flags and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .cost import mac_count
from .experiments import (
    awgn_comparison,
    compare_methods,
    hf_lf_layer_stats,
    layer_spectra,
)
from .ftkr import FtkrError, write_ftkr
from .model import forward, init_weights, preset_config
from .reduction import EMPTY_SCHEDULE
from .rng import SeededRng
from .search import SearchSpace, grid_search, make_cka_evaluator
from .spectral import collapse_report, token_spectrum
from .synthetic import gen_synthetic
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERIFY = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True))
        fh.write("\n")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    side = cfg.model.grid_side * cfg.model.patch_size
    if cfg.recipe.side != side or cfg.recipe.channels != cfg.model.channels:
        raise ConfigError(
            f"data recipe {cfg.recipe.side}x{cfg.recipe.side}x{cfg.recipe.channels} does not "
            f"match model input {side}x{side}x{cfg.model.channels}"
        )
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("FREQTOK_OUT", "freqtok-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _batch(cfg: ExperimentConfig) -> np.ndarray:
    return gen_synthetic(cfg.recipe, SeededRng(cfg.seed).split(1), cfg.batch_size)


def cmd_gen(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    batch = _batch(cfg)
    tensors = {f"image{i}": batch[i] for i in range(batch.shape[0])}
    path = out / "batch.ftkr"
    write_ftkr(tensors, path)
    print(f"wrote {batch.shape[0]} images to {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    report = run_suite(cfg.seed, args.trials)
    (out / "verify.json").write_text(report.to_json() + "\n", encoding="utf-8")
    for c in report.checks:
        status = "ok" if c.violations == 0 else f"{c.violations} violations"
        kind = "asserted" if c.asserted else "reported"
        print(f"{c.name}: {status} (worst margin {c.worst_margin:.3e}, {kind})")
    if not report.ok:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    weights = init_weights(cfg.model, SeededRng(cfg.seed))
    batch = _batch(cfg)
    traces = [forward(cfg.model, weights, img).trace for img in batch]

    n_bands = cfg.model.grid_side // 2 + 1
    spec_rows = []
    for layer in range(cfg.model.depth):
        specs = [layer_spectra(t)[layer] for t in traces]
        row = [
            layer + 1,
            np.mean([s.hf_band_energy_fraction for s in specs]),
            np.mean([s.delta_log_amplitude for s in specs]),
        ]
        row.extend(np.mean([s.band_amplitude for s in specs], axis=0))
        spec_rows.append(row)
    _write_csv(
        out / "spectrum.csv",
        ["layer", "hf_fraction", "delta_log_amplitude"] + [f"band_amp_{k}" for k in range(n_bands)],
        spec_rows,
    )

    reports = [collapse_report(t) for t in traces]
    collapse_rows = []
    for layer in range(cfg.model.depth):
        lam = np.mean([r.lambda_hat[layer - 1] for r in reports]) if layer >= 1 else float("nan")
        collapse_rows.append(
            [
                layer + 1,
                np.mean([r.hf_norm[layer] for r in reports]),
                lam,
                np.mean([r.cka_to_last[layer] for r in reports]),
            ]
        )
    _write_csv(out / "collapse.csv", ["layer", "hf_norm", "lambda_hat", "cka_to_last"], collapse_rows)

    per_layer = {}
    for t in traces:
        for s in hf_lf_layer_stats(t):
            per_layer.setdefault(s.layer, []).append(s)
    hf_rows = [
        [
            layer,
            np.mean([s.hf_energy for s in stats]),
            np.mean([s.lf_energy for s in stats]),
            np.mean([s.hf_dc_similarity for s in stats]),
            np.mean([s.lf_dc_similarity for s in stats]),
            np.mean([s.iou_with_cls_prune for s in stats]),
        ]
        for layer, stats in sorted(per_layer.items())
    ]
    _write_csv(
        out / "hf_lf.csv",
        ["layer", "hf_energy", "lf_energy", "hf_dc_similarity", "lf_dc_similarity", "iou_with_cls_prune"],
        hf_rows,
    )

    probe_layer = max(1, cfg.model.depth // 2)
    sigma = 1.0
    probe_rng = SeededRng(cfg.seed).split(2)
    ckas = {"hf": [], "lf": []}
    for i, img in enumerate(batch):
        result = awgn_comparison(cfg.model, weights, img, probe_layer, sigma, probe_rng.split(i))
        for k, v in result.items():
            ckas[k].append(v)
    _write_csv(
        out / "awgn.csv",
        ["token_set", "probe_layer", "sigma", "cka_to_clean"],
        [[k, probe_layer, sigma, np.mean(v)] for k, v in sorted(ckas.items())],
    )
    print(f"analysis written to {out}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    weights = init_weights(cfg.model, SeededRng(cfg.seed))
    batch = _batch(cfg)
    results = [forward(cfg.model, weights, img, schedule=cfg.schedule) for img in batch]

    rows = []
    for layer in range(cfg.model.depth):
        recs = [r.trace[layer] for r in results]
        fractions = [
            token_spectrum(rec.tokens_out, rec.layout).hf_band_energy_fraction for rec in recs
        ]
        rows.append(
            [
                layer + 1,
                recs[0].tokens_pre.shape[0],
                recs[0].tokens_out.shape[0],
                cfg.schedule.step_at(layer + 1) is not None,
                np.mean(fractions),
            ]
        )
    _write_csv(out / "reduce.csv", ["layer", "tokens_in", "tokens_out", "reduced", "hf_fraction"], rows)
    write_ftkr({f"final{i}": r.tokens for i, r in enumerate(results)}, out / "final.ftkr")
    print(f"reduction trace written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    if not cfg.schedule.steps:
        raise ConfigError("compare needs a schedule with at least one step")
    weights = init_weights(cfg.model, SeededRng(cfg.seed))
    batch = _batch(cfg)
    collected = {}
    for img in batch:
        for o in compare_methods(cfg.model, weights, img, cfg.schedule):
            collected.setdefault(o.method, []).append(o)
    rows = [
        [
            method,
            outs[0].tokens_after,
            np.mean([o.hf_band_fraction for o in outs]),
            np.mean([o.hf_band_energy for o in outs]),
            np.mean([o.cka_to_base for o in outs]),
        ]
        for method, outs in collected.items()
    ]
    _write_csv(
        out / "compare.csv",
        ["method", "tokens_after", "hf_band_fraction", "hf_band_energy", "cka_to_base"],
        rows,
    )
    print(f"method comparison written to {out}")
    return EXIT_OK


def cmd_flops(args) -> int:
    out = _out_dir(args)
    if args.model:
        model = preset_config(args.model)
        schedule = load_config(args.config).schedule if args.config else EMPTY_SCHEDULE
    else:
        cfg = _load(args)
        model, schedule = cfg.model, cfg.schedule
    report = mac_count(model, schedule)
    _write_csv(
        out / "flops.csv",
        ["layer", "tokens_msa", "tokens_ffn", "msa_macs", "ffn_macs"],
        [[l.layer, l.tokens_msa, l.tokens_ffn, l.msa_macs, l.ffn_macs] for l in report.layers],
    )
    _write_json(
        out / "flops.json",
        {
            "msa_total": report.msa_total,
            "ffn_total": report.ffn_total,
            "patch_embed_macs": report.patch_embed_macs,
            "head_macs": report.head_macs,
            "total": report.total,
        },
    )
    print(f"total MACs: {report.total / 1e9:.3f} G")
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    weights = init_weights(cfg.model, SeededRng(cfg.seed))
    batch = _batch(cfg)
    evaluator = make_cka_evaluator(cfg.model, weights, batch)
    space = SearchSpace.default()
    budget = None if args.budget == 0 else args.budget
    result = grid_search(
        space, evaluator, cfg.model,
        budget=budget, workers=args.workers, rng=SeededRng(cfg.seed),
    )
    _write_csv(
        out / "search.csv",
        ["layers", "ratios", "windows", "mac", "proxy_acc", "score", "on_front"],
        [
            [
                "|".join(str(l) for l in c.layers),
                "|".join(repr(float(r)) for r in c.ratios),
                "|".join(str(w) for w in c.windows),
                c.mac_total,
                c.proxy_acc,
                c.score,
                c.on_front,
            ]
            for c in result.candidates
        ],
    )
    _write_json(
        out / "search.json",
        {
            "mac_base": result.mac_base,
            "acc_base": result.acc_base,
            "n_enumerated": result.n_enumerated,
            "n_skipped": result.n_skipped,
            "front_size": len(result.front()),
        },
    )
    best = result.candidates[0] if result.candidates else None
    if best:
        print(f"best schedule: layers {best.layers}, score {best.score:.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="freqtok",
        description="Frequency-aware token reduction experiments.",
        epilog=(
            "exit codes: 0 success, 1 usage error, 2 config/schema error, "
            "3 I/O or file-format error, 4 verification failure"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--config", type=str, default=None, help="JSON experiment config")
        p.add_argument("--trials", type=int, default=1000, help="verification trials")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (default: $FREQTOK_OUT or ./freqtok-out)")

    for name, fn, desc in [
        ("gen", cmd_gen, "generate a synthetic image batch as an FTKR file"),
        ("verify", cmd_verify, "run the numerical certification suite"),
        ("analyze", cmd_analyze, "per-layer frequency and collapse analysis"),
        ("reduce", cmd_reduce, "run the reduction schedule, report token counts"),
        ("compare", cmd_compare, "compare reduction strategies at a matched budget"),
        ("flops", cmd_flops, "MAC cost model"),
        ("search", cmd_search, "grid search over reduction schedules"),
    ]:
        p = sub.add_parser(name, help=desc)
        common(p)
        if name == "flops":
            p.add_argument("--model", type=str, default=None,
                           help="preset: deit-t, deit-s, or deit-b (empty schedule unless --config)")
        if name == "search":
            p.add_argument("--budget", type=int, default=64,
                           help="candidates to sample (0 = full enumeration)")
            p.add_argument("--workers", type=int, default=1, help="parallel evaluations")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"freqtok: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"freqtok: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FtkrError as exc:
        print(f"freqtok: file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"freqtok: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())
