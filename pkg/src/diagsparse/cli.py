"""Command-line front end: train / bench / convert / analyze / export.

Exit codes: 0 success, 1 usage error, 2 data or config error.  File
outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import analysis, bench
from .bcsr import BlockingConfig, bcsr_stats, dump_bcsr, load_bcsr, scatter_dense, to_bcsr
from .diagcore import from_json_dict, load_matrix, materialize
from .errors import DiagSparseError
from .training import (
    apply_overrides,
    config_from_dict,
    config_to_dict,
    TrainConfig,
    load_checkpoint,
    train,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _int_list(raw: str) -> list[int]:
    try:
        return [int(p) for p in raw.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {raw!r}") from exc


def _float_list(raw: str) -> list[float]:
    try:
        return [float(p) for p in raw.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {raw!r}") from exc


def _apply_threads(args) -> int:
    threads = getattr(args, "threads", None)
    if threads is None:
        threads = int(os.environ.get("DIAGSPARSE_THREADS", "1"))
    os.environ["DIAGSPARSE_THREADS"] = str(threads)
    return threads


# ---------------------------------------------------------------- subcommands


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _cmd_train(args) -> int:
    _apply_threads(args)
    data = config_to_dict(TrainConfig())
    if args.config:
        with open(args.config) as fh:
            _deep_update(data, json.load(fh))
    data = apply_overrides(data, args.override or [])
    config = config_from_dict(data)
    if args.seed is not None:
        config.seed = args.seed
    print(json.dumps({"resolved_config": config_to_dict(config)}, indent=2))
    model, metrics = train(config)
    if args.out:
        lines = [m.to_csv_row() for m in metrics]
        _atomic_write(
            args.out,
            "\n".join([type(metrics[0]).CSV_HEADER] + lines) + "\n"
            if metrics
            else "",
        )
    if metrics:
        final = metrics[-1]
        print(
            f"final epoch {final.epoch}: loss {final.train_loss:.4f} "
            f"test_accuracy {final.test_accuracy:.4f} "
            f"active {list(final.active_counts)}"
        )
    return 0


def _cmd_bench(args) -> int:
    threads = _apply_threads(args)
    results = bench.bench_spmm(
        args.dims,
        args.sparsities,
        batch=64,
        reps=args.reps,
        seed=args.seed or 0,
        threads=threads,
    )
    rows = [bench.CSV_HEADER]
    for r in results:
        rows.append(
            f"{r.dim},{r.sparsity},{r.batch},{r.kernel},{r.reps},"
            f"{r.median_ms:.6f},{r.mean_ms:.6f},{r.speedup:.6f}"
        )
    body = "\n".join(rows) + "\n"
    if args.out:
        if args.out.endswith(".json"):
            import dataclasses

            _atomic_write(
                args.out,
                json.dumps([dataclasses.asdict(r) for r in results], indent=2),
            )
        else:
            _atomic_write(args.out, body)
    print(body, end="")
    return 0


def _cmd_convert(args) -> int:
    _apply_threads(args)
    m = load_matrix(args.input)
    cfg = BlockingConfig(alpha_blend=args.alpha_blend, br=args.br, bc=args.bc)
    t0 = time.perf_counter()
    b = to_bcsr(m, cfg)
    convert_ms = (time.perf_counter() - t0) * 1000.0
    out = args.out or (args.input + ".bcsr.json")
    # dump into a scratch dir first so header blob names match the target
    directory = os.path.dirname(os.path.abspath(out)) or "."
    scratch = tempfile.mkdtemp(dir=directory, prefix=".convert-")
    try:
        tmp_head = os.path.join(scratch, os.path.basename(out))
        dump_bcsr(b, tmp_head)
        os.replace(tmp_head, out)
        os.replace(tmp_head + ".bin", out + ".bin")
    finally:
        if os.path.isdir(scratch):
            try:
                os.rmdir(scratch)
            except OSError:
                pass
    stats = bcsr_stats(b)
    print(
        f"blocks={stats['num_blocks']} "
        f"mean_block_density={stats['mean_block_density']:.4f} "
        f"br={cfg.br} bc={cfg.bc} alpha_blend={cfg.alpha_blend} "
        f"convert_ms={convert_ms:.3f} out={out}"
    )
    if args.verify:
        reloaded = load_bcsr(out)
        dense = materialize(m)
        if not np.array_equal(scatter_dense(reloaded), dense):
            print("verify: round-trip mismatch", file=sys.stderr)
            return 2
        print("verify: round-trip exact")
    return 0


def _layer_matrices_from_file(path: str):
    with open(path) as fh:
        payload = json.load(fh)
    if isinstance(payload, dict) and "layers" in payload:
        model, _ = load_checkpoint(path)
        return [m for m in model.layer_matrices() if m is not None]
    return [from_json_dict(payload)]


def _cmd_analyze(args) -> int:
    _apply_threads(args)
    matrices = _layer_matrices_from_file(args.input)
    if not matrices:
        print("error: no diagonal layers found", file=sys.stderr)
        return 2
    reports = []
    for i, m in enumerate(matrices):
        g = analysis.layer_to_graph(m)
        rep = analysis.small_world_sigma(g, n_random=args.n_random,
                                         seed=args.seed or 0)
        entry = {"layer": i, "rows": m.rows, "cols": m.cols,
                 "offsets": len(m.pattern.offsets), **rep.to_dict()}
        reports.append(entry)
        print(
            f"layer {i}: C={rep.C:.4f} L={rep.L:.3f} C_r={rep.C_r:.4f} "
            f"L_r={rep.L_r:.3f} sigma={rep.sigma:.3f} connected={rep.connected}"
        )
    if args.out:
        _atomic_write(args.out, json.dumps({"layers": reports}, indent=2))
    return 0


def _cmd_export(args) -> int:
    matrices = _layer_matrices_from_file(args.input)
    if not matrices:
        print("error: no diagonal layers found", file=sys.stderr)
        return 2
    out = args.out or (args.input + ".pattern.json")
    written = []
    if len(matrices) == 1:
        written.extend(analysis.export_pattern(matrices[0], out))
    else:
        for i, m in enumerate(matrices):
            written.extend(analysis.export_pattern(m, f"{out}.layer{i}.json"))
    for path in written:
        print(f"wrote {path}")
    return 0


# -------------------------------------------------------------------- parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="diagsparse",
                     description="Diagonal sparse training toolkit")
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model from a config")
    p_train.add_argument("--config", help="JSON config file")
    p_train.add_argument("--override", action="append", metavar="KEY=VALUE",
                         help="dotted config override, repeatable")
    p_train.add_argument("--out", help="metrics CSV path")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--threads", type=int)
    p_train.set_defaults(func=_cmd_train)

    p_bench = sub.add_parser("bench", help="kernel microbenchmarks")
    p_bench.add_argument("--dims", type=_int_list, default=[768])
    p_bench.add_argument("--sparsities", type=_float_list,
                         default=[0.6, 0.7, 0.8, 0.9, 0.95])
    p_bench.add_argument("--reps", type=int, default=20)
    p_bench.add_argument("--out", help="CSV (or .json) output path")
    p_bench.add_argument("--seed", type=int)
    p_bench.add_argument("--threads", type=int)
    p_bench.set_defaults(func=_cmd_bench)

    p_conv = sub.add_parser("convert", help="matrix JSON to blocked dump")
    p_conv.add_argument("input", help="diagonal matrix JSON file")
    p_conv.add_argument("--out", help="dump path (header JSON + .bin blob)")
    p_conv.add_argument("--br", type=int, default=8)
    p_conv.add_argument("--bc", type=int, default=8)
    p_conv.add_argument("--alpha-blend", type=float, default=0.3,
                        dest="alpha_blend")
    p_conv.add_argument("--verify", action="store_true",
                        help="check the dump scatters back exactly")
    p_conv.add_argument("--seed", type=int)
    p_conv.add_argument("--threads", type=int)
    p_conv.set_defaults(func=_cmd_convert)

    p_an = sub.add_parser("analyze", help="small-world report per layer")
    p_an.add_argument("input", help="checkpoint or matrix JSON")
    p_an.add_argument("--out", help="report JSON path")
    p_an.add_argument("--n-random", type=int, default=10, dest="n_random")
    p_an.add_argument("--seed", type=int)
    p_an.add_argument("--threads", type=int)
    p_an.set_defaults(func=_cmd_analyze)

    p_ex = sub.add_parser("export", help="pattern JSON + 0/1 mask CSV")
    p_ex.add_argument("input", help="checkpoint or matrix JSON")
    p_ex.add_argument("--out", help="output basename")
    p_ex.add_argument("--seed", type=int)
    p_ex.set_defaults(func=_cmd_export)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help / --version paths
        code = exc.code
        return int(code) if code else 0
    if getattr(args, "cmd", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (DiagSparseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
