"""Command-line front end.

Each subcommand builds the same JSON payload the HTTP service accepts and
either executes it in-process (default) or posts it to a running server
(--server URL), so both paths produce identical results.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .datagen import TablePair, read_dataset, write_dataset
from .service import ops
from .tables import CayleyTable
from .workbench import cache_query

ROUTE_OPS = {
    "/gen": ops.op_gen,
    "/corrupt": ops.op_corrupt,
    "/trust": ops.op_trust,
    "/train": ops.op_train,
    "/heal": ops.op_heal,
    "/experiment": ops.op_experiment,
    "/stats/exceeds-c": ops.op_exceeds_c,
    "/stats/frequency": ops.op_frequency,
    "/export": ops.op_export,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract wants 1 for validation."""

    def error(self, message: str) -> None:
        self.exit(1, f"{self.prog}: error: {message}\n")


def _call(route: str, payload: dict, server: str | None) -> dict:
    """Run one operation in-process or against a server."""
    if server is None:
        return ROUTE_OPS[route](**payload)
    import httpx

    try:
        response = httpx.post(
            server.rstrip("/") + route, json=payload, timeout=600.0
        )
    except httpx.HTTPError as exc:
        raise RuntimeError(f"server unreachable: {exc}") from exc
    if response.status_code >= 500:
        raise RuntimeError(_detail(response))
    if response.status_code >= 400:
        raise ValueError(_detail(response))
    return response.json()


def _detail(response) -> str:
    try:
        return response.json().get("detail", response.text)
    except ValueError:
        return response.text


def read_tables_file(path: str | Path) -> list[dict]:
    """Tables from a JSON-lines file, or from plain-text grid blocks."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if not stripped:
        raise ValueError(f"{path}: empty table file")
    if stripped.startswith("{"):
        tables = []
        for ln, raw in enumerate(text.splitlines(), start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                tables.append(CayleyTable.from_obj(json.loads(raw)).to_obj())
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}: line {ln}: {exc}") from exc
        return tables
    # Grid blocks: an order line, then that many rows, repeated.
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    tables = []
    pos = 0
    while pos < len(lines):
        try:
            n = int(lines[pos])
        except ValueError as exc:
            raise ValueError(
                f"{path}: expected a table order at line block {len(tables) + 1}"
            ) from exc
        block = lines[pos : pos + n + 1]
        if len(block) != n + 1:
            raise ValueError(f"{path}: truncated grid for order {n}")
        tables.append(CayleyTable.from_grid("\n".join(block) + "\n").to_obj())
        pos += n + 1
    return tables


def _read_pairs(path: str | Path) -> list[dict]:
    return [pair.to_obj() for pair in read_dataset(path)]


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _default_out(args, filename: str, explicit: str | None) -> str | None:
    if explicit:
        return explicit
    if args.out_dir:
        return str(Path(args.out_dir) / filename)
    return None


def _seed_cell(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("seed cell must be i,j,v")
    try:
        i, j, v = (int(x) for x in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("seed cell must be integers") from exc
    return i, j, v


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out-dir", default=None, help="default output directory")
    common.add_argument(
        "--config", default=None, help="JSON file mirroring the experiment config"
    )
    common.add_argument(
        "--server", default=None, help="route through a running service URL"
    )

    parser = _Parser(prog="semiheal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate associative tables")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--classes", action="store_true", help="deduplicate by class")
    p.add_argument(
        "--seed-cell", type=_seed_cell, action="append", default=[],
        metavar="i,j,v", help="fix one cell (repeatable)",
    )
    p.add_argument("--out", default=None, help="tables file (JSON lines)")

    p = sub.add_parser("corrupt", parents=[common], help="corrupt tables into pairs")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--in", dest="infile", required=True, help="tables file")
    p.add_argument("--out", default=None, help="dataset file")

    p = sub.add_parser("trust", parents=[common], help="score one table's cells")
    p.add_argument("--in", dest="infile", required=True, help="table file")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--out", default=None, help="JSON output file")

    p = sub.add_parser("train", parents=[common], help="train the corruption detector")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", default=None, help="model file")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--criterion", choices=("gini", "entropy"), default="gini")
    p.add_argument("--bilateral", action="store_true", help="bilateral vote feature")
    p.add_argument("--symmetric", action="store_true", help="symmetric trust feature")

    p = sub.add_parser("heal", parents=[common], help="heal a corrupted dataset")
    p.add_argument(
        "--mode", choices=("det", "backtrack", "hybrid", "ml_only"), default="hybrid"
    )
    p.add_argument("--in", dest="infile", required=True, help="dataset file")
    p.add_argument("--model", default=None, help="model file (hybrid/ml_only)")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--bilateral", action="store_true")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--exponent", type=int, choices=(1, 2), default=1)
    p.add_argument("--budget", type=int, default=None, help="backtrack node budget")
    p.add_argument("--out", default=None, help="report file (JSON lines)")

    p = sub.add_parser("experiment", parents=[common], help="run a configured sweep")
    p.add_argument("--cache", default=None, help="cache file override")
    p.add_argument("--out", default=None, help="full record output file")

    p = sub.add_parser("stats", parents=[common], help="statistical helpers")
    stats_sub = p.add_subparsers(dest="stat", required=True)
    q = stats_sub.add_parser("exceeds-c", parents=[common])
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--p", type=float, required=True)
    q = stats_sub.add_parser("freq", parents=[common])
    q.add_argument("--in", dest="infile", required=True, help="table file")

    p = sub.add_parser("export", parents=[common], help="export cached runs to CSV")
    p.add_argument("--cache", required=True, help="cache file")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--mode", default=None)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_gen(args) -> int:
    payload = {
        "n": args.n,
        "count": args.count,
        "seed": args.seed or 0,
        "seed_cells": [list(c) for c in args.seed_cell],
        "distinct_classes": args.classes,
    }
    result = _call("/gen", payload, args.server)
    lines = [json.dumps(t, separators=(",", ":")) for t in result["tables"]]
    out = _default_out(args, "tables.jsonl", args.out)
    _write_or_print("\n".join(lines) + "\n", out)
    if result["generated"] < result["requested"]:
        print(
            f"generated {result['generated']} of {result['requested']} tables",
            file=sys.stderr,
        )
    return 0


def _cmd_corrupt(args) -> int:
    payload = {
        "tables": read_tables_file(args.infile),
        "p": args.p,
        "seed": args.seed or 0,
    }
    result = _call("/corrupt", payload, args.server)
    pairs = [TablePair.from_obj(obj) for obj in result["pairs"]]
    out = _default_out(args, "dataset.jsonl", args.out)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_dataset(pairs, out)
    else:
        write_dataset(pairs, sys.stdout)
    return 0


def _cmd_trust(args) -> int:
    tables = read_tables_file(args.infile)
    result = _call(
        "/trust", {"table": tables[0], "symmetric": args.symmetric}, args.server
    )
    out = _default_out(args, "trust.json", args.out)
    _write_or_print(json.dumps(result["trust"], indent=2) + "\n", out)
    return 0


def _cmd_train(args) -> int:
    payload = {
        "pairs": _read_pairs(args.data),
        "hyper": {
            "n_trees": args.trees,
            "max_depth": args.depth,
            "min_leaf": args.min_leaf,
            "features_per_split": args.features,
            "seed": args.seed or 0,
            "criterion": args.criterion,
        },
        "bilateral_votes": args.bilateral,
        "symmetric_trust": args.symmetric,
    }
    result = _call("/train", payload, args.server)
    out = _default_out(args, "model.json", args.out)
    _write_or_print(
        json.dumps(result["model"], separators=(",", ":")) + "\n", out
    )
    print(f"trained on {result['rows']} labeled cells", file=sys.stderr)
    return 0


def _cmd_heal(args) -> int:
    model_obj = None
    if args.model:
        model_obj = json.loads(Path(args.model).read_text(encoding="utf-8"))
    payload = {
        "pairs": _read_pairs(args.infile),
        "mode": args.mode,
        "model": model_obj,
        "tau": args.tau,
        "bilateral_votes": args.bilateral,
        "symmetric_trust": args.symmetric,
        "size_penalty_exponent": args.exponent,
        "backtrack_budget": args.budget,
    }
    result = _call("/heal", payload, args.server)
    reports = result["reports"]
    lines = [json.dumps(r, separators=(",", ":")) for r in reports]
    out = _default_out(args, "report.jsonl", args.out)
    _write_or_print("\n".join(lines) + "\n", out)
    healed = sum(1 for r in reports if r["fully_associative"])
    print(f"{healed}/{len(reports)} tables fully associative", file=sys.stderr)
    return 0


def _cmd_experiment(args) -> int:
    if not args.config:
        raise ValueError("experiment needs --config <file>")
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        config["seed"] = args.seed
    if args.cache:
        config["cache_path"] = args.cache
    if args.out_dir and not config.get("out_dir"):
        config["out_dir"] = args.out_dir
    result = _call("/experiment", {"config": config}, args.server)
    record = result["record"]
    for agg in record["per_n"]:
        print(
            f"n={agg['n']}: {agg['pct_fully_associative']:.1f}% fully associative, "
            f"assoc fraction {agg['mean_assoc_fraction']:.4f}, "
            f"cell accuracy {agg['mean_cell_accuracy']:.4f}"
        )
    out = _default_out(args, "record.json", args.out)
    if out:
        _write_or_print(json.dumps(record, indent=2) + "\n", out)
    return 0


def _cmd_stats(args) -> int:
    if args.stat == "exceeds-c":
        result = _call(
            "/stats/exceeds-c", {"n": args.n, "p": args.p}, args.server
        )
        print(json.dumps(result))
        return 0
    tables = read_tables_file(args.infile)
    result = _call("/stats/frequency", {"table": tables[0]}, args.server)
    print(json.dumps(result["report"], indent=2))
    return 0


def _cmd_export(args) -> int:
    records = cache_query(args.cache, n=args.n, p=args.p, mode=args.mode)
    payload = {"records": [r.to_obj() for r in records]}
    result = _call("/export", payload, args.server)
    dest = Path(args.out_dir or ".")
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "metrics.csv").write_text(result["metrics_csv"], encoding="utf-8")
    (dest / "passes.csv").write_text(result["passes_csv"], encoding="utf-8")
    print(f"wrote {dest / 'metrics.csv'} and {dest / 'passes.csv'}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "gen": _cmd_gen,
    "corrupt": _cmd_corrupt,
    "trust": _cmd_trust,
    "train": _cmd_train,
    "heal": _cmd_heal,
    "experiment": _cmd_experiment,
    "stats": _cmd_stats,
    "export": _cmd_export,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
