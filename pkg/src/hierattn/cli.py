"""Command-line entry point.

Exit codes: 0 success, 1 a check or comparison failed, 2 usage or
environment error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from dataclasses import dataclass

from ._validation import ResourceLimitError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUPPORTED_METRICS = ("hd-mse",)
KNOWN_METRICS = ("hd-mse", "hd-fvd", "hd-lpips")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Run parameters; JSON config files use exactly these keys."""

    T: int = 2
    H: int = 8
    W: int = 8
    D: int = 8
    K: int = 2
    r: int = 2
    layers: int = 2
    heads: int = 1
    seed: int = 0
    t: float = 500.0
    tolerance: float = 1e-5

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        values = {}
        if path is not None:
            try:
                with open(path) as fh:
                    values = json.load(fh)
            except FileNotFoundError:
                raise UsageError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
            if not isinstance(values, dict):
                raise UsageError("config file must hold a JSON object")
            unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("T", "H", "W", "D", "K", "layers", "heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise UsageError(f"{name} must be a positive integer, got {v!r}")
        if self.r < 0:
            raise UsageError(f"r must be >= 0, got {self.r}")
        if self.K % 2:
            raise UsageError(f"K must be even, got {self.K}")
        if self.D % self.heads:
            raise UsageError(f"heads={self.heads} must divide D={self.D}")
        if 4 * self.r > self.D:
            raise UsageError(f"LoRA rank r={self.r} must be <= D/4 (D={self.D})")
        if self.tolerance < 0:
            raise UsageError(f"tolerance must be >= 0, got {self.tolerance}")

    def check_divisible(self) -> None:
        for axis in ("H", "W"):
            if getattr(self, axis) % (2 * self.K):
                raise UsageError(f"{axis}={getattr(self, axis)} must be divisible by 2K={2 * self.K}")

    @property
    def dims(self) -> tuple:
        return (1, self.T, self.H, self.W, self.D)


def _config(args) -> RunConfig:
    overrides = {name: getattr(args, name, None)
                 for name in ("T", "H", "W", "D", "K", "r", "layers", "heads", "seed", "t", "tolerance")}
    return RunConfig.load(args.config, overrides)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def parse_sweep(spec: str) -> list[int]:
    """Accept "K=1..8", "1..8" or "2,4,6"."""
    body = spec.split("=", 1)[1] if "=" in spec else spec
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", body)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo < 1 or hi < lo:
            raise UsageError(f"bad sweep range {spec!r}")
        return list(range(lo, hi + 1))
    try:
        values = [int(x) for x in body.split(",")]
    except ValueError:
        raise UsageError(f"bad sweep spec {spec!r}") from None
    if any(v < 1 for v in values):
        raise UsageError(f"sweep values must be >= 1: {spec!r}")
    return values


# --------------------------------------------------------------------------
# Subcommands


def cmd_verify(args) -> int:
    from .checks import run_all

    results = run_all(fault=args.inject_fault)
    if args.json:
        print(json.dumps([r.as_dict() for r in results], indent=1))
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_equiv(args) -> int:
    from .oracle import assert_degenerate_equivalence

    cfg = _config(args)
    try:
        rep = assert_degenerate_equivalence(cfg.seed, cfg.dims, cfg.tolerance, t=cfg.t, heads=cfg.heads)
    except ResourceLimitError as exc:
        raise UsageError(f"resource limit: {exc}") from None
    if args.json:
        print(json.dumps(rep.as_dict()))
    else:
        print(f"config: {rep.config}")
        print(f"max_abs_diff={rep.max_abs_diff:.6g} max_rel_diff={rep.max_rel_diff:.6g} "
              f"tolerance={rep.tolerance:.6g} {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_flops(args) -> int:
    from .cost import flops_report, write_csv

    cfg = _config(args)
    ks = parse_sweep(args.sweep) if args.sweep else [cfg.K]
    rows = []
    for K in ks:
        try:
            rows.extend(flops_report(cfg.T, cfg.H, cfg.W, cfg.D, K, cfg.heads, cfg.seed).rows())
        except ValueError as exc:
            raise UsageError(f"K={K}: {exc}") from None
    _emit(json.dumps(rows, indent=1) + "\n" if args.json else write_csv(rows), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .cost import bench, write_csv

    if args.repeats < 3:
        raise UsageError(f"--repeats must be >= 3, got {args.repeats}")
    cfg = _config(args)
    cfg.check_divisible()
    report = bench(cfg.T, cfg.H, cfg.W, cfg.D, cfg.K, repeats=args.repeats, seed=cfg.seed,
                   heads=cfg.heads, t=cfg.t)
    if report.oracle_skipped:
        print("note: full-attention oracle skipped (token guard exceeded)", file=sys.stderr)
    rows = report.rows()
    _emit(json.dumps(rows, indent=1) + "\n" if args.json else write_csv(rows), args.out)
    return EXIT_OK


def cmd_hdmse(args) -> int:
    from .metrics import hd_mse
    from .tensor_io import TensorFileError, read_tensor

    if args.metric not in SUPPORTED_METRICS:
        raise UsageError(f"unsupported metric {args.metric!r}: only hd-mse is implemented "
                         "(hd-fvd and hd-lpips need pretrained networks)")
    if not args.input:
        raise UsageError("--input is required")
    try:
        v = read_tensor(args.input)
    except FileNotFoundError:
        raise UsageError(f"input file not found: {args.input}") from None
    except TensorFileError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from None
    if v.ndim != 5:
        raise UsageError(f"expected a rank-5 (1, T, H, W, C) tensor, got shape {v.shape}")
    try:
        res = hd_mse(v)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.json:
        print(json.dumps(res.as_dict()))
    else:
        for f, val in sorted(res.per_factor.items()):
            print(f"factor {f:>2}: {val:.6f}")
        print(f"total: {res.total:.6f}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .block import init_model, layer_configs, model_forward
    from .latent import random_latent
    from .tensor_io import write_tensor

    cfg = _config(args)
    cfg.check_divisible()
    configs = layer_configs(cfg.layers, K=cfg.K, D=cfg.D, r=cfg.r, heads=cfg.heads)
    params = init_model(configs, cfg.seed)
    z = random_latent(cfg.dims, cfg.seed)
    out = model_forward(z, cfg.t, configs, params, threads=args.threads)
    path = args.out or "demo.ugt"
    write_tensor(path, out)
    if args.json:
        print(json.dumps({"out": path, "shape": list(out.shape)}))
    else:
        print(f"wrote {path} shape={out.shape}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config; flags override it")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int)
    common.add_argument("--tolerance", type=float)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", metavar="PATH")
    for name, typ in (("T", int), ("H", int), ("W", int), ("D", int), ("K", int), ("r", int),
                      ("layers", int), ("heads", int), ("t", float)):
        common.add_argument(f"--{name}", type=typ, dest=name)

    parser = argparse.ArgumentParser(prog="hierattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the invariant self-checks")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("equiv", parents=[common], help="degenerate layout vs full attention")
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("flops", parents=[common], help="analytic and counted attention costs (CSV)")
    p.add_argument("--sweep", metavar="SPEC", help='K values, e.g. "K=1..8" or "2,4"')
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", parents=[common], help="wall-clock benchmark (CSV)")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("hdmse", parents=[common], help="HD-MSE of a tensor file")
    p.add_argument("--input", metavar="PATH")
    p.add_argument("--metric", default="hd-mse", choices=KNOWN_METRICS)
    p.set_defaults(func=cmd_hdmse)

    p = sub.add_parser("demo", parents=[common], help="random model forward pass to a tensor file")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
