"""Command-line interface.

Subcommands: ``estimate`` (Monte Carlo estimate with JSON output), ``exact``
(brute-force reference), ``sweep`` (relative-error sweep CSV), ``trace``
(running-estimate CSV), and ``chain`` (1D closed form).  See README for the
coupling/field spec mini-language and file formats.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence


from .estimators import AnnealSchedule
from .harness import (
    ExperimentSpec,
    parse_coupling_spec,
    parse_field_spec,
    run_estimate,
    run_exact,
    run_sweep,
)
from .model import _resolve_per_item
from .oracles import Chain1D, chain_log_Z

_METHOD_NAMES = {"is": "importance", "uniform": "uniform", "ais": "annealed"}


def _parse_alphas(text: Optional[str]) -> Optional[tuple[float, ...]]:
    """Either an explicit comma list ('1,1.5,2.25') or 'geom:ALPHA_MAX,LEVELS'."""
    if text is None:
        return None
    if text.startswith("geom:"):
        alpha_max, levels = text[len("geom:"):].split(",")
        return AnnealSchedule.geometric(float(alpha_max), int(levels)).alphas
    return tuple(float(v) for v in text.split(","))


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--q", type=int, default=3)
    p.add_argument(
        "--coupling",
        default="1.0",
        help="constant value, 'uniform:lo,hi,seed', 'mixed:loA,hiA,loB,hiB,seed', or 'file:PATH'",
    )
    p.add_argument("--field", default=None, help="constant value or 'uniform:lo,hi,seed'")
    p.add_argument("--model", default=None, help="model JSON file (overrides inline parameters)")


def _add_partition_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--partition",
        default="max-coupling",
        help="'max-coupling', 'comb', or a partition JSON file path",
    )


def _partition_kwargs(arg: str) -> dict:
    if arg in ("max-coupling", "max_coupling", "comb"):
        return {"partition": arg.replace("-", "_")}
    return {"partition": "max_coupling", "partition_file": arg}


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(_METHOD_NAMES), default="is")
    p.add_argument("--samples", type=int, default=100_000, help="sample count L")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--alphas", default=None, help="'1,1.5,2.25' or 'geom:MAX,LEVELS' (ais only)")
    p.add_argument("--sweeps-per-level", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualpotts",
        description="Potts partition-function estimation in the dual factor graph",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="Monte Carlo estimate of ln Z")
    _add_model_args(p_est)
    _add_partition_arg(p_est)
    _add_sampler_args(p_est)
    p_est.add_argument("--out", default=None, help="result JSON path")
    p_est.add_argument("--stride", type=int, default=None, help="trace stride")
    p_est.add_argument("--trace-out", default=None, help="trace CSV path")

    p_exact = sub.add_parser("exact", help="brute-force ln Z on small models")
    _add_model_args(p_exact)
    _add_partition_arg(p_exact)
    p_exact.add_argument("--dual", action="store_true", help="also enumerate ln Zd")
    p_exact.add_argument("--out", default=None)

    p_sweep = sub.add_parser("sweep", help="relative-error sweep against brute force")
    _add_model_args(p_sweep)
    p_sweep.add_argument("--axis", required=True, help="comma list of coupling values")
    p_sweep.add_argument(
        "--axis-target",
        choices=["all", "cotree"],
        default="all",
        help="'all': constant coupling everywhere; 'cotree': axis sets co-tree bonds only",
    )
    p_sweep.add_argument("--tree-coupling", type=float, default=2.0)
    p_sweep.add_argument("--methods", default="is,uniform", help="comma list from {is,uniform,ais}")
    p_sweep.add_argument("--alphas", default=None, help="required when sweeping ais")
    p_sweep.add_argument("--sweeps-per-level", type=int, default=5)
    p_sweep.add_argument("--samples", type=int, default=100_000)
    p_sweep.add_argument("--reps", type=int, default=10)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--out", required=True, help="sweep CSV path")

    p_trace = sub.add_parser("trace", help="estimate with a running-estimate CSV")
    _add_model_args(p_trace)
    _add_partition_arg(p_trace)
    _add_sampler_args(p_trace)
    p_trace.add_argument("--stride", type=int, required=True)
    p_trace.add_argument("--out", required=True, help="trace CSV path")
    p_trace.add_argument("--result-out", default=None, help="optional result JSON path")

    p_chain = sub.add_parser("chain", help="closed-form ln Z of a periodic 1D chain")
    p_chain.add_argument("--sites", type=int, required=True)
    p_chain.add_argument("--q", type=int, default=3)
    p_chain.add_argument("--coupling", default="1.0")
    p_chain.add_argument("--out", default=None)

    return parser


def _experiment_spec(args: argparse.Namespace, mode: str, **extra) -> ExperimentSpec:
    kwargs = dict(
        mode=mode,
        width=args.width,
        height=args.height,
        q=args.q,
        coupling=parse_coupling_spec(args.coupling),
        field=parse_field_spec(args.field),
        model_file=args.model,
    )
    kwargs.update(extra)
    return ExperimentSpec(**kwargs)


def _cmd_estimate(args: argparse.Namespace) -> int:
    spec = _experiment_spec(
        args,
        "estimate",
        method=_METHOD_NAMES[args.method],
        L=args.samples,
        seed=args.seed,
        workers=args.workers,
        alphas=_parse_alphas(args.alphas),
        sweeps_per_level=args.sweeps_per_level,
        stride=args.stride,
        out=args.out,
        trace_out=args.trace_out,
        **_partition_kwargs(args.partition),
    )
    result, doc = run_estimate(spec)
    print(
        f"method={result.method} L={result.L} seed={result.seed} "
        f"ln_Z={result.log_Z_hat:.6f} ln_Z_per_site={result.log_Z_per_site:.6f} "
        f"ess={result.ess:.1f} chi2={result.chi2_hat:.4g}"
    )
    if args.out:
        print(f"wrote {args.out}")
    if args.trace_out:
        print(f"wrote {args.trace_out}")
    return 0


def _cmd_exact(args: argparse.Namespace) -> int:
    spec = _experiment_spec(args, "exact", out=args.out, **_partition_kwargs(args.partition))
    doc = run_exact(spec, dual=args.dual)
    line = f"ln_Z={doc['result']['log_Z']:.9f}"
    if args.dual:
        line += f" ln_Zd={doc['result']['log_Zd']:.9f}"
    print(line)
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    methods = tuple(_METHOD_NAMES[m.strip()] for m in args.methods.split(","))
    spec = _experiment_spec(
        args,
        "sweep",
        methods=methods,
        L=args.samples,
        seed=args.seed,
        workers=args.workers,
        reps=args.reps,
        alphas=_parse_alphas(args.alphas),
        sweeps_per_level=args.sweeps_per_level,
        axis=tuple(float(v) for v in args.axis.split(",")),
        axis_target=args.axis_target,
        tree_coupling=args.tree_coupling,
        out=args.out,
    )
    rows = run_sweep(spec)
    for row in rows:
        print(
            f"J={row['axis_value']:g} {row['method']}: median rel err "
            f"{row['rel_err_median']:.3g} (IQR {row['rel_err_q25']:.3g}..{row['rel_err_q75']:.3g})"
        )
    print(f"wrote {args.out}")
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    spec = _experiment_spec(
        args,
        "trace",
        method=_METHOD_NAMES[args.method],
        L=args.samples,
        seed=args.seed,
        workers=args.workers,
        alphas=_parse_alphas(args.alphas),
        sweeps_per_level=args.sweeps_per_level,
        stride=args.stride,
        out=args.result_out,
        trace_out=args.out,
        **_partition_kwargs(args.partition),
    )
    result, _ = run_estimate(spec)
    print(
        f"method={result.method} L={result.L} final ln_Z_per_site={result.log_Z_per_site:.6f}"
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_chain(args: argparse.Namespace) -> int:
    spec = parse_coupling_spec(args.coupling)
    couplings = _resolve_per_item(spec, args.sites, "coupling", (2, 1))
    chain = Chain1D(num_sites=args.sites, q=args.q, couplings=couplings)
    log_z = chain_log_Z(chain)
    print(f"ln_Z={log_z:.9f} ln_Z_per_site={log_z / args.sites:.9f}")
    if args.out:
        doc = {
            "schema": "dualpotts-chain-v1",
            "sites": args.sites,
            "q": args.q,
            "couplings": couplings.tolist(),
            "log_Z": log_z,
        }
        with open(args.out, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "estimate": _cmd_estimate,
        "exact": _cmd_exact,
        "sweep": _cmd_sweep,
        "trace": _cmd_trace,
        "chain": _cmd_chain,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
