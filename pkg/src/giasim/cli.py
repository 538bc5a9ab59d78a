"""Command-line front end.

    giasim simulate --config cfg.json --assignment two_sided --bit-alloc dba \
        --bits 100:100:500 --trials 200 --seed 1 --out results.csv
    giasim codebook --ambient 8 --sub 2 --bits 6 --seed 1 --out book.bin

Exit codes: 0 success, 2 infeasible configuration, 3 numerical failure,
1 anything else reported as an error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import GiaSimError, InfeasibleConfig, NumericalFailure
from .feedback import dump_codebook, generate_codebook
from .harness import ASSIGNMENT_SCHEMES, SchemeSpec, SweepSpec, run_sweep
from .system import SystemConfig, load_run_config, require_feasible

import numpy as np


def parse_grid(text: str, cast=float) -> tuple:
    """A scalar value or an inclusive start:step:end sweep."""
    if ":" in text:
        start_s, step_s, end_s = text.split(":")
        start, step, end = cast(start_s), cast(step_s), cast(end_s)
        if step <= 0:
            raise ValueError("sweep step must be positive")
        grid = []
        v = start
        while v <= end + 1e-12:
            grid.append(cast(round(v, 10)))
            v += step
        return tuple(grid)
    return (cast(text),)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="giasim")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo sweep and write CSV")
    sim.add_argument("--config", required=True, help="JSON file with K,L,N_B,N_U,d_s,...")
    sim.add_argument("--assignment", default="fixed", choices=ASSIGNMENT_SCHEMES)
    sim.add_argument("--bit-alloc", default="none", choices=("none", "dba", "eba"))
    sim.add_argument("--bits", default=None, help="total feedback bits, scalar or start:step:end")
    sim.add_argument("--snr", default=None, help="SNR in dB, scalar or start:step:end")
    sim.add_argument("--trials", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default="results.csv")
    sim.add_argument("--log-base", default="e", choices=("e", "2"))
    sim.add_argument("--codebook-seed", type=int, default=1)
    sim.add_argument("--c-coeff", type=float, default=1.0)
    sim.add_argument("--proposer", default="receivers", choices=("receivers", "providers"))

    book = sub.add_parser("codebook", help="generate and dump a random subspace codebook")
    book.add_argument("--ambient", type=int, required=True)
    book.add_argument("--sub", type=int, required=True)
    book.add_argument("--bits", type=int, required=True)
    book.add_argument("--seed", type=int, default=1)
    book.add_argument("--out", required=True)
    return parser


def _simulate(args) -> int:
    raw = load_run_config(args.config)
    cfg = SystemConfig(
        K=int(raw["K"]),
        L=int(raw["L"]),
        N_B=int(raw["N_B"]),
        N_U=int(raw["N_U"]),
        d_s=int(raw["d_s"]),
    )
    require_feasible(cfg)

    snr_spec = args.snr if args.snr is not None else raw.get("snr_db", 25.0)
    if isinstance(snr_spec, (int, float)):
        snr_grid = (float(snr_spec),)
    elif isinstance(snr_spec, (list, tuple)):
        start, step, end = snr_spec
        snr_grid = parse_grid(f"{start}:{step}:{end}")
    else:
        snr_grid = parse_grid(str(snr_spec))

    bits_grid = parse_grid(args.bits, cast=int) if args.bits is not None else None
    if bits_grid is not None and len(bits_grid) > 1 and len(snr_grid) > 1:
        raise GiaSimError("sweep over either SNR or bits, not both")
    if bits_grid is not None and args.bit_alloc == "none":
        raise GiaSimError("--bits requires --bit-alloc dba or eba")

    trials = args.trials if args.trials is not None else int(raw.get("trials", 100))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))

    scheme = SchemeSpec(
        assignment=args.assignment,
        bit_alloc=args.bit_alloc,
        bits_budget=(bits_grid[0] if bits_grid else 0),
        codebook_seed=args.codebook_seed,
        c_coeff=args.c_coeff,
        proposer=args.proposer,
    )
    if bits_grid is not None and len(bits_grid) > 1:
        spec = SweepSpec(
            variable="B", grid=bits_grid, trials=trials, schemes=(scheme,),
            seed=seed, log_base=args.log_base,
        )
        cfg = cfg.at_snr_db(snr_grid[0])
    else:
        spec = SweepSpec(
            variable="snr_db", grid=snr_grid, trials=trials, schemes=(scheme,),
            seed=seed, log_base=args.log_base,
        )
    rows = run_sweep(spec, cfg, out_path=args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _codebook(args) -> int:
    cb = generate_codebook(args.ambient, args.sub, args.bits, np.random.default_rng(args.seed))
    dump_codebook(cb, args.out)
    print(f"wrote 2^{args.bits} codewords on G({args.ambient},{args.sub}) to {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _simulate(args)
        return _codebook(args)
    except InfeasibleConfig as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except GiaSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
