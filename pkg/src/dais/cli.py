"""Command-line interface.

Subcommands: ``sweep`` (config in, CSV out), ``chain`` (one chain with
diagnostics), ``check-reversible`` (round-trip and buffer stats), and
``oracles`` (sampled-vs-exact consistency suite).  Exit codes: 0 success,
2 config error, 3 numerical failure in every sweep cell, 4 oracle or
reversibility failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .blr import BlrModel, blr_target, exact_log_ml
from .harness import ConfigError, ExperimentConfig, gen_blr_data, run_sweep, write_csv
from .moments import expected_bound, gap_breakdown, propagate_moments
from .reversible import float_to_fixed, reversible_backward, reversible_forward
from .rng import MASK64, generator
from .sampler import TransitionConfig, dais_bound_mc, dais_chain, sample_chains
from .schedules import make_linear_schedule, make_stepsize_scheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ORACLE = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dais", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a (K, c) sweep from a config file")
    p_sweep.add_argument("--config", required=True, help="flat key = value config file")
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--workers", type=int, default=None, help="override worker count")

    p_chain = sub.add_parser("chain", help="run one chain and print diagnostics")
    p_chain.add_argument("--K", type=int, default=64)
    p_chain.add_argument("--c", type=float, default=0.25)
    p_chain.add_argument("--a", type=float, default=0.3)
    p_chain.add_argument("--gamma", type=float, default=0.0)
    p_chain.add_argument("--n", type=int, default=1000)
    p_chain.add_argument("--d", type=int, default=10)
    p_chain.add_argument("--seed", type=int, default=0)

    p_rev = sub.add_parser("check-reversible", help="fixed-point round-trip check")
    p_rev.add_argument("--d", type=int, default=10)
    p_rev.add_argument("--K", type=int, default=1000)
    p_rev.add_argument("--gamma", type=float, default=0.9)
    p_rev.add_argument("--eta", type=float, default=0.1)
    p_rev.add_argument("--seed", type=int, default=0)

    p_orc = sub.add_parser("oracles", help="sampled-vs-exact consistency suite")
    p_orc.add_argument("--seed", type=int, default=0)
    p_orc.add_argument("--chains", type=int, default=20000, help="chains for the unbiasedness check")

    return parser


def _cmd_sweep(args) -> int:
    try:
        config = ExperimentConfig.from_file(args.config)
        if args.workers is not None:
            config = replace(config, workers=args.workers)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = run_sweep(config)
    write_csv(rows, args.out)
    failed = sum(row.failed for row in rows)
    print(f"wrote {len(rows)} rows to {args.out} ({failed} failed cells)")
    if rows and failed == len(rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_chain(args) -> int:
    model = gen_blr_data(args.n, args.d, args.seed)
    target = blr_target(model)
    schedule = make_linear_schedule(args.K)
    steps = make_stepsize_scheme(args.a, args.c, args.K)
    config = TransitionConfig(gamma=args.gamma)
    state, bound = dais_chain(target, schedule, steps, config, generator((args.seed, args.K)))
    moments = propagate_moments(model, schedule, steps, args.gamma)
    print(f"K={args.K} eta={steps.per_step[0]:.6g} gamma={args.gamma}")
    print(f"L (single chain)      = {bound:.6f}")
    print(f"exact log ML          = {exact_log_ml(model):.6f}")
    print(f"E[L] (closed form)    = {expected_bound(model, moments, schedule):.6f}")
    print(f"expected gap          = {gap_breakdown(model, moments, schedule).total:.6f}")
    print(f"|theta_K|             = {np.linalg.norm(state.theta):.4f}")
    return EXIT_OK


def _cmd_check_reversible(args) -> int:
    model = gen_blr_data(max(4 * args.d, 64), args.d, args.seed)
    target = blr_target(model)
    schedule = make_linear_schedule(args.K)
    steps = make_stepsize_scheme(args.eta, 0.0, args.K)
    config = TransitionConfig(gamma=args.gamma)
    s0 = (args.seed * 2654435761 + 12345) & MASK64

    g = generator((args.seed, 1))
    theta0 = target.sample_p0(g)
    v0 = g.standard_normal(args.d)

    fwd = reversible_forward(target, schedule, steps, config, s0, mode="fixedpoint", theta0=theta0, v0=v0)
    bits = fwd.buffer.bit_size()
    nbytes = fwd.buffer.nbytes()
    th_rec, v_rec, s_rec = reversible_backward(
        target, schedule, steps, config, fwd.fixed, None, fwd.seed, fwd.buffer, mode="fixedpoint"
    )
    th_ref, v_ref = float_to_fixed(theta0), float_to_fixed(v0)
    exact = (
        all(int(a) == int(b) for a, b in zip(th_rec, th_ref))
        and all(int(a) == int(b) for a, b in zip(v_rec, v_ref))
        and s_rec == s0
        and fwd.buffer.is_empty()
    )
    per = bits / (args.d * args.K) if args.K else 0.0
    print(f"bit-exact: {'true' if exact else 'false'}")
    print(f"buffer bits = {bits} ({per:.4f} per parameter-step, "
          f"log2(1/gamma) = {np.log2(1 / args.gamma):.4f})")
    print(f"serialized buffer bytes = {nbytes}")
    print(f"effective gamma = {fwd.gamma_eff:.8f}")

    fwd_f = reversible_forward(target, schedule, steps, config, s0, mode="float", theta0=theta0, v0=v0)
    th0_f, v0_f, _ = reversible_backward(
        target, schedule, steps, config, fwd_f.theta, fwd_f.v, fwd_f.seed, mode="float"
    )
    drift = max(np.max(np.abs(th0_f - theta0)), np.max(np.abs(v0_f - v0)))
    print(f"float-mode recovery drift = {drift:.3e} (reported, not asserted)")
    return EXIT_OK if exact else EXIT_ORACLE


def _cmd_oracles(args) -> int:
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}{': ' + detail if detail else ''}")
        failures += 0 if ok else 1

    # unbiasedness on a conjugate toy model: E[exp(L - log Z)] = 1
    toy = BlrModel(X=[[1.0]], y=[1.0], sigma2=1.0, mu_p=[0.0], Lambda_p=[[1.0]])
    log_z = exact_log_ml(toy)
    schedule = make_linear_schedule(8)
    steps = make_stepsize_scheme(0.2, 0.0, 8)
    _, _, L = sample_chains(
        blr_target(toy), schedule, steps, TransitionConfig(), args.chains, generator((args.seed, 1))
    )
    w = np.exp(L - log_z)
    se = w.std(ddof=1) / np.sqrt(w.size)
    check(
        "unbiasedness E[exp(L - log Z)] = 1",
        abs(w.mean() - 1.0) <= 3 * se,
        f"mean={w.mean():.5f} se={se:.5f}",
    )
    mean_L = L.mean()
    se_L = L.std(ddof=1) / np.sqrt(L.size)
    check("lower bound mean L <= log Z", mean_L <= log_z + 3 * se_L,
          f"mean L={mean_L:.5f} log Z={log_z:.5f}")

    # sampled vs exact gap on the standard synthetic instance
    model = gen_blr_data(1000, 10, args.seed)
    log_z = exact_log_ml(model)
    target = blr_target(model)
    for K in (16, 64):
        schedule = make_linear_schedule(K)
        steps = make_stepsize_scheme(0.3, 0.25, K)
        moments = propagate_moments(model, schedule, steps, 0.0)
        exact_gap = gap_breakdown(model, moments, schedule).total
        mean, se = dais_bound_mc(
            target, schedule, steps, TransitionConfig(), 400, generator((args.seed, K))
        )
        mc_gap = log_z - mean
        check(
            f"exact vs sampled gap at K={K}",
            abs(exact_gap - mc_gap) <= 3 * se,
            f"exact={exact_gap:.4f} mc={mc_gap:.4f} se={se:.4f}",
        )
    return EXIT_OK if failures == 0 else EXIT_ORACLE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "sweep":
        return _cmd_sweep(args)
    if args.command == "chain":
        return _cmd_chain(args)
    if args.command == "check-reversible":
        return _cmd_check_reversible(args)
    return _cmd_oracles(args)


if __name__ == "__main__":
    sys.exit(main())
