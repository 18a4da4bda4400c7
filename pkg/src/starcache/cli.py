"""Command-line front end.

Subcommands: attack (one harness run), sweep (a harness over all 256
secret values), replay (trace files and synthetic workloads), selftest
(invariant suites).  Every output file starts with the effective
configuration echoed as "# key=value" lines, and nothing in any output
depends on wall-clock state, so a repeated invocation writes identical
bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import attacks, checks
from .config import ConfigError, RunConfig, load_config
from .engine import SpecEngine
from .trace import (PROFILES, ReplayStats, TraceParseError, parse_trace,
                    replay, synth_trace)

ATTACK_KINDS = ("fr-aes", "pp-aes", "fr-spectre", "pp-spectre")
SWEEP_KINDS = ("fr-spectre", "pp-spectre")

_CONFIG_FLAGS = ("model", "k", "seed", "trials", "l1_hit_cycles",
                 "l2_hit_cycles", "memory_cycles", "noise_sigma",
                 "dip_threshold_cycles", "vote_threshold")


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="flat key = value config file")
    p.add_argument("--model", choices=("sa-lru", "star-farr", "star-news"))
    p.add_argument("--k", type=int, metavar="BITS",
                   help="extra index bits (star-news only)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--l1-hit-cycles", type=int, metavar="N")
    p.add_argument("--l2-hit-cycles", type=int, metavar="N")
    p.add_argument("--memory-cycles", type=int, metavar="N")
    p.add_argument("--noise-sigma", type=float, metavar="CYCLES",
                   help="gaussian jitter added to measured latencies")
    p.add_argument("--dip-threshold-cycles", type=float, metavar="CYCLES")
    p.add_argument("--vote-threshold", type=float, metavar="FRAC")
    p.add_argument("--debug-checks", action="store_true", default=None,
                   help="run structural invariant checks after every access")


def _load(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, object] = {
        name: getattr(args, name) for name in _CONFIG_FLAGS}
    overrides["out_dir"] = args.out
    overrides["debug_checks"] = args.debug_checks
    return load_config(args.config, os.environ, overrides)


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")


def _echo(cfg: RunConfig, extra: dict) -> list[tuple[str, str]]:
    items = cfg.echo_items()
    for key in sorted(extra):
        items.append((key, str(extra[key])))
    return items


def _parse_key(text: str) -> bytes:
    try:
        key = bytes.fromhex(text)
    except ValueError:
        raise ConfigError(f"key must be hex, got {text!r}")
    if len(key) != 16:
        raise ConfigError(f"key must be 16 bytes (32 hex chars), "
                          f"got {len(key)}")
    return key


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _load(args)
    kind = args.kind
    if kind == "fr-aes":
        run = attacks.run_flush_reload_aes(cfg, _parse_key(args.key))
    elif kind == "pp-aes":
        run = attacks.run_prime_probe_aes(cfg, _parse_key(args.key))
    elif kind == "fr-spectre":
        run = attacks.run_spectre_fr(cfg, args.secret,
                                     same_domain=not args.cross_domain,
                                     enter_wrong_path=not args.skip_wrong_path)
    else:
        run = attacks.run_spectre_pp(cfg, args.secret,
                                     same_domain=not args.cross_domain,
                                     enter_wrong_path=not args.skip_wrong_path)
    if kind == "pp-spectre":
        # that harness pins its own l1 geometry; echo what actually ran
        cfg = attacks.pp_experiment_config(cfg)
    summary = run.summary()
    header = _echo(cfg, {"attack": kind, "run_trials": run.trials,
                         "run_seed": run.seed})
    run.matrix.write_csv(_out_path(cfg, f"{kind}-{cfg.model}-matrix.csv"),
                         header)
    _write_json(_out_path(cfg, f"{kind}-{cfg.model}-summary.json"), summary)
    print(f"{kind} on {cfg.model}: {run.trials} trials")
    if run.recovery is not None:
        for line in run.recovery.as_text():
            print(" ", line)
    else:
        shown = "NONE" if run.recovered is None else str(run.recovered)
        print(f"  recovered: {shown} (margin {run.margin:.2f} cycles)")
    if run.score is not None:
        print(f"  leakage score {run.score:.4f} bits, "
              f"noise floor {run.floor:.4f} bits")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    kind = args.kind
    if kind == "fr-spectre":
        run = attacks.run_spectre_fr_sweep(
            cfg, same_domain=not args.cross_domain)
    else:
        run = attacks.run_spectre_pp_sweep(
            cfg, same_domain=not args.cross_domain)
        cfg = attacks.pp_experiment_config(cfg)
    header = _echo(cfg, {"attack": kind, "sweep": "secret 0..255",
                         "run_trials": run.trials_per_secret,
                         "run_seed": run.seed})
    base = f"{kind}-sweep-{cfg.model}"
    with open(_out_path(cfg, f"{base}-secrets.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        for key, val in header:
            fh.write(f"# {key}={val}\n")
        fh.write("secret,recovered,margin\n")
        for s in range(256):
            got = run.recovered[s]
            fh.write(f"{s},{'NONE' if got is None else got},"
                     f"{run.margins[s]:.6f}\n")
    run.matrix.write_csv(_out_path(cfg, f"{base}-matrix.csv"), header)
    _write_json(_out_path(cfg, f"{base}-summary.json"), run.summary())
    print(f"{kind} sweep on {cfg.model}: "
          f"{run.exact_count}/256 exact, {run.none_count}/256 abstained")
    return 0


def _stats_for(cfg: RunConfig, events) -> ReplayStats:
    hier = cfg.build_hierarchy(cfg.make_rng().fork("replay"))
    engine = SpecEngine(hier, capacity=cfg.window_capacity,
                        clear_specbit_on_commit=cfg.clear_specbit_on_commit)
    return replay(events, hier, engine)


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if (args.trace is None) == (args.synth is None):
        raise ConfigError("give exactly one input: a trace file or --synth")
    if args.synth is not None:
        events = synth_trace(args.synth, args.events, seed=cfg.seed,
                             p_squash=args.p_squash,
                             store_fraction=args.store_fraction,
                             footprint_lines=args.footprint,
                             domains=args.domains)
        source = {"synth": args.synth, "events": args.events,
                  "p_squash": args.p_squash}
    else:
        with open(args.trace, "r", encoding="utf-8") as fh:
            events = parse_trace(fh.read())
        source = {"trace": os.path.basename(args.trace)}

    if args.sweep_k is not None:
        if cfg.model != "star-news":
            raise ConfigError("--sweep-k only applies to star-news")
        try:
            ks = [int(part) for part in args.sweep_k.split(",") if part]
        except ValueError:
            raise ConfigError(f"bad --sweep-k list {args.sweep_k!r}")
        if not ks:
            raise ConfigError("--sweep-k needs at least one value")
        rows = []
        for k in ks:
            cfg_k = dataclasses.replace(cfg, k=k).validate()
            rows.append((k, _stats_for(cfg_k, events)))
        path = _out_path(cfg, f"replay-{cfg.model}-ksweep.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for key, val in _echo(cfg, source):
                fh.write(f"# {key}={val}\n")
            fh.write("k," + ",".join(ReplayStats.FIELDS) + "\n")
            for k, stats in rows:
                cells = [f"{v:.6f}" if isinstance(v, float) else str(v)
                         for v in stats.as_dict().values()]
                fh.write(f"{k}," + ",".join(cells) + "\n")
        print(f"{'k':>4} {'tagmiss_forward_nofill':>24} {'l1_hits':>10}")
        for k, stats in rows:
            print(f"{k:>4} {stats.tagmiss_forward_nofill:>24} "
                  f"{stats.l1_hits:>10}")
        print(f"wrote {path}")
        return 0

    stats = _stats_for(cfg, events)
    path = _out_path(cfg, f"replay-{cfg.model}.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in _echo(cfg, source):
            fh.write(f"# {key}={val}\n")
        fh.write("stat,value\n")
        for name, v in stats.as_dict().items():
            fh.write(f"{name},{v:.6f}\n" if isinstance(v, float)
                     else f"{name},{v}\n")
    width = max(len(n) for n in ReplayStats.FIELDS)
    for name, v in stats.as_dict().items():
        shown = f"{v:.6f}" if isinstance(v, float) else str(v)
        print(f"  {name:<{width}} {shown}")
    print(f"wrote {path}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = checks.run_selftest(quick=args.quick, mutate=args.mutate)
    failed = 0
    for r in results:
        mark = "  ok " if r.ok else " FAIL"
        print(f"[{mark}] {r.name}: {r.detail}")
        failed += 0 if r.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starcache",
        description="Side-channel experiments on hardened L1 cache models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="run one attack harness")
    p.add_argument("kind", choices=ATTACK_KINDS)
    p.add_argument("--key", default="0" * 32, metavar="HEX32",
                   help="16-byte victim key for the aes harnesses")
    p.add_argument("--secret", type=int, default=30, metavar="BYTE",
                   help="victim secret for the spectre harnesses")
    p.add_argument("--cross-domain", action="store_true",
                   help="put the spectre attacker in a different domain")
    p.add_argument("--skip-wrong-path", action="store_true",
                   help="model a correctly predicted branch (no misspeculation)")
    _add_shared(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run a spectre harness over all secrets")
    p.add_argument("kind", choices=SWEEP_KINDS)
    p.add_argument("--cross-domain", action="store_true")
    _add_shared(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="drive a hierarchy from a trace")
    p.add_argument("trace", nargs="?", help="trace file path")
    p.add_argument("--synth", choices=PROFILES,
                   help="generate a synthetic workload instead")
    p.add_argument("--events", type=int, default=20_000, metavar="N")
    p.add_argument("--p-squash", type=float, default=0.1, metavar="P",
                   help="per-window squash probability (spec-mix)")
    p.add_argument("--store-fraction", type=float, default=0.1, metavar="F")
    p.add_argument("--footprint", type=int, default=4096, metavar="LINES")
    p.add_argument("--domains", type=int, default=1, metavar="N")
    p.add_argument("--sweep-k", metavar="LIST",
                   help="comma-separated k values, one replay each")
    _add_shared(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("selftest", help="run the invariant suites")
    p.add_argument("--quick", action="store_true",
                   help="reduced trial counts")
    p.add_argument("--mutate", choices=checks.MUTATIONS,
                   help="inject a known defect; the suite must go red")
    _add_shared(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceParseError) as exc:
        print(f"starcache: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"starcache: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
