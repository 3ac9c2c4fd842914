"""Command-line entry point.

Exit status: 0 success, 1 rejection (a frame is SAT, an assertion or hint
is refused, a submitted model does not hold), 2 tool error (bad input,
unsupported instruction, I/O), 3 inconclusive (oracle budget exhausted).
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import analytics
from .asm import AsmError
from .assertion import AssertionSyntaxError, AssertionTypeError, RenameError
from .btm.manager import publish_to
from .btm.sim import ScenarioError, load_scenario, run_scenario
from .constraint import (
    DEFAULT_BUDGET,
    Inconclusive,
    QuantifierError,
    Sat,
    emit_manifest,
    emit_smt2,
    evaluate_frame,
    format_model,
    parse_model,
)
from .expr import EvaluationError, SortError
from .pipeline import POLICIES, verify_text
from .policy import BinaryMeta, DerivationError, HintError, PolicyError, parse_hints, parse_meta
from .validation import ValidationError

OK, REJECT, TOOL_ERROR, INCONCLUSIVE = 0, 1, 2, 3

# stage name per exception family; rejections are defects of the untrusted inputs
_REJECTIONS = (
    (AssertionSyntaxError, "assertion-parse"),
    (AssertionTypeError, "assertion-parse"),
    (RenameError, "rename"),
    (ValidationError, "validation"),
    (DerivationError, "derivation"),
    (HintError, "obligations"),
    (QuantifierError, "constraint-build"),
)
_TOOL_ERRORS = (
    (AsmError, "lift"),
    (PolicyError, "policy"),
    (SortError, "constraint-build"),
    (ScenarioError, "btm-sim"),
    (OSError, "io"),
    (ValueError, "input"),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 already; keep the prefix uniform
        self.print_usage(sys.stderr)
        self.exit(TOOL_ERROR, f"error: stage=cli {message}\n")


def _read(path: str | None) -> str:
    return Path(path).read_text() if path else ""


def _meta(path: str | None) -> BinaryMeta:
    return parse_meta(_read(path)) if path else BinaryMeta()


def _pipeline_args(p: argparse.ArgumentParser, width: int) -> None:
    p.add_argument("--asm", required=True, help="assembly listing")
    p.add_argument("--asserts", help="assertion file (one '0xADDR: formula' per line)")
    p.add_argument("--meta", help="binary metadata (key=value lines)")
    p.add_argument("--hints", help="memory-region hints (0xADDR=heap|stackR|stackW|global|meta)")
    p.add_argument("--policy", choices=POLICIES, default="sfi")
    p.add_argument("--width", type=int, default=width, help=f"bitvector width (default {width})")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="crowdverify", description="Assertion-based binary verification and bounty tooling.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="lift, validate and decide every frame with the brute-force oracle")
    _pipeline_args(v, 8)
    v.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="oracle evaluations per frame")
    v.add_argument("--jobs", type=int, default=1, help="functions verified in parallel")

    e = sub.add_parser("emit", help="write SMT-LIB constraint files and manifests")
    _pipeline_args(e, 64)
    e.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("check-model", help="evaluate a model against one frame")
    _pipeline_args(c, 8)
    c.add_argument("--model", required=True, help="model file (name=value tokens)")
    c.add_argument("--frame", type=int, required=True)
    c.add_argument("--function", help="function name (default: the only/first one)")

    s = sub.add_parser("btm-sim", help="run a bounty scenario and dump the ledger")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--out", help="directory for ledger log, final state, transcript and task files")

    a = sub.add_parser("assure", help="assurance bound, or the minimal verification count without --m")
    a.add_argument("--m", type=int)
    a.add_argument("--p", required=True)
    a.add_argument("--T", type=int, required=True)
    a.add_argument("--N", type=int, default=1)
    a.add_argument("--target", default="0.99")

    k = sub.add_parser("cost", help="basic-reward cost of reaching the assurance target")
    k.add_argument("--N", type=int, required=True)
    k.add_argument("--T", type=int, required=True)
    k.add_argument("--p", required=True)
    k.add_argument("--q", required=True)
    k.add_argument("--bundle-size", type=int, required=True)
    k.add_argument("--reward", default="0.021")
    k.add_argument("--target", default="0.99")
    return ap


def _verify(args, out) -> int:
    results = verify_text(_read(args.asm), _read(args.asserts), _meta(args.meta), parse_hints(_read(args.hints)),
                          args.policy, args.width, args.budget, jobs=args.jobs)
    status = OK
    for r in results:
        for k, (f, verdict) in enumerate(zip(r.constraints.frames, r.verdicts)):
            head = f"{r.name} frame {k} {f.address:#x} {f.rule} [{f.kind}]"
            if isinstance(verdict, Sat):
                print(f"{head}: SAT stage=oracle model {format_model(verdict.model)}", file=out)
                status = REJECT
            elif isinstance(verdict, Inconclusive):
                print(f"{head}: INCONCLUSIVE stage=oracle ({verdict.reason})", file=out)
                status = status if status == REJECT else INCONCLUSIVE
            else:
                print(f"{head}: UNSAT", file=out)
        print(f"{r.name}: {'verified' if r.verified else 'NOT verified'} ({len(r.verdicts)} frames)", file=out)
    return status


def _emit(args, out) -> int:
    results = verify_text(_read(args.asm), _read(args.asserts), _meta(args.meta), parse_hints(_read(args.hints)),
                          args.policy, args.width, solve_frames=False)
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    for r in results:
        (d / f"{r.name}.smt2").write_text(emit_smt2(r.constraints))
        (d / f"{r.name}.manifest").write_text(emit_manifest(r.constraints))
        print(f"{r.name}: {len(r.constraints.frames)} frames -> {d / (r.name + '.smt2')}", file=out)
    return OK


def _check_model(args, out) -> int:
    results = verify_text(_read(args.asm), _read(args.asserts), _meta(args.meta), parse_hints(_read(args.hints)),
                          args.policy, args.width, solve_frames=False)
    chosen = [r for r in results if args.function in (None, r.name)]
    if not chosen:
        raise ValueError(f"no function named {args.function!r}")
    cf = chosen[0].constraints
    if not 0 <= args.frame < len(cf.frames):
        raise ValueError(f"frame {args.frame} out of range (function has {len(cf.frames)})")
    f = cf.frames[args.frame]
    head = f"{cf.function_id} frame {args.frame} {f.address:#x} {f.rule}"
    try:
        holds = evaluate_frame(cf, args.frame, parse_model(_read(args.model)))
    except EvaluationError as exc:
        print(f"{head}: model rejected stage=evaluate (missing {exc})", file=out)
        return REJECT
    if holds:
        print(f"{head}: model satisfies the frame (bug confirmed)", file=out)
        return OK
    print(f"{head}: model rejected stage=evaluate (frame is false under it)", file=out)
    return REJECT


def _btm_sim(args, out) -> int:
    data, base = load_scenario(args.scenario)
    if args.seed is not None:
        data["seed"] = args.seed
    res = run_scenario(data, base)
    for line in res.transcript:
        print(line, file=out)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "ledger.jsonl").write_text(res.ledger.dump_log())
        (d / "state.json").write_text(res.ledger.state.dumps())
        (d / "transcript.txt").write_text("\n".join(res.transcript) + "\n")
        for bundle in res.bundles.values():
            publish_to(d / "bundles", bundle)
    else:
        print(res.ledger.state.dumps(), end="", file=out)
    return OK


def _show(x: Fraction) -> str:
    exact = f" (exact {x})" if x.denominator < 10**30 else ""
    return f"{float(x):.12f}{exact}"


def _assure(args, out) -> int:
    if args.m is None:
        m = analytics.min_verification_count(args.p, args.T, args.target, args.N)
        print(f"min verification count: {m}", file=out)
        return OK
    single = analytics.assurance_exact(args.m, args.p, args.T)
    print(f"assurance (one function): {_show(single)}", file=out)
    if args.N != 1:
        print(f"assurance (N={args.N}, union bound): "
              f"{_show(analytics.binary_assurance_exact(args.N, args.m, args.p, args.T))}", file=out)
    return OK


def _cost(args, out) -> int:
    b = analytics.cost_breakdown(args.N, args.T, args.p, args.q, args.bundle_size, args.reward, args.target)
    print(f"verification count m = {b.m}", file=out)
    print(f"genuine tasks per bundle = {b.per_bundle}", file=out)
    print(f"bundles = {b.bundles}", file=out)
    print(f"cost = {b.cost:.4f}", file=out)
    return OK


COMMANDS = {"verify": _verify, "emit": _emit, "check-model": _check_model, "btm-sim": _btm_sim,
            "assure": _assure, "cost": _cost}


def _diagnose(exc: Exception) -> tuple[int, str]:
    addr = getattr(exc, "address", None)
    where = f" address={addr:#x}" if isinstance(addr, int) else ""
    for table, code in ((_REJECTIONS, REJECT), (_TOOL_ERRORS, TOOL_ERROR)):
        for cls, stage in table:
            if isinstance(exc, cls):
                return code, f"{'rejected' if code == REJECT else 'error'}: stage={stage}{where}: {exc}"
    raise exc


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes, unknown ones re-raised
        code, msg = _diagnose(exc)
        print(msg, file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
