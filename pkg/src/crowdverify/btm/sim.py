"""Scripted bounty runs from a YAML scenario.

Scenario keys::

    seed: 7                       # base seed, step k uses seed + k
    width: 8                      # oracle width for sources and hunters
    rewards: {basic: "0.021", bug: "21"}
    bundle: {size: 4, Q: 0.5, min_fabricated: 1}
    btm_key: "official-btm"       # signing key of the official BTM
    sources:                      # functions under verification, paths relative to the scenario
      - {asm: a.s, asserts: a.asserts, hints: a.hints, meta: m.meta, policy: sfi}
    agents: {alice: honest, mallory: guess-unsat, eve: corrupt}
    steps:
      - {request: alice, deadline: 5, as: b1}     # BTM builds and publishes a bundle
      - {answer: b1, by: alice}                   # hunter solves, BTM validates, hunter claims
      - {answer: b1, by: alice, channel: quote}   # same through the local enclave (no signature)
      - {claim_again: b1}                         # resubmit the last claim for b1
      - {tick: 10}
      - {update: true}                            # BTM pushes verification counts
      - {query: all}                              # or a source index

Strategies: ``honest`` solves every task with the oracle, ``guess-unsat``
answers UNSAT everywhere, ``corrupt`` solves but drops one variable from each model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..constraint import Sat, Unsat
from ..asm import load_program
from ..assertion import parse_assertions
from ..pipeline import analyze, assign_assertions
from ..policy import parse_hints, parse_meta
from .ledger import Ledger
from .manager import BountyTaskManager
from .tasks import BugFound, Reject, Task, TaskBundle, Verified, find_model

STRATEGIES = ("honest", "guess-unsat", "corrupt")


class ScenarioError(ValueError):
    pass


def solve_task(task: Task, strategy: str, seed: int = 0) -> Unsat | Sat:
    if strategy == "guess-unsat":
        return Unsat()
    model = find_model(task.formula, task.width, seed, task.constraints.declared())
    if model is None:
        return Unsat()
    if strategy == "corrupt":
        # a perturbed value may still satisfy, a missing one never does
        model = {k: v for k, v in model.items() if k != min(model)}
    return Sat(model)


def answer_bundle(bundle: TaskBundle, strategy: str, seed: int = 0) -> list[Unsat | Sat]:
    if strategy not in STRATEGIES:
        raise ScenarioError(f"unknown strategy {strategy!r}")
    return [solve_task(t, strategy, seed + k) for k, t in enumerate(bundle.tasks)]


def _describe(outcome: Any) -> str:
    if isinstance(outcome, Reject):
        return f"reject slot {outcome.index}: {outcome.reason}"
    if isinstance(outcome, BugFound):
        return f"bug found in slots {list(outcome.buggy)}, reward {outcome.reward}"
    if isinstance(outcome, Verified):
        return f"verified slots {list(outcome.verified)}, reward {outcome.reward}"
    return str(outcome)


@dataclass
class SimResult:
    ledger: Ledger
    btm: BountyTaskManager
    bundles: dict[str, TaskBundle] = field(default_factory=dict)
    transcript: list[str] = field(default_factory=list)
    functions: list[str] = field(default_factory=list)


def load_scenario(path: str | Path) -> tuple[dict[str, Any], Path]:
    p = Path(path)
    data = yaml.safe_load(p.read_text())
    if not isinstance(data, dict):
        raise ScenarioError(f"{p}: scenario must be a mapping")
    return data, p.parent


def _read(base: Path, rel: str | None) -> str:
    return (base / rel).read_text() if rel else ""


def _register_sources(btm: BountyTaskManager, sources: list[Mapping[str, Any]], base: Path, width: int) -> list[str]:
    hashes = []
    for src in sources:
        meta = parse_meta(_read(base, src.get("meta")))
        meta.check_width(width)
        hints = parse_hints(_read(base, src.get("hints")))
        functions = load_program(_read(base, src["asm"]))
        grouped = assign_assertions(functions, parse_assertions(_read(base, src.get("asserts"))))
        for fn in functions:
            r = analyze(fn, grouped[fn.name], meta, hints, src.get("policy", "sfi"), width)
            if r.constraints.frames:
                hashes.append(btm.register(r.constraints))
    return hashes


def run_scenario(data: Mapping[str, Any], base: Path = Path(".")) -> SimResult:
    seed = int(data.get("seed", 0))
    width = int(data.get("width", 8))
    rewards = data.get("rewards", {})
    params = data.get("bundle", {})
    agents = dict(data.get("agents", {}))
    for name, strategy in agents.items():
        if strategy not in STRATEGIES:
            raise ScenarioError(f"agent {name}: unknown strategy {strategy!r}")
    btm = BountyTaskManager(
        str(data.get("btm_key", "official-btm")).encode(),
        r_basic=Decimal(str(rewards.get("basic", "0.021"))),
        r_bug=Decimal(str(rewards.get("bug", "21"))),
    )
    res = SimResult(Ledger(), btm)
    res.functions = _register_sources(btm, list(data.get("sources", [])), base, width)
    if not res.functions:
        raise ScenarioError("no source produced any frame")
    res.ledger.submit(btm.create_message())
    last_claim: dict[str, dict[str, Any]] = {}

    def log(line: str) -> None:
        res.transcript.append(f"t={res.ledger.state.time} {line}")

    for k, step in enumerate(data.get("steps", [])):
        s = seed + k
        if "request" in step:
            who = step["request"]
            bundle, msg = btm.request_bundle(
                who, int(params.get("size", 4)), float(params.get("Q", 0.5)), int(step.get("deadline", 10)), s,
                int(params.get("min_fabricated", 1)),
            )
            res.bundles[step.get("as", f"b{k}")] = bundle
            r = res.ledger.submit(msg)
            log(f"publish {step.get('as', f'b{k}')} for {who}: {r.status}")
        elif "answer" in step:
            label, who = step["answer"], step["by"]
            if label not in res.bundles:
                raise ScenarioError(f"step {k}: unknown bundle {label!r}")
            if who not in agents:
                raise ScenarioError(f"step {k}: unknown agent {who!r}")
            bundle = res.bundles[label]
            answer = answer_bundle(bundle, agents[who], s)
            enclave = btm.local_instance() if step.get("channel") == "quote" else btm
            outcome, claim = enclave.validate_submitted_answer(bundle.bundle_hash, answer, who)
            log(f"{who} answers {label}: {_describe(outcome)}")
            if claim is not None:
                last_claim[label] = claim
                r = res.ledger.submit(claim)
                log(f"{who} claims {label} via {'quote' if claim['sig'] is None else 'signature'}: "
                    f"{r.status}{' (' + r.reason + ')' if r.reason else ''}")
        elif "claim_again" in step:
            label = step["claim_again"]
            r = res.ledger.submit(last_claim[label])
            log(f"repeat claim {label}: {r.status}{' (' + r.reason + ')' if r.reason else ''}")
        elif "tick" in step:
            r = res.ledger.submit({"type": "Tick", "time": int(step["tick"])})
            log(f"tick: {r.status}")
        elif "update" in step:
            msg = btm.update_verification_result(res.ledger.state)
            if msg is None:
                log("update: nothing to report")
            else:
                r = res.ledger.submit(msg)
                log(f"update {len(msg['msg']['functions'])} functions: {r.status}")
        elif "query" in step:
            which = res.functions if step["query"] == "all" else [res.functions[int(step["query"])]]
            for h in which:
                r = res.ledger.submit({"type": "QueryFunction", "function": h})
                log(f"query {btm.names[h]}@{h[:12]}: count={r.value['verification_count']} "
                    f"buggy={r.value['buggy']}")
        else:
            raise ScenarioError(f"step {k}: unrecognised step {step}")
    return res
