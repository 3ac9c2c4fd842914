"""Simulated contract: bundles, reward claims, per-function verification
records and balances, driven by a replayable message log.

Signatures and attestation quotes are deterministic HMAC stubs. A real
deployment would sign with sk and verify with pk; here the MAC is keyed by
pk = sha256(sk), which keeps verification local to the contract at the price
of forgeability by anyone who reads pk. Only tampering and wrong keys are
modelled.
"""

from __future__ import annotations

import copy
import hashlib
import hmac
import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Iterable, Mapping

Message = dict[str, Any]

BTM_CODE_IDENTITY = b"crowdverify-btm/1"


def canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def derive_pk(sk: bytes) -> str:
    return hashlib.sha256(sk).hexdigest()


def measurement(code: bytes = BTM_CODE_IDENTITY) -> str:
    return hashlib.sha256(code).hexdigest()


def sign(pk: str, msg: Mapping[str, Any]) -> str:
    return hmac.new(pk.encode(), canonical(msg), hashlib.sha256).hexdigest()


def verify_sig(msg: Mapping[str, Any], sig: str | None, pk: str | None) -> bool:
    if not sig or not pk:
        return False
    return hmac.compare_digest(sign(pk, msg), sig)


def attest(msg: Mapping[str, Any], h_btm: str) -> dict[str, str]:
    report = hmac.new(b"attest:" + h_btm.encode(), canonical(msg), hashlib.sha256).hexdigest()
    return {"measurement": h_btm, "report": report}


def verify_attest(msg: Mapping[str, Any], quote: Mapping[str, str] | None, h_btm: str | None) -> bool:
    if not quote or not h_btm or quote.get("measurement") != h_btm:
        return False
    return hmac.compare_digest(attest(msg, h_btm)["report"], str(quote.get("report", "")))


@dataclass
class FunctionRecord:
    verification_count: int = 0
    buggy: bool = False


@dataclass
class BundleRecord:
    tasks: list[str]
    requester: str
    deadline: int
    resolved: bool = False
    verified: list[str] | None = None
    buggy: list[str] | None = None


@dataclass
class LedgerState:
    pk: str | None = None
    h_btm: str | None = None
    time: int = 0
    functions: dict[str, FunctionRecord] = field(default_factory=dict)
    bundles: dict[str, BundleRecord] = field(default_factory=dict)
    balances: dict[str, Decimal] = field(default_factory=dict)

    def function(self, h_f: str) -> FunctionRecord:
        return copy.copy(self.functions.get(h_f, FunctionRecord()))

    def to_json(self) -> dict[str, Any]:
        return {
            "pk": self.pk,
            "h_btm": self.h_btm,
            "time": self.time,
            "functions": {k: vars(v) for k, v in sorted(self.functions.items())},
            "bundles": {k: vars(v) for k, v in sorted(self.bundles.items())},
            "balances": {k: str(v) for k, v in sorted(self.balances.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class Result:
    status: str  # accepted | rejected | query
    reason: str = ""
    value: Any = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"status": self.status}
        if self.reason:
            out["reason"] = self.reason
        if self.value is not None:
            out["value"] = self.value
        return out


def _reject(state: LedgerState, reason: str) -> tuple[LedgerState, Result]:
    return state, Result("rejected", reason)


def ledger_apply(state: LedgerState, message: Mapping[str, Any]) -> tuple[LedgerState, Result]:
    """Pure transition: returns the successor state (the input is untouched)."""
    kind = message.get("type")
    if kind == "QueryFunction":
        rec = state.function(message["function"])
        return state, Result("query", value=vars(rec))
    if kind == "QueryTaskBundle":
        rec = state.bundles.get(message["bundle"])
        return state, Result("query", value=None if rec is None else copy.deepcopy(vars(rec)))

    new = copy.deepcopy(state)
    if kind == "Create":
        if state.pk is not None:
            return _reject(state, "contract already created")
        new.pk, new.h_btm = message["pk"], message["h_btm"]
        return new, Result("accepted")
    if state.pk is None:
        return _reject(state, "contract not created")
    if kind == "Tick":
        t = int(message["time"])
        if t < state.time:
            return _reject(state, f"time {t} is before {state.time}")
        new.time = t
        return new, Result("accepted")
    if kind == "PublishTaskBundle":
        msg = message["msg"]
        if not verify_sig(msg, message.get("sig"), state.pk):
            return _reject(state, "bad BTM signature")
        if msg["bundle"] in state.bundles:
            return _reject(state, "bundle already published")
        new.bundles[msg["bundle"]] = BundleRecord(list(msg["tasks"]), msg["requester"], int(msg["deadline"]))
        return new, Result("accepted")
    if kind == "ClaimReward":
        msg, sig, quote = message["msg"], message.get("sig"), message.get("quote")
        if sig is not None:
            ok = verify_sig(msg, sig, state.pk)
        else:
            ok = verify_attest(msg, quote, state.h_btm)
        if not ok:
            return _reject(state, "bad signature" if sig is not None else "bad attestation quote")
        rec = state.bundles.get(msg["bundle"])
        if rec is None:
            return _reject(state, "unknown bundle")
        if rec.resolved:
            return _reject(state, "bundle already resolved")
        if not (state.time > rec.deadline or rec.requester == msg["bbh"]):
            return _reject(state, "only the requester may claim before the deadline")
        reward = Decimal(msg["reward"])
        if reward <= 0:
            return _reject(state, "non-positive reward")
        new.balances[msg["bbh"]] = new.balances.get(msg["bbh"], Decimal(0)) + reward
        nrec = new.bundles[msg["bundle"]]
        nrec.resolved, nrec.verified, nrec.buggy = True, list(msg["verified"]), list(msg["buggy"])
        return new, Result("accepted")
    if kind == "UpdateFunctions":
        msg = message["msg"]
        if not verify_sig(msg, message.get("sig"), state.pk):
            return _reject(state, "bad BTM signature")
        for h_f, upd in sorted(msg["functions"].items()):
            inc = int(upd.get("verified", 0))
            if inc < 0:
                return _reject(state, f"negative verification increment for {h_f}")
            rec = new.functions.setdefault(h_f, FunctionRecord())
            rec.verification_count += inc
            rec.buggy = rec.buggy or bool(upd.get("buggy", False))
        return new, Result("accepted")
    return _reject(state, f"unknown message type {kind!r}")


class Ledger:
    """Single-writer wrapper that records every message with its result."""

    def __init__(self) -> None:
        self.state = LedgerState()
        self.log: list[dict[str, Any]] = []

    def submit(self, message: Mapping[str, Any]) -> Result:
        self.state, result = ledger_apply(self.state, message)
        self.log.append({"msg": dict(message), "result": result.to_json()})
        return result

    def dump_log(self) -> str:
        return "".join(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n" for entry in self.log)


def replay(lines: Iterable[str]) -> Ledger:
    """Rebuild a ledger from a log; recorded results must match."""
    ledger = Ledger()
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        entry = json.loads(line)
        got = ledger.submit(entry["msg"]).to_json()
        if got != entry["result"]:
            raise ValueError(f"log line {n}: replay gave {got}, log says {entry['result']}")
    return ledger
