"""The task manager that runs inside the enclave: owns the genuine pool, the
task -> function map and the genuine flags, and speaks to the ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Sequence

from ..constraint import ConstraintFile
from .ledger import LedgerState, Message, attest, derive_pk, measurement, sign
from .tasks import (
    R_BASIC,
    R_BUG,
    Answer,
    BugFound,
    BundleError,
    Reject,
    Task,
    TaskBundle,
    Verified,
    function_hash,
    genuine_tasks,
    make_bundle,
    validate_answer,
)


@dataclass
class BundleSecret:
    bundle: TaskBundle
    flags: tuple[bool, ...]
    functions: tuple[str | None, ...]


@dataclass
class BountyTaskManager:
    sk: bytes | None
    h_btm: str = field(default_factory=measurement)
    r_basic: Decimal = R_BASIC
    r_bug: Decimal = R_BUG
    pool: dict[str, list[Task]] = field(default_factory=dict)
    names: dict[str, str] = field(default_factory=dict)
    secrets: dict[str, BundleSecret] = field(default_factory=dict)
    counted: set[str] = field(default_factory=set)

    @property
    def pk(self) -> str | None:
        return derive_pk(self.sk) if self.sk is not None else None

    def local_instance(self) -> "BountyTaskManager":
        """Same enclave code and sealed state, no signing key: the
        censorship-resistant path that authenticates by quote only."""
        return BountyTaskManager(None, self.h_btm, self.r_basic, self.r_bug, self.pool, self.names,
                                 self.secrets, self.counted)

    def create_message(self) -> Message:
        return {"type": "Create", "pk": self.pk, "h_btm": self.h_btm}

    def register(self, cf: ConstraintFile) -> str:
        h = function_hash(cf)
        self.pool[h] = genuine_tasks(cf)
        self.names[h] = cf.function_id
        return h

    def request_bundle(
        self, requester: str, n: int, Q: float, deadline: int, seed: int, min_fabricated: int = 1
    ) -> tuple[TaskBundle, Message]:
        if self.sk is None:
            raise BundleError("publishing needs the signing key")
        bundle, flags = make_bundle(self.pool, n, Q, deadline, requester, seed, min_fabricated=min_fabricated)
        fns = tuple(t.provenance.function if g else None for t, g in zip(bundle.tasks, flags))
        self.secrets[bundle.bundle_hash] = BundleSecret(bundle, flags, fns)
        msg = {"bundle": bundle.bundle_hash, "tasks": list(bundle.task_ids), "requester": requester,
               "deadline": deadline}
        return bundle, {"type": "PublishTaskBundle", "msg": msg, "sig": sign(self.pk, msg)}

    def validate_submitted_answer(self, h_b: str, answer: Answer, bbh: str) -> tuple[Any, Message | None]:
        """Returns the outcome and, unless rejected, the ClaimReward message the
        hunter forwards to the ledger (signed, or quote-only without a key)."""
        secret = self.secrets.get(h_b)
        if secret is None:
            raise KeyError(f"unknown bundle {h_b}")
        outcome = validate_answer(secret.bundle, secret.flags, answer, self.r_basic, self.r_bug)
        if isinstance(outcome, Reject):
            return outcome, None
        ids = secret.bundle.task_ids
        buggy = outcome.buggy if isinstance(outcome, BugFound) else ()
        msg = {
            "bundle": h_b,
            "bbh": bbh,
            "reward": str(outcome.reward),
            "verified": [ids[k] for k in outcome.verified],
            "buggy": [ids[k] for k in buggy],
        }
        sig = sign(self.pk, msg) if self.pk is not None else None
        return outcome, {"type": "ClaimReward", "msg": msg, "sig": sig, "quote": attest(msg, self.h_btm)}

    def update_verification_result(self, state: LedgerState, hashes: Sequence[str] | None = None) -> Message | None:
        """Fold resolved bundles not yet counted into one UpdateFunctions."""
        if self.sk is None:
            return None
        todo = sorted(hashes) if hashes is not None else sorted(state.bundles)
        updates: dict[str, dict[str, Any]] = {}
        for h_b in todo:
            rec = state.bundles.get(h_b)
            secret = self.secrets.get(h_b)
            if rec is None or not rec.resolved or secret is None or h_b in self.counted:
                continue
            self.counted.add(h_b)
            owner = dict(zip(secret.bundle.task_ids, secret.functions))
            for tid in rec.verified or []:
                fn = owner.get(tid)
                if fn is not None:
                    updates.setdefault(fn, {"verified": 0, "buggy": False})["verified"] += 1
            for tid in rec.buggy or []:
                fn = owner.get(tid)
                if fn is not None:
                    updates.setdefault(fn, {"verified": 0, "buggy": False})["buggy"] = True
        if not updates:
            return None
        msg = {"functions": updates}
        return {"type": "UpdateFunctions", "msg": msg, "sig": sign(self.pk, msg)}


def publish_to(directory: Path, bundle: TaskBundle) -> Path:
    """Stand-in for distributed storage: one SMT-LIB file per task plus a
    manifest, under a directory named by the bundle hash."""
    out = Path(directory) / bundle.bundle_hash[:16]
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# bundle {bundle.bundle_hash} requester={bundle.requester} deadline={bundle.deadline}"]
    for k, t in enumerate(bundle.tasks):
        (out / f"task{k}.smt2").write_text(t.text)
        lines.append(f"{k} {t.task_id}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


__all__ = ["BountyTaskManager", "BundleSecret", "publish_to", "Verified", "BugFound", "Reject"]
