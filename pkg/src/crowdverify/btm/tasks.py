"""Tasks and bundles handed to bounty hunters, and the answer validator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from ..constraint import (
    ConstraintFile,
    EvaluationError,
    Frame,
    Sat,
    Unsat,
    emit_smt2,
    frame_formula,
    sample_model,
    solve_formula,
)
from ..expr import BOOL, FALSE, Expr, Not, evaluate, fold, free_vars
from .rewrite import convert_formula

R_BASIC = Decimal("0.021")
R_BUG = 1000 * R_BASIC
TASK_ID = "task"


class FabricationError(RuntimeError):
    pass


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class Genuine:
    function: str  # function hash


@dataclass(frozen=True)
class Fabricated:
    known_model: Mapping[str, int | bool]


Provenance = Genuine | Fabricated


@dataclass(frozen=True)
class Task:
    """A single-frame constraint file. Everything except ``constraints`` is
    BTM-private and never part of the published text."""

    constraints: ConstraintFile
    provenance: Provenance = field(compare=False, repr=False)
    renaming: tuple[tuple[str, str], ...] = field(default=(), compare=False, repr=False)

    @property
    def text(self) -> str:
        return emit_smt2(self.constraints)

    @property
    def task_id(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def formula(self) -> list[Expr]:
        return frame_formula(self.constraints, 0)

    @property
    def width(self) -> int:
        return self.constraints.width

    @property
    def genuine(self) -> bool:
        return isinstance(self.provenance, Genuine)


def function_hash(cf: ConstraintFile) -> str:
    return hashlib.sha256(emit_smt2(cf).encode()).hexdigest()


def make_task(hypotheses: Sequence[Expr], goal: Expr, width: int, provenance: Provenance) -> Task:
    """Pack ``hypotheses ∧ ¬goal`` as a published task; no address, rule or
    function name survives."""
    hyps = tuple(hypotheses)
    sorts: dict[str, str] = {}
    for e in (*hyps, goal):
        for v in free_vars(e):
            sorts.setdefault(v.name, v.sort)
    frame = Frame(0, "TASK", "task", len(hyps), (), goal)
    cf = ConstraintFile(TASK_ID, tuple(sorted(sorts.items())), hyps, (frame,), width)
    return Task(cf, provenance)


def genuine_tasks(cf: ConstraintFile) -> list[Task]:
    fid = function_hash(cf)
    out = []
    for f in cf.frames:
        hyps = (*cf.background[: f.n_background], *f.hypotheses)
        out.append(make_task(hyps, f.goal, cf.width, Genuine(fid)))
    return out


def satisfies(model: Mapping[str, int | bool], task: Task) -> bool:
    """``validate(a, T)``: the model is total over the task, well-sorted,
    in range, and makes every constraint true."""
    mask = (1 << task.width) - 1
    for name, sort in task.constraints.declarations:
        if name not in model:
            return False
        v = model[name]
        if sort == BOOL:
            if not isinstance(v, bool):
                return False
        elif isinstance(v, bool) or not isinstance(v, int) or v != v & mask:
            return False
    try:
        return all(bool(evaluate(e, model, task.width)) for e in task.formula)
    except EvaluationError:
        return False


def find_model(formula: Sequence[Expr], width: int, seed: int = 0, decls: Mapping[str, str] | None = None):
    """Exhaustive below 17 bits, boundary-value sampling above."""
    if width in (4, 8, 16):
        v = solve_formula(formula, width, declarations=decls)
        return v.model if isinstance(v, Sat) else None
    return sample_model(formula, width, seed, declarations=decls)


def fabricate_task(source: Task, seed: int, attempts: int = 32) -> Task:
    """Drop a random nonempty subset of the source's hypotheses until the
    remainder admits a model; that model becomes the task's secret."""
    cf = source.constraints
    hyps = list(cf.background)
    goal = cf.frames[0].goal
    if not hyps:
        raise FabricationError("source has no hypotheses to remove")
    if fold(Not(goal), cf.width) == FALSE:
        raise FabricationError("goal holds under every subset of hypotheses")
    rng = np.random.default_rng(seed)
    decls = cf.declared()
    for attempt in range(attempts):
        drop = rng.random(len(hyps)) < rng.uniform(0.1, 0.6)
        if not drop.any():
            drop[int(rng.integers(len(hyps)))] = True
        kept = [h for h, d in zip(hyps, drop) if not d]
        model = find_model([*kept, Not(goal)], cf.width, seed + attempt, decls)
        if model is None:
            continue
        task = make_task(kept, goal, cf.width, Fabricated({}))
        known = {n: model[n] for n, _ in task.constraints.declarations}
        task = Task(task.constraints, Fabricated(known))
        if satisfies(known, task):
            return task
    raise FabricationError(f"no satisfiable variant in {attempts} attempts")


def fabricate_without(source: Task, drop: Sequence[int], seed: int = 0) -> Task:
    """Deterministic variant: remove exactly the hypotheses at ``drop``."""
    cf = source.constraints
    kept = [h for k, h in enumerate(cf.background) if k not in set(drop)]
    goal = cf.frames[0].goal
    model = find_model([*kept, Not(goal)], cf.width, seed, cf.declared())
    if model is None:
        raise FabricationError("variant is unsatisfiable")
    task = make_task(kept, goal, cf.width, Fabricated({}))
    known = {n: model[n] for n, _ in task.constraints.declarations}
    return Task(task.constraints, Fabricated(known))


def convert_task(task: Task, seed: int) -> Task:
    cf = task.constraints
    hyps, goal, renaming = convert_formula(list(cf.background), cf.frames[0].goal, seed)
    prov = task.provenance
    if isinstance(prov, Fabricated):
        prov = Fabricated({renaming[n]: v for n, v in prov.known_model.items() if n in renaming})
    out = make_task(hyps, goal, cf.width, prov)
    composed = dict(task.renaming)
    chain = {orig: renaming.get(cur, cur) for orig, cur in composed.items()} if composed else renaming
    return Task(out.constraints, prov, tuple(sorted(chain.items())))


# -- bundles ------------------------------------------------------------------

@dataclass(frozen=True)
class TaskBundle:
    tasks: tuple[Task, ...]
    requester: str
    deadline: int

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.task_id for t in self.tasks)

    @property
    def bundle_hash(self) -> str:
        h = hashlib.sha256()
        for tid in self.task_ids:
            h.update(tid.encode())
        h.update(f"|{self.requester}|{self.deadline}".encode())
        return h.hexdigest()

    def __len__(self) -> int:
        return len(self.tasks)


def make_bundle(
    pool: Mapping[str, Sequence[Task]],
    n: int,
    Q: float,
    deadline: int,
    requester: str,
    seed: int,
    fabrication_sources: Sequence[Task] | None = None,
    min_fabricated: int = 1,
) -> tuple[TaskBundle, tuple[bool, ...]]:
    """Each slot is genuine with probability ``Q``, at most once per function;
    the rest are fabricated from ``fabrication_sources`` (default: the pool)."""
    if not pool or not any(pool.values()):
        raise BundleError("empty genuine pool")
    if not 0 < Q < 1:
        raise BundleError("Q must lie strictly between 0 and 1")
    if n <= 0 or min_fabricated > n:
        raise BundleError(f"cannot build a bundle of {n} with {min_fabricated} fabricated tasks")
    rng = np.random.default_rng(seed)
    functions = sorted(f for f, ts in pool.items() if ts)
    wanted = rng.random(n) < Q
    fabricated_slots = [k for k in range(n) if not wanted[k]]
    while len(fabricated_slots) < min_fabricated:
        k = int(rng.choice([k for k in range(n) if wanted[k]]))
        wanted[k] = False
        fabricated_slots.append(k)
    unused = list(functions)
    rng.shuffle(unused)
    sources = list(fabrication_sources) if fabrication_sources is not None else [
        t for f in functions for t in pool[f]
    ]
    tasks: list[Task] = []
    flags: list[bool] = []
    for k in range(n):
        sub = int(rng.integers(1 << 31))
        if wanted[k] and unused:
            fn = unused.pop()
            cands = pool[fn]
            base = cands[int(rng.integers(len(cands)))]
            flags.append(True)
        else:
            base = _fabricate_from(sources, rng, sub)
            flags.append(False)
        tasks.append(convert_task(base, sub))
    return TaskBundle(tuple(tasks), requester, deadline), tuple(flags)


def _fabricate_from(sources: Sequence[Task], rng: np.random.Generator, seed: int) -> Task:
    order = rng.permutation(len(sources))
    for k in order:
        try:
            return fabricate_task(sources[int(k)], seed)
        except FabricationError:
            continue
    raise FabricationError("no source admits a fabricated variant")


# -- answer validation --------------------------------------------------------

Answer = Sequence[Unsat | Sat]


@dataclass(frozen=True)
class Reject:
    index: int
    reason: str
    reward: Decimal = Decimal(0)


@dataclass(frozen=True)
class Verified:
    verified: tuple[int, ...]
    reward: Decimal


@dataclass(frozen=True)
class BugFound:
    buggy: tuple[int, ...]
    verified: tuple[int, ...]
    reward: Decimal


Outcome = Reject | Verified | BugFound


def validate_answer(
    bundle: TaskBundle,
    flags: Sequence[bool],
    answer: Answer,
    r_basic: Decimal = R_BASIC,
    r_bug: Decimal = R_BUG,
) -> Outcome:
    """Fabricated slots must carry a valid model. Then any genuine model
    must be valid; each valid one is a bug. Genuine UNSAT answers count as
    verifications of their function."""
    if len(answer) != len(bundle) or len(flags) != len(bundle):
        raise BundleError(f"answer has {len(answer)} entries for a bundle of {len(bundle)}")
    for k, (task, genuine, a) in enumerate(zip(bundle.tasks, flags, answer)):
        if genuine:
            continue
        if isinstance(a, Unsat):
            return Reject(k, "fabricated task answered UNSAT")
        if not satisfies(a.model, task):
            return Reject(k, "invalid model for a fabricated task")
    buggy, verified = [], []
    for k, (task, genuine, a) in enumerate(zip(bundle.tasks, flags, answer)):
        if not genuine:
            continue
        if isinstance(a, Unsat):
            verified.append(k)
        elif satisfies(a.model, task):
            buggy.append(k)
        else:
            return Reject(k, "invalid model for a genuine task")
    if buggy:
        return BugFound(tuple(buggy), tuple(verified), r_basic + len(buggy) * r_bug)
    return Verified(tuple(verified), r_basic)
