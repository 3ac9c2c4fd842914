"""Acceptance criteria, one PASS/FAIL line each.

Run under pytest (lines go straight to the terminal) or as a script.
"""

import itertools
import os
import subprocess
import sys
import time
from decimal import Decimal
from pathlib import Path

import pytest

from crowdverify.analytics import (
    assurance_probability,
    binary_assurance,
    expected_cost,
    guessing_grid,
    min_verification_count,
    profit_analytic,
    profit_expectation,
)
from crowdverify.btm.ledger import Ledger, sign
from crowdverify.btm.manager import BountyTaskManager, BundleSecret
from crowdverify.assertion import parse_assertions, rename_all
from crowdverify.btm.tasks import Reject, convert_task, satisfies, validate_answer
from crowdverify.constraint import evaluate_frame, solve_formula
from crowdverify.expr import to_text
from crowdverify.pipeline import verify_text
from crowdverify.policy import parse_hints, parse_meta
from crowdverify.validation import Level, validate_instruction_level

sys.path.insert(0, str(Path(__file__).parent))
from conftest import FIXTURES, fixture_text  # noqa: E402
from test_btm import (  # noqa: E402
    INVALID,
    UNSAT,
    VALID,
    answer_for,
    decision_bundles,
    expected_outcome,
    observed,
    random_tasks,
)

ROOT = Path(__file__).resolve().parents[1]


def text(name):
    return fixture_text(name) if name else ""


def run_w8(asm, asserts, hints=None, policy="sfi", width=8):
    meta = parse_meta(text("meta_w8.meta"))
    return verify_text(text(asm), text(asserts), meta, parse_hints(text(hints)), policy, width)[0]


def frames(result):
    return [(f.address, f.rule, type(v).__name__) for f, v in zip(result.constraints.frames, result.verdicts)]


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok, line


# -- criteria -----------------------------------------------------------------

def criterion_1():
    t = time.perf_counter()
    r = run_w8("heap_write_w8.s", "heap_write_w8.asserts", "heap_write.hints")
    dt = time.perf_counter() - t
    local = len(r.checks) == 0 and len(r.facts) - r.facts.n_axioms == 4
    want = {(0xbfbb, "HEAP", "Unsat"), (0xbff0, "HEAPBASE-INV", "Unsat")}
    ok = local and want <= set(frames(r)) and dt < 10
    return report(1, ok, f"heap write: 4 local assertions={local}, frames={frames(r)}, {dt:.2f}s")


def criterion_2():
    r = run_w8("indirect_call_w8.s", "indirect_call_w8.asserts", "indirect_call.hints")
    fs = frames(r)
    derive = {a for a, rule, v in fs if rule == "DERIVE" and v == "Unsat"}
    ind_call = (0x62a3, "IND_CALL", "Unsat") in fs
    ok = {0x6260, 0x6289} <= derive and ind_call and r.verified
    return report(2, ok, f"indirect call: derivations UNSAT at {sorted(map(hex, derive))}, IND_CALL UNSAT={ind_call}")


def criterion_3():
    r = run_w8("global_read_w8.s", "global_read_w8.asserts", "global_read.hints")
    fs = frames(r)
    ok = any(rule == "DERIVE" and v == "Unsat" for _, rule, v in fs) and \
        any(rule == "GLOBAL" and v == "Unsat" for _, rule, v in fs) and r.verified
    return report(3, ok, f"global read: {fs}")


MUTANTS = {
    "guard removed": ("mutants/heap_write_noguard.s", "heap_write_w8.asserts", "heap_write.hints", "sfi"),
    "cmp widened": ("mutants/heap_write_widecmp.s", "mutants/heap_write_widecmp.asserts", "heap_write.hints", "sfi"),
    "heap hint as global": ("heap_write_w8.s", "heap_write_w8.asserts", "mutants/heap_write_globalhint.hints", "sfi"),
    "lfence deleted": ("lvi_unfenced.s", "lvi_unfenced.asserts", None, "lvi"),
}


def criterion_4():
    parts, ok = [], True
    for label, (asm, asserts, hints, policy) in MUTANTS.items():
        r = run_w8(asm, asserts, hints, policy)
        confirmed = [k for k in r.failing if evaluate_frame(r.constraints, k, r.verdicts[k].model)]
        ok &= bool(confirmed)
        parts.append(f"{label}: {len(confirmed)} confirmed SAT")
    return report(4, ok, "; ".join(parts))


def criterion_5():
    r = run_w8("cmp_demo.s", "cmp_demo.asserts")
    fn = r.ssa
    cases = [a for a in rename_all(parse_assertions(text("cmp_demo.asserts")), fn) if a.address == 0x1000]
    levels = [validate_instruction_level(a, fn.ir[0x1000]) for a in cases]
    verdict = {to_text(f.goal): type(v).__name__ for f, v in zip(r.constraints.frames, r.verdicts)
               if f.kind == "assertion-check"}
    case2, case3 = to_text(cases[1].body), to_text(cases[2].body)
    ok = levels == [Level.LOCAL, Level.DEFERRED, Level.DEFERRED] and verdict == {case2: "Sat", case3: "Unsat"}
    return report(5, ok, f"levels={[lv.value for lv in levels]}, case 2 {verdict.get(case2)}, "
                         f"case 3 {verdict.get(case3)}")


def criterion_6():
    a = assurance_probability(21, 0.7, 10)
    b = binary_assurance(200, 28, 0.7, 10)
    m1, m2 = min_verification_count(0.7, 10, 0.99), min_verification_count(0.7, 10, 0.99, N=200)
    ok = a >= 0.99 and b >= 0.99 and (m1, m2) == (21, 28)
    return report(6, ok, f"assurance(21)={a:.10f} binary(200,28)={b:.10f} m={m1},{m2}")


def criterion_7():
    hi = expected_cost(200, 10, 0.7, 0.5, 200, 0.021)
    lo = expected_cost(200, 10, 0.1, 0.5, 200, 0.021)
    ok = abs(hi - 1.18) <= 0.02 and abs(lo - 11.05) <= 0.02
    return report(7, ok, f"cost(p=0.7)=${hi:.4f} cost(p=0.1)=${lo:.4f}")


def criterion_8():
    zero = all(profit_analytic(n, n, P) == 0 for n in range(1, 11) for P in ("0.1", "0.5", "0.9"))
    grid = list(guessing_grid())
    nonpos = all(p <= 0 for *_, p in grid)
    estimates = [profit_expectation(n, t, P, trials=10**6) for n, t, P, _ in grid]
    disagree = [cell[:3] for cell, e in zip(grid, estimates) if not e.agrees]
    z = [(e.mean - e.analytic) / e.stderr for e in estimates if e.stderr > 0]
    ok = zero and nonpos and not disagree
    return report(8, ok, f"solve-all=0: {zero}; {len(grid)} cells all <= 0: {nonpos}; "
                         f"Monte Carlo outside 3 sigma: {disagree or 'none'} "
                         f"(z mean {sum(z) / len(z):+.3f}, mean z^2 {sum(v * v for v in z) / len(z):.3f})")


def _publish_msg(btm, h, requester, deadline):
    b = btm.secrets[h].bundle
    return {"bundle": h, "tasks": list(b.task_ids), "requester": requester, "deadline": deadline}


def criterion_9(buggy, heap):
    btm = BountyTaskManager(b"acceptance-btm")
    mismatches, patterns, ledger_checks = [], 0, 0
    for bundle, flags in decision_bundles(buggy, heap):
        h = bundle.bundle_hash
        btm.secrets[h] = BundleSecret(bundle, flags, tuple("f" if g else None for g in flags))
        pub = _publish_msg(btm, h, bundle.requester, bundle.deadline)
        for pattern in itertools.product((UNSAT, VALID, INVALID), repeat=len(bundle)):
            patterns += 1
            answer = [answer_for(t, p) for t, p in zip(bundle.tasks, pattern)]
            want = expected_outcome(flags, pattern)
            if observed(validate_answer(bundle, flags, answer)) != want:
                mismatches.append((flags, pattern))
                continue
            for is_req, channel, after in itertools.product((True, False), ("sig", "quote"), (False, True)):
                who = bundle.requester if is_req else "other"
                enclave = btm if channel == "sig" else btm.local_instance()
                outcome, claim = enclave.validate_submitted_answer(h, answer, who)
                if isinstance(outcome, Reject):
                    if claim is not None:
                        mismatches.append((flags, pattern, "claim for rejected answer"))
                    break
                if (claim["sig"] is None) != (channel == "quote") or Decimal(claim["msg"]["reward"]) != want[-1]:
                    mismatches.append((flags, pattern, channel))
                led = Ledger()
                led.submit(btm.create_message())
                led.submit({"type": "PublishTaskBundle", "msg": pub, "sig": sign(btm.pk, pub)})
                if after:
                    led.submit({"type": "Tick", "time": bundle.deadline + 1})
                accepted = led.submit(claim).status == "accepted"
                ledger_checks += 1
                if accepted != (is_req or after):
                    mismatches.append((flags, pattern, who, channel, after))
    ok = not mismatches and patterns == sum(6**n for n in range(1, 5))
    return report(9, ok, f"{patterns} answer patterns, {ledger_checks} ledger claims "
                         f"(signature and quote, before/after deadline), mismatches: {mismatches[:3] or 'none'}")


def criterion_10():
    t = time.perf_counter()
    bad, n = [], 0
    for k, (task, before) in enumerate(random_tasks(200)):
        n += 1
        c = convert_task(task, 1000 + k)
        after = solve_formula(c.formula, 8)
        if type(before) is not type(after):
            bad.append(k)
        if not task.genuine and not satisfies(c.provenance.known_model, c):
            bad.append(k)
    dt = time.perf_counter() - t
    return report(10, not bad and n == 200 and dt < 60, f"{n} tasks, disagreements {bad or 'none'}, {dt:.1f}s")


ARTIFACT_SCRIPT = r"""
import io
import sys
from pathlib import Path
from crowdverify.cli import main
fx, out = Path(sys.argv[1]), Path(sys.argv[2])
runs = [
    ("heap_write.s", "heap_write.asserts", "heap_write.hints", "meta64.meta", "sfi", "64"),
    ("indirect_call.s", "indirect_call.asserts", "indirect_call.hints", "meta64.meta", "sfi", "64"),
    ("global_read.s", "global_read.asserts", "global_read.hints", "meta64.meta", "sfi", "64"),
    ("heap_write_w8.s", "heap_write_w8.asserts", "heap_write.hints", "meta_w8.meta", "sfi", "8"),
    ("indirect_call_w8.s", "indirect_call_w8.asserts", "indirect_call.hints", "meta_w8.meta", "sfi", "8"),
    ("cmp_demo.s", "cmp_demo.asserts", None, "meta_w8.meta", "sfi", "8"),
    ("lvi.s", "lvi.asserts", None, None, "lvi", "64"),
]
log = io.StringIO()
for k, (asm, asserts, hints, meta, policy, width) in enumerate(runs):
    argv = ["emit", "--asm", str(fx / asm), "--asserts", str(fx / asserts), "--policy", policy,
            "--width", width, "--out", str(out / f"emit{k}")]
    argv += ["--hints", str(fx / hints)] if hints else []
    argv += ["--meta", str(fx / meta)] if meta else []
    assert main(argv, log) == 0
assert main(["btm-sim", str(fx / "scenarios/basic.yaml"), "--out", str(out / "sim")], log) == 0
"""


def _artifacts(out, hashseed):
    out.mkdir(parents=True)
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-c", ARTIFACT_SCRIPT, str(FIXTURES), str(out)], env=env, check=True, cwd=ROOT)
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def criterion_11(tmp):
    a, b = _artifacts(tmp / "run1", 1), _artifacts(tmp / "run2", 2)
    kinds = {p.suffix for p in a}
    differ = sorted(str(p) for p in set(a) | set(b) if a.get(p) != b.get(p))
    ok = not differ and {".smt2", ".manifest", ".jsonl"} <= kinds
    return report(11, ok, f"{len(a)} files (smt2, manifests, ledger log, bundles) across two processes; "
                          f"differing: {differ or 'none'}")


# -- pytest glue ----------------------------------------------------------------

def _emit(capsys, result):
    ok, line = result
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 8])
def test_criterion(n, capsys):
    _emit(capsys, globals()[f"criterion_{n}"]())


def test_criterion_9(capsys, buggy_task, heap_task):
    _emit(capsys, criterion_9(buggy_task, heap_task))


def test_criterion_10(capsys):
    _emit(capsys, criterion_10())


def test_criterion_11(capsys, tmp_path):
    _emit(capsys, criterion_11(tmp_path))


@pytest.fixture(scope="module")
def heap_task():
    from test_btm import constraints
    from crowdverify.btm.tasks import genuine_tasks
    return genuine_tasks(constraints("heap_write_w8.s", "heap_write_w8.asserts", "meta_w8.meta", 8))[0]


@pytest.fixture(scope="module")
def buggy_task():
    from test_btm import constraints
    from crowdverify.btm.tasks import genuine_tasks
    return genuine_tasks(constraints("mutants/heap_write_noguard.s", "heap_write_w8.asserts", "meta_w8.meta", 8))[0]


if __name__ == "__main__":
    import tempfile
    from test_btm import constraints
    from crowdverify.btm.tasks import genuine_tasks
    heap = genuine_tasks(constraints("heap_write_w8.s", "heap_write_w8.asserts", "meta_w8.meta", 8))[0]
    buggy = genuine_tasks(constraints("mutants/heap_write_noguard.s", "heap_write_w8.asserts", "meta_w8.meta", 8))[0]
    results = [globals()[f"criterion_{n}"]() for n in range(1, 9)]
    results.append(criterion_9(buggy, heap))
    results.append(criterion_10())
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_11(Path(d)))
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
