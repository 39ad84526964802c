import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaselab.chase import (
    BranchIndex,
    ChaseConfig,
    NullCounter,
    Seeded,
    Status,
    Verdict,
    chase,
    core_chase_step,
    enrich,
    explore_branches,
    fire,
    firing_key,
    semi_enrich,
)
from chaselab.homomorphism import core, is_satisfied, make_trigger
from chaselab.model import Atom, Constant, Instance, Null, RelationSymbol, Variable, atom, parse_program
from chaselab.termination import is_weakly_acyclic
from conftest import fixture_text, inst, prog
from oracles import has_homomorphism, isomorphic

x, y = Variable("x"), Variable("y")
I0 = inst("R(a,b). R(a,c). S(a,d).")
RUNNING = prog("xi: R(x,y) -> exists z . S(x,z)")
THM2 = prog("xi1: R(x) -> exists z . S(z), T(z,x)\nxi2: S(x) -> exists w . R(w), T(x,w)")


def test_fire_adds_head_with_fresh_null():
    t = make_trigger(RUNNING[0], {x: Constant("a"), y: Constant("b")})
    J = fire(I0, t, NullCounter())
    assert J == I0 | [atom("S", "a", 1)]


def test_fire_full_tgd():
    xi = prog("R(x,y) -> R(y,x)")[0]
    c = NullCounter()
    J = fire(inst("R(a,b)."), make_trigger(xi, {x: Constant("a"), y: Constant("b")}), c)
    assert J == inst("R(a,b). R(b,a).") and c.used == 0


def test_fire_without_new_atoms_still_counts_a_step():
    sigma = prog("R(x) -> S(x)\nR(x) -> S(x), S(x)")
    out = chase(inst("R(a)."), sigma, ChaseConfig("oblivious"))
    assert out.steps == 2 and len(out.final) == 2


@pytest.mark.parametrize("variant,size", [("standard", 3), ("semi_oblivious", 4), ("oblivious", 5), ("core", 3)])
def test_running_example(variant, size):
    out = chase(I0, RUNNING, ChaseConfig(variant))
    assert out.status is Status.TERMINATED
    assert len(out.final) == size


def test_semi_oblivious_adds_one_null():
    out = chase(I0, RUNNING, ChaseConfig("semi_oblivious"))
    assert out.final == I0 | [atom("S", "a", 1)]
    out = chase(I0, RUNNING, ChaseConfig("oblivious"))
    assert out.final == I0 | [atom("S", "a", 1), atom("S", "a", 2)]


def test_core_chase_proposition_example():
    sigma = prog("R(x) -> exists z . R(z), S(x)")
    out = chase(inst("R(a)."), sigma, ChaseConfig("core"))
    assert out.status is Status.TERMINATED and out.steps == 1
    assert out.final == inst("R(a). S(a).")
    assert core_chase_step(inst("R(a)."), sigma) == inst("R(a). S(a).")


def test_core_step_fixpoint_and_sigma1():
    assert core_chase_step(I0, RUNNING) == I0
    sigma1 = prog("R(x,y) -> exists z . S(z,x)")
    assert core_chase_step(inst("R(a,b)."), sigma1) == inst("R(a,b). S(_N1,a).")


def test_theorem2_pair():
    out = chase(inst("R(a)."), THM2, ChaseConfig("standard"))
    assert out.status is Status.TERMINATED and len(out.final) == 3
    out = chase(inst("R(a)."), THM2, ChaseConfig("semi_oblivious", max_steps=200))
    assert out.status is Status.BUDGET_EXCEEDED and out.budget == "max_steps=200"


def test_explore_prop1_standard():
    sigma = prog("S(x,y) -> exists z . S(y,z)\nR(x) -> S(x,x)")
    rep = explore_branches(inst("S(a,b). R(b)."), sigma, max_steps=100)
    assert rep.some_terminates is Verdict.YES
    assert rep.all_terminate in (Verdict.NO, Verdict.UNKNOWN)


def test_explore_thm2_last_fixture():
    sigma = prog("R(x,y) -> R(y,y)\nR(x,y) -> exists z . R(y,z)")
    rep = explore_branches(inst("R(a,b)."), sigma, max_steps=100)
    assert rep.some_terminates is Verdict.YES


def test_explore_satisfied_instance():
    rep = explore_branches(I0, RUNNING)
    assert rep.all_terminate is Verdict.YES and rep.some_terminates is Verdict.YES
    assert [b["steps"] for b in rep.branch_outcomes] == [0]


def test_denial_stops_the_chase():
    sigma = prog("R(x,y) -> R(y,x)\nR(x,x) -> bottom")
    for variant in ("standard", "oblivious", "semi_oblivious", "core"):
        out = chase(inst("R(a,a)."), sigma, ChaseConfig(variant))
        assert out.status is Status.DENIAL_FAILED
    out = chase(inst("R(a,a)."), sigma, ChaseConfig("oblivious", denial_policy="ignore"))
    assert out.status is Status.TERMINATED


def test_budgets():
    out = chase(inst("R(a)."), THM2, ChaseConfig("standard", max_steps=0))
    assert out.status is Status.BUDGET_EXCEEDED
    out = chase(inst("R(a,b)."), prog("R(x,y) -> exists z . R(y,z)"), ChaseConfig("standard", max_atoms=10))
    assert out.status is Status.BUDGET_EXCEEDED and out.budget == "max_atoms=10"
    with pytest.raises(ValueError):
        ChaseConfig("nope")
    with pytest.raises(ValueError):
        ChaseConfig(max_steps=-1)


def test_strategies_are_deterministic():
    sigma = prog("S(x,y) -> exists z . S(y,z)\nR(x) -> S(x,x)")
    I = inst("S(a,b). R(b).")
    for strat in (Seeded(3), Seeded(3)):
        a = chase(I, sigma, ChaseConfig(max_steps=50, strategy=strat))
        b = chase(I, sigma, ChaseConfig(max_steps=50, strategy=strat))
        assert a.final == b.final and a.status == b.status
    good = chase(I, sigma, ChaseConfig(max_steps=50, strategy=BranchIndex((1,))))
    assert good.status is Status.TERMINATED
    assert good.trace[0].tgd_id == sigma[1].id


def test_trace_records_bindings():
    out = chase(inst("R(a,b)."), RUNNING, ChaseConfig())
    (entry,) = out.trace
    assert entry.tgd_id == "xi" and entry.bindings[x] == Constant("a")
    assert entry.to_json()["atoms_added"] == ["S(a,_N1)"]


def test_fresh_nulls_avoid_input_nulls():
    out = chase(inst("R(a,_N7)."), RUNNING, ChaseConfig())
    assert atom("S", "a", 8) in out.final


def test_enrichment():
    sigma3 = prog("xi: R(x,y) -> exists z . R(x,z)")
    (t,) = enrich(sigma3)
    assert [str(a) for a in t.head] == ["R(x,z)", "H1(x,y)"]
    (t,) = semi_enrich(sigma3)
    assert [str(a) for a in t.head] == ["R(x,z)", "H1(x)"]
    assert is_weakly_acyclic(sigma3) and not is_weakly_acyclic(enrich(sigma3))
    full = prog("R(x,y) -> S(y)")
    assert [str(a) for a in semi_enrich(full)[0].head] == ["S(y)", "H1(y)"]
    den = prog("R(x,x) -> bottom")
    assert enrich(den) == den and semi_enrich(den) == den


# ---------------------------------------------------------------------------
# properties over a small random corpus

FIXTURE_SETS = [
    RUNNING,
    THM2,
    prog("R(x,y) -> exists z . R(y,z)"),
    prog("R(x,y) -> exists z . R(x,z)"),
    prog("R(x,y) -> R(y,x)\nR(x,y) -> exists z . S(y,z)"),
    prog("S(x,y) -> exists z . S(y,z)\nR(x) -> S(x,x)"),
    prog("R(x,y) -> R(y,y)\nR(x,y) -> exists z . R(y,z)"),
    prog("R(x) -> exists z . R(z), S(x)"),
    parse_program(fixture_text("sigma7.prog")),
    parse_program(fixture_text("sigma9.prog")),
]
R2, R1, S2, S1 = RelationSymbol("R", 2), RelationSymbol("R", 1), RelationSymbol("S", 2), RelationSymbol("S", 1)


def _instance_for(sigma, pairs):
    rels = {}
    for t in sigma:
        for a in t.body:
            rels[a.name] = a.relation
    out = []
    for k, (name, p) in enumerate(pairs):
        keys = sorted(rels)
        rel = rels[keys[name % len(keys)]]
        out.append(Atom(rel, tuple(Constant(c) for c in p[: rel.arity])))
    return Instance(out)


corpus = st.tuples(
    st.sampled_from(range(len(FIXTURE_SETS))),
    st.lists(st.tuples(st.integers(0, 3), st.tuples(*[st.sampled_from("abc")] * 3)), min_size=1, max_size=3),
)


@settings(max_examples=60, deadline=None)
@given(corpus, st.sampled_from(["standard", "oblivious", "semi_oblivious"]))
def test_monotone_growth_and_keys(case, variant):
    k, pairs = case
    sigma = FIXTURE_SETS[k]
    I = _instance_for(sigma, pairs)
    out = chase(I, sigma, ChaseConfig(variant, max_steps=60))
    assert set(I) <= set(out.final)
    sizes = out.history
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    if variant != "standard":
        keys = [firing_key(make_trigger(sigma[e.tgd_id], e.bindings), variant) for e in out.trace]
        assert len(keys) == len(set(keys))
    fresh = {t for a in out.final for t in a.args if isinstance(t, Null)}
    assert len(fresh) <= out.fresh_nulls_used
    if out.status is Status.TERMINATED and variant == "standard":
        assert is_satisfied(out.final, sigma)


@settings(max_examples=40, deadline=None)
@given(corpus)
def test_core_chase_terminated_outcome_satisfies(case):
    k, pairs = case
    sigma = FIXTURE_SETS[k]
    I = _instance_for(sigma, pairs)
    out = chase(I, sigma, ChaseConfig("core", max_steps=30, max_atoms=3000))
    if out.status is Status.TERMINATED:
        assert is_satisfied(out.final, sigma)
        assert core(out.final) == out.final
        assert has_homomorphism(list(I), out.final)


@settings(max_examples=40, deadline=None)
@given(corpus)
def test_variant_inclusions(case):
    k, pairs = case
    sigma = FIXTURE_SETS[k]
    I = _instance_for(sigma, pairs)
    b = dict(max_steps=60, max_states=3000)
    ob = explore_branches(I, sigma, "oblivious", **b).all_terminate
    so = explore_branches(I, sigma, "semi_oblivious", **b).all_terminate
    std = explore_branches(I, sigma, "standard", **b).all_terminate
    if ob is Verdict.YES:
        assert so is Verdict.YES
    if so is Verdict.YES:
        assert std is Verdict.YES


def test_weakly_acyclic_sets_terminate_semi_obliviously():
    # polynomial budget: |I|^2 * |sigma| * 10 steps
    for sigma in FIXTURE_SETS:
        if not is_weakly_acyclic(sigma):
            continue
        for pairs in ([(0, "abc")], [(0, "abc"), (1, "bca"), (2, "aab")]):
            I = _instance_for(sigma, pairs)
            budget = 10 * len(sigma) * max(len(I), 2) ** 2
            out = chase(I, sigma, ChaseConfig("semi_oblivious", max_steps=budget))
            assert out.status is not Status.BUDGET_EXCEEDED, str(sigma)


def test_canonical_core_representative_is_stable():
    I = inst("R(a,_N1). R(a,_N2). R(_N1,b).")
    assert isomorphic(core(I), inst("R(a,_N1). R(_N1,b)."))
    assert core(I) == core(I)
