"""Static termination analysis: weak acyclicity, the precedence orders and stratification."""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field

import networkx as nx

from .chase import Verdict
from .homomorphism import apply, find_homomorphisms
from .model import (
    Atom,
    Constant,
    DependencySet,
    Null,
    RelationSymbol,
    Tgd,
    Variable,
    variables_of,
)

DEFAULT_CYCLE_CAP = 10_000


@dataclass(frozen=True, order=True)
class Position:
    relation: str
    index: int

    def __str__(self):
        return f"({self.relation},{self.index})"


@dataclass
class DependencyGraph:
    vertices: set
    copy_edges: set
    generate_edges: set

    def to_networkx(self):
        g = nx.MultiDiGraph()
        g.add_nodes_from(self.vertices)
        for u, v in sorted(self.copy_edges):
            g.add_edge(u, v, kind="copy")
        for u, v in sorted(self.generate_edges):
            g.add_edge(u, v, kind="generate")
        return g


def dependency_graph(sigma) -> DependencyGraph:
    """Position graph with copy and generate edges; denials contribute no edges."""
    vertices, copy_edges, gen_edges = set(), set(), set()
    for tgd in sigma:
        for a in tgd.body + tgd.head:
            if not a.relation.is_bottom:
                vertices.update(Position(a.name, i + 1) for i in range(a.relation.arity))
        if tgd.is_denial:
            continue
        ex_positions = [
            Position(a.name, i + 1)
            for a in tgd.head
            for i, t in enumerate(a.args)
            if t in tgd.existential_vars
        ]
        for x in tgd.frontier:
            body_pos = [Position(a.name, i + 1) for a in tgd.body for i, t in enumerate(a.args) if t == x]
            head_pos = [Position(a.name, i + 1) for a in tgd.head for i, t in enumerate(a.args) if t == x]
            for p in body_pos:
                copy_edges.update((p, q) for q in head_pos)
                gen_edges.update((p, q) for q in ex_positions)
    return DependencyGraph(vertices, copy_edges, gen_edges)


@dataclass
class WAResult:
    weakly_acyclic: bool
    cycle: list = field(default_factory=list)

    def __bool__(self):
        return self.weakly_acyclic


def is_weakly_acyclic(sigma) -> WAResult:
    """Weak acyclicity; on failure ``cycle`` lists positions of a cycle through a generate edge."""
    g = dependency_graph(sigma)
    dg = nx.DiGraph()
    dg.add_nodes_from(g.vertices)
    dg.add_edges_from(g.copy_edges | g.generate_edges)
    comp = {}
    for k, scc in enumerate(nx.strongly_connected_components(dg)):
        for v in scc:
            comp[v] = k
    for u, v in sorted(g.generate_edges):
        if comp[u] == comp[v]:
            back = nx.shortest_path(dg, v, u)
            return WAResult(False, [u] + back)
    return WAResult(True)


# ---------------------------------------------------------------------------
# precedence


@dataclass
class PrecedenceWitness:
    """Images under the unifier: ``t`` is an atom of the first head."""

    t: Atom
    h1: dict
    h2: dict
    instance: list

    def to_json(self):
        return {
            "t": str(self.t),
            "h1": {str(k): str(v) for k, v in self.h1.items()},
            "h2": {str(k): str(v) for k, v in self.h2.items()},
            "instance": [str(a) for a in self.instance],
        }


@dataclass
class PrecedenceResult:
    holds: bool
    witness: PrecedenceWitness | None = None

    def __bool__(self):
        return self.holds


class _Classes:
    """Union-find over tagged terms for unifying a head of one tgd with a body of another.

    Keys are ``(1, var)`` for the first tgd, ``(2, var)`` for the second and
    ``("c", constant)``. Existential variables of the first tgd stand for fresh
    nulls, so their class may only absorb variables of the second tgd.
    """

    def __init__(self, existential):
        self.parent = {}
        self.existential = existential

    def find(self, k):
        self.parent.setdefault(k, k)
        while self.parent[k] != k:
            self.parent[k] = self.parent[self.parent[k]]
            k = self.parent[k]
        return k

    def members(self):
        groups = {}
        for k in list(self.parent):
            groups.setdefault(self.find(k), []).append(k)
        return groups

    def _ok(self, group):
        consts = {k for k in group if k[0] == "c"}
        ex = {k for k in group if k[0] == 1 and k[1] in self.existential}
        univ1 = {k for k in group if k[0] == 1 and k[1] not in self.existential}
        if len(consts) > 1 or len(ex) > 1:
            return False
        if ex and (consts or univ1):
            return False
        return True

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        self.parent[ra] = rb
        group = [k for k in self.parent if self.find(k) == rb]
        return self._ok(group)


def _key(side, t):
    if type(t) is Constant:
        return ("c", t)
    return (side, t)


def _unify_pairs(pairs, xi1, xi2):
    """Most general unifier of ``[(atom of head1, atom of body2)]``, or None."""
    uf = _Classes(xi1.existential_vars)
    for a1, a2 in pairs:
        if a1.relation != a2.relation:
            return None
        for s, t in zip(a1.args, a2.args):
            if not uf.union(_key(1, s), _key(2, t)):
                return None
    return uf


def _ground(uf, xi1, xi2):
    """Freeze the unifier: constants stay, existential classes become nulls, others fresh constants."""
    for v in variables_of(xi1.body + xi1.head):
        uf.find((1, v))
    for v in variables_of(xi2.body + xi2.head):
        uf.find((2, v))
    value = {}
    n_null = n_const = 0
    for root, group in sorted(uf.members().items(), key=lambda kv: str(kv[0])):
        consts = [k[1] for k in group if k[0] == "c"]
        ex = [k for k in group if k[0] == 1 and k[1] in xi1.existential_vars]
        if consts:
            val = consts[0]
        elif ex:
            n_null += 1
            val = Null(n_null)
        else:
            n_const += 1
            val = Constant(f"#{n_const}")
        for k in group:
            value[k] = val
    h1 = {v: value[(1, v)] for v in variables_of(xi1.body + xi1.head)}
    h2 = {v: value[(2, v)] for v in variables_of(xi2.body + xi2.head)}
    return h1, h2


def _matchings(beta1, alpha2, literal):
    if literal:
        for t in beta1:
            for t2 in alpha2:
                if t.relation == t2.relation:
                    yield [(t, t2)]
        return
    choices = [[None] + [t for t in beta1 if t.relation == a.relation] for a in alpha2]
    for combo in itertools.product(*choices):
        pairs = [(t, a) for t, a in zip(combo, alpha2) if t is not None]
        if pairs:
            yield pairs


def _check(xi1, xi2, h1, h2, literal):
    A1 = set(apply(h1, xi1.body))
    B1 = apply(h1, xi1.head)
    A2 = set(apply(h2, xi2.body))
    B1set = set(B1)
    t_hit = None
    for t, img in zip(xi1.head, B1):
        if img in A2 and img not in A1:
            t_hit = t
            break
    if t_hit is None:
        return None
    if not literal:
        # atoms over fresh nulls cannot be in the witness instance, so they must
        # come from the step itself
        for a in A2:
            if any(type(x) is Null for x in a.args) and a not in B1set:
                return None
    J = A1 | A2 | B1set
    seed = {v: h2[v] for v in xi2.universal_vars}
    if next(find_homomorphisms(xi2.head, J, seed=seed), None) is not None:
        return None
    return PrecedenceWitness(t_hit, h1, h2, sorted(A1 | (A2 - B1set), key=str))


def _no_retraction_into_body(xi1: Tgd) -> bool:
    """Condition (e): no map of the head into the body fixing the universal variables."""
    seed = {v: v for v in xi1.universal_vars}
    flex = xi1.existential_vars.__contains__
    return next(find_homomorphisms(xi1.head, xi1.body, seed=seed, flexible=flex), None) is None


def precedes(xi1: Tgd, xi2: Tgd, literal: bool = False, str_order: bool = False) -> PrecedenceResult:
    """Decide whether firing ``xi1`` can make an instantiation of ``xi2`` unsatisfied.

    The search unifies head atoms of ``xi1`` with body atoms of ``xi2`` and checks
    the resulting frozen instance. With ``literal=True`` only single-atom unifiers
    are tried and the freshness condition on nulls is skipped.
    """
    if xi1.is_denial or xi2.is_denial:
        return PrecedenceResult(False)
    if str_order and not _no_retraction_into_body(xi1):
        return PrecedenceResult(False)
    for pairs in _matchings(xi1.head, xi2.body, literal):
        uf = _unify_pairs(pairs, xi1, xi2)
        if uf is None:
            continue
        h1, h2 = _ground(uf, xi1, xi2)
        w = _check(xi1, xi2, h1, h2, literal)
        if w is not None:
            return PrecedenceResult(True, w)
    return PrecedenceResult(False)


def precedes_str(xi1: Tgd, xi2: Tgd) -> PrecedenceResult:
    """The order used for stratification: ``precedes`` plus condition (e)."""
    return precedes(xi1, xi2, str_order=True)


def mgu(t: Atom, alpha2, xi1: Tgd | None = None, xi2: Tgd | None = None) -> list:
    """Most general unifiers of ``t`` with each same-relation atom of ``alpha2``.

    Returns pairs ``(h1, h2)`` of substitutions on the variables of ``t`` and of
    ``alpha2``; the two sides are kept apart by tagging, so shared names do not
    clash. Variables that stay free are mapped to a representative variable.
    """
    ex = xi1.existential_vars if xi1 is not None else frozenset()
    out = []
    for t2 in alpha2:
        if t2.relation != t.relation:
            continue
        uf = _Classes(ex)
        ok = all(uf.union(_key(1, s), _key(2, u)) for s, u in zip(t.args, t2.args))
        if not ok:
            continue
        for a in alpha2:
            for u in a.args:
                if type(u) is Variable:
                    uf.find((2, u))
        rep = {}
        for root, group in uf.members().items():
            consts = [k[1] for k in group if k[0] == "c"]
            side1 = sorted((k[1] for k in group if k[0] == 1), key=str)
            side2 = sorted((k[1] for k in group if k[0] == 2), key=str)
            val = consts[0] if consts else side1[0] if side1 else Variable(side2[0].name + "_2")
            for k in group:
                rep[k] = val
        h1 = {k[1]: v for k, v in rep.items() if k[0] == 1}
        h2 = {k[1]: v for k, v in rep.items() if k[0] == 2}
        out.append((h1, h2))
    return out


# ---------------------------------------------------------------------------
# chase graph and stratification


@dataclass
class ChaseGraph:
    vertices: list
    edges: list
    witnesses: dict

    def to_networkx(self):
        g = nx.DiGraph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(self.edges)
        return g


def chase_graph(sigma, order: str = "cstr") -> ChaseGraph:
    """All-pairs precedence graph (self-pairs included) under the ``cstr`` or ``str`` order."""
    if order not in ("cstr", "str"):
        raise ValueError(f"unknown order {order!r}")
    edges, wit = [], {}
    for a in sigma:
        for b in sigma:
            r = precedes(a, b, str_order=(order == "str"))
            if r:
                edges.append((a.id, b.id))
                wit[(a.id, b.id)] = r.witness
    return ChaseGraph([t.id for t in sigma], edges, wit)


@dataclass
class StratResult:
    verdict: Verdict
    cycles_checked: int
    failing_cycle: list | None = None
    wa_cycle: list | None = None
    cap: int = DEFAULT_CYCLE_CAP

    def __bool__(self):
        return self.verdict is Verdict.YES


def cycle_cap() -> int:
    raw = os.environ.get("CHASELAB_CYCLE_CAP")
    return int(raw) if raw else DEFAULT_CYCLE_CAP


def _stratified(sigma, order, cap):
    cap = cycle_cap() if cap is None else cap
    graph = chase_graph(sigma, order)
    g = graph.to_networkx()
    cache = {}
    count = 0
    for cyc in nx.simple_cycles(g):
        count += 1
        if count > cap:
            return StratResult(Verdict.UNKNOWN, count - 1, cap=cap)
        key = frozenset(cyc)
        if key not in cache:
            sub = DependencySet([sigma[i] for i in sorted(key, key=[t.id for t in sigma].index)])
            cache[key] = is_weakly_acyclic(sub)
        wa = cache[key]
        if not wa:
            return StratResult(Verdict.NO, count, list(cyc), wa.cycle, cap)
    return StratResult(Verdict.YES, count, cap=cap)


def is_cstratified(sigma, cap: int | None = None) -> StratResult:
    """C-stratification: every simple cycle of the chase graph spans a weakly acyclic set."""
    return _stratified(sigma, "cstr", cap)


def is_stratified(sigma, cap: int | None = None) -> StratResult:
    """Stratification under the order with condition (e)."""
    return _stratified(sigma, "str", cap)


# ---------------------------------------------------------------------------
# 3-colorability gadgets


def _edge_atoms(pairs):
    E = RelationSymbol("E", 2)
    return [Atom(E, (u, v)) for u, v in pairs]


def _k3(z1, z2, z3):
    return _edge_atoms([(z1, z2), (z2, z1), (z1, z3), (z3, z1), (z2, z3), (z3, z2)])


def _graph_vars(edges):
    verts = list(dict.fromkeys(v for e in edges for v in e))
    if not verts:
        raise ValueError("the graph needs at least one edge")
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-loop on {u}")
    return {v: Variable(f"g_{v}") for v in verts}


def gen_3col_precedes(edges) -> tuple:
    """Tgds ``xi1, xi2`` with ``xi1`` preceding ``xi2`` iff the graph is not 3-colorable."""
    names = _graph_vars(edges)
    z = [Variable(n) for n in ("z", "z1", "z2", "z3")]
    xi1 = Tgd("xi1", (Atom(RelationSymbol("R", 1), (z[0],)),), tuple(_k3(*z[1:])))
    x, y = Variable("x"), Variable("y")
    xi2 = Tgd(
        "xi2",
        (Atom(RelationSymbol("E", 2), (x, y)),),
        tuple(_edge_atoms([(names[u], names[v]) for u, v in edges])),
    )
    return xi1, xi2


def gen_3col_cstr(edges) -> DependencySet:
    """The two-tgd set built from a graph for the stratification reduction."""
    names = _graph_vars(edges)
    R = RelationSymbol("R", 2)
    S = RelationSymbol("S", 1)
    z1, z2, z3, v, w = (Variable(n) for n in ("z1", "z2", "z3", "v", "w"))
    xi1 = Tgd(
        "xi1",
        (Atom(R, (z1, v)),),
        tuple(_k3(z1, z2, z3)) + (Atom(R, (z2, w)), Atom(R, (z3, w)), Atom(S, (w,))),
    )
    x, y, v2 = Variable("x"), Variable("y"), Variable("v")
    xi2 = Tgd(
        "xi2",
        (Atom(RelationSymbol("E", 2), (x, y)),),
        tuple(_edge_atoms([(names[a], names[b]) for a, b in edges])) + (Atom(R, (x, v2)),),
    )
    return DependencySet([xi1, xi2])
