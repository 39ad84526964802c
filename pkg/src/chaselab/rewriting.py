"""Semi-Thue systems over {0,1} and their encoding as tgds over the schema {E, Estar, L, R, D}."""
from __future__ import annotations

import itertools
import sys
import warnings
from dataclasses import dataclass, field

import networkx as nx

from .chase import ChaseConfig, DenialFailure, NullCounter, Status, Verdict, _core_step, chase
from .homomorphism import active_triggers
from .model import BOTTOM, Atom, Constant, DependencySet, Instance, Null, RelationSymbol, Tgd, Variable

ALPHABET = ("0", "1")

E = RelationSymbol("E", 3)
ESTAR = RelationSymbol("Estar", 2)
L = RelationSymbol("L", 2)
R = RelationSymbol("R", 2)
D = RelationSymbol("D", 1)
SCHEMA = {s.name: s for s in (E, ESTAR, L, R, D)}
GRID_IDS = ("L0", "L1", "R0", "R1")


@dataclass(frozen=True)
class RewritingSystem:
    rules: tuple
    alphabet: tuple = ALPHABET

    def __post_init__(self):
        for lhs, rhs in self.rules:
            if not lhs:
                raise ValueError("rules with an empty left-hand side are not supported")
            if not rhs:
                raise ValueError("rules with an empty right-hand side are not supported")
            for ch in lhs + rhs:
                if ch not in self.alphabet:
                    raise ValueError(f"symbol {ch!r} is not in the alphabet {self.alphabet}")

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)


def system(*rules) -> RewritingSystem:
    return RewritingSystem(tuple(rules))


def parse_rules(text: str) -> RewritingSystem:
    """One ``l -> r`` rule per line; ``#`` starts a comment."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise ValueError(f"line {lineno}: expected 'l -> r'")
        lhs, rhs = (s.strip() for s in line.split("->", 1))
        try:
            rules.append((lhs, rhs))
            RewritingSystem((rules[-1],))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return RewritingSystem(tuple(rules))


def _check_word(w):
    for ch in w:
        if ch not in ALPHABET:
            raise ValueError(f"symbol {ch!r} is not in the alphabet {ALPHABET}")


# ---------------------------------------------------------------------------
# derivations


def derive_step(w: str, theta) -> list:
    """All ``(v, rule, position)`` with ``v`` obtained by replacing one occurrence of a left side."""
    out = []
    for rule in theta:
        lhs, rhs = rule
        start = w.find(lhs)
        while start != -1:
            out.append((w[:start] + rhs + w[start + len(lhs) :], rule, start))
            start = w.find(lhs, start + 1)
    return out


@dataclass
class RewriteVerdict:
    verdict: Verdict
    max_depth: int | None = None
    loop: list | None = None
    depth: int | None = None


def terminates_within(w: str, theta, depth: int, max_nodes: int = 200_000) -> RewriteVerdict:
    """Decide termination from ``w`` by exhaustive search up to ``depth`` steps.

    ``No`` comes with a derivation ``u, ..., v`` where ``u`` occurs inside ``v``;
    such a derivation can be repeated forever. ``Yes`` reports the longest
    derivation length. Branches cut by the depth bound do not stop the search,
    since a loop found elsewhere still settles the answer. The bound is raised
    by doubling up to ``depth``, so short loops are reported first. More than
    ``max_nodes`` distinct words also gives ``Unknown``.
    """
    _check_word(w)
    bound = 1
    while True:
        bound = min(bound, depth)
        res = _search(w, theta, bound, max_nodes)
        if res.verdict is not Verdict.UNKNOWN or bound >= depth:
            return res if res.verdict is not Verdict.UNKNOWN else RewriteVerdict(Verdict.UNKNOWN, depth=depth)
        bound *= 2


def _search(w, theta, depth, max_nodes):
    height = {}
    on_path = []
    cut = [False]

    def visit(u, d):
        # returns height, or raises with a loop
        if u in height:
            return height[u]
        for k, anc in enumerate(on_path):
            if anc in u:
                raise _Loop(on_path[k:] + [u])
        if len(height) >= max_nodes:
            raise _Budget()
        succ = derive_step(u, theta)
        if d >= depth:
            # not memoized: the word may be reached again with more depth left
            cut[0] = cut[0] or bool(succ)
            return 0
        on_path.append(u)
        best = 0
        for v, _, _ in succ:
            best = max(best, 1 + visit(v, d + 1))
        on_path.pop()
        height[u] = best
        return best

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 4 * depth + 1000))
    try:
        h = visit(w, 0)
    except _Loop as loop:
        return RewriteVerdict(Verdict.NO, loop=loop.words)
    except _Budget:
        return RewriteVerdict(Verdict.UNKNOWN, depth=depth)
    finally:
        sys.setrecursionlimit(old)
    if cut[0]:
        return RewriteVerdict(Verdict.UNKNOWN, depth=depth)
    return RewriteVerdict(Verdict.YES, max_depth=h)


class _Loop(Exception):
    def __init__(self, words):
        self.words = words


class _Budget(Exception):
    pass


def uniform_termination_sample(theta, max_length: int, depth: int) -> dict:
    """Termination verdict for every word up to ``max_length``.

    A sample of words can refute uniform termination but never prove it.
    """
    out = {}
    for n in range(1, max_length + 1):
        for letters in itertools.product(ALPHABET, repeat=n):
            w = "".join(letters)
            out[w] = terminates_within(w, theta, depth)
    return out


# ---------------------------------------------------------------------------
# the tgd encoding


def _c(s):
    return Constant(s)


def _v(name):
    return Variable(name)


def _rho_tgd(tid, lhs, rhs):
    xs = [_v(f"x{i}") for i in range(len(lhs) + 1)]
    ys = [_v(f"y{i}") for i in range(len(rhs) + 1)]
    body = tuple(Atom(E, (xs[i], _c(a), xs[i + 1])) for i, a in enumerate(lhs))
    head = (
        (Atom(L, (xs[0], ys[0])),)
        + tuple(Atom(E, (ys[i], _c(b), ys[i + 1])) for i, b in enumerate(rhs))
        + (Atom(R, (xs[-1], ys[-1])),)
    )
    return Tgd(tid, body, head)


def grid_rules(verbatim: bool = False) -> list:
    """The four rules that copy a rewritten factor out to a full new line.

    With ``verbatim=True`` the second left rule keeps ``E(x0,1,y1)`` in its head,
    which links the old line to the new one; otherwise it mirrors the rule for 0.
    """
    x0, x1, y0, y1, z0, z1 = (_v(n) for n in ("x0", "x1", "y0", "y1", "z0", "z1"))
    out = []
    for a in ALPHABET:
        first = x0 if (verbatim and a == "1") else y0
        out.append(
            Tgd(
                f"L{a}",
                (Atom(E, (x0, _c(a), x1)), Atom(L, (x1, y1))),
                (Atom(L, (x0, y0)), Atom(E, (first, _c(a), y1))),
            )
        )
    for a in ALPHABET:
        out.append(
            Tgd(
                f"R{a}",
                (Atom(R, (x0, z0)), Atom(E, (x0, _c(a), x1))),
                (Atom(E, (z0, _c(a), z1)), Atom(R, (x1, z1))),
            )
        )
    return out


def _tc_rules():
    x, y, z = _v("x"), _v("y"), _v("z")
    return [
        Tgd("TC1", (Atom(E, (x, z, y)),), (Atom(ESTAR, (x, y)),)),
        Tgd("TC2", (Atom(L, (x, y)),), (Atom(ESTAR, (x, y)),)),
        Tgd("TC3", (Atom(R, (x, y)),), (Atom(ESTAR, (x, y)),)),
        Tgd("TC4", (Atom(ESTAR, (x, y)), Atom(ESTAR, (y, z))), (Atom(ESTAR, (x, z)),)),
    ]


def _ad_rules():
    x, y, z = _v("x"), _v("y"), _v("z")
    return [
        Tgd("AD1", (), (Atom(D, (_c("0"),)), Atom(D, (_c("1"),)))),
        Tgd("AD2", (Atom(E, (x, z, y)),), (Atom(D, (x,)), Atom(D, (z,)), Atom(D, (y,)))),
        Tgd("AD3", (Atom(L, (x, y)),), (Atom(D, (x,)), Atom(D, (y,)))),
        Tgd("AD4", (Atom(R, (x, y)),), (Atom(D, (x,)), Atom(D, (y,)))),
        Tgd("AD5", (Atom(ESTAR, (x, y)),), (Atom(D, (x,)), Atom(D, (y,)))),
    ]


def _s_rules():
    v, x, y, z = _v("v"), _v("x"), _v("y"), _v("z")
    return [
        Tgd(
            "S1",
            (Atom(ESTAR, (v, v)), Atom(D, (x,)), Atom(D, (z,)), Atom(D, (y,))),
            (Atom(E, (x, z, y)),),
        ),
        Tgd(
            "S2",
            (Atom(ESTAR, (v, v)), Atom(D, (x,)), Atom(D, (y,))),
            (Atom(L, (x, y)), Atom(R, (x, y)), Atom(ESTAR, (x, y))),
        ),
    ]


def rho_rules(theta) -> list:
    return [_rho_tgd(f"rho{i}", lhs, rhs) for i, (lhs, rhs) in enumerate(theta, 1)]


def sigma_theta(theta, verbatim_grid: bool = False) -> DependencySet:
    """The tgd set encoding ``theta``: rewriting, grid, closure, domain and saturation rules."""
    if not isinstance(theta, RewritingSystem):
        theta = RewritingSystem(tuple(theta))
    return DependencySet(rho_rules(theta) + grid_rules(verbatim_grid) + _tc_rules() + _ad_rules() + _s_rules())


def sigma_theta_denial(theta, verbatim_grid: bool = False) -> DependencySet:
    """Like :func:`sigma_theta` but the saturation rules give way to ``Estar(x,x) -> bottom``."""
    full = sigma_theta(theta, verbatim_grid)
    x = _v("x")
    deny = Tgd("deny", (Atom(ESTAR, (x, x)),), (Atom(BOTTOM, ()),))
    return DependencySet([deny] + [t for t in full if t.id not in ("S1", "S2")])


def sigma_lr(verbatim_grid: bool = False) -> DependencySet:
    return DependencySet(grid_rules(verbatim_grid))


# ---------------------------------------------------------------------------
# instances, graphs and paths


def instance_of_word(w: str, start: int = 1) -> Instance:
    """A line of ``len(w) + 1`` distinct nulls spelling ``w``."""
    if not w:
        raise ValueError("the word must be nonempty")
    _check_word(w)
    nodes = [Null(start + i) for i in range(len(w) + 1)]
    return Instance(Atom(E, (nodes[i], _c(a), nodes[i + 1])) for i, a in enumerate(w))


def graph_of(I) -> set:
    """Edges ``(x, y)`` from E, Estar, L and R atoms."""
    edges = set()
    for a in I:
        if a.name == "E" and a.relation.arity == 3:
            edges.add((a.args[0], a.args[2]))
        elif a.name in ("Estar", "L", "R") and a.relation.arity == 2:
            edges.add(a.args)
        elif a.name != "D":
            warnings.warn(f"ignoring atom {a} outside the rewriting schema", stacklevel=2)
    return edges


def has_cycle(I) -> bool:
    g = nx.DiGraph()
    g.add_edges_from(graph_of(I))
    return not nx.is_directed_acyclic_graph(g)


def herbrand_base(I) -> Instance:
    """All atoms over the schema built from the constants of ``I`` plus 0 and 1."""
    pool = {t for a in I for t in a.args if type(t) is Constant} | {_c(a) for a in ALPHABET}
    pool = sorted(pool, key=lambda c: c.name)
    atoms = [Atom(E, t) for t in itertools.product(pool, repeat=3)]
    for rel in (ESTAR, L, R):
        atoms += [Atom(rel, t) for t in itertools.product(pool, repeat=2)]
    atoms += [Atom(D, (c,)) for c in pool]
    return Instance(atoms)


@dataclass(frozen=True)
class Path:
    atoms: tuple
    word: str

    @property
    def nodes(self):
        if not self.atoms:
            return ()
        return (self.atoms[0].args[0],) + tuple(a.args[2] for a in self.atoms)


def _labelled_edges(I):
    out = {}
    for a in I:
        if a.name == "E" and a.relation.arity == 3:
            label = a.args[1]
            if type(label) is Constant and label.name in ALPHABET:
                out.setdefault(a.args[0], []).append(a)
    return out


def paths(I) -> list:
    """All max-paths: chains of E atoms labelled 0/1 that cannot be extended."""
    if has_cycle(I):
        raise ValueError("max-paths are only defined for acyclic instances")
    succ = _labelled_edges(I)
    has_in = {a.args[2] for lst in succ.values() for a in lst}
    starts = sorted((n for n in succ if n not in has_in), key=str)
    out = []

    def walk(node, chain):
        nxt = succ.get(node)
        if not nxt:
            out.append(Path(tuple(chain), "".join(a.args[1].name for a in chain)))
            return
        for a in sorted(nxt, key=str):
            walk(a.args[2], chain + [a])

    for s in starts:
        walk(s, [])
    return out


def i_star(I, max_steps: int = 10000, verbatim_grid: bool = False) -> Instance:
    """Chase ``I`` with the grid rules, then lay out each max-path as its own fresh line."""
    if has_cycle(I):
        raise ValueError("i_star needs an acyclic instance")
    out = chase(I, sigma_lr(verbatim_grid), ChaseConfig("core", max_steps=max_steps))
    if out.status is not Status.TERMINATED:
        raise RuntimeError(f"grid chase did not finish within {out.budget}")
    atoms = []
    nxt = 1
    for p in paths(out.final):
        if not p.word:
            continue
        line = instance_of_word(p.word, start=nxt)
        nxt += len(p.word) + 1
        atoms.extend(line)
    return Instance(atoms)


# ---------------------------------------------------------------------------
# rewrite trees and path trees


@dataclass
class TreeNode:
    word: str
    children: list = field(default_factory=list)
    rule: tuple | None = None
    position: int | None = None
    truncated: bool = False

    def to_json(self):
        node = {"word": self.word, "children": [c.to_json() for c in self.children]}
        if self.truncated:
            node["truncated"] = True
        return node

    def size(self):
        return 1 + sum(c.size() for c in self.children)

    def branches(self):
        if not self.children:
            return [[self.word]]
        return [[self.word] + b for c in self.children for b in c.branches()]


def rewrite_tree(w: str, theta, depth: int) -> TreeNode:
    _check_word(w)
    root = TreeNode(w)
    todo = [(root, 0)]
    while todo:
        node, d = todo.pop()
        succ = derive_step(node.word, theta)
        if d >= depth:
            node.truncated = bool(succ)
            continue
        for v, rule, pos in succ:
            child = TreeNode(v, rule=rule, position=pos)
            node.children.append(child)
            todo.append((child, d + 1))
    return root


@dataclass
class PathNode:
    """A node of the path tree; ``atoms`` is the path as it stands at the node's level."""

    atoms: tuple
    kind: str
    level: int
    rule: str | None = None
    children: list = field(default_factory=list)
    current: tuple = ()
    final_word: str | None = None
    complete: bool = False

    @property
    def word(self):
        return _chain_word(self.atoms)

    def to_json(self):
        return {
            "word": self.word,
            "kind": self.kind,
            "level": self.level,
            "rule": self.rule,
            "row": self.final_word,
            "complete": self.complete,
            "children": [c.to_json() for c in self.children],
        }

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def _chain(atoms):
    """Order E atoms into a chain; None if they do not form one."""
    atoms = list(atoms)
    if not atoms:
        return ()
    by_src = {a.args[0]: a for a in atoms}
    targets = {a.args[2] for a in atoms}
    starts = [a for a in atoms if a.args[0] not in targets]
    if len(starts) != 1 or len(by_src) != len(atoms):
        return None
    out, cur = [], starts[0]
    while cur is not None:
        out.append(cur)
        cur = by_src.get(cur.args[2])
    return tuple(out) if len(out) == len(atoms) else None


def _chain_word(atoms):
    return "".join(a.args[1].name for a in atoms)


@dataclass
class TreeReport:
    rewrite_tree: TreeNode
    path_tree: PathNode
    correspondence: list
    steps: int
    truncated: bool
    status: str

    def to_json(self):
        return {
            "rewrite_tree": self.rewrite_tree.to_json(),
            "path_tree": self.path_tree.to_json(),
            "correspondence": self.correspondence,
            "steps": self.steps,
            "truncated": self.truncated,
            "status": self.status,
        }


def _map_atoms(r, atoms):
    return tuple(Atom(a.relation, tuple(r.get(t, t) for t in a.args)) for a in atoms)


def build_trees(w: str, theta, depth: int, verbatim_grid: bool = False) -> TreeReport:
    """Rewrite tree of ``w`` and the path tree of the core chase of its line instance.

    The core chase runs for at most ``depth`` steps. In a step, a leaf gets one child
    for every active rewriting trigger whose body lies on its path (labelled with the
    new factor), and one child per combination of left and right grid triggers that
    extend the path at its ends. A leaf without children carries over to the next
    level. ``correspondence`` pairs the finished rows of each rewriting edge and says
    whether the child row is a one-step rewrite of the parent row.
    """
    if not isinstance(theta, RewritingSystem):
        theta = RewritingSystem(tuple(theta))
    sigma = sigma_theta(theta, verbatim_grid)
    t_w = rewrite_tree(w, theta, depth)
    I = instance_of_word(w)
    root = PathNode(tuple(sorted(I, key=lambda a: a.args[0].index)), "root", 0)
    root.current = root.atoms
    leaves = [root]
    counter = NullCounter(I.max_null())
    status = Status.TERMINATED.value
    steps = 0
    truncated = False
    rho_ids = {t.id for t in sigma if t.id.startswith("rho")}
    while True:
        if steps >= depth:
            truncated = bool(active_triggers(sigma, I))
            break
        trace = []
        try:
            core_inst, changed, r = _core_step(I, sigma, counter, trace, steps + 1)
        except DenialFailure:
            status = Status.DENIAL_FAILED.value
            break
        if not changed:
            break
        steps += 1
        # children from the triggers fired in this step
        new_leaves = []
        for leaf in leaves:
            path_atoms = set(leaf.current)
            start = leaf.current[0].args[0] if leaf.current else None
            end = leaf.current[-1].args[2] if leaf.current else None
            kids = []
            lefts, rights = [], []
            for entry in trace:
                added_e = [a for a in entry.atoms_added if a.name == "E"]
                if entry.tgd_id in rho_ids:
                    tgd = sigma[entry.tgd_id]
                    body = {Atom(a.relation, tuple(entry.bindings.get(t, t) for t in a.args)) for a in tgd.body}
                    if body <= path_atoms and added_e:
                        chain = _chain(added_e)
                        if chain:
                            kids.append(PathNode(chain, "rho", steps, entry.tgd_id))
                elif entry.tgd_id in GRID_IDS and added_e:
                    a = added_e[0]
                    if entry.tgd_id.startswith("L") and a.args[2] == start:
                        lefts.append((entry.tgd_id, a))
                    elif entry.tgd_id.startswith("R") and a.args[0] == end:
                        rights.append((entry.tgd_id, a))
            if lefts or rights:
                for lft in lefts or [None]:
                    for rgt in rights or [None]:
                        ext = ([lft[1]] if lft else []) + list(leaf.current) + ([rgt[1]] if rgt else [])
                        rule = "+".join(x[0] for x in (lft, rgt) if x)
                        kids.append(PathNode(tuple(ext), "grid", steps, rule))
            for k in kids:
                k.current = k.atoms
            leaf.children.extend(kids)
            new_leaves.extend(kids if kids else [leaf])
        # follow the core retraction
        for node in new_leaves:
            node.current = _map_atoms(r, node.current)
        leaves = new_leaves
        I = core_inst
        if len(I) > 100000:
            status = Status.BUDGET_EXCEEDED.value
            break

    correspondence = _rows(root, I, sigma, theta)
    return TreeReport(t_w, root, correspondence, steps, truncated, status)


def _rows(root, I, sigma, theta):
    """Attach each node's final row and compare rows across rewriting edges."""
    pending = {a for t in active_triggers(sigma, I) if t.tgd.id in GRID_IDS for a in [t]}
    touched = set()
    for t in pending:
        touched.update(t.mapping.values())
    try:
        rows = paths(I)
    except ValueError:
        rows = []
    row_of = {}
    for p in rows:
        for a in p.atoms:
            row_of.setdefault(a, p)
    for node in root.walk():
        hits = {row_of[a] for a in node.current if a in row_of}
        if len(hits) == 1:
            p = hits.pop()
            node.final_word = p.word
            node.complete = not (set(p.nodes) & touched)
    out = []
    for node in root.walk():
        for c in node.children:
            if c.kind != "rho":
                continue
            if node.final_word is None or c.final_word is None:
                continue
            ok = c.final_word in {v for v, _, _ in derive_step(node.final_word, theta)}
            out.append(
                {
                    "parent": node.final_word,
                    "child": c.final_word,
                    "complete": node.complete and c.complete,
                    "derivable": ok,
                }
            )
    return out
