"""Homomorphism search, triggers, cores and the QBF gadget."""
from __future__ import annotations

import heapq
import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

from .model import (
    Atom,
    Constant,
    Instance,
    Null,
    RelationSymbol,
    Tgd,
    Variable,
    atom_key,
    is_variable,
)


class AtomIndex:
    """Mutable atom store indexed by relation and by (relation, position, term).

    Iteration order of candidates is insertion order, which keeps every search
    deterministic.
    """

    def __init__(self, atoms: Iterable[Atom] = ()):
        self.atoms = set()
        self.order = []
        self.by_rel = {}
        self.by_pos = {}
        for a in atoms:
            self.add(a)

    def add(self, a: Atom) -> bool:
        if a in self.atoms:
            return False
        self.atoms.add(a)
        self.order.append(a)
        self.by_rel.setdefault(a.relation, []).append(a)
        for i, t in enumerate(a.args):
            self.by_pos.setdefault((a.relation, i, t), []).append(a)
        return True

    def __contains__(self, a):
        return a in self.atoms

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.order)

    def candidates(self, relation, bound):
        """Atoms of ``relation`` agreeing with every ``(position, term)`` in ``bound``."""
        best = self.by_rel.get(relation, ())
        for i, t in bound:
            lst = self.by_pos.get((relation, i, t), ())
            if len(lst) < len(best):
                best = lst
                if not best:
                    break
        return best


def as_index(target) -> AtomIndex:
    if isinstance(target, AtomIndex):
        return target
    if isinstance(target, Instance):
        return AtomIndex(target.sorted_atoms())
    return AtomIndex(sorted(set(target), key=atom_key))


def _match(s, c, h, flexible, added, domains=None):
    """Extend ``h`` so that it maps source atom ``s`` onto ``c``; record new keys in ``added``."""
    for st, ct in zip(s.args, c.args):
        if flexible(st):
            cur = h.get(st)
            if cur is None:
                if domains is not None and ct not in domains.get(st, (ct,)):
                    return False
                h[st] = ct
                added.append(st)
            elif cur != ct:
                return False
        elif st != ct:
            return False
    return True


class _SearchOrder:
    """Greedy order over source atoms, extended lazily as the search deepens.

    Fully bound atoms come first, then the atom with most bound positions.
    """

    def __init__(self, atoms, h, flexible):
        self.atoms = atoms
        self.order = []
        self.bound = set(h)
        self.free = []
        self.by_term = {}
        for i, a in enumerate(atoms):
            n = 0
            for t in a.args:
                if flexible(t):
                    self.by_term.setdefault(t, []).append(i)
                    if t not in self.bound:
                        n += 1
            self.free.append(n)
        self.heap = [(self._prio(i), i) for i in range(len(atoms))]
        heapq.heapify(self.heap)
        self.done = set()

    def _prio(self, i):
        free = self.free[i]
        return (free != 0, free - len(self.atoms[i].args), i)

    def __len__(self):
        return len(self.atoms)

    def __getitem__(self, k):
        while len(self.order) <= k:
            while True:
                prio, i = heapq.heappop(self.heap)
                if i not in self.done and prio == self._prio(i):
                    break
            self.done.add(i)
            self.order.append(self.atoms[i])
            for t in self.atoms[i].args:
                if t in self.by_term and t not in self.bound:
                    self.bound.add(t)
                    for j in self.by_term[t]:
                        if j not in self.done:
                            self.free[j] -= 1
                            heapq.heappush(self.heap, (self._prio(j), j))
        return self.order[k]


def find_homomorphisms(
    source: Iterable[Atom],
    target,
    seed: dict | None = None,
    flexible=is_variable,
    exclude: Atom | None = None,
    prefer_identity: bool = False,
    domains: dict | None = None,
) -> Iterator[dict]:
    """Yield every extension ``h`` of ``seed`` with ``h(source)`` contained in ``target``.

    Terms for which ``flexible`` is false (constants always, nulls by default) are
    mapped to themselves. ``exclude`` removes one atom from the target.
    ``domains`` optionally restricts the image of individual flexible terms. Each
    homomorphism is produced once, in a deterministic order.
    """
    atoms = list(dict.fromkeys(source))
    index = as_index(target)
    h = dict(seed or {})
    if not atoms:
        yield dict(h)
        return

    def cands(s):
        bound = []
        for i, t in enumerate(s.args):
            if not flexible(t):
                bound.append((i, t))
            elif t in h:
                bound.append((i, h[t]))
        lst = index.candidates(s.relation, bound)
        if prefer_identity and s in index.atoms and s != exclude:
            lst = [s] + [c for c in lst if c != s]
        return lst

    order = _SearchOrder(atoms, h, flexible)
    # frame: [source atom, candidate list, next position, bindings added]
    stack = [[order[0], cands(order[0]), 0, []]]
    while stack:
        frame = stack[-1]
        for v in frame[3]:
            del h[v]
        frame[3] = []
        s, lst = frame[0], frame[1]
        pos = frame[2]
        found = False
        while pos < len(lst):
            c = lst[pos]
            pos += 1
            if c is exclude or c == exclude:
                continue
            added = []
            if _match(s, c, h, flexible, added, domains):
                frame[3] = added
                found = True
                break
            for v in added:
                del h[v]
        frame[2] = pos
        if not found:
            stack.pop()
            continue
        if len(stack) == len(order):
            yield dict(h)
            continue
        nxt = order[len(stack)]
        stack.append([nxt, cands(nxt), 0, []])


def apply(h: dict, atoms: Iterable[Atom]) -> list:
    """Image of ``atoms`` under ``h``; unmapped terms are left unchanged."""
    return [Atom(a.relation, tuple(h.get(t, t) for t in a.args)) for a in atoms]


def is_homomorphism(h: dict, source, target) -> bool:
    target = target.atoms if isinstance(target, (Instance, AtomIndex)) else set(target)
    for a in source:
        for t in a.args:
            if type(t) is Constant and h.get(t, t) != t:
                return False
    return all(b in target for b in apply(h, source))


# ---------------------------------------------------------------------------
# triggers


@dataclass(frozen=True)
class Trigger:
    """A tgd together with a homomorphism on its universal variables."""

    tgd: Tgd
    hom: tuple

    @property
    def mapping(self) -> dict:
        return dict(self.hom)

    def __str__(self):
        binds = ", ".join(f"{v}/{t}" for v, t in self.hom)
        return f"({self.tgd.id}, {{{binds}}})"


def make_trigger(tgd: Tgd, h: dict) -> Trigger:
    return Trigger(tgd, tuple((v, h[v]) for v in tgd.universal_vars))


def triggers(tgd: Tgd, I) -> Iterator[Trigger]:
    for h in find_homomorphisms(tgd.body, I):
        yield make_trigger(tgd, h)


def is_active(trigger: Trigger, I) -> bool:
    """A trigger is active if no extension of its homomorphism maps the head into ``I``."""
    if trigger.tgd.is_denial:
        return True
    if trigger.tgd.is_full:
        atoms = I.atoms if isinstance(I, (Instance, AtomIndex)) else set(I)
        return not all(a in atoms for a in apply(trigger.mapping, trigger.tgd.head))
    for _ in find_homomorphisms(trigger.tgd.head, I, seed=trigger.mapping):
        return False
    return True


def exists_trigger(tgd: Tgd, I) -> Trigger | None:
    for t in triggers(tgd, I):
        return t
    return None


def exists_active_trigger(tgd: Tgd, I) -> Trigger | None:
    index = as_index(I)
    for t in triggers(tgd, index):
        if is_active(t, index):
            return t
    return None


def active_triggers(sigma, I) -> list:
    index = as_index(I)
    return [t for tgd in sigma for t in triggers(tgd, index) if is_active(t, index)]


def is_satisfied(I, sigma) -> bool:
    """True iff no tgd of ``sigma`` (denials included) has an active trigger on ``I``."""
    index = as_index(I)
    return all(exists_active_trigger(tgd, index) is None for tgd in sigma)


# ---------------------------------------------------------------------------
# cores


def _block_of(a, by_null):
    """Atoms connected to ``a`` through shared nulls (only nulls keyed in ``by_null`` count)."""
    seen_nulls, block, todo = set(), {a}, [a]
    while todo:
        b = todo.pop()
        for t in b.args:
            if t in by_null and t not in seen_nulls:
                seen_nulls.add(t)
                for c in by_null[t]:
                    if c not in block:
                        block.add(c)
                        todo.append(c)
    return block, seen_nulls


def _profile(t, atoms):
    """Occurrences of ``t`` as (relation, position, constants pattern) triples."""
    out = set()
    for a in atoms:
        # constants stay visible; other occurrences of a null t become "="
        pattern = tuple(
            u if type(u) is Constant else ("=" if u == t else None) for u in a.args
        )
        for i, u in enumerate(a.args):
            if u == t:
                out.add((a.relation, i, pattern))
    return frozenset(out)


def _covers(q, p, m) -> bool:
    """Every occurrence pattern in ``p`` can be mapped onto some pattern in ``q``.

    ``q`` is the profile of the target term ``m``.
    """
    same = m if type(m) is Constant else "="
    for rel, i, pat in p:
        for rel2, i2, pat2 in q:
            if rel2 != rel or i2 != i:
                continue
            # a free slot (None) may land anywhere; constants must agree and
            # other occurrences of the null must land on m itself
            if all(x is None or (y == same if x == "=" else x == y) for x, y in zip(pat, pat2)):
                break
        else:
            return False
    return True


def endomorphism_domains(I) -> dict:
    """For each null ``n`` of ``I``, a set containing ``h(n)`` for every endomorphism ``h``.

    The sets are computed by arc consistency, starting from occurrence profiles.
    A null whose set is ``{n}`` is fixed by every endomorphism.
    """
    index = as_index(I)
    occurs = {}
    for a in index:
        for t in set(a.args):
            occurs.setdefault(t, []).append(a)
    nulls = [t for t in occurs if type(t) is Null]
    profiles = {t: _profile(t, lst) for t, lst in occurs.items()}
    by_profile = {}
    for t, p in profiles.items():
        by_profile.setdefault(p, []).append(t)
    domains = {}
    wanted = {}
    for n in nulls:
        p = profiles[n]
        if p not in wanted:
            dom = set()
            for q, ts in by_profile.items():
                nulls_q = [t for t in ts if type(t) is Null]
                if nulls_q and _covers(q, p, nulls_q[0]):
                    dom.update(nulls_q)
                dom.update(t for t in ts if type(t) is Constant and _covers(q, p, t))
            wanted[p] = dom
        domains[n] = set(wanted[p])

    def supports(s):
        # candidate atoms for s given the current domains
        bound = [(i, t) for i, t in enumerate(s.args) if type(t) is not Null]
        best = index.candidates(s.relation, bound)
        for i, t in enumerate(s.args):
            if type(t) is Null:
                dom = domains[t]
                if len(dom) == 1:
                    (v,) = dom
                    lst = index.by_pos.get((s.relation, i, v), ())
                    if len(lst) < len(best):
                        best = lst
        # a small domain can be cheaper to expand than the relation
        for i, t in enumerate(s.args):
            if type(t) is Null and len(domains[t]) < len(best):
                lst = []
                for v in domains[t]:
                    lst.extend(index.by_pos.get((s.relation, i, v), ()))
                if len(lst) < len(best):
                    best = lst
        sup = {t: set() for t in s.args if type(t) is Null}
        for c in best:
            seen = {}
            for st, ct in zip(s.args, c.args):
                if type(st) is Null:
                    if ct not in domains[st] or seen.setdefault(st, ct) != ct:
                        break
                elif st != ct:
                    break
            else:
                for st, ct in seen.items():
                    sup[st].add(ct)
        return sup

    def settled(s):
        # every null already pinned: one lookup decides support
        image = []
        for t in s.args:
            if type(t) is Null:
                if len(domains[t]) != 1:
                    return False
                (t,) = domains[t]
            image.append(t)
        if Atom(s.relation, tuple(image)) not in index.atoms:
            for t in s.args:
                if type(t) is Null:
                    domains[t].clear()
        return True

    # selective relations first, so the large ones are scanned with small domains
    rank = {r: len(lst) for r, lst in index.by_rel.items()}
    # the counter breaks ties, so atoms themselves are never compared
    seq = itertools.count()
    todo = [(rank[a.relation], next(seq), a) for a in index if any(type(t) is Null for t in a.args)]
    heapq.heapify(todo)
    queued = {a for _, _, a in todo}
    while todo:
        _, _, s = heapq.heappop(todo)
        queued.discard(s)
        if settled(s):
            continue
        for t, sup in supports(s).items():
            if len(sup) < len(domains[t]):
                domains[t] &= sup
                for c in occurs[t]:
                    if c is not s and c not in queued:
                        queued.add(c)
                        heapq.heappush(todo, (rank[c.relation], next(seq), c))
    return domains


def core_with_retraction(I) -> tuple:
    """Return ``(C, r)`` where ``C`` is the core of ``I`` and ``r`` a retraction onto it.

    ``C`` is a subinstance of ``I``. It is found by repeatedly looking for an
    endomorphism that drops some atom, one null-block at a time. Nulls that arc
    consistency shows to be fixed by every endomorphism act like constants, which
    keeps the blocks small. ``r`` maps the nulls of ``I`` and is the identity on ``C``.
    """
    current = set(I.atoms if isinstance(I, Instance) else I)
    # Domains stay valid for every retract of I: an endomorphism g of a retract
    # gives the endomorphism g . r of I, and r fixes the retract's nulls.
    domains = endomorphism_domains(current)
    moving = {n for n, dom in domains.items() if dom != {n}}
    total = {}
    # the instance only shrinks, so a block that failed once keeps failing
    failed_blocks = set()
    progress = True
    while progress:
        progress = False
        ordered = sorted(current, key=atom_key)
        index = AtomIndex(ordered)
        by_null = {}
        for a in ordered:
            for t in a.args:
                if t in moving:
                    by_null.setdefault(t, []).append(a)
        for a in ordered:
            if not any(t in moving for t in a.args):
                continue
            block, nulls = _block_of(a, by_null)
            key = (a, frozenset(block))
            if key in failed_blocks:
                continue
            source = [a] + sorted(block - {a}, key=atom_key)
            g = next(
                find_homomorphisms(
                    source,
                    index,
                    flexible=nulls.__contains__,
                    exclude=a,
                    prefer_identity=True,
                    domains=domains,
                ),
                None,
            )
            if g is None:
                failed_blocks.add(key)
                continue
            image = apply(g, block)
            current = (current - block) | set(image)
            for n, m in list(total.items()):
                total[n] = g.get(m, m)
            for n in nulls:
                total.setdefault(n, g.get(n, n))
            progress = True
            break

    core_inst = Instance(current)
    # The accumulated map sends I onto the core but may permute the core's nulls;
    # compose with the inverse of that automorphism to get a retraction.
    for n in core_inst.nulls():
        total.setdefault(n, n)
    auto = {n: total[n] for n in core_inst.nulls()}
    inverse = {v: k for k, v in auto.items()}
    retraction = {n: inverse.get(m, m) for n, m in total.items()}
    return core_inst, retraction


def core(I) -> Instance:
    """The core of ``I`` as a subinstance of ``I``."""
    return core_with_retraction(I)[0]


def is_core(I) -> bool:
    return len(core(I)) == len(I)


# ---------------------------------------------------------------------------
# QBF gadget


@dataclass(frozen=True)
class Qbf:
    """A formula ``exists x. not exists y. phi`` with ``phi`` in 3CNF.

    ``clauses`` holds triples of literals ``(name, negated)``.
    """

    universal: tuple
    existential: tuple
    clauses: tuple

    def __post_init__(self):
        names = set(self.universal) | set(self.existential)
        if len(names) != len(self.universal) + len(self.existential):
            raise ValueError("a variable is quantified twice")
        if not self.clauses:
            raise ValueError("the formula needs at least one clause")
        for c in self.clauses:
            if len(c) != 3:
                raise ValueError(f"clause {c} does not have exactly 3 literals")
            for name, _ in c:
                if name not in names:
                    raise ValueError(f"variable {name} is not quantified")


_LIT = re.compile(r"([~!-]?)([A-Za-z][A-Za-z0-9_]*)\Z")


def parse_qbf(text: str) -> Qbf:
    """Read ``forall``/``exists`` lines followed by one clause of three literals per line.

    A literal is a variable name, negated by a leading ``-``, ``~`` or ``!``.
    """
    universal, existential, clauses = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.replace(",", " ").split()
        if words[0] in ("forall", "exists"):
            (universal if words[0] == "forall" else existential).extend(words[1:])
            continue
        lits = []
        for w in words:
            m = _LIT.match(w)
            if not m:
                raise ValueError(f"line {lineno}: bad literal {w!r}")
            lits.append((m.group(2), bool(m.group(1))))
        if len(lits) != 3:
            raise ValueError(f"line {lineno}: clause has {len(lits)} literals, expected 3")
        clauses.append(tuple(lits))
    return Qbf(tuple(universal), tuple(existential), tuple(clauses))


def qbf_instance() -> Instance:
    F = RelationSymbol("F", 3)
    N = RelationSymbol("N", 2)
    zero, one = Constant("0"), Constant("1")
    rows = [(a, b, c) for a in (zero, one) for b in (zero, one) for c in (zero, one)]
    atoms = [Atom(F, r) for r in rows if r != (zero, zero, zero)]
    atoms += [Atom(N, (zero, one)), Atom(N, (one, zero))]
    return Instance(atoms)


def gen_qbf_gadget(phi: Qbf, tgd_id: str = "qbf") -> tuple:
    """Build ``(I_phi, xi_phi)``: an active trigger exists iff ``exists x. not exists y. phi``."""
    F = RelationSymbol("F", 3)
    N = RelationSymbol("N", 2)
    taken = set(phi.universal) | set(phi.existential)

    def comp(name):
        c = name + "_neg"
        while c in taken:
            c += "_"
        return c

    prime = {v: comp(v) for v in taken}
    body = [Atom(N, (Variable(x), Variable(prime[x]))) for x in phi.universal]
    if not body:
        w = "w"
        while w in taken:
            w += "_"
        wp = comp(w)
        body = [Atom(N, (Variable(w), Variable(wp)))]

    def lit(name, neg):
        return Variable(prime[name] if neg else name)

    head = [Atom(F, tuple(lit(n, neg) for n, neg in c)) for c in phi.clauses]
    head += [Atom(N, (Variable(y), Variable(prime[y]))) for y in phi.existential]
    head = list(dict.fromkeys(head))
    return qbf_instance(), Tgd(tgd_id, tuple(body), tuple(head))
