"""The standard, oblivious, semi-oblivious and core chase, branch exploration and enrichment."""
from __future__ import annotations

import random
import sys
from dataclasses import dataclass, field
from enum import Enum

from .homomorphism import (
    AtomIndex,
    Trigger,
    _match,
    active_triggers,
    apply,
    core_with_retraction,
    find_homomorphisms,
    is_active,
    make_trigger,
)
from .model import (
    Atom,
    Constant,
    DependencySet,
    Instance,
    Null,
    RelationSymbol,
    Tgd,
    atom_key,
    is_variable,
    term_key,
)

VARIANTS = ("standard", "oblivious", "semi_oblivious", "core")


class Status(str, Enum):
    TERMINATED = "Terminated"
    BUDGET_EXCEEDED = "BudgetExceeded"
    DENIAL_FAILED = "DenialFailed"


class Verdict(str, Enum):
    YES = "Yes"
    NO = "No"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Deterministic:
    pass


@dataclass(frozen=True)
class Seeded:
    seed: int


@dataclass(frozen=True)
class BranchIndex:
    path: tuple


@dataclass(frozen=True)
class ChaseConfig:
    """Settings for one chase run.

    ``denial_policy`` only matters for the oblivious and semi-oblivious variants:
    ``"fail"`` stops with DenialFailed as soon as a denial body matches,
    ``"ignore"`` leaves denials out of those runs. ``window`` and ``max_skip``
    bound the choices a branch-index strategy may make (see explore_branches).
    """

    variant: str = "standard"
    max_steps: int = 10000
    max_atoms: int = 100000
    strategy: object = Deterministic()
    denial_policy: str = "fail"
    window: int = 3
    max_skip: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown chase variant {self.variant!r}")
        if self.max_steps < 0 or self.max_atoms < 0:
            raise ValueError("budgets must be non-negative")
        if self.denial_policy not in ("fail", "ignore"):
            raise ValueError(f"unknown denial policy {self.denial_policy!r}")
        if self.window < 1 or self.max_skip < 0:
            raise ValueError("window must be positive and max_skip non-negative")


@dataclass
class TraceEntry:
    step: int
    tgd_id: str
    bindings: dict
    atoms_added: list

    def to_json(self):
        return {
            "step": self.step,
            "tgd": self.tgd_id,
            "bindings": {str(v): str(t) for v, t in self.bindings.items()},
            "atoms_added": [str(a) for a in self.atoms_added],
        }


@dataclass
class ChaseOutcome:
    status: Status
    final: Instance
    steps: int
    fresh_nulls_used: int
    trace: list = field(default_factory=list)
    budget: str | None = None
    history: list = field(default_factory=list)

    @property
    def terminated(self):
        return self.status is Status.TERMINATED


class DenialFailure(Exception):
    """A denial constraint matched the instance."""

    def __init__(self, trigger):
        self.trigger = trigger
        super().__init__(f"denial {trigger.tgd.id} matched with {trigger}")


class NullCounter:
    """Hands out fresh nulls in ascending order."""

    def __init__(self, start: int = 0):
        self.last = start
        self.used = 0

    def fresh(self) -> Null:
        self.last += 1
        self.used += 1
        return Null(self.last)


def head_image(trigger: Trigger, counter: NullCounter) -> list:
    """Head atoms of ``trigger`` with fresh nulls for the existential variables."""
    tgd = trigger.tgd
    if tgd.is_denial:
        raise DenialFailure(trigger)
    h = trigger.mapping
    for v in sorted(tgd.existential_vars, key=term_key):
        h[v] = counter.fresh()
    return apply(h, tgd.head)


def fire(I: Instance, trigger: Trigger, counter: NullCounter) -> Instance:
    """``I`` together with the head image of ``trigger`` (fresh nulls for existentials)."""
    return Instance(I.atoms | set(head_image(trigger, counter)))


def firing_key(trigger: Trigger, variant: str):
    tgd = trigger.tgd
    if variant == "oblivious":
        return (tgd.id, trigger.hom)
    if variant == "semi_oblivious":
        front = set(tgd.frontier)
        return (tgd.id, tuple((v, t) for v, t in trigger.hom if v in front))
    return trigger


class _Run:
    """State of one non-core chase sequence: the instance, the pending queue and counters."""

    def __init__(self, sigma, cfg, I=None):
        self.sigma = sigma
        self.cfg = cfg
        self.variant = cfg.variant
        if I is None:
            return
        self.store = AtomIndex(I.sorted_atoms() if isinstance(I, Instance) else I)
        self.counter = NullCounter(max((t.index for a in self.store for t in a.args if type(t) is Null), default=0))
        self.queue = []
        self.seen = set()
        self.steps = 0
        self.skips = 0
        self.trace = []
        self.failed = None
        self.rng = random.Random(cfg.strategy.seed) if isinstance(cfg.strategy, Seeded) else None
        batch = []
        for tgd in sigma:
            if self._skip_tgd(tgd):
                continue
            for h in find_homomorphisms(tgd.body, self.store):
                batch.append(make_trigger(tgd, h))
        self._enqueue(batch)

    def clone(self):
        other = _Run(self.sigma, self.cfg)
        other.store = AtomIndex(self.store.order)
        other.counter = NullCounter(self.counter.last)
        other.counter.used = self.counter.used
        other.queue = list(self.queue)
        other.seen = set(self.seen)
        other.steps = self.steps
        other.skips = self.skips
        other.trace = list(self.trace)
        other.failed = self.failed
        other.rng = None
        return other

    def _skip_tgd(self, tgd):
        return (
            tgd.is_denial
            and self.variant in ("oblivious", "semi_oblivious")
            and self.cfg.denial_policy == "ignore"
        )

    def _enqueue(self, batch):
        fresh = []
        for trig in batch:
            if trig.tgd.is_denial:
                # Instances only grow, so a matched denial stays matched and every
                # fair continuation must fire it; fail right away.
                if self.failed is None:
                    self.failed = trig
                continue
            key = firing_key(trig, self.variant)
            if key in self.seen:
                continue
            self.seen.add(key)
            fresh.append(trig)
        if self.rng is not None:
            self.rng.shuffle(fresh)
        self.queue.extend(fresh)

    def _discover(self, new_atoms):
        batch = []
        found = set()
        for tgd in self.sigma:
            if not tgd.body or self._skip_tgd(tgd):
                continue
            for i, b in enumerate(tgd.body):
                rest = tgd.body[:i] + tgd.body[i + 1 :]
                for a in new_atoms:
                    if a.relation != b.relation:
                        continue
                    seed = {}
                    if not _match(b, a, seed, is_variable, []):
                        continue
                    for h in find_homomorphisms(rest, self.store, seed=seed):
                        trig = make_trigger(tgd, h)
                        if trig not in found:
                            found.add(trig)
                            batch.append(trig)
        self._enqueue(batch)

    def options(self):
        """Queue positions this run may fire next, head first."""
        if self.variant == "standard":
            # inactive triggers never become active again, so drop them for good
            keep = []
            limit = len(self.queue) if self.cfg.window is None else self.cfg.window
            i = 0
            while i < len(self.queue) and len(keep) < limit:
                if is_active(self.queue[i], self.store):
                    keep.append(i)
                    i += 1
                else:
                    del self.queue[i]
                    if i == 0:
                        self.skips = 0
            opts = keep
        else:
            opts = list(range(min(self.cfg.window, len(self.queue))))
        if self.skips >= self.cfg.max_skip:
            opts = opts[:1]
        return opts

    def step(self, pos):
        trig = self.queue.pop(pos)
        self.skips = 0 if pos == 0 else self.skips + 1
        added = [a for a in head_image(trig, self.counter) if self.store.add(a)]
        self.steps += 1
        self.trace.append(TraceEntry(self.steps, trig.tgd.id, trig.mapping, added))
        if added:
            self._discover(added)
        return added

    def outcome(self, status, budget=None):
        sizes = [len(self.store) - sum(len(e.atoms_added) for e in self.trace)]
        for e in self.trace:
            sizes.append(sizes[-1] + len(e.atoms_added))
        return ChaseOutcome(
            status, Instance(self.store.order), self.steps, self.counter.used, self.trace, budget, sizes
        )

    def check(self):
        """Return a final outcome if the run has stopped, else None."""
        if self.failed is not None:
            return self.outcome(Status.DENIAL_FAILED)
        if len(self.store) > self.cfg.max_atoms:
            return self.outcome(Status.BUDGET_EXCEEDED, f"max_atoms={self.cfg.max_atoms}")
        return None


def _next_position(run, strategy):
    if isinstance(strategy, Deterministic) or isinstance(strategy, Seeded):
        if run.variant == "standard":
            while run.queue and not is_active(run.queue[0], run.store):
                run.queue.pop(0)
        return 0 if run.queue else None
    opts = run.options()
    if not opts:
        return None
    k = run.steps
    choice = strategy.path[k] if k < len(strategy.path) else 0
    if choice >= len(opts):
        raise ValueError(f"branch choice {choice} at step {k} exceeds the {len(opts)} options")
    return opts[choice]


def chase(I: Instance, sigma, cfg: ChaseConfig = ChaseConfig()) -> ChaseOutcome:
    """Run the chase variant selected by ``cfg`` on ``I``."""
    if any(type(t) not in (Constant, Null) for a in I for t in a.args):
        raise ValueError("the input instance may not contain variables")
    if cfg.variant == "core":
        return _core_chase(I, sigma, cfg)
    run = _Run(sigma, cfg, I)
    while True:
        done = run.check()
        if done is not None:
            return done
        pos = _next_position(run, cfg.strategy)
        if pos is None:
            return run.outcome(Status.TERMINATED)
        if run.steps >= cfg.max_steps:
            return run.outcome(Status.BUDGET_EXCEEDED, f"max_steps={cfg.max_steps}")
        run.step(pos)


def core_chase_step(I: Instance, sigma, counter: NullCounter | None = None) -> Instance:
    """Fire all active triggers on ``I`` in parallel, then take the core.

    Returns ``I`` itself when nothing is active. Raises :class:`DenialFailure` if a
    denial matches.
    """
    if counter is None:
        counter = NullCounter(I.max_null())
    return _core_step(I, sigma, counter, [])[0]


def _detached(b, rest):
    """Atoms of ``rest`` not linked to ``b`` through a chain of shared variables."""
    linked = {t for t in b.args if is_variable(t)}
    todo = list(rest)
    changed = True
    while changed:
        changed = False
        for a in list(todo):
            if any(t in linked for t in a.args):
                linked.update(t for t in a.args if is_variable(t))
                todo.remove(a)
                changed = True
    return todo


def _core_active(sigma, I, delta=None):
    """Active triggers on ``I``; with ``delta``, only those whose body touches ``delta``.

    After a core step every trigger living in the surviving old atoms is
    satisfied: it was satisfied in the union before the retraction, and the
    retraction fixes the surviving terms. So only new atoms need a look.
    """
    index = AtomIndex(I.sorted_atoms())
    if delta is None:
        return active_triggers(sigma, index)
    news = sorted(delta, key=atom_key)
    out, seen = [], set()
    for tgd in sigma:
        body = list(tgd.body)
        for j, b in enumerate(body):
            rest = body[:j] + body[j + 1 :]
            loose = _detached(b, rest)
            # atoms sharing no variable with b do not depend on the seed
            if loose and next(find_homomorphisms(loose, index), None) is None:
                continue
            for d in news:
                if d.relation != b.relation:
                    continue
                h, added = {}, []
                if not _match(b, d, h, is_variable, added):
                    continue
                for g in find_homomorphisms(rest, index, seed=h):
                    t = make_trigger(tgd, g)
                    if t not in seen:
                        seen.add(t)
                        if is_active(t, index):
                            out.append(t)
    return out


def _core_step(I, sigma, counter, trace, step=0, acts=None):
    if acts is None:
        acts = active_triggers(sigma, I)
    if not acts:
        return I, False, {}
    for t in acts:
        if t.tgd.is_denial:
            raise DenialFailure(t)
    union = set(I.atoms)
    for t in acts:
        added = [a for a in head_image(t, counter) if a not in union]
        union.update(added)
        trace.append(TraceEntry(step, t.tgd.id, t.mapping, added))
    reduced, retraction = core_with_retraction(Instance(union))
    return reduced, True, retraction


def _core_chase(I, sigma, cfg):
    counter = NullCounter(I.max_null())
    trace = []
    history = [len(I)]
    steps = 0
    current = I
    delta = None
    while True:
        acts = _core_active(sigma, current, delta)
        if not acts:
            break
        if steps >= cfg.max_steps:
            return ChaseOutcome(
                Status.BUDGET_EXCEEDED, current, steps, counter.used, trace, f"max_steps={cfg.max_steps}", history
            )
        try:
            nxt, _, _ = _core_step(current, sigma, counter, trace, steps + 1, acts)
        except DenialFailure:
            return ChaseOutcome(Status.DENIAL_FAILED, current, steps, counter.used, trace, None, history)
        steps += 1
        delta = nxt.atoms - current.atoms
        current = nxt
        history.append(len(current))
        if len(current) > cfg.max_atoms:
            return ChaseOutcome(
                Status.BUDGET_EXCEEDED, current, steps, counter.used, trace, f"max_atoms={cfg.max_atoms}", history
            )
    return ChaseOutcome(Status.TERMINATED, current, steps, counter.used, trace, None, history)


# ---------------------------------------------------------------------------
# branch exploration


@dataclass
class BranchReport:
    all_terminate: Verdict
    some_terminates: Verdict
    branch_outcomes: list
    states_explored: int
    budget: dict

    def to_json(self):
        return {
            "all_terminate": self.all_terminate.value,
            "some_terminates": self.some_terminates.value,
            "states_explored": self.states_explored,
            "budget": self.budget,
            "branches": self.branch_outcomes,
        }


def canonical_form(atoms, extra=()):
    """Rename nulls by first occurrence after sorting with nulls masked.

    Two states with equal canonical forms are isomorphic; the converse may fail,
    which only costs pruning, never correctness.
    """

    def masked(a):
        return (a.relation.name, tuple((1, 0, "") if type(t) is Null else term_key(t) for t in a.args))

    ordered = sorted(atoms, key=lambda a: (masked(a), atom_key(a)))
    names = {}
    for a in ordered:
        for t in a.args:
            if type(t) is Null and t not in names:
                names[t] = len(names) + 1

    def ren(t):
        return ("n", names[t]) if type(t) is Null else ("c", str(t)) if type(t) is Constant else ("v", str(t))

    body = tuple(sorted((a.relation.name, tuple(ren(t) for t in a.args)) for a in ordered))
    rest = tuple(
        (tid, tuple((str(v), ren(t) if type(t) is Null and t in names else str(t)) for v, t in hom))
        for tid, hom in extra
    )
    return body, rest


def _state_key(run):
    pending = tuple((t.tgd.id, t.hom) for t in run.queue)
    return canonical_form(run.store.order, pending), run.skips


def explore_branches(
    I: Instance,
    sigma,
    variant: str = "standard",
    max_steps: int = 1000,
    max_atoms: int = 100000,
    max_states: int = 20000,
    window: int = 3,
    max_skip: int = 2,
    denial_policy: str = "fail",
    max_recorded: int = 200,
) -> BranchReport:
    """Search the chase sequences reachable by choosing among pending triggers.

    At every step a branch may fire any of the first ``window`` pending triggers,
    but the oldest one may be passed over at most ``max_skip`` times in a row.
    This keeps every explored branch fair. A branch counts as terminating when it
    ends Terminated or DenialFailed.
    """
    budget = {"max_steps": max_steps, "max_atoms": max_atoms, "max_states": max_states}
    if variant == "core":
        out = chase(I, sigma, ChaseConfig("core", max_steps, max_atoms))
        v = Verdict.UNKNOWN if out.status is Status.BUDGET_EXCEEDED else Verdict.YES
        leaf = {"path": [], "status": out.status.value, "steps": out.steps, "atoms": len(out.final)}
        return BranchReport(v, v, [leaf], 1, budget)

    cfg = ChaseConfig(variant, max_steps, max_atoms, Deterministic(), denial_policy, window, max_skip)
    root = _Run(sigma, cfg, I)
    memo = {}
    leaves = []
    counts = {"states": 0, "capped": False}

    def record(path, status, run, budget_hit=None):
        if len(leaves) < max_recorded:
            leaf = {"path": list(path), "status": status.value, "steps": run.steps, "atoms": len(run.store)}
            if budget_hit:
                leaf["budget"] = budget_hit
            leaves.append(leaf)

    def visit(run, path):
        # returns (has_finite_branch, has_unknown_branch)
        done = run.check()
        if done is not None:
            if done.status is Status.DENIAL_FAILED:
                record(path, done.status, run)
                return True, False
            record(path, done.status, run, done.budget)
            return False, True
        opts = run.options()
        if not opts:
            record(path, Status.TERMINATED, run)
            return True, False
        if run.steps >= max_steps:
            record(path, Status.BUDGET_EXCEEDED, run, f"max_steps={max_steps}")
            return False, True
        key = _state_key(run)
        remaining = max_steps - run.steps
        hit = memo.get(key)
        if hit is not None and (not hit[2] or hit[0] >= remaining):
            return hit[1], hit[2]
        if counts["states"] >= max_states:
            counts["capped"] = True
            return False, True
        counts["states"] += 1
        finite = unknown = False
        for k, pos in enumerate(opts):
            child = run.clone() if k < len(opts) - 1 else run
            child.step(pos)
            f, u = visit(child, path + [k])
            finite |= f
            unknown |= u
            if finite and unknown:
                break
        memo[key] = (remaining, finite, unknown)
        return finite, unknown

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 4 * max_steps + 2000))
    try:
        finite, unknown = visit(root, [])
    finally:
        sys.setrecursionlimit(old)
    some = Verdict.YES if finite else Verdict.UNKNOWN
    every = Verdict.UNKNOWN if unknown else Verdict.YES
    if counts["capped"]:
        budget["states_capped"] = True
    return BranchReport(every, some, leaves, counts["states"], budget)


# ---------------------------------------------------------------------------
# enrichment

UNIT = Constant("unit")


def _fresh_name(base, taken):
    name = base
    while name in taken:
        name += "_"
    taken.add(name)
    return name


def _augment(sigma, pick):
    taken = set(sigma.schema)
    out = []
    for pos, tgd in enumerate(sigma.tgds, 1):
        if tgd.is_denial:
            out.append(tgd)
            continue
        args = tuple(pick(tgd)) or (UNIT,)
        name = _fresh_name(f"H{pos}", taken)
        extra = Atom(RelationSymbol(name, len(args)), args)
        out.append(Tgd(tgd.id, tgd.body, tgd.head + (extra,)))
    return DependencySet(out)


def enrich(sigma: DependencySet) -> DependencySet:
    """Append ``H_i(all universal variables)`` to the head of every tgd."""
    return _augment(sigma, lambda t: t.universal_vars)


def semi_enrich(sigma: DependencySet) -> DependencySet:
    """Append ``H_i(frontier variables)`` to the head of every tgd."""
    return _augment(sigma, lambda t: t.frontier)
