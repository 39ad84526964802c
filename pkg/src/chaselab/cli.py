"""Command-line front end: ``chaselab chase | explore | classify | rewrite | generate``.

Exit codes: 0 when the command completed (whatever the verdict), 1 for bad
input, 2 when an internal consistency check fails.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
import time

from . import figures
from .chase import (
    BranchIndex,
    ChaseConfig,
    Deterministic,
    Seeded,
    Status,
    Verdict,
    chase,
    enrich,
    explore_branches,
    semi_enrich,
)
from .homomorphism import gen_qbf_gadget, is_satisfied, parse_qbf
from .model import (
    DependencySet,
    ParseError,
    parse_instance,
    parse_program,
    serialize_instance,
    serialize_program,
)
from .rewriting import (
    build_trees,
    instance_of_word,
    parse_rules,
    rewrite_tree,
    sigma_theta,
    sigma_theta_denial,
    terminates_within,
)
from .termination import (
    chase_graph,
    dependency_graph,
    gen_3col_cstr,
    gen_3col_precedes,
    is_cstratified,
    is_stratified,
    is_weakly_acyclic,
)


class InputError(Exception):
    """Bad command-line input; reported with exit code 1."""


class InvariantError(Exception):
    """An internal check failed; reported with exit code 2."""


GENERATE_KINDS = (
    "sigma-theta",
    "sigma-theta-denial",
    "word-instance",
    "threecol-precedes",
    "threecol-cstr",
    "qbf-gadget",
    "enrich",
    "semi-enrich",
)


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


class Report:
    """Collects what a command did; printed as JSON or as plain lines."""

    def __init__(self, command):
        self.data = {
            "command": command,
            "inputs": {},
            "verdicts": {},
            "witnesses": {},
            "timings": {},
            "budget": {},
        }
        self.lines = []

    def read(self, path):
        text = _read(path)
        self.data["inputs"][path] = hashlib.sha256(text.encode()).hexdigest()
        return text

    def time(self, key, start):
        self.data["timings"][key] = round(time.perf_counter() - start, 6)

    def say(self, line=""):
        self.lines.append(line)

    def emit(self, as_json, out):
        if as_json:
            out.write(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        else:
            out.write("\n".join(self.lines) + "\n")


def _program(report, path):
    return parse_program(report.read(path))


def _instance(report, path):
    return parse_instance(report.read(path))


def _budget(args):
    if args.max_steps < 0 or args.max_atoms < 0:
        raise InputError("budgets must be non-negative")
    return {"max_steps": args.max_steps, "max_atoms": args.max_atoms}


def _strategy(args):
    if args.seed is not None and args.branch is not None:
        raise InputError("--seed and --branch are mutually exclusive")
    if args.seed is not None:
        return Seeded(args.seed)
    if args.branch is not None:
        try:
            path = tuple(int(x) for x in args.branch.split(",") if x.strip())
        except ValueError:
            raise InputError(f"--branch expects comma separated integers, got {args.branch!r}") from None
        return BranchIndex(path)
    return Deterministic()


# ---------------------------------------------------------------------------
# commands


def cmd_chase(args, report):
    I = _instance(report, args.instance)
    sigma = _program(report, args.program)
    budget = _budget(args)
    cfg = ChaseConfig(
        args.variant,
        args.max_steps,
        args.max_atoms,
        _strategy(args),
        args.denial_policy,
        args.window,
        args.max_skip,
    )
    start = time.perf_counter()
    try:
        out = chase(I, sigma, cfg)
    except ValueError as exc:
        # only the branch strategy raises here, on an impossible choice
        raise InputError(str(exc)) from None
    report.time("chase", start)
    if out.status is Status.TERMINATED and args.variant in ("standard", "core"):
        if not is_satisfied(out.final, sigma):
            raise InvariantError("a terminated standard or core chase left an active trigger")
    d = report.data
    d["verdicts"]["status"] = out.status.value
    d["budget"] = dict(budget, exhausted=out.budget)
    d["result"] = {
        "variant": args.variant,
        "steps": out.steps,
        "atoms": len(out.final),
        "fresh_nulls": out.fresh_nulls_used,
        "final": [str(a) for a in out.final.sorted_atoms()],
        "history": out.history,
    }
    if args.trace:
        d["trace"] = [e.to_json() for e in out.trace]
    report.say(f"status: {out.status.value}")
    if out.budget:
        report.say(f"budget exhausted: {out.budget}")
    report.say(f"steps: {out.steps}  atoms: {len(out.final)}  fresh nulls: {out.fresh_nulls_used}")
    if args.trace:
        for e in out.trace:
            binds = ", ".join(f"{v}/{t}" for v, t in e.bindings.items())
            added = " ".join(str(a) for a in e.atoms_added) or "(nothing new)"
            report.say(f"  [{e.step}] {e.tgd_id} {{{binds}}}: {added}")
    report.say(serialize_instance(out.final).rstrip())
    if args.figure:
        figures.atom_counts(out.history, args.figure, f"{args.variant} chase")
        d["figure"] = args.figure
    return 0


def cmd_explore(args, report):
    I = _instance(report, args.instance)
    sigma = _program(report, args.program)
    _budget(args)
    start = time.perf_counter()
    rep = explore_branches(
        I,
        sigma,
        args.variant,
        max_steps=args.max_steps,
        max_atoms=args.max_atoms,
        max_states=args.max_states,
        window=args.window,
        max_skip=args.max_skip,
        denial_policy=args.denial_policy,
    )
    report.time("explore", start)
    d = report.data
    d["verdicts"] = {"all_terminate": rep.all_terminate.value, "some_terminates": rep.some_terminates.value}
    d["budget"] = rep.budget
    d["result"] = {"states_explored": rep.states_explored, "branches": rep.branch_outcomes}
    report.say(f"all branches terminate: {rep.all_terminate.value}")
    report.say(f"some branch terminates: {rep.some_terminates.value}")
    if Verdict.UNKNOWN in (rep.all_terminate, rep.some_terminates):
        report.say(f"budget: {json.dumps(rep.budget, sort_keys=True)}")
    report.say(f"states explored: {rep.states_explored}")
    for leaf in rep.branch_outcomes[: args.show]:
        report.say(f"  branch {leaf['path']}: {leaf['status']} after {leaf['steps']} steps, {leaf['atoms']} atoms")
    return 0


def cmd_classify(args, report):
    sigma = _program(report, args.program)
    wanted = [c.strip().lower() for c in args.classes.split(",") if c.strip()]
    for c in wanted:
        if c not in ("wa", "str", "cstr"):
            raise InputError(f"unknown class {c!r}; use wa, str, cstr")
    if args.cycle_cap is not None and args.cycle_cap < 0:
        raise InputError("--cycle-cap must be non-negative")
    d = report.data
    for c in wanted:
        start = time.perf_counter()
        if c == "wa":
            r = is_weakly_acyclic(sigma)
            verdict = Verdict.YES if r else Verdict.NO
            if not r:
                d["witnesses"]["wa"] = {"cycle": [str(p) for p in r.cycle]}
        else:
            fn = is_stratified if c == "str" else is_cstratified
            r = fn(sigma, args.cycle_cap)
            verdict = r.verdict
            graph = chase_graph(sigma, c)
            d["witnesses"][f"{c}_graph"] = [list(e) for e in graph.edges]
            if r.verdict is Verdict.NO:
                d["witnesses"][c] = {"cycle": r.failing_cycle, "wa_cycle": [str(p) for p in r.wa_cycle]}
            if r.verdict is Verdict.UNKNOWN:
                d["budget"][f"{c}_cycle_cap"] = r.cap
        report.time(c, start)
        d["verdicts"][c] = verdict.value
        label = {"wa": "WA", "str": "Str", "cstr": "CStr"}[c]
        line = f"{label}: {verdict.value}"
        if verdict is Verdict.UNKNOWN:
            line += f" (cycle cap {d['budget'][c + '_cycle_cap']} reached)"
        report.say(line)
        w = d["witnesses"].get(c)
        if w:
            if c == "wa":
                report.say("  cycle through a special edge: " + " -> ".join(w["cycle"]))
            else:
                report.say(f"  cycle {w['cycle']} is not weakly acyclic")
    if args.figure:
        _classify_figures(sigma, args.figure, wanted)
        d["figure"] = args.figure
    return 0


def _classify_figures(sigma, path, wanted):
    dep = dependency_graph(sigma)
    g = dep.to_networkx()
    import networkx as nx

    flat = nx.DiGraph()
    flat.add_nodes_from(g.nodes)
    flat.add_edges_from((u, v) for u, v in g.edges())
    figures.digraph(flat, path, "dependency graph (dashed: special edges)", dep.generate_edges)
    order = "str" if "str" in wanted and "cstr" not in wanted else "cstr"
    cg = chase_graph(sigma, order).to_networkx()
    stem = path[:-4] if path.lower().endswith(".png") else path
    figures.digraph(cg, f"{stem}-chase-graph.png", f"chase graph ({order})")


def cmd_rewrite(args, report):
    theta = parse_rules(report.read(args.rules))
    if not re.fullmatch(r"[01]+", args.word):
        raise InputError(f"words are nonempty strings over 0 and 1, got {args.word!r}")
    if args.depth < 1:
        raise InputError("--depth must be at least 1")
    start = time.perf_counter()
    v = terminates_within(args.word, theta, args.depth)
    report.time("terminates_within", start)
    d = report.data
    d["verdicts"]["terminates"] = v.verdict.value
    if v.verdict is Verdict.NO:
        d["witnesses"]["loop"] = v.loop
    elif v.verdict is Verdict.UNKNOWN:
        d["budget"]["depth"] = args.depth
    else:
        d["result"] = {"longest_derivation": v.max_depth}
    report.say(f"terminates from {args.word}: {v.verdict.value}")
    if v.loop:
        report.say("  repeating derivation: " + " => ".join(v.loop))
    if v.verdict is Verdict.UNKNOWN:
        report.say(f"  depth budget {args.depth} reached")
    if v.verdict is Verdict.YES:
        report.say(f"  longest derivation: {v.max_depth} steps")
    if args.tree:
        d["tree"] = rewrite_tree(args.word, theta, args.depth).to_json()
        report.say(json.dumps(d["tree"]))
    if args.path_tree:
        start = time.perf_counter()
        rep = build_trees(args.word, theta, args.depth, args.verbatim_grid)
        report.time("build_trees", start)
        d["path_tree"] = rep.to_json()
        report.say(json.dumps(d["path_tree"]["path_tree"]))
    return 0


def _graph_edges(text):
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p for p in re.split(r"[\s,\-]+", line) if p]
        if len(parts) != 2:
            raise InputError(f"line {lineno}: expected an edge 'u v', got {raw.strip()!r}")
        edges.append((parts[0], parts[1]))
    if not edges:
        raise InputError("the graph file has no edges")
    return edges


def cmd_generate(args, report):
    kind, src = args.kind, args.source
    extra = None
    if kind in ("sigma-theta", "sigma-theta-denial"):
        theta = parse_rules(report.read(src))
        make = sigma_theta if kind == "sigma-theta" else sigma_theta_denial
        text = serialize_program(make(theta, args.verbatim_grid))
    elif kind == "word-instance":
        if not re.fullmatch(r"[01]+", src):
            raise InputError(f"words are nonempty strings over 0 and 1, got {src!r}")
        text = serialize_instance(instance_of_word(src))
    elif kind in ("threecol-precedes", "threecol-cstr"):
        edges = _graph_edges(report.read(src))
        try:
            if kind == "threecol-precedes":
                text = serialize_program(DependencySet(list(gen_3col_precedes(edges))))
            else:
                text = serialize_program(gen_3col_cstr(edges))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    elif kind == "qbf-gadget":
        phi = parse_qbf(report.read(src))
        I, xi = gen_qbf_gadget(phi)
        text = serialize_program(DependencySet([xi]))
        extra = serialize_instance(I)
    else:
        sigma = parse_program(report.read(src))
        text = serialize_program(enrich(sigma) if kind == "enrich" else semi_enrich(sigma))
    _write(args.output, text)
    report.data["result"] = {"kind": kind, "output": args.output or "-"}
    if extra is not None:
        if args.instance_output:
            _write(args.instance_output, extra)
            report.data["result"]["instance_output"] = args.instance_output
        else:
            text = text + "# instance\n" + "".join("# " + line + "\n" for line in extra.splitlines())
    if not args.output:
        report.say(text.rstrip())
    return 0


def _write(path, text):
    if not path:
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# argument parsing


def _add_budget(p, steps=10000, atoms=100000):
    p.add_argument("--max-steps", type=int, default=steps, help=f"step budget (default {steps})")
    p.add_argument("--max-atoms", type=int, default=atoms, help=f"atom budget (default {atoms})")


def _add_fairness(p):
    p.add_argument("--window", type=int, default=3, help="how many pending triggers a branch may choose from")
    p.add_argument("--max-skip", type=int, default=2, help="how often the oldest trigger may be passed over")
    p.add_argument(
        "--denial-policy",
        choices=("fail", "ignore"),
        default="fail",
        help="oblivious variants: stop on a matched denial, or leave denials out",
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="chaselab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print a JSON report")
    sub = parser.add_subparsers(dest="command", required=True)

    variants = ("standard", "oblivious", "semi_oblivious", "core")

    p = sub.add_parser("chase", parents=[common], help="run one chase sequence")
    p.add_argument("instance")
    p.add_argument("program")
    p.add_argument("--variant", choices=variants, default="standard")
    _add_budget(p)
    p.add_argument("--seed", type=int, help="shuffle each batch of new triggers with this seed")
    p.add_argument("--branch", help="comma separated choices replayed at each step")
    p.add_argument("--trace", action="store_true", help="list every fired trigger")
    p.add_argument("--figure", help="write a PNG of the atom count per step")
    _add_fairness(p)
    p.set_defaults(func=cmd_chase)

    p = sub.add_parser("explore", parents=[common], help="search all fair branches of a chase")
    p.add_argument("instance")
    p.add_argument("program")
    p.add_argument("--variant", choices=variants, default="standard")
    _add_budget(p, steps=1000)
    p.add_argument("--max-states", type=int, default=20000, help="cap on distinct search states")
    p.add_argument("--show", type=int, default=10, help="branches listed in text output")
    _add_fairness(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("classify", parents=[common], help="weak acyclicity and stratification")
    p.add_argument("program")
    p.add_argument("--classes", default="wa,str,cstr", help="comma separated subset of wa,str,cstr")
    p.add_argument("--cycle-cap", type=int, help="stop after this many simple cycles (default 10000)")
    p.add_argument("--figure", help="write dependency graph and chase graph PNGs")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("rewrite", parents=[common], help="termination of a word rewriting system from one word")
    p.add_argument("rules")
    p.add_argument("word")
    p.add_argument("--depth", type=int, default=50)
    p.add_argument("--tree", action="store_true", help="also print the rewrite tree")
    p.add_argument("--path-tree", action="store_true", help="also build the path tree of the core chase")
    p.add_argument("--verbatim-grid", action="store_true", help="use the grid rule exactly as printed")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("generate", parents=[common], help="emit gadgets and reductions as program or instance files")
    p.add_argument("kind", choices=GENERATE_KINDS)
    p.add_argument("source", help="rules, graph, 3CNF or program file; the word for word-instance")
    p.add_argument("-o", "--output", help="write here instead of standard output")
    p.add_argument("--instance-output", help="qbf-gadget: where to write the instance")
    p.add_argument("--verbatim-grid", action="store_true", help="use the grid rule exactly as printed")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    report = Report(["chaselab"] + argv)
    try:
        code = args.func(args, report)
    except (InputError, ParseError) as exc:
        err.write(f"error: {exc}\n")
        return 1
    except InvariantError as exc:
        err.write(f"internal error: {exc}\n")
        return 2
    except ValueError as exc:
        # generators and parsers report malformed input this way
        err.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is our fault
        err.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 2
    report.emit(args.json, out)
    return code


if __name__ == "__main__":
    sys.exit(main())
