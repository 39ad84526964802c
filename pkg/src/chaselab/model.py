"""Terms, atoms, instances and tgds, plus the text grammar for reading and writing them.

Grammar
-------
Facts are written ``R(t1,...,tk).`` and may share a line. A term in a fact is a
constant (identifier, numeral or quoted string) or a null ``_N<k>``.

A program has one tgd per line::

    [label:] body_atoms -> [exists v1,...,vm .] head_atoms [.]
    [label:] body_atoms -> bottom

In tgds a bare identifier is a variable, while numerals, quoted strings and
identifiers listed in a ``const a, b`` line are constants. ``?x`` always denotes a
variable. The body may be empty (``-> D(0), D(1)``). Comments start with ``#``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator


class ParseError(ValueError):
    """Raised for malformed program or instance text."""

    def __init__(self, message, line=0, column=0):
        self.line = line
        self.column = column
        if line:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class Constant:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Null:
    index: int

    def __post_init__(self):
        if not isinstance(self.index, int) or self.index < 1:
            raise ValueError(f"null index must be a positive integer, got {self.index!r}")

    def __str__(self):
        return f"_N{self.index}"


@dataclass(frozen=True, slots=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


Term = Constant | Null | Variable


def is_variable(t) -> bool:
    return type(t) is Variable


def is_null(t) -> bool:
    return type(t) is Null


def is_constant(t) -> bool:
    return type(t) is Constant


_KIND_ORDER = {Constant: 0, Null: 1, Variable: 2}


def term_key(t):
    """Sort key: constants, then nulls by index, then variables."""
    if type(t) is Null:
        return (1, t.index, "")
    return (_KIND_ORDER[type(t)], 0, t.name)


@dataclass(frozen=True, slots=True)
class RelationSymbol:
    name: str
    arity: int
    is_bottom: bool = False

    def __post_init__(self):
        if self.is_bottom:
            if self.arity != 0:
                raise ValueError("the bottom symbol takes no arguments")
        elif self.arity < 1:
            raise ValueError(f"relation {self.name} needs a positive arity")


BOTTOM = RelationSymbol("bottom", 0, True)


@dataclass(frozen=True, slots=True)
class Atom:
    relation: RelationSymbol
    args: tuple
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.args) != self.relation.arity:
            raise ValueError(
                f"{self.relation.name} expects {self.relation.arity} arguments, got {len(self.args)}"
            )
        # atoms live in sets and dict keys everywhere, so the hash is cached
        object.__setattr__(self, "_hash", hash((self.relation, self.args)))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not Atom:
            return NotImplemented
        return self._hash == other._hash and self.args == other.args and self.relation == other.relation

    @property
    def name(self):
        return self.relation.name

    def terms(self):
        return self.args

    def __str__(self):
        if self.relation.is_bottom:
            return "bottom"
        return f"{self.relation.name}({','.join(format_term(t) for t in self.args)})"


def atom(name: str, *args) -> Atom:
    """Build an atom, reading plain strings as constants and ints as nulls."""
    terms = []
    for a in args:
        if isinstance(a, str):
            terms.append(Constant(a))
        elif isinstance(a, int):
            terms.append(Null(a))
        else:
            terms.append(a)
    return Atom(RelationSymbol(name, len(terms)), tuple(terms))


def atom_key(a: Atom):
    return (a.relation.name, tuple(term_key(t) for t in a.args))


class Instance:
    """A finite set of ground atoms over constants and nulls.

    Instances are immutable. Equality is set equality of atoms.
    """

    __slots__ = ("_atoms", "_sorted", "_hash")

    def __init__(self, atoms: Iterable[Atom] = ()):
        atoms = frozenset(atoms)
        for a in atoms:
            for t in a.args:
                if type(t) is Variable:
                    raise ValueError(f"instance atom {a} contains variable {t}")
        self._atoms = atoms
        self._sorted = None
        self._hash = None

    @property
    def atoms(self) -> frozenset:
        return self._atoms

    def sorted_atoms(self) -> tuple:
        if self._sorted is None:
            self._sorted = tuple(sorted(self._atoms, key=atom_key))
        return self._sorted

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.sorted_atoms())

    def __len__(self):
        return len(self._atoms)

    def __contains__(self, a):
        return a in self._atoms

    def __eq__(self, other):
        if isinstance(other, Instance):
            return self._atoms == other._atoms
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._atoms)
        return self._hash

    def __or__(self, other):
        return Instance(self._atoms | frozenset(other))

    def __repr__(self):
        return "Instance({" + ", ".join(str(a) for a in self) + "})"

    def nulls(self) -> set:
        return {t for a in self._atoms for t in a.args if type(t) is Null}

    def max_null(self) -> int:
        return max((n.index for n in self.nulls()), default=0)


def dom(I) -> set:
    """The set of constants and nulls occurring in ``I``."""
    return {t for a in I for t in a.args}


def variables_of(atoms: Iterable[Atom]) -> list:
    """Variables of ``atoms`` in order of first occurrence."""
    seen = {}
    for a in atoms:
        for t in a.args:
            if type(t) is Variable:
                seen.setdefault(t, None)
    return list(seen)


@dataclass(frozen=True)
class Tgd:
    """A tuple-generating dependency ``body -> exists z. head``.

    A denial ``body -> bottom`` has the single head atom ``bottom``. Existential
    variables are always derived: they are the head variables absent from the body.
    """

    id: str
    body: tuple
    head: tuple
    existential_vars: frozenset = field(init=False, compare=False)

    def __post_init__(self):
        body_vars = set(variables_of(self.body))
        ex = frozenset(v for v in variables_of(self.head) if v not in body_vars)
        object.__setattr__(self, "existential_vars", ex)
        if any(a.relation.is_bottom for a in self.body):
            raise ValueError("bottom may not occur in a tgd body")
        if any(a.relation.is_bottom for a in self.head) and len(self.head) != 1:
            raise ValueError("a denial head is exactly bottom")
        if not self.head:
            raise ValueError("a tgd needs a head (use bottom for a denial)")

    @property
    def is_denial(self) -> bool:
        return self.head[0].relation.is_bottom

    @property
    def universal_vars(self) -> list:
        return variables_of(self.body)

    @property
    def frontier(self) -> list:
        head_vars = set(variables_of(self.head))
        return [v for v in self.universal_vars if v in head_vars]

    @property
    def is_full(self) -> bool:
        return not self.existential_vars

    def __str__(self):
        return format_tgd(self)


def frontier(tgd: Tgd) -> set:
    return set(tgd.frontier)


class DependencySet:
    """An ordered list of tgds with unique ids and a consistent schema."""

    def __init__(self, tgds: Iterable[Tgd] = ()):
        self.tgds = tuple(tgds)
        ids = [t.id for t in self.tgds]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ValueError(f"duplicate tgd ids: {sorted(dupes)}")
        schema = {}
        for t in self.tgds:
            for a in t.body + t.head:
                if a.relation.is_bottom:
                    continue
                known = schema.setdefault(a.relation.name, a.relation)
                if known.arity != a.relation.arity:
                    raise ValueError(
                        f"relation {a.relation.name} used with arities {known.arity} and {a.relation.arity}"
                    )
        self.schema = schema
        self._by_id = {t.id: t for t in self.tgds}

    def __iter__(self):
        return iter(self.tgds)

    def __len__(self):
        return len(self.tgds)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self._by_id[key]
        return self.tgds[key]

    def __eq__(self, other):
        if isinstance(other, DependencySet):
            return self.tgds == other.tgds
        return NotImplemented

    def __hash__(self):
        return hash(self.tgds)

    def __repr__(self):
        return f"DependencySet({len(self.tgds)} tgds)"


# ---------------------------------------------------------------------------
# lexing and parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<arrow>->|→)
  | (?P<bottom>⊥)
  | (?P<null>_N[0-9]+\b)
  | (?P<dq>"(?:[^"\\\n]|\\.)*")
  | (?P<sq>'[^'\n]*')
  | (?P<qvar>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<num>[0-9]+(?![A-Za-z_]))
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<punct>[(),.:])
  """,
    re.VERBOSE,
)

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_NUM = re.compile(r"[0-9]+\Z")
_RESERVED = {"exists", "bottom", "const"}


def _tokenize(text):
    pos, line, col0 = 0, 1, 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - col0 + 1)
        kind = m.lastgroup
        if kind == "nl":
            out.append(("nl", "\n", line, pos - col0 + 1))
            line += 1
            col0 = m.end()
        elif kind not in ("ws", "comment"):
            out.append((kind, m.group(), line, pos - col0 + 1))
        pos = m.end()
    out.append(("eof", "", line, pos - col0 + 1))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, skip_nl=False):
        j = self.i
        if skip_nl:
            while self.toks[j][0] == "nl":
                j += 1
        return self.toks[j]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def skip_nl(self):
        while self.toks[self.i][0] == "nl":
            self.i += 1

    def error(self, msg, tok=None):
        tok = tok or self.toks[self.i]
        return ParseError(msg, tok[2], tok[3])

    def expect(self, kind, value=None):
        tok = self.next()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or tok[0]
            raise ParseError(f"expected {want!r}, found {got!r}", tok[2], tok[3])
        return tok

    def at(self, kind, value=None):
        tok = self.toks[self.i]
        return tok[0] == kind and (value is None or tok[1] == value)


def _unquote(tok):
    kind, text = tok[0], tok[1]
    if kind == "dq":
        return json.loads(text)
    return text[1:-1]


class _Schema:
    def __init__(self):
        self.arities = {}

    def symbol(self, name, arity, tok):
        known = self.arities.setdefault(name, arity)
        if known != arity:
            raise ParseError(
                f"relation {name} used with arity {arity}, earlier with {known}", tok[2], tok[3]
            )
        return RelationSymbol(name, arity)


def _parse_atom(p, schema, term_of):
    tok = p.next()
    if tok[0] != "ident" or tok[1] in _RESERVED:
        raise ParseError(f"expected a relation name, found {tok[1] or tok[0]!r}", tok[2], tok[3])
    p.expect("punct", "(")
    args = []
    if p.at("punct", ")"):
        raise p.error("relations need at least one argument")
    while True:
        args.append(term_of(p.next()))
        if p.at("punct", ","):
            p.next()
            continue
        p.expect("punct", ")")
        break
    return Atom(schema.symbol(tok[1], len(args), tok), tuple(args))


def parse_instance(text: str) -> Instance:
    """Parse a set of facts such as ``R(a,b). S(a,_N1).``"""
    p = _Parser(text)
    schema = _Schema()

    def term_of(tok):
        kind, val = tok[0], tok[1]
        if kind in ("ident", "num"):
            return Constant(val)
        if kind in ("dq", "sq"):
            return Constant(_unquote(tok))
        if kind == "null":
            idx = int(val[2:])
            if idx < 1:
                raise ParseError("null indices start at 1", tok[2], tok[3])
            return Null(idx)
        if kind == "qvar":
            raise ParseError(f"variable {val} not allowed in a fact", tok[2], tok[3])
        raise ParseError(f"expected a term, found {val or kind!r}", tok[2], tok[3])

    atoms = []
    while True:
        p.skip_nl()
        if p.at("eof"):
            break
        atoms.append(_parse_atom(p, schema, term_of))
        if p.at("punct", "."):
            p.next()
        elif not (p.at("nl") or p.at("eof")):
            raise p.error("expected '.' after fact")
    return Instance(atoms)


def parse_program(text: str) -> DependencySet:
    """Parse one tgd per line into a :class:`DependencySet`."""
    p = _Parser(text)
    schema = _Schema()
    declared = set()
    tgds = []
    ids = set()

    while True:
        p.skip_nl()
        if p.at("eof"):
            break
        if p.at("ident", "const"):
            p.next()
            while True:
                tok = p.next()
                if tok[0] != "ident":
                    raise ParseError("expected a constant name", tok[2], tok[3])
                declared.add(tok[1])
                if p.at("punct", ","):
                    p.next()
                    continue
                break
            if p.at("punct", "."):
                p.next()
            continue
        tgds.append(_parse_tgd(p, schema, declared, len(tgds) + 1, ids))
    return DependencySet(tgds)


def _parse_tgd(p, schema, declared, position, ids):
    start = p.peek()
    label = None
    if p.at("ident") and p.toks[p.i + 1][0] == "punct" and p.toks[p.i + 1][1] == ":":
        label = p.next()[1]
        p.next()
    elif p.at("num") and p.toks[p.i + 1][1] == ":":
        label = p.next()[1]
        p.next()
    tgd_id = label or str(position)
    if tgd_id in ids:
        raise ParseError(f"duplicate tgd id {tgd_id!r}", start[2], start[3])
    ids.add(tgd_id)

    def term_of(tok):
        kind, val = tok[0], tok[1]
        if kind == "ident":
            if val in _RESERVED:
                raise ParseError(f"{val!r} is reserved", tok[2], tok[3])
            return Constant(val) if val in declared else Variable(val)
        if kind == "qvar":
            return Variable(val[1:])
        if kind == "num":
            return Constant(val)
        if kind in ("dq", "sq"):
            return Constant(_unquote(tok))
        if kind == "null":
            raise ParseError("nulls are not allowed in tgds", tok[2], tok[3])
        raise ParseError(f"expected a term, found {val or kind!r}", tok[2], tok[3])

    def conj():
        atoms = [_parse_atom(p, schema, term_of)]
        while p.at("punct", ","):
            p.next()
            atoms.append(_parse_atom(p, schema, term_of))
        return atoms

    body = [] if p.at("arrow") else conj()
    p.expect("arrow")
    declared_ex = []
    if p.at("bottom") or p.at("ident", "bottom"):
        p.next()
        head = [Atom(BOTTOM, ())]
    else:
        if p.at("ident", "exists"):
            p.next()
            while True:
                tok = p.next()
                if tok[0] == "qvar":
                    declared_ex.append((Variable(tok[1][1:]), tok))
                elif tok[0] == "ident" and tok[1] not in declared and tok[1] not in _RESERVED:
                    declared_ex.append((Variable(tok[1]), tok))
                else:
                    raise ParseError("expected an existential variable", tok[2], tok[3])
                if p.at("punct", ","):
                    p.next()
                    continue
                break
            p.expect("punct", ".")
        head = conj()
    if p.at("punct", "."):
        p.next()
    if not (p.at("nl") or p.at("eof")):
        raise p.error("expected end of line after tgd")

    body_vars = set(variables_of(body))
    head_vars = set(variables_of(head))
    for v, tok in declared_ex:
        if v in body_vars:
            raise ParseError(f"existential variable {v} also occurs in the body", tok[2], tok[3])
        if v not in head_vars:
            raise ParseError(f"existential variable {v} does not occur in the head", tok[2], tok[3])
    return Tgd(tgd_id, tuple(body), tuple(head))


# ---------------------------------------------------------------------------
# serialization


def format_term(t, in_tgd=False, declared=()):
    if type(t) is Null:
        return str(t)
    if type(t) is Variable:
        if _IDENT.match(t.name) and t.name not in _RESERVED and t.name not in declared:
            return t.name
        return "?" + t.name
    name = t.name
    if _NUM.match(name):
        return name
    if _IDENT.match(name) and name not in _RESERVED and not in_tgd:
        return name
    return json.dumps(name)


def _format_atom(a, in_tgd):
    if a.relation.is_bottom:
        return "bottom"
    return f"{a.name}({','.join(format_term(t, in_tgd) for t in a.args)})"


def format_tgd(t: Tgd) -> str:
    body = ", ".join(_format_atom(a, True) for a in t.body)
    head = ", ".join(_format_atom(a, True) for a in t.head)
    ex = sorted(t.existential_vars, key=lambda v: v.name)
    if ex:
        head = "exists " + ",".join(format_term(v, True) for v in ex) + " . " + head
    lhs = f"{body} -> " if body else "-> "
    return f"{t.id}: {lhs}{head}"


def serialize_program(sigma: DependencySet) -> str:
    return "".join(format_tgd(t) + "\n" for t in sigma)


def serialize_instance(I) -> str:
    atoms = I.sorted_atoms() if isinstance(I, Instance) else sorted(I, key=atom_key)
    return "".join(f"{_format_atom(a, False)}.\n" for a in atoms)
