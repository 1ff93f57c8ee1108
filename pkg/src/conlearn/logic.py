"""Propositional constraint formulas with boolean and soft (t-norm) semantics.

Formulas are parsed from a small concrete syntax:

    atoms        identifiers, optionally with index arguments: ent(x1,x2)
    operators    !  &  |  =>        (tightest to loosest; => right-assoc)
    quantifiers  forall v in D: body     exists v in D: body
    domains      declared finite index sets; D\\{i} excludes a bound index

Quantifiers are expanded at parse time over their declared domain, folding
left-associatively into the binary connective, so the resulting AST is pure
propositional logic.

Soft evaluation follows the product / Goedel / Lukasiewicz t-norm families,
with either the residuated implication of each family or the S-implication
max(1-a, b). Atom values may be floats or autodiff Nodes; with Nodes the
result is a Node and gradients flow to the atom values. min/max ties send
the gradient to the first argument.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad

LOGICS = ("product", "goedel", "lukasiewicz")
IMPLICATIONS = ("residuated", "s_implication")

_TINY = 1e-12


class LogicError(Exception):
    pass


class ParseError(LogicError):
    def __init__(self, message, line, col):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class SemanticError(LogicError):
    pass


class EvalError(LogicError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


Formula = Atom | Const | Not | And | Or | Implies


def big_and(items) -> Formula:
    """n-ary conjunction, folded left-associatively; empty -> true."""
    items = list(items)
    if not items:
        return Const(True)
    out = items[0]
    for f in items[1:]:
        out = And(out, f)
    return out


def big_or(items) -> Formula:
    """n-ary disjunction, folded left-associatively; empty -> false."""
    items = list(items)
    if not items:
        return Const(False)
    out = items[0]
    for f in items[1:]:
        out = Or(out, f)
    return out


def atoms_of(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {f.name}
    if isinstance(f, Const):
        return set()
    if isinstance(f, Not):
        return atoms_of(f.child)
    return atoms_of(f.left) | atoms_of(f.right)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_PREC = {Implies: 1, Or: 2, And: 3, Not: 4, Atom: 5, Const: 5}


def to_text(f: Formula) -> str:
    """Concrete syntax that parses back to an equal AST."""
    return _fmt(f, 0)


def _fmt(f, parent_prec):
    prec = _PREC[type(f)]
    if isinstance(f, Atom):
        s = f.name
    elif isinstance(f, Const):
        s = "true" if f.value else "false"
    elif isinstance(f, Not):
        s = "!" + _fmt(f.child, prec)
    elif isinstance(f, And):
        s = _fmt(f.left, prec) + " & " + _fmt(f.right, prec + 1)
    elif isinstance(f, Or):
        s = _fmt(f.left, prec) + " | " + _fmt(f.right, prec + 1)
    else:  # Implies, right-associative
        s = _fmt(f.left, prec + 1) + " => " + _fmt(f.right, prec)
    if prec < parent_prec:
        return "(" + s + ")"
    return s


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_SYMBOLS = ("=>", "(", ")", ",", ":", "!", "&", "|", "\\", "{", "}")
_KEYWORDS = ("forall", "exists", "in", "true", "false")


def _tokenize(text):
    tokens = []  # (kind, value, line, col)
    line, col, i = 1, 1, 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if text.startswith("=>", i):
            tokens.append(("sym", "=>", line, col))
            i += 2
            col += 2
            continue
        if ch in "(),:!&|\\{}":
            tokens.append(("sym", ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            j = i
            while j < len(text) and text[j].isdigit():
                j += 1
            tokens.append(("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "kw" if word in _KEYWORDS else "ident"
            tokens.append((kind, word, line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, domains, bindings):
        self.tokens = tokens
        self.pos = 0
        self.domains = domains or {}
        self.env = dict(bindings or {})

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.pos]
        if (kind is not None and tok[0] != kind) or (value is not None and tok[1] != value):
            raise ParseError(f"expected {value or kind}, got {tok[1]!r}", tok[2], tok[3])
        self.pos += 1
        return tok

    def error(self, message):
        tok = self.peek()
        raise ParseError(message, tok[2], tok[3])

    def parse(self):
        f = self.formula()
        if self.peek()[0] != "eof":
            self.error(f"trailing input {self.peek()[1]!r}")
        return f

    def formula(self):
        tok = self.peek()
        if tok[0] == "kw" and tok[1] in ("forall", "exists"):
            return self.quantified()
        return self.implies()

    def quantified(self):
        kind = self.take("kw")[1]
        var = self.take("ident")[1]
        self.take("kw", "in")
        values = self.domain_values()
        self.take("sym", ":")
        body_start = self.pos
        parts = []
        had_binding = var in self.env
        old = self.env.get(var)
        # parse the body once per domain value; an empty domain still needs
        # one pass with a dummy binding so the parser can skip the body
        for v in values or [0]:
            self.pos = body_start
            self.env[var] = v
            sub = self.formula()
            if values:
                parts.append(sub)
        if had_binding:
            self.env[var] = old
        else:
            del self.env[var]
        return big_and(parts) if kind == "forall" else big_or(parts)

    def domain_values(self):
        tok = self.take("ident")
        name = tok[1]
        if name not in self.domains:
            raise SemanticError(f"unknown index domain {name!r}")
        values = list(self.domains[name])
        if self.peek()[0] == "sym" and self.peek()[1] == "\\":
            self.take("sym", "\\")
            self.take("sym", "{")
            excluded = self.index_arg()
            self.take("sym", "}")
            values = [v for v in values if v != excluded]
        return values

    def index_arg(self):
        tok = self.peek()
        if tok[0] == "int":
            self.take()
            return int(tok[1])
        if tok[0] == "ident":
            self.take()
            return self.env.get(tok[1], tok[1])
        self.error("expected an index (integer or identifier)")

    def implies(self):
        left = self.disjunction()
        if self.peek()[0] == "sym" and self.peek()[1] == "=>":
            self.take()
            return Implies(left, self.implies())
        return left

    def disjunction(self):
        out = self.conjunction()
        while self.peek()[0] == "sym" and self.peek()[1] == "|":
            self.take()
            out = Or(out, self.conjunction())
        return out

    def conjunction(self):
        out = self.unary()
        while self.peek()[0] == "sym" and self.peek()[1] == "&":
            self.take()
            out = And(out, self.unary())
        return out

    def unary(self):
        tok = self.peek()
        if tok[0] == "sym" and tok[1] == "!":
            self.take()
            return Not(self.unary())
        if tok[0] == "sym" and tok[1] == "(":
            self.take()
            f = self.formula()
            self.take("sym", ")")
            return f
        if tok[0] == "kw" and tok[1] in ("true", "false"):
            self.take()
            return Const(tok[1] == "true")
        if tok[0] == "kw" and tok[1] in ("forall", "exists"):
            return self.quantified()
        if tok[0] == "ident":
            return self.atom()
        self.error(f"expected a formula, got {tok[1]!r}")

    def atom(self):
        name = self.take("ident")[1]
        if self.peek()[0] == "sym" and self.peek()[1] == "(":
            self.take()
            args = [self.index_arg()]
            while self.peek()[0] == "sym" and self.peek()[1] == ",":
                self.take()
                args.append(self.index_arg())
            self.take("sym", ")")
            return Atom(f"{name}({','.join(str(a) for a in args)})")
        return Atom(name)


def parse_formula(text: str, domains: dict | None = None, bindings: dict | None = None) -> Formula:
    """Parse one formula; quantifiers expand over `domains`, free index
    variables resolve through `bindings`."""
    return _Parser(_tokenize(text), domains, bindings).parse()


def load_constraint_file(text: str) -> tuple[dict, list[Formula]]:
    """Parse a constraint file: `domain NAME = ...` headers, one formula per
    line, `#` comments. Domain specs are `lo..hi` or `{v1, v2, ...}`."""
    domains: dict[str, list] = {}
    formulas = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("domain "):
            head, _, spec = line[len("domain "):].partition("=")
            name = head.strip()
            spec = spec.strip()
            if not name or not spec:
                raise ParseError("malformed domain declaration", lineno, 1)
            if ".." in spec:
                lo, _, hi = spec.partition("..")
                domains[name] = list(range(int(lo), int(hi) + 1))
            elif spec.startswith("{") and spec.endswith("}"):
                vals = [v.strip() for v in spec[1:-1].split(",") if v.strip()]
                domains[name] = [int(v) if v.isdigit() else v for v in vals]
            else:
                raise ParseError(f"malformed domain spec {spec!r}", lineno, 1)
            continue
        formulas.append(parse_formula(line, domains=domains))
    return domains, formulas


# ---------------------------------------------------------------------------
# boolean semantics
# ---------------------------------------------------------------------------

def eval_bool(f: Formula, assignment: dict) -> bool:
    """Classical truth value under a total {0,1} assignment."""
    if isinstance(f, Atom):
        if f.name not in assignment:
            raise EvalError(f"atom {f.name!r} missing from assignment")
        v = assignment[f.name]
        if v not in (0, 1, False, True):
            raise EvalError(f"boolean assignment for {f.name!r} must be 0/1, got {v!r}")
        return bool(v)
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Not):
        return not eval_bool(f.child, assignment)
    if isinstance(f, And):
        return eval_bool(f.left, assignment) and eval_bool(f.right, assignment)
    if isinstance(f, Or):
        return eval_bool(f.left, assignment) or eval_bool(f.right, assignment)
    if isinstance(f, Implies):
        return (not eval_bool(f.left, assignment)) or eval_bool(f.right, assignment)
    raise EvalError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# soft semantics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogicKind:
    kind: str = "goedel"
    implication: str = "s_implication"

    def __post_init__(self):
        if self.kind not in LOGICS:
            raise ValueError(f"unknown logic {self.kind!r}; choose from {LOGICS}")
        if self.implication not in IMPLICATIONS:
            raise ValueError(f"unknown implication mode {self.implication!r}; choose from {IMPLICATIONS}")


#: the configuration used in the experiments: Goedel connectives with the
#: S-implication max(1-a, b)
DEFAULT_LOGIC = LogicKind("goedel", "s_implication")


def _is_node(x):
    return isinstance(x, ad.Node)


def _val(x):
    if _is_node(x):
        if x.value.size != 1:
            raise EvalError(f"atom values must be scalar nodes, got shape {x.value.shape}")
        return float(x.value.reshape(()))
    return float(x)


def _smin(a, b):
    if _is_node(a) or _is_node(b):
        g = (a if _is_node(a) else b).graph
        return ad.minimum(g.lift(a), g.lift(b))
    return a if a <= b else b


def _smax(a, b):
    if _is_node(a) or _is_node(b):
        g = (a if _is_node(a) else b).graph
        return ad.maximum(g.lift(a), g.lift(b))
    return a if a >= b else b


def eval_soft(f: Formula, assignment: dict, logic: LogicKind = DEFAULT_LOGIC):
    """Soft truth value in [0, 1]; a Node when atom values are Nodes.

    At {0,1} assignments this agrees with eval_bool for every logic and
    implication mode.
    """
    if isinstance(f, Atom):
        if f.name not in assignment:
            raise EvalError(f"atom {f.name!r} missing from assignment")
        v = assignment[f.name]
        value = _val(v)
        if not (0.0 - 1e-12 <= value <= 1.0 + 1e-12):
            raise EvalError(f"soft value for {f.name!r} outside [0,1]: {value}")
        return v
    if isinstance(f, Const):
        return 1.0 if f.value else 0.0
    if isinstance(f, Not):
        return 1.0 - eval_soft(f.child, assignment, logic)
    if isinstance(f, And):
        a = eval_soft(f.left, assignment, logic)
        b = eval_soft(f.right, assignment, logic)
        if logic.kind == "product":
            return a * b
        if logic.kind == "goedel":
            return _smin(a, b)
        return _smax(0.0, a + b - 1.0)
    if isinstance(f, Or):
        a = eval_soft(f.left, assignment, logic)
        b = eval_soft(f.right, assignment, logic)
        if logic.kind == "product":
            return a + b - a * b
        if logic.kind == "goedel":
            return _smax(a, b)
        return _smin(1.0, a + b)
    if isinstance(f, Implies):
        a = eval_soft(f.left, assignment, logic)
        b = eval_soft(f.right, assignment, logic)
        if logic.implication == "s_implication":
            return _smax(1.0 - a, b)
        if logic.kind == "lukasiewicz":
            return _smin(1.0, 1.0 - a + b)
        if logic.kind == "product":
            if _val(a) <= _val(b):
                return 1.0
            return b / _smax(a, _TINY)
        # goedel residuated: 1 where a <= b, else b; the branch condition is
        # constant, so the gradient flows through b only where selected
        return 1.0 if _val(a) <= _val(b) else b
    raise EvalError(f"not a formula: {f!r}")
