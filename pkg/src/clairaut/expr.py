"""Immutable expression trees: parsing, printing, evaluation, differentiation.

Trees are built from :class:`Const`, :class:`Sym`, :class:`Neg`, :class:`Call`,
the binary nodes :class:`Add`, :class:`Sub`, :class:`Mul`, :class:`Div`, and
:class:`Pow` (constant exponent only).  Nodes compare structurally and cache
their hash, so they can be used as dictionary keys for common-subexpression
elimination.

The grammar accepted by :func:`parse`::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ('^' unary)?          # exponent must fold to a constant
    atom     := number | name | 'd' '(' name ')' | fn '(' expr ')' | '(' expr ')'
    fn       := 'sin' | 'cos' | 'exp' | 'log' | 'sqrt'

``d(qk)`` is the velocity of coordinate ``qk``.
"""

import math
import re

from .errors import DomainError, ParseError, UnboundSymbolError, UnknownSymbolError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
RESERVED = frozenset(FUNCTIONS) | {"d", "t"}

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _fmt(x):
    if math.isfinite(x) and x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(float(x))


class Expr:
    __slots__ = ("_hash",)

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __hash__(self):
        return self._hash

    def __str__(self):
        return to_source(self)

    # arithmetic sugar; uses the simplifying constructors
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, float(exponent))

    @property
    def children(self):
        return ()


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)
        self._hash = hash(("Const", self.value))

    def _key(self):
        return self.value

    def __repr__(self):
        return f"Const({_fmt(self.value)})"


class Sym(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self._hash = hash(("Sym", name))

    def _key(self):
        return self.name

    def __repr__(self):
        return f"Sym({self.name!r})"


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        self.arg = arg
        self._hash = hash(("Neg", arg._hash))

    def _key(self):
        return self.arg

    @property
    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"Neg({self.arg!r})"


class Call(Expr):
    __slots__ = ("fn", "arg")

    def __init__(self, fn, arg):
        if fn not in FUNCTIONS:
            raise ValueError(f"unsupported function {fn!r}")
        self.fn = fn
        self.arg = arg
        self._hash = hash(("Call", fn, arg._hash))

    def _key(self):
        return (self.fn, self.arg)

    @property
    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"Call({self.fn!r}, {self.arg!r})"


class Binary(Expr):
    __slots__ = ("left", "right")
    symbol = "?"

    def __init__(self, left, right):
        self.left = left
        self.right = right
        self._hash = hash((type(self).__name__, left._hash, right._hash))

    def _key(self):
        return (self.left, self.right)

    @property
    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


class Add(Binary):
    __slots__ = ()
    symbol = "+"


class Sub(Binary):
    __slots__ = ()
    symbol = "-"


class Mul(Binary):
    __slots__ = ()
    symbol = "*"


class Div(Binary):
    __slots__ = ()
    symbol = "/"


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        self.base = base
        self.exponent = float(exponent)
        self._hash = hash(("Pow", base._hash, self.exponent))

    def _key(self):
        return (self.base, self.exponent)

    @property
    def children(self):
        return (self.base,)

    def __repr__(self):
        return f"Pow({self.base!r}, {_fmt(self.exponent)})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x):
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return Sym(x)
    return Const(x)


# ---------------------------------------------------------------------------
# simplifying constructors (constant folding and 0/1 identities only)


def _is(e, value):
    return type(e) is Const and e.value == value


def neg(a):
    if type(a) is Const:
        return Const(-a.value)
    if type(a) is Neg:
        return a.arg
    return Neg(a)


def add(a, b):
    if type(a) is Const and type(b) is Const:
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Add(a, b)


def sub(a, b):
    if type(a) is Const and type(b) is Const:
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if a == b:
        return ZERO
    return Sub(a, b)


def mul(a, b):
    if type(a) is Const and type(b) is Const:
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    # fold nested constant factors: c1 * (c2 * x) -> (c1 c2) * x
    if type(b) is Const:
        a, b = b, a
    if type(a) is Const and type(b) is Mul and type(b.left) is Const:
        return mul(Const(a.value * b.left.value), b.right)
    return Mul(a, b)


def div(a, b):
    if type(a) is Const and type(b) is Const and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Div(a, b)


def power(base, exponent):
    exponent = float(exponent)
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return base
    if type(base) is Const:
        try:
            return Const(_pow(base.value, exponent))
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
    return Pow(base, exponent)


def call(fn, arg):
    if type(arg) is Const:
        try:
            return Const(_CALLS[fn](arg.value))
        except (ValueError, OverflowError):
            pass
    return Call(fn, arg)


def _pow(x, c):
    if x < 0.0 and c != int(c):
        raise ValueError("negative base with non-integer exponent")
    return math.pow(x, c)


_CALLS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
}


# ---------------------------------------------------------------------------
# traversal helpers


def free_symbols(e):
    """Set of symbol names appearing in ``e``."""
    out = set()
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if type(node) is Sym:
            out.add(node.name)
        else:
            stack.extend(node.children)
    return out


def substitute(e, mapping):
    """Replace symbols by expressions (or numbers) according to ``mapping``."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo = {}

    def go(node):
        hit = memo.get(id(node))
        if hit is not None:
            return hit
        t = type(node)
        if t is Sym:
            out = mapping.get(node.name, node)
        elif t is Const:
            out = node
        elif t is Neg:
            out = neg(go(node.arg))
        elif t is Call:
            out = call(node.fn, go(node.arg))
        elif t is Pow:
            out = power(go(node.base), node.exponent)
        else:
            out = _BUILD[t](go(node.left), go(node.right))
        memo[id(node)] = out
        return out

    return go(e)


_BUILD = {Add: add, Sub: sub, Mul: mul, Div: div}


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e, binding):
    """Evaluate ``e`` in double precision.

    Raises :class:`UnboundSymbolError` for a symbol missing from ``binding``
    and :class:`DomainError` (carrying the offending subtree) for division by
    zero, logarithm of a nonpositive number, square root of a negative number
    and non-integer powers of negative numbers.
    """
    memo = {}

    def go(node):
        key = id(node)
        if key in memo:
            return memo[key]
        t = type(node)
        if t is Const:
            val = node.value
        elif t is Sym:
            try:
                val = float(binding[node.name])
            except KeyError:
                raise UnboundSymbolError(node.name) from None
        elif t is Neg:
            val = -go(node.arg)
        elif t is Add:
            val = go(node.left) + go(node.right)
        elif t is Sub:
            val = go(node.left) - go(node.right)
        elif t is Mul:
            val = go(node.left) * go(node.right)
        elif t is Div:
            den = go(node.right)
            if den == 0.0:
                raise DomainError("division by zero", node)
            val = go(node.left) / den
        elif t is Pow:
            x = go(node.base)
            c = node.exponent
            if x < 0.0 and c != int(c):
                raise DomainError("non-integer power of a negative number", node)
            if x == 0.0 and c < 0.0:
                raise DomainError("negative power of zero", node)
            try:
                val = math.pow(x, c)
            except OverflowError:
                raise DomainError("overflow", node) from None
        else:
            x = go(node.arg)
            if node.fn == "log" and x <= 0.0:
                raise DomainError("logarithm of a nonpositive number", node)
            if node.fn == "sqrt" and x < 0.0:
                raise DomainError("square root of a negative number", node)
            try:
                val = _CALLS[node.fn](x)
            except OverflowError:
                raise DomainError("overflow", node) from None
        memo[key] = val
        return val

    return go(e)


# ---------------------------------------------------------------------------
# differentiation


def diff(e, s):
    """Exact derivative of ``e`` with respect to the symbol named ``s``."""
    if isinstance(s, Sym):
        s = s.name
    memo = {}

    def d(node):
        key = id(node)
        if key in memo:
            return memo[key]
        t = type(node)
        if t is Const:
            out = ZERO
        elif t is Sym:
            out = ONE if node.name == s else ZERO
        elif t is Neg:
            out = neg(d(node.arg))
        elif t is Add:
            out = add(d(node.left), d(node.right))
        elif t is Sub:
            out = sub(d(node.left), d(node.right))
        elif t is Mul:
            u, v = node.left, node.right
            out = add(mul(d(u), v), mul(u, d(v)))
        elif t is Div:
            u, v = node.left, node.right
            du, dv = d(u), d(v)
            out = sub(div(du, v), div(mul(u, dv), power(v, 2.0)))
        elif t is Pow:
            c = node.exponent
            out = mul(mul(Const(c), power(node.base, c - 1.0)), d(node.base))
        else:
            u = node.arg
            du = d(u)
            if _is(du, 0.0):
                out = ZERO
            elif node.fn == "sin":
                out = mul(call("cos", u), du)
            elif node.fn == "cos":
                out = neg(mul(call("sin", u), du))
            elif node.fn == "exp":
                out = mul(node, du)
            elif node.fn == "log":
                out = div(du, u)
            else:
                out = div(du, mul(Const(2.0), node))
        memo[key] = out
        return out

    return d(e)


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(node):
    t = type(node)
    if t is Const and node.value < 0:
        return 0
    return _PREC.get(t, 5)


def to_source(e):
    """Render ``e`` in the input grammar; ``parse(to_source(e))`` rebuilds it."""

    def wrap(node, level):
        text = go(node)
        return f"({text})" if _prec(node) < level else text

    def go(node):
        t = type(node)
        if t is Const:
            return _fmt(node.value)
        if t is Sym:
            return node.name
        if t is Neg:
            return "-" + wrap(node.arg, 3)
        if t is Call:
            return f"{node.fn}({go(node.arg)})"
        if t is Pow:
            return f"{wrap(node.base, 5)}^{_fmt(node.exponent)}"
        p = _PREC[t]
        return f"{wrap(node.left, p)} {t.symbol} {wrap(node.right, p + 1)}"

    return go(e)


# ---------------------------------------------------------------------------
# symbol table and parser


def _derived(prefix, coord):
    if len(coord) > 1 and coord[0] == "q":
        return prefix + coord[1:]
    return f"{prefix}_{coord}"


def velocity_name(coord):
    """Velocity symbol of a coordinate: ``q1 -> v1``, ``x -> v_x``."""
    return _derived("v", coord)


def momentum_name(coord):
    """Momentum symbol of a coordinate: ``q1 -> p1``, ``x -> p_x``."""
    return _derived("p", coord)


class SymbolTable:
    """Coordinates, their velocities, bound parameters and auxiliary names.

    ``extras`` holds further admissible names such as momenta or ``t`` for
    expressions that live on phase space rather than on velocity space.
    """

    def __init__(self, coordinates, parameters=None, extras=()):
        self.coordinates = tuple(coordinates)
        self.velocities = tuple(velocity_name(c) for c in self.coordinates)
        self.parameters = dict(parameters or {})
        self.extras = tuple(extras)
        seen = set()
        groups = (self.coordinates, self.velocities, tuple(self.parameters), self.extras)
        for group in groups:
            for name in group:
                if not _NAME_RE.match(name):
                    raise ValueError(f"invalid symbol name {name!r}")
                if name in seen:
                    raise ValueError(f"symbol {name!r} declared twice")
                if name in RESERVED and not (name == "t" and group is self.extras):
                    raise ValueError(f"symbol name {name!r} is reserved")
                seen.add(name)
        self._names = frozenset(seen)

    @property
    def n(self):
        return len(self.coordinates)

    def __contains__(self, name):
        return name in self._names

    def velocity_of(self, coord):
        return self.velocities[self.coordinates.index(coord)]

    def momentum_names(self, indices):
        return tuple(momentum_name(self.coordinates[k]) for k in indices)

    def extended(self, extras):
        return SymbolTable(self.coordinates, self.parameters, self.extras + tuple(extras))


_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


class _Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col


def _tokenize(source, line0, col0):
    tokens = []
    pos = 0
    line, col = line0, col0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, line, col))
        for ch in text:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, table):
        self.tokens = tokens
        self.pos = 0
        self.table = table

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        tok = self.next()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", tok.line, tok.col)
        return tok

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self):
        if self.peek().text == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            tok = self.next()
            exponent = self.unary()
            if free_symbols(exponent):
                raise ParseError("exponent must be a constant", tok.line, tok.col)
            try:
                return Pow(base, evaluate(exponent, {}))
            except DomainError as exc:
                raise ParseError(f"invalid exponent: {exc}", tok.line, tok.col) from None
        return base

    def atom(self):
        tok = self.next()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            if tok.text == "d" and self.peek().text == "(":
                self.next()
                arg = self.next()
                if arg.kind != "name":
                    raise ParseError("expected a coordinate name inside d(...)", arg.line, arg.col)
                self.expect(")")
                return Sym(self._velocity(arg))
            if tok.text in FUNCTIONS:
                self.expect("(")
                node = self.expr()
                self.expect(")")
                return Call(tok.text, node)
            if self.table is not None and tok.text not in self.table:
                raise UnknownSymbolError(tok.text, tok.line, tok.col)
            return Sym(tok.text)
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.line, tok.col)

    def _velocity(self, tok):
        if self.table is None:
            return velocity_name(tok.text)
        if tok.text not in self.table.coordinates:
            raise UnknownSymbolError(tok.text, tok.line, tok.col)
        return self.table.velocity_of(tok.text)


def parse(source, table=None, *, line=1, column=1):
    """Parse ``source`` into an :class:`Expr`.

    With a :class:`SymbolTable`, names outside it raise
    :class:`UnknownSymbolError`; without one every non-reserved name is
    accepted.  ``line``/``column`` offset the reported error positions, for
    sources embedded in a larger file.
    """
    parser = _Parser(_tokenize(source, line, column), table)
    node = parser.expr()
    tok = parser.peek()
    if tok.kind != "end":
        raise ParseError(f"unexpected {tok.text!r}", tok.line, tok.col)
    return node


# ---------------------------------------------------------------------------
# code generation


def lambdify(exprs, args, backend="math"):
    """Compile expressions to a Python function of positional ``args``.

    Returns a callable producing a tuple with one value per expression.  With
    ``backend="numpy"`` the arguments may be arrays and evaluation is
    element-wise.  Shared subtrees are computed once.
    """
    if backend == "math":
        ns = {"_m": math}
        fn_prefix = "_m."
    elif backend == "numpy":
        import numpy as np

        ns = {"_m": np}
        fn_prefix = "_m."
    else:
        raise ValueError(f"unknown backend {backend!r}")
    argnames = {a: f"a{k}" for k, a in enumerate(args)}
    lines = []
    names = {}

    def emit(node):
        hit = names.get(node)
        if hit is not None:
            return hit
        t = type(node)
        if t is Const:
            return repr(node.value)
        if t is Sym:
            try:
                return argnames[node.name]
            except KeyError:
                raise UnboundSymbolError(node.name) from None
        if t is Neg:
            code = f"-{emit(node.arg)}"
        elif t is Call:
            code = f"{fn_prefix}{node.fn}({emit(node.arg)})"
        elif t is Pow:
            if backend == "math":
                code = f"_m.pow({emit(node.base)}, {node.exponent!r})"
            else:
                code = f"{emit(node.base)} ** {node.exponent!r}"
        else:
            code = f"{emit(node.left)} {t.symbol} {emit(node.right)}"
        name = f"t{len(names)}"
        names[node] = name
        lines.append(f"    {name} = {code}")
        return name

    outs = [emit(as_expr(e)) for e in exprs]
    signature = ", ".join(argnames[a] for a in args)
    src = f"def _lambdified({signature}):\n" + "\n".join(lines)
    src += f"\n    return ({', '.join(outs)}{',' if len(outs) == 1 else ''})\n"
    exec(compile(src, "<lambdify>", "exec"), ns)
    fn = ns["_lambdified"]
    fn.source = src
    return fn
