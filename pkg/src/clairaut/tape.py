"""Flatten expression lists into a straight-line instruction tape.

A tape is static single assignment code: slots ``0 .. n_inputs-1`` hold the
inputs and instruction ``k`` writes slot ``n_inputs + k``.  Identical
subtrees across all outputs share one slot.  Both kernel backends execute the
same tape, the compiled one by interpretation and the pure-Python one by
generating straight-line source from it.
"""

import math

import numpy as np

from . import expr as E
from .errors import UnboundSymbolError

OP_CONST = 0
OP_ADD = 1
OP_SUB = 2
OP_MUL = 3
OP_DIV = 4
OP_NEG = 5
OP_POW = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9
OP_LOG = 10
OP_SQRT = 11

_BINARY = {E.Add: OP_ADD, E.Sub: OP_SUB, E.Mul: OP_MUL, E.Div: OP_DIV}
_UNARY = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT}


class Tape:
    """Compiled form of a list of expressions over a fixed input ordering."""

    def __init__(self, exprs, inputs, constants=None):
        self.inputs = tuple(inputs)
        constants = dict(constants or {})
        slot_of_input = {name: k for k, name in enumerate(self.inputs)}
        ops, a, b, c = [], [], [], []
        slots = {}
        n_in = len(self.inputs)

        def instr(op, x=-1, y=-1, value=0.0):
            ops.append(op)
            a.append(x)
            b.append(y)
            c.append(value)
            return n_in + len(ops) - 1

        def go(node):
            hit = slots.get(node)
            if hit is not None:
                return hit
            t = type(node)
            if t is E.Sym:
                if node.name in slot_of_input:
                    return slot_of_input[node.name]
                if node.name not in constants:
                    raise UnboundSymbolError(node.name)
                s = instr(OP_CONST, value=float(constants[node.name]))
            elif t is E.Const:
                s = instr(OP_CONST, value=node.value)
            elif t is E.Neg:
                s = instr(OP_NEG, go(node.arg))
            elif t is E.Call:
                s = instr(_UNARY[node.fn], go(node.arg))
            elif t is E.Pow:
                s = instr(OP_POW, go(node.base), value=node.exponent)
            else:
                s = instr(_BINARY[t], go(node.left), go(node.right))
            slots[node] = s
            return s

        outs = [go(E.as_expr(e)) for e in exprs]
        self.n_inputs = n_in
        self.op = np.asarray(ops, dtype=np.int32)
        self.a = np.asarray(a, dtype=np.int32)
        self.b = np.asarray(b, dtype=np.int32)
        self.c = np.asarray(c, dtype=np.float64)
        self.outputs = np.asarray(outs, dtype=np.int32)

    @property
    def n_slots(self):
        return self.n_inputs + len(self.op)

    @property
    def n_outputs(self):
        return len(self.outputs)

    def __len__(self):
        return len(self.op)

    def python_source(self, name="tape_fn"):
        """Straight-line Python source evaluating the tape on a sequence."""
        lines = [f"def {name}(x):"]
        if self.n_inputs:
            names = ", ".join(f"s{k}" for k in range(self.n_inputs))
            lines.append(f"    {names}{',' if self.n_inputs == 1 else ''} = x")
        templates = {
            OP_ADD: "s{a} + s{b}",
            OP_SUB: "s{a} - s{b}",
            OP_MUL: "s{a} * s{b}",
            OP_DIV: "s{a} / s{b}",
            OP_NEG: "-s{a}",
            OP_POW: "_pow(s{a}, {c!r})",
            OP_SIN: "_sin(s{a})",
            OP_COS: "_cos(s{a})",
            OP_EXP: "_exp(s{a})",
            OP_LOG: "_log(s{a})",
            OP_SQRT: "_sqrt(s{a})",
        }
        for k, (op, x, y, value) in enumerate(zip(self.op, self.a, self.b, self.c)):
            slot = self.n_inputs + k
            if op == OP_CONST:
                code = repr(float(value))
            else:
                code = templates[int(op)].format(a=int(x), b=int(y), c=float(value))
            lines.append(f"    s{slot} = {code}")
        outs = ", ".join(f"s{int(s)}" for s in self.outputs)
        lines.append(f"    return [{outs}]")
        return "\n".join(lines) + "\n"

    def python_function(self):
        """Compile :meth:`python_source`; domain violations raise ``ValueError``
        or ``ZeroDivisionError`` as in :mod:`math`."""
        ns = {
            "_pow": math.pow,
            "_sin": math.sin,
            "_cos": math.cos,
            "_exp": math.exp,
            "_log": math.log,
            "_sqrt": math.sqrt,
        }
        exec(compile(self.python_source(), "<tape>", "exec"), ns)
        return ns["tape_fn"]
