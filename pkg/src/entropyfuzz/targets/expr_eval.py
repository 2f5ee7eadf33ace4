"""Recursive-descent integer expression evaluator for + * / and parentheses."""

from __future__ import annotations

from .base import Tracer

STACK_FRAMES = 8


class _SyntaxError(Exception):
    pass


class _Parser:
    def __init__(self, data: bytes, t: Tracer):
        self.data = data
        self.pos = 0
        self.t = t
        self.depth = 0

    def peek(self) -> int:
        return self.data[self.pos] if self.pos < len(self.data) else -1

    def expr(self) -> int:
        t = self.t
        val = self.term()
        while self.peek() == 0x2B:  # +
            t(11)
            self.pos += 1
            val += self.term()
        return val

    def term(self) -> int:
        t = self.t
        val = self.factor()
        while self.peek() in (0x2A, 0x2F):  # * /
            op = self.peek()
            self.pos += 1
            rhs = self.factor()
            if op == 0x2A:
                t(21)
                val *= rhs
            else:
                t(22)
                # BUG: missing zero check on division
                if rhs == 0:
                    t.crash(23)
                val //= rhs
            if val > 0x7FFFFFFF:
                t(26)
                val &= 0x7FFFFFFF
        return val

    def factor(self) -> int:
        t = self.t
        c = self.peek()
        if 0x30 <= c <= 0x39:
            t(31)
            end = self.pos
            while 0x30 <= (self.data[end] if end < len(self.data) else -1) <= 0x39:
                end += 1
            val = int(self.data[self.pos:end])
            self.pos = end
            if val > 0xFFFF:
                t(32)
            return val
        if c == 0x28:  # (
            t(33)
            self.pos += 1
            self.depth += 1
            # BUG: recursion depth is not limited before the frame pool runs out
            if self.depth > STACK_FRAMES:
                t.crash(34)
            val = self.expr()
            if self.peek() != 0x29:
                t(35)
                raise _SyntaxError
            t(36)
            self.pos += 1
            self.depth -= 1
            return val
        t(39)
        raise _SyntaxError


def expr_eval(data: bytes, t: Tracer) -> None:
    t(1)
    p = _Parser(data, t)
    try:
        val = p.expr()
    except _SyntaxError:
        t(2)
        return
    if p.pos != len(data):
        t(3)  # trailing garbage
        return
    if val == 0:
        t(5)
    else:
        t(6)
