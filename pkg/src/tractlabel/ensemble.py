"""Composition of the four supervisor labels into 16 classes and the
three-class POS / NEG / U target."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass

SUPERVISORS = ("tq", "rbx", "ts", "aif")
TRICLASSES = ("POS", "NEG", "U")

ALL_CODES = tuple("".join(c) for c in itertools.product("pn", repeat=4))

POS_CODES = frozenset({"pppp", "pnpp", "ppnp", "npnp", "nnpp", "nppp"})
NEG_CODES = frozenset({"nnnn", "pnnn", "pnpn", "ppnn", "pppn", "npnn", "nnpn", "nppn"})
U_CODES = frozenset({"nnnp", "pnnp"})
BORDERLINE_CODES = frozenset({"nnpp", "ppnn", "pppn", "npnn", "nnpn", "nppn"})

_TRI = {**{c: "POS" for c in POS_CODES}, **{c: "NEG" for c in NEG_CODES}, **{c: "U" for c in U_CODES}}


@dataclass(frozen=True)
class SupervisorVerdict:
    """Binary label per supervisor; ``True`` means positive."""

    tq: bool
    rbx: bool
    ts: bool
    aif: bool

    def as_tuple(self):
        return (self.tq, self.rbx, self.ts, self.aif)

    @classmethod
    def from_code(cls, code: str) -> "SupervisorVerdict":
        return cls(*decompose(code))


def compose(v) -> str:
    """4-letter code over {p, n} in TQ, RBX, TS, AIF order."""
    values = v.as_tuple() if isinstance(v, SupervisorVerdict) else tuple(v)
    return "".join("p" if x else "n" for x in values)


def decompose(code: str):
    if len(code) != 4 or set(code) - {"p", "n"}:
        raise ValueError(f"invalid composition code {code!r}")
    return tuple(ch == "p" for ch in code)


def map_to_triclass(code: str) -> str:
    return _TRI[code]


def is_borderline(code: str) -> bool:
    return code in BORDERLINE_CODES


def code_index(code: str) -> int:
    return ALL_CODES.index(code)


def class_distribution(verdicts):
    """Counts per composition code and per three-class label (all keys present)."""
    codes = Counter(compose(v) for v in verdicts)
    by_code = {c: codes.get(c, 0) for c in ALL_CODES}
    by_tri = {t: 0 for t in TRICLASSES}
    for c, n in by_code.items():
        by_tri[map_to_triclass(c)] += n
    return by_code, by_tri
