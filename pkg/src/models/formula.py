from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class StlOp(str, Enum):
    TRUE = "true"
    ATOM = "atom"
    NOT = "not"
    AND = "and"
    OR = "or"
    EVENTUALLY = "eventually"
    GLOBALLY = "globally"
    UNTIL = "until"


class Comparator(str, Enum):
    GE = ">="
    LE = "<="


_ARITY = {
    StlOp.TRUE: (0, 0),
    StlOp.ATOM: (0, 0),
    StlOp.NOT: (1, 1),
    StlOp.AND: (1, None),
    StlOp.OR: (1, None),
    StlOp.EVENTUALLY: (1, 1),
    StlOp.GLOBALLY: (1, 1),
    StlOp.UNTIL: (2, 2),
}

_TEMPORAL = {StlOp.EVENTUALLY, StlOp.GLOBALLY, StlOp.UNTIL}


class AtomSpec(BaseModel):
    """f(frame) <cmp> c, with f looked up by name in the atom registry."""

    fn: str = Field(description="Registered function name, e.g. 'coef:p1', 'state:G', 'residue'")
    cmp: Comparator = Comparator.GE
    c: float = 0.0


class StlFormula(BaseModel):
    """One node of a discrete-time STL formula over a sequence of frames.

    Intervals are closed and relative to the evaluation index, in frames.
    """

    op: StlOp
    args: List["StlFormula"] = Field(default_factory=list)
    interval: Optional[Tuple[int, int]] = Field(None, description="[lo, hi] frame offsets for temporal operators")
    atom: Optional[AtomSpec] = None
    name: Optional[str] = Field(None, description="Optional id reported alongside robustness values")

    @model_validator(mode="after")
    def _check(self) -> "StlFormula":
        lo, hi = _ARITY[self.op]
        if len(self.args) < lo or (hi is not None and len(self.args) > hi):
            raise ValueError(f"'{self.op.value}' takes {lo}..{hi or 'n'} arguments, got {len(self.args)}")
        if self.op == StlOp.ATOM and self.atom is None:
            raise ValueError("atom node needs an 'atom' field")
        if self.op in _TEMPORAL:
            if self.interval is None:
                raise ValueError(f"'{self.op.value}' needs an interval")
            a, b = self.interval
            if a < 0 or b < a:
                raise ValueError(f"interval [{a}, {b}] is not well ordered")
        return self

    @property
    def horizon(self) -> int:
        """Frames past the evaluation index the formula looks at."""
        own = self.interval[1] if self.interval else 0
        inner = max((arg.horizon for arg in self.args), default=0)
        return own + inner

    @property
    def depth(self) -> int:
        return 1 + max((arg.depth for arg in self.args), default=0)

    def atoms(self) -> List[AtomSpec]:
        found = [self.atom] if self.atom is not None else []
        for arg in self.args:
            found.extend(arg.atoms())
        return found

    # Small constructors used by configs built in code and by tests
    @classmethod
    def true(cls) -> "StlFormula":
        return cls(op=StlOp.TRUE)

    @classmethod
    def atomic(cls, fn: str, cmp: str = ">=", c: float = 0.0) -> "StlFormula":
        return cls(op=StlOp.ATOM, atom=AtomSpec(fn=fn, cmp=Comparator(cmp), c=c))

    @classmethod
    def negate(cls, arg: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.NOT, args=[arg])

    @classmethod
    def conj(cls, *args: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.AND, args=list(args))

    @classmethod
    def disj(cls, *args: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.OR, args=list(args))

    @classmethod
    def eventually(cls, lo: int, hi: int, arg: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.EVENTUALLY, interval=(lo, hi), args=[arg])

    @classmethod
    def globally(cls, lo: int, hi: int, arg: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.GLOBALLY, interval=(lo, hi), args=[arg])

    @classmethod
    def until(cls, lo: int, hi: int, left: "StlFormula", right: "StlFormula") -> "StlFormula":
        return cls(op=StlOp.UNTIL, interval=(lo, hi), args=[left, right])


class RobustnessValue(BaseModel):
    value: float
    formula_id: str = ""
    t: int = Field(description="Frame index the formula was evaluated at")


StlFormula.model_rebuild()
