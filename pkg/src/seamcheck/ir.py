"""Statement-level IR for scenario programs.

Two dialects share this IR. Host statements may borrow, retag, and own heap
values; foreign statements see raw memory only (loads, stores, malloc/free,
byte offsets). Which forms are legal in which dialect is enforced by the
parser's validation pass, not here.

Equality is structural and ignores source positions so that a parsed program
compares equal to the parse of its own rendering.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from .types import StructType, TypeDesc


class Dialect(enum.Enum):
    HOST = "host"
    FOREIGN = "foreign"


@dataclass(frozen=True)
class Place:
    """A path to a memory location: optional deref, then field/index steps.

    `deref` covers both the explicit `*p` form and the implicit deref when the
    base local is a pointer and suffix steps follow.
    """

    base: str
    deref: bool = False
    steps: tuple[Union[str, int], ...] = ()

    def __str__(self) -> str:
        text = f"*{self.base}" if self.deref and not self.steps else self.base
        for s in self.steps:
            text += f"[{s}]" if isinstance(s, int) else f".{s}"
        return text


Operand = Union[int, str]  # integer literal or local name


def operand_str(op: Operand) -> str:
    return str(op)


# ---- right-hand sides for `let` ----------------------------------------------


@dataclass(frozen=True)
class LiteralRhs:
    value: int


@dataclass(frozen=True)
class UninitRhs:
    pass


@dataclass(frozen=True)
class ZeroedRhs:
    pass


@dataclass(frozen=True)
class PlaceRhs:
    place: Place


class BorrowKind(enum.Enum):
    MUT = "mut"            # &mut PLACE, a mutable reborrow
    SHARED = "shared"      # &PLACE
    RAW_MUT = "raw-mut"    # &raw mut PLACE, address-of without retag
    RAW_CONST = "raw-const"


@dataclass(frozen=True)
class BorrowRhs:
    kind: BorrowKind
    place: Place


@dataclass(frozen=True)
class CastRhs:
    source: str


@dataclass(frozen=True)
class OffsetRhs:
    source: str
    count: Operand  # element count, scaled by pointee size


@dataclass(frozen=True)
class CellGetRhs:
    place: Place


@dataclass(frozen=True)
class HeapNewRhs:
    type: TypeDesc
    init: Optional[Union[int, str]] = None  # literal, "zeroed", or None for uninit


@dataclass(frozen=True)
class HeapIntoRawRhs:
    source: str


@dataclass(frozen=True)
class HeapFromRawRhs:
    source: str


@dataclass(frozen=True)
class LoadRhs:
    type: TypeDesc
    pointer: str


@dataclass(frozen=True)
class MallocRhs:
    size: Operand


@dataclass(frozen=True)
class AllocaRhs:
    size: Operand


@dataclass(frozen=True)
class GepRhs:
    pointer: str
    offset: Operand  # byte offset


Rhs = Union[
    LiteralRhs,
    UninitRhs,
    ZeroedRhs,
    PlaceRhs,
    BorrowRhs,
    CastRhs,
    OffsetRhs,
    CellGetRhs,
    HeapNewRhs,
    HeapIntoRawRhs,
    HeapFromRawRhs,
    LoadRhs,
    MallocRhs,
    AllocaRhs,
    GepRhs,
]


# ---- statements --------------------------------------------------------------


@dataclass(frozen=True)
class Stmt:
    line: int = field(compare=False, kw_only=True, default=0)


@dataclass(frozen=True)
class LetStmt(Stmt):
    name: str
    type: TypeDesc
    rhs: Rhs


@dataclass(frozen=True)
class WriteStmt(Stmt):
    """`PLACE = operand`, a typed write through the place's tag."""

    place: Place
    value: Operand


@dataclass(frozen=True)
class StoreStmt(Stmt):
    """Foreign `store TYPE ptr value`."""

    type: TypeDesc
    pointer: str
    value: Operand


@dataclass(frozen=True)
class CallStmt(Stmt):
    callee: str  # binding name for foreign targets, function name for host
    args: tuple[Operand, ...]
    dest: Optional[str] = None
    dest_type: Optional[TypeDesc] = None


@dataclass(frozen=True)
class SpawnStmt(Stmt):
    handle: str
    callee: str
    args: tuple[Operand, ...]


@dataclass(frozen=True)
class JoinStmt(Stmt):
    handle: str


@dataclass(frozen=True)
class ReturnStmt(Stmt):
    value: Optional[Operand] = None


@dataclass(frozen=True)
class AssertEqStmt(Stmt):
    left: Operand
    right: Operand


@dataclass(frozen=True)
class AssumeInitStmt(Stmt):
    place: Place


@dataclass(frozen=True)
class FreeStmt(Stmt):
    pointer: str


@dataclass(frozen=True)
class MemsetStmt(Stmt):
    pointer: str
    value: Operand
    size: Operand


@dataclass(frozen=True)
class MemcpyStmt(Stmt):
    dest: str
    src: str
    size: Operand


# ---- program structure -------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    type: TypeDesc


@dataclass(frozen=True)
class FnDef:
    name: str
    dialect: Dialect
    params: tuple[Param, ...]
    ret: TypeDesc
    body: tuple[Stmt, ...]
    variadic: bool = False
    line: int = field(compare=False, kw_only=True, default=0)


@dataclass(frozen=True)
class BindingSignature:
    """A host caller's declared view of a foreign function.

    Deliberately unchecked against the definition at declaration time; the
    boundary translation validates each use.
    """

    name: str        # name used at call sites
    target: str      # foreign function it claims to describe
    params: tuple[TypeDesc, ...]
    ret: TypeDesc
    variadic: bool = False
    line: int = field(compare=False, kw_only=True, default=0)


class OutcomeTag(enum.Enum):
    """Vocabulary for `expect` annotations (corpus mode)."""

    PASS = "pass"
    TIMEOUT = "timeout"
    UNSUPPORTED = "unsupported"
    EXPIRED_PERMISSION = "expired-permission"
    INSUFFICIENT_PERMISSION = "insufficient-permission"
    PROTECTED_PERMISSION = "protected-permission"
    ACCESS_OUT_OF_BOUNDS = "access-out-of-bounds"
    USE_AFTER_FREE = "use-after-free"
    DOUBLE_FREE = "double-free"
    UNINITIALIZED_READ = "uninitialized-read"
    MISALIGNED_ACCESS = "misaligned-access"
    INVALID_BINDING = "invalid-binding"
    CROSS_LANGUAGE_DEALLOC = "cross-language-dealloc"
    STRICT_PROVENANCE_VIOLATION = "strict-provenance-violation"
    MEMORY_LEAK = "memory-leak"
    ASSERTION_FAILED = "assertion-failed"


@dataclass(frozen=True)
class Expectation:
    outcome: OutcomeTag
    model: Optional[str] = None  # "tb", "sb", or None for both


@dataclass(frozen=True)
class ScenarioProgram:
    path: str = field(compare=False)
    types: tuple[StructType, ...]
    functions: tuple[FnDef, ...]
    bindings: tuple[BindingSignature, ...]
    expectations: tuple[Expectation, ...] = ()
    tags: tuple[str, ...] = ()

    def function(self, name: str) -> FnDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def binding(self, name: str) -> BindingSignature:
        for b in self.bindings:
            if b.name == name:
                return b
        raise KeyError(name)

    def struct(self, name: str) -> StructType:
        for t in self.types:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def entry(self) -> FnDef:
        return self.function("main")

    def expectation_for(self, model: str) -> Optional[OutcomeTag]:
        specific = None
        general = None
        for e in self.expectations:
            if e.model == model:
                specific = e.outcome
            elif e.model is None:
                general = e.outcome
        return specific if specific is not None else general
