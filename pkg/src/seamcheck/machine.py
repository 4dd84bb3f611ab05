"""Execution engine: two dialects, one memory, one borrow model per run.

Host locals are storage-backed: every `let` gets its own stack allocation
with a borrow tracker, and the local's root tag is what references are
retagged from. Foreign locals are plain registers holding integers,
pointers, or opaque byte blobs, with a taint flag that marks values read
out of uninitialized memory in permissive mode.

Calls across the boundary run the callee on its own thread; the caller
blocks until it finishes and the return value is translated on the way
back. Same-dialect host calls push a frame on the current thread. The
scheduler picks among ready threads with a seeded generator, so a run is a
deterministic function of (program, config).

Host frames tear down in a fixed order at exit: owned heap values drop in
reverse declaration order, then protectors end, then local storage dies.
That ordering is load-bearing: a dropped allocation still sees active
protectors from the same frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .diagnostics import Classification, Diagnostic, DiagnosticKind, Outcome, TraceFrame
from .ir import (
    AllocaRhs,
    AssertEqStmt,
    AssumeInitStmt,
    BorrowKind,
    BorrowRhs,
    CallStmt,
    CastRhs,
    CellGetRhs,
    Dialect,
    FnDef,
    FreeStmt,
    GepRhs,
    HeapFromRawRhs,
    HeapIntoRawRhs,
    HeapNewRhs,
    JoinStmt,
    LetStmt,
    LiteralRhs,
    LoadRhs,
    MallocRhs,
    MemcpyStmt,
    MemsetStmt,
    OffsetRhs,
    Operand,
    Place,
    PlaceRhs,
    ReturnStmt,
    ScenarioProgram,
    SpawnStmt,
    Stmt,
    StoreStmt,
    UninitRhs,
    WriteStmt,
    ZeroedRhs,
)
from .memory import (
    WILDCARD,
    AccessContext,
    Allocation,
    AllocOrigin,
    Memory,
    PointerValue,
    UbError,
)
from .parser import render_stmt
from .rng import Xoshiro256
from .stacked_borrows import StackedBorrowTracker
from .translate import (
    ArgMode,
    ArgPlan,
    CallPlan,
    TranslationError,
    assignable,
    plan_call,
    plan_variadic_arg,
    reinterpret,
)
from .tree_borrows import TreeBorrowTracker
from .types import (
    U8,
    CellType,
    IntType,
    PtrKind,
    PtrType,
    StructType,
    ArrayType,
    TypeDesc,
    UnitType,
    is_reference,
    layout_of,
    size_of,
    struct_field_range,
)


class ScenarioUnsupported(Exception):
    """The scenario steps outside what the engine models; not a finding."""


@dataclass
class MachineConfig:
    model: str = "tb"
    seed: int = 0
    step_budget: int = 1_000_000
    symbolic_alignment: bool = True
    strict_provenance: bool = False
    permissive_foreign: bool = True
    zero_init_foreign: bool = False
    unique_as_mutable: bool = True

    def __post_init__(self) -> None:
        if self.model not in ("tb", "sb"):
            raise ValueError(f"unknown borrow model: {self.model!r}")
        if self.zero_init_foreign:
            # Zeroed memory has no uninitialized reads to be permissive about;
            # the two modes are exclusive.
            self.permissive_foreign = False


@dataclass(frozen=True)
class Blob:
    """By-value aggregate crossing the boundary: raw bytes plus fragments."""

    values: tuple[Optional[int], ...]
    frags: tuple[tuple[int, tuple], ...]  # sorted (index, fragment) pairs

    @staticmethod
    def from_memory(values: list[Optional[int]], frags: dict[int, tuple]) -> "Blob":
        return Blob(tuple(values), tuple(sorted(frags.items())))

    def to_memory(self) -> tuple[list[Optional[int]], dict[int, tuple]]:
        return list(self.values), dict(self.frags)


HostValue = Union[int, PointerValue, Blob, None]


@dataclass
class Reg:
    value: Union[int, PointerValue, Blob]
    tainted: bool = False


@dataclass
class _Slot:
    name: str
    type: TypeDesc
    alloc: Allocation
    pointer: PointerValue  # base, root tag
    owning: bool = False   # heap value dropped at frame exit
    moved: bool = False


@dataclass
class _Frame:
    fn: FnDef
    pc: int = 0
    slots: dict[str, _Slot] = field(default_factory=dict)
    slot_order: list[_Slot] = field(default_factory=list)
    regs: dict[str, Reg] = field(default_factory=dict)
    handles: dict[str, int] = field(default_factory=dict)
    protected: list[tuple[int, int]] = field(default_factory=list)  # (alloc id, tag)
    stack_allocs: list[int] = field(default_factory=list)
    pending_dest: Optional[tuple[Optional[str], Optional[TypeDesc]]] = None


@dataclass
class _Thread:
    id: int
    dialect: Dialect
    frames: list[_Frame]
    parent: Optional[int] = None
    status: str = "ready"  # ready | blocked-join | blocked-call | done
    waiting_on: Optional[int] = None
    # What to do with the callee's result once it finishes.
    recv: Optional[tuple[Optional[ArgPlan], Optional[str], Optional[TypeDesc]]] = None
    result: Optional[tuple[object, TypeDesc]] = None  # host threads
    result_reg: Optional[Reg] = None                  # foreign threads


class Machine:
    def __init__(self, program: ScenarioProgram, config: Optional[MachineConfig] = None) -> None:
        self.program = program
        self.config = config or MachineConfig()
        self.memory = Memory(
            seed=self.config.seed,
            symbolic_alignment=self.config.symbolic_alignment,
            strict_provenance=self.config.strict_provenance,
            zero_init_foreign=self.config.zero_init_foreign,
        )
        self.rng = Xoshiro256(self.config.seed)
        self._tags = 0
        self.threads: dict[int, _Thread] = {}
        self._next_thread = 0
        self._delivering: Optional[_Thread] = None
        self.steps = 0

    # ---- plumbing ------------------------------------------------------------

    def _next_tag(self) -> int:
        self._tags += 1
        return self._tags

    def _tracker_class(self):
        return TreeBorrowTracker if self.config.model == "tb" else StackedBorrowTracker

    def _alloc(
        self, size: int, align: int, origin: AllocOrigin, label: str, ctx: AccessContext
    ) -> tuple[Allocation, PointerValue]:
        alloc = self.memory.allocate(size, align, origin, label)
        alloc.tracker = self._tracker_class()(alloc.id, size, self._next_tag, label, ctx)
        return alloc, self.memory.base_pointer(alloc, alloc.tracker.root_tag)

    def _spawn_thread(self, dialect: Dialect, frame: _Frame, parent: Optional[int]) -> _Thread:
        t = _Thread(id=self._next_thread, dialect=dialect, frames=[frame], parent=parent)
        self._next_thread += 1
        self.threads[t.id] = t
        return t

    def _ctx(self, thread: _Thread, line: int, description: str) -> AccessContext:
        return AccessContext(line=line, description=description, actor=thread.dialect.value)

    # ---- running -------------------------------------------------------------

    def run(self) -> Outcome:
        try:
            entry_frame = self._make_host_frame(self.program.entry, [], AccessContext())
        except UbError as e:
            return self._bug(e, None)
        main = self._spawn_thread(Dialect.HOST, entry_frame, parent=None)
        while True:
            if main.status == "done":
                break
            try:
                self._deliver()
            except UbError as e:
                return self._bug(e, self._delivering)
            except ScenarioUnsupported as e:
                return Outcome(Classification.UNSUPPORTED, note=str(e))
            ready = [t for t in sorted(self.threads) if self.threads[t].status == "ready"]
            if not ready:
                if main.status == "done":
                    break
                return Outcome(
                    Classification.TIMEOUT,
                    note="deadlock: every thread is blocked",
                )
            if self.steps >= self.config.step_budget:
                return Outcome(
                    Classification.TIMEOUT,
                    note=f"step budget of {self.config.step_budget} exhausted",
                )
            self.steps += 1
            thread = self.threads[ready[self.rng.below(len(ready))]]
            try:
                self._step(thread)
            except UbError as e:
                return self._bug(e, thread)
            except TranslationError as e:
                if e.unsupported:
                    return Outcome(Classification.UNSUPPORTED, note=e.message)
                return self._bug(
                    UbError(DiagnosticKind.INVALID_BINDING, e.message), thread
                )
            except ScenarioUnsupported as e:
                return Outcome(Classification.UNSUPPORTED, note=str(e))
        leaks = tuple(self._leak_diagnostic(a) for a in self.memory.leak_report())
        return Outcome(Classification.PASS, leaks=leaks)

    def _leak_diagnostic(self, alloc: Allocation) -> Diagnostic:
        return Diagnostic(
            kind=DiagnosticKind.MEMORY_LEAK,
            message=(
                f"alloc#{alloc.id} ({alloc.label}): {alloc.size} bytes from the "
                f"{alloc.origin.value} allocator were never freed"
            ),
            allocation_origin=alloc.origin.value,
            address=alloc.base,
        )

    def _bug(self, e: UbError, thread: Optional[_Thread]) -> Outcome:
        host_trace: tuple[TraceFrame, ...] = ()
        foreign_trace: tuple[TraceFrame, ...] = ()
        if thread is not None:
            host_trace, foreign_trace = self._traces(thread)
        diag = Diagnostic(
            kind=e.kind,
            message=e.message,
            host_trace=host_trace,
            foreign_trace=foreign_trace,
            permission_history=e.history,
            tracker_snapshot=e.snapshot,
            allocation_origin=e.origin,
            address=e.address,
        )
        return Outcome(Classification.BUG, diagnostics=(diag,))

    def _traces(self, thread: _Thread) -> tuple[tuple[TraceFrame, ...], tuple[TraceFrame, ...]]:
        host: list[TraceFrame] = []
        foreign: list[TraceFrame] = []
        cur: Optional[_Thread] = thread
        while cur is not None:
            for frame in reversed(cur.frames):
                if not frame.fn.body:
                    continue
                idx = min(max(frame.pc - 1, 0), len(frame.fn.body) - 1)
                stmt = frame.fn.body[idx]
                tf = TraceFrame(
                    dialect=cur.dialect.value,
                    function=frame.fn.name,
                    line=stmt.line,
                    statement=render_stmt(stmt, cur.dialect),
                )
                (host if cur.dialect is Dialect.HOST else foreign).append(tf)
            cur = self.threads.get(cur.parent) if cur.parent is not None else None
        return tuple(host), tuple(foreign)

    def _deliver(self) -> None:
        """Unblock joiners and hand call results back to blocked callers."""
        for t in self.threads.values():
            if t.status == "blocked-join":
                target = self.threads[t.waiting_on]
                if target.status == "done":
                    t.status = "ready"
                    t.waiting_on = None
            elif t.status == "blocked-call":
                target = self.threads[t.waiting_on]
                if target.status == "done":
                    plan, dest, dest_type = t.recv
                    t.status = "ready"
                    t.waiting_on = None
                    t.recv = None
                    self._delivering = t
                    self._receive(t, target, plan, dest, dest_type)
                    self._delivering = None

    # ---- frame setup and teardown --------------------------------------------

    def _make_host_frame(self, fn: FnDef, args: list[HostValue], ctx: AccessContext) -> _Frame:
        frame = _Frame(fn=fn)
        for param, value in zip(fn.params, args):
            slot = self._new_slot(frame, param.name, param.type, ctx)
            if is_reference(param.type) and isinstance(value, PointerValue):
                value = self._protected_retag(frame, param.type, value, param.name, ctx)
            self._typed_write_value(slot.pointer, param.type, value, ctx)
        return frame

    def _protected_retag(
        self, frame: _Frame, ty: PtrType, ptr: PointerValue, label: str, ctx: AccessContext
    ) -> PointerValue:
        if ptr.alloc_id is None:
            raise UbError(
                DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                f"reference parameter '{label}' holds 0x{ptr.address:x}, which points "
                f"into no live allocation",
                address=ptr.address,
            )
        alloc = self.memory.allocations[ptr.alloc_id]
        pointee = self._pointee(ty, ptr)
        size = size_of(pointee)
        kind = "mutable-ref" if ty.kind is PtrKind.MUT_REF else "shared-ref"
        tag = self._retag_through(alloc, ptr, size, pointee, kind, protect=True, label=label, ctx=ctx)
        frame.protected.append((alloc.id, tag))
        return replace(ptr, provenance=tag)

    def _retag_through(
        self,
        alloc: Allocation,
        ptr: PointerValue,
        size: int,
        pointee: TypeDesc,
        kind: str,
        protect: bool,
        label: str,
        ctx: AccessContext,
    ) -> int:
        parent = ptr.provenance
        if parent is WILDCARD:
            # A borrow through an exposed address hangs off the allocation root.
            parent = alloc.tracker.root_tag
        if not isinstance(parent, int):
            raise UbError(
                DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                f"retag of '{label}' through a pointer without provenance",
                address=ptr.address,
            )
        cells = tuple(
            (a + ptr.offset, b + ptr.offset) for a, b in layout_of(pointee).cell_ranges
        )
        rng = (ptr.offset, ptr.offset + size)
        return alloc.tracker.retag(parent, rng, kind, cells, protect, label, ctx)

    def _new_slot(self, frame: _Frame, name: str, ty: TypeDesc, ctx: AccessContext) -> _Slot:
        layout = layout_of(ty)
        alloc, ptr = self._alloc(layout.size, max(layout.align, 1), AllocOrigin.HOST_STACK, name, ctx)
        slot = _Slot(name=name, type=ty, alloc=alloc, pointer=ptr)
        frame.slots[name] = slot
        frame.slot_order.append(slot)
        frame.stack_allocs.append(alloc.id)
        return slot

    def _exit_host_frame(self, thread: _Thread, line: int) -> None:
        frame = thread.frames[-1]
        ctx = self._ctx(thread, line, "frame exit")
        for slot in reversed(frame.slot_order):
            if slot.owning and not slot.moved and frame.slots.get(slot.name) is slot:
                box, _ = self.memory.read_pointer(slot.pointer, ctx=ctx)
                self.memory.deallocate(box, "host", ctx)
        for alloc_id, tag in frame.protected:
            tracker = self.memory.allocations[alloc_id].tracker
            if tracker is not None:
                tracker.protector_end(tag)
        for alloc_id in reversed(frame.stack_allocs):
            self.memory.release_stack(alloc_id, ctx)
        thread.frames.pop()

    def _exit_foreign_frame(self, thread: _Thread, line: int) -> None:
        frame = thread.frames[-1]
        ctx = self._ctx(thread, line, "frame exit")
        for alloc_id in reversed(frame.stack_allocs):
            self.memory.release_stack(alloc_id, ctx)
        thread.frames.pop()

    # ---- typed data movement -------------------------------------------------

    def _pointee(self, ty: PtrType, ptr: PointerValue) -> TypeDesc:
        if ty.kind is not PtrKind.OPAQUE:
            return ty.pointee
        # Untyped pointer: guess a width from the allocation it points at.
        if ptr.alloc_id is not None:
            alloc = self.memory.allocations[ptr.alloc_id]
            if (
                alloc.origin in (AllocOrigin.HOST_STACK, AllocOrigin.FOREIGN_STACK, AllocOrigin.STATIC)
                and ptr.offset == 0
                and alloc.size in (1, 2, 4, 8)
            ):
                return IntType(alloc.size * 8, False)
        return U8

    def _typed_read(self, ptr: PointerValue, ty: TypeDesc, ctx: AccessContext) -> HostValue:
        if isinstance(ty, CellType):
            ty = ty.inner
        if isinstance(ty, UnitType):
            self.memory.check_access(ptr, 0, 1, "read", ctx)
            return None
        if isinstance(ty, IntType):
            value, _ = self.memory.read_int(ptr, ty.size, ty.signed, ctx=ctx)
            return value
        if isinstance(ty, PtrType):
            value, _ = self.memory.read_pointer(ptr, ctx=ctx)
            return value
        values, frags = self.memory.read_blob(ptr, size_of(ty), ctx)
        return Blob.from_memory(values, frags)

    def _typed_write_value(
        self, ptr: PointerValue, ty: TypeDesc, value: HostValue, ctx: AccessContext
    ) -> None:
        if isinstance(ty, CellType):
            ty = ty.inner
        if isinstance(ty, UnitType) or value is None and isinstance(ty, UnitType):
            return
        if value is None:
            return  # uninitialized: storage stays untouched
        if isinstance(ty, IntType):
            if isinstance(value, PointerValue):
                raise ScenarioUnsupported(
                    f"pointer value written into integer slot of type {ty}; cast it first"
                )
            if isinstance(value, Blob):
                raise ScenarioUnsupported(f"aggregate value written into {ty} slot")
            self.memory.write_int(ptr, ty.size, reinterpret(value, ty), ctx=ctx)
            return
        if isinstance(ty, PtrType):
            if isinstance(value, int):
                self.memory.write_int(ptr, 8, value % (1 << 64), align=8, ctx=ctx)
                return
            if isinstance(value, Blob):
                raise ScenarioUnsupported("aggregate value written into pointer slot")
            self.memory.write_pointer(ptr, value, ctx)
            return
        if isinstance(value, Blob):
            values, frags = value.to_memory()
            if len(values) != size_of(ty):
                raise ScenarioUnsupported(
                    f"aggregate of {len(values)} bytes written into {size_of(ty)}-byte slot"
                )
            self.memory.write_blob(ptr, values, frags, ctx)
            return
        if isinstance(value, int):
            raise ScenarioUnsupported(f"integer written into aggregate slot of type {ty}")
        raise ScenarioUnsupported(f"cannot store value into slot of type {ty}")

    # ---- places and operands -------------------------------------------------

    def _resolve_place(
        self, thread: _Thread, place: Place, ctx: AccessContext
    ) -> tuple[PointerValue, TypeDesc]:
        frame = thread.frames[-1]
        slot = frame.slots.get(place.base)
        if slot is None:
            raise ScenarioUnsupported(f"unknown local '{place.base}'")
        ptr: PointerValue = slot.pointer
        ty: TypeDesc = slot.type
        if place.deref:
            if not isinstance(ty, PtrType):
                raise ScenarioUnsupported(f"cannot dereference non-pointer local '{place.base}'")
            target, _ = self.memory.read_pointer(ptr, ctx=ctx)
            pointee = self._pointee(ty, target)
            ptr, ty = target, pointee
        for step in place.steps:
            if isinstance(ty, CellType):
                ty = ty.inner
            if isinstance(step, str):
                if not isinstance(ty, StructType):
                    raise ScenarioUnsupported(f"field access '.{step}' on non-struct {ty}")
                off, fty = struct_field_range(ty, step)
                ptr = ptr.with_byte_offset(off)
                ty = fty
            else:
                if not isinstance(ty, ArrayType):
                    raise ScenarioUnsupported(f"index [{step}] on non-array {ty}")
                if step < 0 or step >= ty.count:
                    raise UbError(
                        DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                        f"index {step} outside array of {ty.count} elements",
                        address=ptr.address,
                    )
                ptr = ptr.with_byte_offset(step * size_of(ty.elem))
                ty = ty.elem
        return ptr, ty

    def _eval_operand(self, thread: _Thread, op: Operand, ctx: AccessContext) -> tuple[HostValue, TypeDesc]:
        if isinstance(op, int):
            return op, IntType(64, op < 0)
        ptr, ty = self._resolve_place(thread, Place(op), ctx)
        return self._typed_read(ptr, ty, ctx), ty

    def _foreign_operand(self, thread: _Thread, op: Operand) -> Reg:
        if isinstance(op, int):
            return Reg(op)
        reg = thread.frames[-1].regs.get(op)
        if reg is None:
            raise ScenarioUnsupported(f"unknown register '{op}'")
        return Reg(reg.value, reg.tainted)

    def _reg_pointer(self, reg: Reg, ctx: AccessContext) -> PointerValue:
        """A register used as a pointer; integers behave like casts from exposed."""
        if isinstance(reg.value, PointerValue):
            return reg.value
        if isinstance(reg.value, int):
            return self.memory.from_exposed(reg.value % (1 << 64), ctx)
        raise ScenarioUnsupported("aggregate register used as a pointer")

    def _reg_int(self, reg: Reg) -> int:
        if isinstance(reg.value, int):
            return reg.value
        if isinstance(reg.value, PointerValue):
            return self.memory.expose(reg.value)
        raise ScenarioUnsupported("aggregate register used as an integer")

    # ---- stepping ------------------------------------------------------------

    def _step(self, thread: _Thread) -> None:
        frame = thread.frames[-1]
        if frame.pc >= len(frame.fn.body):
            self._do_return(thread, None, frame.fn.body[-1].line if frame.fn.body else frame.fn.line)
            return
        stmt = frame.fn.body[frame.pc]
        frame.pc += 1
        if thread.dialect is Dialect.HOST:
            self._exec_host(thread, stmt)
        else:
            self._exec_foreign(thread, stmt)

    # ---- host execution ------------------------------------------------------

    def _exec_host(self, thread: _Thread, stmt: Stmt) -> None:
        frame = thread.frames[-1]
        ctx = self._ctx(thread, stmt.line, render_stmt(stmt, Dialect.HOST))
        if isinstance(stmt, LetStmt):
            self._host_let(thread, stmt, ctx)
        elif isinstance(stmt, WriteStmt):
            ptr, ty = self._resolve_place(thread, stmt.place, ctx)
            value, vty = self._eval_operand(thread, stmt.value, ctx)
            self._typed_write_value(ptr, ty, value, ctx)
        elif isinstance(stmt, AssumeInitStmt):
            ptr, ty = self._resolve_place(thread, stmt.place, ctx)
            self.memory.assume_init(ptr, size_of(ty), ctx)
        elif isinstance(stmt, AssertEqStmt):
            self._assert_eq(thread, stmt, ctx)
        elif isinstance(stmt, SpawnStmt):
            callee = self.program.function(stmt.callee)
            args = [self._eval_operand(thread, a, ctx)[0] for a in stmt.args]
            child = self._spawn_thread(
                Dialect.HOST, self._make_host_frame(callee, args, ctx), parent=thread.id
            )
            frame.handles[stmt.handle] = child.id
        elif isinstance(stmt, JoinStmt):
            tid = frame.handles.get(stmt.handle)
            if tid is None:
                raise ScenarioUnsupported(f"join of unknown handle '{stmt.handle}'")
            if self.threads[tid].status != "done":
                thread.status = "blocked-join"
                thread.waiting_on = tid
                frame.pc -= 1  # re-run the join once the target finishes
        elif isinstance(stmt, CallStmt):
            self._host_call(thread, stmt, ctx)
        elif isinstance(stmt, ReturnStmt):
            value = None
            if stmt.value is not None:
                value, _ = self._eval_operand(thread, stmt.value, ctx)
            self._do_return(thread, value, stmt.line)
        else:
            raise ScenarioUnsupported(f"statement not executable in host code: {stmt!r}")

    def _host_let(self, thread: _Thread, stmt: LetStmt, ctx: AccessContext) -> None:
        frame = thread.frames[-1]
        rhs = stmt.rhs
        if isinstance(rhs, UninitRhs):
            self._new_slot(frame, stmt.name, stmt.type, ctx)
            return
        if isinstance(rhs, ZeroedRhs):
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self.memory.memset(slot.pointer, 0, size_of(stmt.type), ctx)
            return
        if isinstance(rhs, LiteralRhs):
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, rhs.value, ctx)
            return
        if isinstance(rhs, PlaceRhs):
            src_ptr, src_ty = self._resolve_place(thread, rhs.place, ctx)
            base = frame.slots.get(rhs.place.base)
            if (
                rhs.place.deref
                and base is not None
                and isinstance(base.type, PtrType)
                and base.type.kind is PtrKind.OPAQUE
                and size_of(src_ty) != size_of(stmt.type)
            ):
                raise UbError(
                    DiagnosticKind.INVALID_BINDING,
                    f"load through untyped pointer '{rhs.place.base}' resolves to "
                    f"{size_of(src_ty)} bytes, destination '{stmt.name}' holds "
                    f"{size_of(stmt.type)}",
                )
            value = self._typed_read(src_ptr, src_ty, ctx)
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, value, ctx)
            return
        if isinstance(rhs, BorrowRhs):
            value = self._borrow(thread, rhs, stmt.name, ctx)
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, value, ctx)
            return
        if isinstance(rhs, CastRhs):
            value = self._cast(thread, rhs.source, stmt.type, stmt.name, ctx)
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, value, ctx)
            return
        if isinstance(rhs, OffsetRhs):
            value = self._offset(thread, rhs, ctx)
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, value, ctx)
            return
        if isinstance(rhs, CellGetRhs):
            src_ptr, src_ty = self._resolve_place(thread, rhs.place, ctx)
            if not isinstance(src_ty, CellType):
                raise ScenarioUnsupported(".get() on a place that is not interior-mutable")
            alloc = self.memory.allocations[src_ptr.alloc_id]
            tag = self._retag_through(
                alloc, src_ptr, size_of(src_ty.inner), src_ty.inner, "cell",
                protect=False, label=stmt.name, ctx=ctx,
            )
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, replace(src_ptr, provenance=tag), ctx)
            return
        if isinstance(rhs, HeapNewRhs):
            self._heap_new(thread, stmt, rhs, ctx)
            return
        if isinstance(rhs, HeapIntoRawRhs):
            src = frame.slots.get(rhs.source)
            if src is None or not src.owning:
                raise ScenarioUnsupported(f"'{rhs.source}' is not an owned heap value")
            box, _ = self.memory.read_pointer(src.pointer, ctx=ctx)
            src.moved = True
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            self._typed_write_value(slot.pointer, stmt.type, box, ctx)
            return
        if isinstance(rhs, HeapFromRawRhs):
            value, vty = self._eval_operand(thread, rhs.source, ctx)
            if not isinstance(value, PointerValue):
                raise ScenarioUnsupported("heap_from_raw needs a pointer value")
            if value.alloc_id is None:
                raise UbError(
                    DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                    f"heap_from_raw of 0x{value.address:x}, which points into no live allocation",
                    address=value.address,
                )
            alloc = self.memory.allocations[value.alloc_id]
            pointee = stmt.type.pointee if isinstance(stmt.type, PtrType) else None
            size = size_of(pointee) if pointee is not None else alloc.size
            if self.config.unique_as_mutable:
                tag = self._retag_through(
                    alloc, value, size, pointee if pointee is not None else U8,
                    "mutable-ref", protect=False, label=stmt.name, ctx=ctx,
                )
                value = replace(value, provenance=tag)
            slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
            slot.owning = True
            self._typed_write_value(slot.pointer, stmt.type, value, ctx)
            return
        raise ScenarioUnsupported(f"host let cannot evaluate {type(rhs).__name__}")

    def _heap_new(self, thread: _Thread, stmt: LetStmt, rhs: HeapNewRhs, ctx: AccessContext) -> None:
        frame = thread.frames[-1]
        layout = layout_of(rhs.type)
        alloc, base = self._alloc(
            layout.size, max(layout.align, 1), AllocOrigin.HOST_HEAP, f"{stmt.name} (alloc)", ctx
        )
        if rhs.init == "zeroed":
            self.memory.memset(base, 0, layout.size, ctx)
        elif isinstance(rhs.init, int):
            self._typed_write_value(base, rhs.type, rhs.init, ctx)
        if self.config.unique_as_mutable:
            tag = self._retag_through(
                alloc, base, layout.size, rhs.type, "mutable-ref", protect=False,
                label=stmt.name, ctx=ctx,
            )
            base = replace(base, provenance=tag)
        slot = self._new_slot(frame, stmt.name, stmt.type, ctx)
        slot.owning = True
        self._typed_write_value(slot.pointer, stmt.type, base, ctx)

    def _borrow(self, thread: _Thread, rhs: BorrowRhs, label: str, ctx: AccessContext) -> PointerValue:
        ptr, ty = self._resolve_place(thread, rhs.place, ctx)
        if ptr.alloc_id is None:
            raise UbError(
                DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                f"borrow of a place at 0x{ptr.address:x} outside any live allocation",
                address=ptr.address,
            )
        alloc = self.memory.allocations[ptr.alloc_id]
        kind = {
            BorrowKind.MUT: "mutable-ref",
            BorrowKind.SHARED: "shared-ref",
            BorrowKind.RAW_MUT: "raw-mut",
            BorrowKind.RAW_CONST: "raw-const",
        }[rhs.kind]
        tag = self._retag_through(alloc, ptr, size_of(ty), ty, kind, protect=False, label=label, ctx=ctx)
        return replace(ptr, provenance=tag)

    def _cast(
        self, thread: _Thread, source: str, target: TypeDesc, label: str, ctx: AccessContext
    ) -> HostValue:
        value, src_ty = self._eval_operand(thread, source, ctx)
        if isinstance(src_ty, PtrType) and isinstance(target, PtrType):
            if not isinstance(value, PointerValue):
                return value  # plain integer address stored in a pointer slot
            if is_reference(src_ty) and target.kind in (PtrKind.RAW_MUT, PtrKind.RAW_CONST):
                if value.alloc_id is None:
                    return value
                alloc = self.memory.allocations[value.alloc_id]
                pointee = self._pointee(src_ty, value)
                kind = "raw-mut" if target.kind is PtrKind.RAW_MUT else "raw-const"
                tag = self._retag_through(
                    alloc, value, size_of(pointee), pointee, kind, protect=False, label=label, ctx=ctx
                )
                return replace(value, provenance=tag)
            if is_reference(target):
                raise ScenarioUnsupported("casts cannot create references")
            return value
        if isinstance(src_ty, PtrType) and isinstance(target, IntType):
            if target.size != 8:
                raise ScenarioUnsupported("pointer addresses only fit 8-byte integers")
            if isinstance(value, PointerValue):
                return self.memory.expose(value)
            return value
        if isinstance(src_ty, IntType) and isinstance(target, PtrType):
            if src_ty.size != 8:
                raise ScenarioUnsupported("pointer addresses only fit 8-byte integers")
            addr = value if isinstance(value, int) else 0
            return self.memory.from_exposed(addr % (1 << 64), ctx)
        if isinstance(src_ty, IntType) and isinstance(target, IntType):
            return reinterpret(value, target)
        raise ScenarioUnsupported(f"no cast from {src_ty} to {target}")

    def _offset(self, thread: _Thread, rhs: OffsetRhs, ctx: AccessContext) -> PointerValue:
        value, src_ty = self._eval_operand(thread, rhs.source, ctx)
        count, _ = self._eval_operand(thread, rhs.count, ctx)
        if not isinstance(value, PointerValue) or not isinstance(src_ty, PtrType):
            raise ScenarioUnsupported("offset() applies to pointer values")
        if not isinstance(count, int):
            raise ScenarioUnsupported("offset() count must be an integer")
        elem = self._pointee(src_ty, value)
        return value.with_byte_offset(count * max(size_of(elem), 1))

    def _assert_eq(self, thread: _Thread, stmt: AssertEqStmt, ctx: AccessContext) -> None:
        left, _ = self._eval_operand(thread, stmt.left, ctx)
        right, _ = self._eval_operand(thread, stmt.right, ctx)
        if self._plain(left) != self._plain(right):
            raise UbError(
                DiagnosticKind.ASSERTION_FAILED,
                f"assertion failed: {self._show(left)} != {self._show(right)}",
            )

    @staticmethod
    def _plain(v: HostValue):
        # Pointers compare by address so a round-tripped pointer can be
        # checked against the integer it was cast to.
        if isinstance(v, PointerValue):
            return v.address
        if isinstance(v, Blob):
            return ("blob", v.values)
        return v

    @staticmethod
    def _show(v: HostValue) -> str:
        if isinstance(v, PointerValue):
            return f"0x{v.address:x}"
        if isinstance(v, Blob):
            return f"<{len(v.values)}-byte value>"
        return str(v)

    def _do_return(self, thread: _Thread, value: HostValue, line: int) -> None:
        frame = thread.frames[-1]
        ret_type = frame.fn.ret
        if thread.dialect is Dialect.HOST:
            self._exit_host_frame(thread, line)
            if thread.frames:
                caller = thread.frames[-1]
                pending = caller.pending_dest
                caller.pending_dest = None
                if pending is not None and pending[0] is not None:
                    dest, dest_type = pending
                    ctx = self._ctx(thread, line, "call return")
                    slot = self._new_slot(caller, dest, dest_type, ctx)
                    self._typed_write_value(slot.pointer, dest_type, value, ctx)
            else:
                thread.result = (value, ret_type)
                thread.status = "done"
        else:
            self._exit_foreign_frame(thread, line)
            thread.status = "done"

    # ---- calls ---------------------------------------------------------------

    def _host_call(self, thread: _Thread, stmt: CallStmt, ctx: AccessContext) -> None:
        try:
            binding = self.program.binding(stmt.callee)
        except KeyError:
            binding = None
        if binding is None:
            callee = self.program.function(stmt.callee)
            args = [self._check_host_arg(thread, a, p.type, ctx) for a, p in zip(stmt.args, callee.params)]
            if len(stmt.args) != len(callee.params):
                raise ScenarioUnsupported(
                    f"call to '{callee.name}' passes {len(stmt.args)} arguments, "
                    f"it takes {len(callee.params)}"
                )
            frame = thread.frames[-1]
            frame.pending_dest = (stmt.dest, stmt.dest_type)
            thread.frames.append(self._make_host_frame(callee, args, ctx))
            return
        self._call_foreign(thread, stmt, binding, ctx)

    def _check_host_arg(
        self, thread: _Thread, op: Operand, want: TypeDesc, ctx: AccessContext
    ) -> HostValue:
        value, ty = self._eval_operand(thread, op, ctx)
        if isinstance(op, int):
            return value
        if not assignable(ty, want):
            raise ScenarioUnsupported(f"argument of type {ty} where {want} is expected")
        return value

    def _call_foreign(
        self, thread: _Thread, stmt: CallStmt, binding, ctx: AccessContext
    ) -> None:
        callee = self.program.function(binding.target)
        if len(stmt.args) < len(binding.params) or (
            len(stmt.args) > len(binding.params) and not binding.variadic
        ):
            raise UbError(
                DiagnosticKind.INVALID_BINDING,
                f"call passes {len(stmt.args)} arguments, binding '{binding.name}' "
                f"declares {len(binding.params)}",
            )
        plan = plan_call(binding, callee)
        regs: list[Reg] = []
        for arg_plan, op in zip(plan.args, stmt.args):
            value = self._check_host_arg(thread, op, arg_plan.source, ctx)
            regs.extend(self._outbound(arg_plan, value, ctx))
        for op in stmt.args[len(binding.params):]:
            value, ty = self._eval_operand(thread, op, ctx)
            regs.extend(self._outbound(plan_variadic_arg(ty), value, ctx))
        frame = _Frame(fn=callee)
        for param, reg in zip(callee.params, regs):
            frame.regs[param.name] = reg
        # Extras land as vararg0, vararg1, ... in caller order.
        for i, reg in enumerate(regs[len(callee.params):]):
            frame.regs[f"vararg{i}"] = reg
        child = self._spawn_thread(Dialect.FOREIGN, frame, parent=thread.id)
        thread.status = "blocked-call"
        thread.waiting_on = child.id
        thread.recv = (plan.ret, stmt.dest, stmt.dest_type)

    def _outbound(self, plan: ArgPlan, value: HostValue, ctx: AccessContext) -> list[Reg]:
        mode = plan.mode
        if mode is ArgMode.UNIT:
            return [Reg(0)]
        if mode is ArgMode.SCALAR:
            target = plan.targets[0]
            if isinstance(value, PointerValue):
                value = self.memory.expose(value)
            return [Reg(reinterpret(value, target if isinstance(target, IntType) else IntType(64, False)))]
        if mode is ArgMode.POINTER:
            if isinstance(value, int):
                value = PointerValue(value % (1 << 64), None, value % (1 << 64), None)
            return [Reg(value)]
        if mode is ArgMode.EXPOSE:
            if isinstance(value, PointerValue):
                return [Reg(self.memory.expose(value))]
            return [Reg(value if isinstance(value, int) else 0)]
        if mode is ArgMode.REHYDRATE:
            addr = value if isinstance(value, int) else 0
            return [Reg(self.memory.from_exposed(addr % (1 << 64), ctx))]
        if mode is ArgMode.BLOB:
            if isinstance(value, Blob):
                return [self._blob_to_int_reg(value, plan.targets[0])]
            # Integer crossing into a by-value aggregate: raw bytes, fully set.
            size = size_of(plan.targets[0])
            raw = (value % (1 << (8 * size))).to_bytes(size, "little") if isinstance(value, int) else b""
            return [Reg(Blob(tuple(raw), ()))]
        if mode is ArgMode.AGGREGATE:
            if not isinstance(value, Blob):
                raise ScenarioUnsupported("aggregate argument did not evaluate to bytes")
            return [Reg(value)]
        if mode is ArgMode.FLATTEN:
            if not isinstance(value, Blob):
                raise ScenarioUnsupported("aggregate argument did not evaluate to bytes")
            src = plan.source
            layout = layout_of(src)
            regs = []
            offsets: list[int]
            if isinstance(src, StructType):
                offsets = list(layout.field_offsets)
                widths = [size_of(f.type) for f in src.fields]
            else:
                widths = [size_of(src.elem)] * src.count
                offsets = [i * widths[0] for i in range(src.count)]
            for off, width, target in zip(offsets, widths, plan.targets):
                piece = Blob(value.values[off : off + width], ())
                regs.append(self._blob_to_int_reg(piece, target))
            return regs
        raise ScenarioUnsupported(f"no outbound conversion for {mode}")

    def _blob_to_int_reg(self, blob: Blob, target: TypeDesc) -> Reg:
        tainted = False
        raw = []
        for i, v in enumerate(blob.values):
            if v is None:
                if not self.config.permissive_foreign:
                    raise UbError(
                        DiagnosticKind.UNINITIALIZED_READ,
                        f"by-value crossing reads uninitialized byte {i} of an aggregate",
                    )
                tainted = True
                v = 0
            raw.append(v)
        value = int.from_bytes(bytes(raw), "little")
        if isinstance(target, IntType):
            value = reinterpret(value, target)
        return Reg(value, tainted)

    def _receive(
        self,
        thread: _Thread,
        callee_thread: _Thread,
        plan: Optional[ArgPlan],
        dest: Optional[str],
        dest_type: Optional[TypeDesc],
    ) -> None:
        ctx = self._ctx(thread, self._current_line(thread), "call return")
        if thread.dialect is Dialect.HOST:
            reg = callee_thread.result_reg or Reg(0, tainted=True)
            value = self._inbound(plan, reg, dest_type, ctx)
            if dest is not None:
                frame = thread.frames[-1]
                slot = self._new_slot(frame, dest, dest_type, ctx)
                self._typed_write_value(slot.pointer, dest_type, value, ctx)
        else:
            result = callee_thread.result or (None, UnitType())
            value, _ = result
            if dest is not None:
                reg = self._host_value_to_reg(value)
                thread.frames[-1].regs[dest] = reg

    def _host_value_to_reg(self, value: HostValue) -> Reg:
        if isinstance(value, (int, PointerValue, Blob)):
            return Reg(value)
        return Reg(0)

    def _current_line(self, thread: _Thread) -> int:
        frame = thread.frames[-1]
        if not frame.fn.body:
            return frame.fn.line
        idx = min(max(frame.pc - 1, 0), len(frame.fn.body) - 1)
        return frame.fn.body[idx].line

    def _inbound(
        self, plan: Optional[ArgPlan], reg: Reg, dest_type: Optional[TypeDesc], ctx: AccessContext
    ) -> HostValue:
        if plan is None or plan.mode in (ArgMode.UNIT, ArgMode.DISCARD):
            return None
        if reg.tainted:
            raise UbError(
                DiagnosticKind.UNINITIALIZED_READ,
                "foreign call returned a value derived from uninitialized memory",
            )
        mode = plan.mode
        target = plan.targets[0]
        if mode is ArgMode.SCALAR:
            value = self._reg_int(reg)
            return reinterpret(value, target if isinstance(target, IntType) else IntType(64, False))
        if mode is ArgMode.POINTER:
            return self._reg_pointer(reg, ctx)
        if mode is ArgMode.EXPOSE:
            return self._reg_int(reg) % (1 << 64)
        if mode is ArgMode.REHYDRATE:
            return self._reg_pointer(reg, ctx)
        if mode is ArgMode.BLOB:
            if isinstance(target, IntType):
                if isinstance(reg.value, Blob):
                    return self._blob_to_int_reg(reg.value, target).value
                return reinterpret(self._reg_int(reg), target)
            size = size_of(target)
            raw = (self._reg_int(reg) % (1 << (8 * size))).to_bytes(size, "little")
            return Blob(tuple(raw), ())
        if mode is ArgMode.AGGREGATE:
            if not isinstance(reg.value, Blob):
                raise ScenarioUnsupported("aggregate return did not arrive as bytes")
            return reg.value
        raise ScenarioUnsupported(f"no inbound conversion for {mode}")

    # ---- foreign execution ---------------------------------------------------

    def _exec_foreign(self, thread: _Thread, stmt: Stmt) -> None:
        frame = thread.frames[-1]
        ctx = self._ctx(thread, stmt.line, render_stmt(stmt, Dialect.FOREIGN))
        if isinstance(stmt, LetStmt):
            frame.regs[stmt.name] = self._foreign_let(thread, stmt, ctx)
        elif isinstance(stmt, StoreStmt):
            ptr = self._reg_pointer(self._foreign_operand(thread, stmt.pointer), ctx)
            reg = self._foreign_operand(thread, stmt.value)
            size = size_of(stmt.type)
            if reg.tainted:
                # A value derived from uninitialized memory stays
                # uninitialized when written back.
                alloc = self.memory.check_access(ptr, size, size, "write", ctx)
                for i in range(size):
                    off = ptr.offset + i
                    alloc.values[off] = None
                    alloc.fragments.pop(off, None)
            elif isinstance(reg.value, PointerValue) and size == 8:
                self.memory.write_pointer(ptr, reg.value, ctx)
            else:
                self.memory.write_int(ptr, size, reinterpret(self._reg_int(reg), IntType(8 * size, False)), ctx=ctx)
        elif isinstance(stmt, FreeStmt):
            ptr = self._reg_pointer(self._foreign_operand(thread, stmt.pointer), ctx)
            self.memory.deallocate(ptr, "foreign", ctx)
        elif isinstance(stmt, MemsetStmt):
            ptr = self._reg_pointer(self._foreign_operand(thread, stmt.pointer), ctx)
            value = self._reg_int(self._foreign_operand(thread, stmt.value))
            size = self._reg_int(self._foreign_operand(thread, stmt.size))
            self.memory.memset(ptr, value, size, ctx)
        elif isinstance(stmt, MemcpyStmt):
            dest = self._reg_pointer(self._foreign_operand(thread, stmt.dest), ctx)
            src = self._reg_pointer(self._foreign_operand(thread, stmt.src), ctx)
            size = self._reg_int(self._foreign_operand(thread, stmt.size))
            self.memory.memcpy(dest, src, size, ctx)
        elif isinstance(stmt, CallStmt):
            self._foreign_call(thread, stmt, ctx)
        elif isinstance(stmt, ReturnStmt):
            if stmt.value is not None:
                thread.result_reg = self._foreign_operand(thread, stmt.value)
            self._do_return(thread, None, stmt.line)
        else:
            raise ScenarioUnsupported(f"statement not executable in foreign code: {stmt!r}")

    def _foreign_let(self, thread: _Thread, stmt: LetStmt, ctx: AccessContext) -> Reg:
        rhs = stmt.rhs
        if isinstance(rhs, LiteralRhs):
            return Reg(rhs.value)
        if isinstance(rhs, PlaceRhs):
            return self._foreign_operand(thread, rhs.place.base)
        if isinstance(rhs, LoadRhs):
            ptr = self._reg_pointer(self._foreign_operand(thread, rhs.pointer), ctx)
            ty = rhs.type
            if isinstance(ty, PtrType):
                value, tainted = self.memory.read_pointer(
                    ptr, ctx=ctx, permissive=self.config.permissive_foreign
                )
                return Reg(value, tainted)
            if isinstance(ty, IntType):
                value, tainted = self.memory.read_int(
                    ptr, ty.size, ty.signed, ctx=ctx, permissive=self.config.permissive_foreign
                )
                return Reg(value, tainted)
            raise ScenarioUnsupported(f"foreign load of type {ty}")
        if isinstance(rhs, MallocRhs):
            size = self._reg_int(self._foreign_operand(thread, rhs.size))
            alloc, base = self._alloc(size, 16, AllocOrigin.FOREIGN_HEAP, stmt.name, ctx)
            return Reg(base)
        if isinstance(rhs, AllocaRhs):
            size = self._reg_int(self._foreign_operand(thread, rhs.size))
            alloc, base = self._alloc(size, 16, AllocOrigin.FOREIGN_STACK, stmt.name, ctx)
            thread.frames[-1].stack_allocs.append(alloc.id)
            return Reg(base)
        if isinstance(rhs, GepRhs):
            reg = self._foreign_operand(thread, rhs.pointer)
            off = self._reg_int(self._foreign_operand(thread, rhs.offset))
            ptr = self._reg_pointer(reg, ctx)
            return Reg(ptr.with_byte_offset(off), reg.tainted)
        raise ScenarioUnsupported(f"foreign let cannot evaluate {type(rhs).__name__}")

    def _foreign_call(self, thread: _Thread, stmt: CallStmt, ctx: AccessContext) -> None:
        callee = self.program.function(stmt.callee)
        if len(stmt.args) != len(callee.params):
            raise UbError(
                DiagnosticKind.INVALID_BINDING,
                f"callback '{callee.name}' takes {len(callee.params)} parameters, "
                f"call passes {len(stmt.args)}",
            )
        args: list[HostValue] = []
        for op, param in zip(stmt.args, callee.params):
            reg = self._foreign_operand(thread, op)
            args.append(self._reg_to_host(reg, param.type, ctx))
        child = self._spawn_thread(
            Dialect.HOST, self._make_host_frame(callee, args, ctx), parent=thread.id
        )
        thread.status = "blocked-call"
        thread.waiting_on = child.id
        thread.recv = (None, stmt.dest, None)

    def _reg_to_host(self, reg: Reg, want: TypeDesc, ctx: AccessContext) -> HostValue:
        if reg.tainted:
            raise UbError(
                DiagnosticKind.UNINITIALIZED_READ,
                "value derived from uninitialized memory passed into host code",
            )
        if isinstance(want, CellType):
            want = want.inner
        if isinstance(want, IntType):
            if isinstance(reg.value, PointerValue):
                if want.size != 8:
                    raise UbError(
                        DiagnosticKind.INVALID_BINDING,
                        f"pointer passed for {want.size}-byte integer parameter",
                    )
                return self.memory.expose(reg.value)
            return reinterpret(self._reg_int(reg), want)
        if isinstance(want, PtrType):
            return self._reg_pointer(reg, ctx)
        if isinstance(want, (StructType, ArrayType)):
            if isinstance(reg.value, Blob):
                return reg.value
            raise ScenarioUnsupported(
                f"aggregate parameter of type {want} needs a by-value aggregate argument"
            )
        if isinstance(want, UnitType):
            return None
        raise ScenarioUnsupported(f"cannot pass a value for parameter type {want}")


def run_program(program: ScenarioProgram, config: Optional[MachineConfig] = None) -> Outcome:
    return Machine(program, config).run()
