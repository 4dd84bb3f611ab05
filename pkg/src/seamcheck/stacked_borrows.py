"""Per-location borrow stacks (the sb model).

Where the tree model judges accesses lazily, stacks assert at retag time:
creating a mutable reference performs a write-grade assertion through the
parent tag (popping everything above the parent's granting item) before
pushing a Unique item, and a shared reference performs a read-grade
assertion before pushing SharedReadOnly. Raw-pointer casts assert nothing:
a mut cast inserts SharedReadWrite just above the item it derives from, a
const cast pushes SharedReadOnly on top. Interior-mutable locations get
SharedReadWrite wherever a shared form would get SharedReadOnly.

Accesses find the topmost item carrying the accessing tag. Writes pop every
item above it; reads remove only the write-granting items above it. Popping
a protected item is an error, as is deallocating while any protected item
remains. A tag with no item left in the stack is gone for good: using it
reports the access as out of bounds of what the pointer was ever granted.

Wildcard provenance resolves eagerly to the topmost item that grants the
access, then behaves as if that item had been named.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .diagnostics import DiagnosticKind, TagEvent, TagHistory
from .memory import WILDCARD, AccessContext, Provenance, UbError

Range = tuple[int, int]


class Grant(enum.Enum):
    UNIQUE = "Unique"
    SHARED_RW = "SharedReadWrite"
    SHARED_RO = "SharedReadOnly"

    @property
    def allows_write(self) -> bool:
        return self is not Grant.SHARED_RO


@dataclass
class _Item:
    tag: int
    grant: Grant
    protected: bool = False


@dataclass
class _TagInfo:
    label: str
    created: TagEvent
    last_use: Optional[TagEvent] = None
    invalidated: Optional[TagEvent] = None


def _in_ranges(off: int, ranges: tuple[Range, ...]) -> bool:
    return any(a <= off < b for a, b in ranges)


class StackedBorrowTracker:
    """Borrow stacks for a single allocation, one stack per byte."""

    model = "sb"

    def __init__(
        self,
        alloc_id: int,
        size: int,
        tag_source: Callable[[], int],
        root_label: str,
        ctx: Optional[AccessContext] = None,
    ) -> None:
        self.alloc_id = alloc_id
        self.size = size
        self._tag_source = tag_source
        ctx = ctx or AccessContext()
        self.root_tag = tag_source()
        self.stacks: dict[int, list[_Item]] = {
            off: [_Item(self.root_tag, Grant.UNIQUE)] for off in range(size)
        }
        self.tags: dict[int, _TagInfo] = {
            self.root_tag: _TagInfo(root_label, TagEvent(ctx.line, f"allocation of alloc#{alloc_id}"))
        }
        self._order: list[int] = [self.root_tag]

    # ---- helpers -------------------------------------------------------------

    def _find(self, stack: list[_Item], tag: int) -> Optional[int]:
        for i in range(len(stack) - 1, -1, -1):
            if stack[i].tag == tag:
                return i
        return None

    def _record_pop(self, item: _Item, cause: str, ctx: AccessContext) -> None:
        info = self.tags[item.tag]
        if info.invalidated is None:
            info.invalidated = TagEvent(ctx.line, cause)

    def _pop_above(self, stack: list[_Item], index: int, cause: str, ctx: AccessContext, off: int) -> None:
        """Write semantics: remove everything above the granting item."""
        while len(stack) > index + 1:
            item = stack[-1]
            if item.protected:
                raise self._error(
                    DiagnosticKind.PROTECTED_PERMISSION,
                    f"{cause} at alloc#{self.alloc_id}+{off} would pop protected "
                    f"tag#{item.tag} ('{self.tags[item.tag].label}')",
                    off,
                )
            stack.pop()
            self._record_pop(item, cause, ctx)

    def _disable_writers_above(
        self, stack: list[_Item], index: int, cause: str, ctx: AccessContext, off: int
    ) -> None:
        """Read semantics: remove only write-granting items above the granting one."""
        i = len(stack) - 1
        while i > index:
            item = stack[i]
            if item.grant.allows_write:
                if item.protected:
                    raise self._error(
                        DiagnosticKind.PROTECTED_PERMISSION,
                        f"{cause} at alloc#{self.alloc_id}+{off} would pop protected "
                        f"tag#{item.tag} ('{self.tags[item.tag].label}')",
                        off,
                    )
                stack.pop(i)
                self._record_pop(item, cause, ctx)
            i -= 1

    # ---- operations ----------------------------------------------------------

    def retag(
        self,
        parent: int,
        rng: Range,
        kind: str,
        cell_ranges: tuple[Range, ...],
        protect: bool,
        label: str,
        ctx: Optional[AccessContext] = None,
    ) -> int:
        ctx = ctx or AccessContext()
        tag = self._tag_source()
        self.tags[tag] = _TagInfo(
            label, TagEvent(ctx.line, f"{kind} retag of [{rng[0]}..{rng[1]}) from tag#{parent}")
        )
        self._order.append(tag)
        cause = f"{kind} retag for tag#{tag} ('{label}')"
        for off in range(rng[0], rng[1]):
            stack = self.stacks[off]
            idx = self._find(stack, parent)
            if idx is None:
                raise self._error(
                    DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                    f"retag at alloc#{self.alloc_id}+{off}: no item for parent tag#{parent} "
                    f"('{self.tags[parent].label if parent in self.tags else '?'}') in the borrow stack"
                    + self._invalidation_note(parent),
                    off,
                )
            parent_item = stack[idx]
            if kind == "mutable-ref":
                if not parent_item.grant.allows_write:
                    raise self._error(
                        DiagnosticKind.INSUFFICIENT_PERMISSION,
                        f"mutable retag at alloc#{self.alloc_id}+{off} through read-only "
                        f"tag#{parent} ('{self.tags[parent].label}')",
                        off,
                    )
                self._pop_above(stack, idx, cause, ctx, off)
                stack.append(_Item(tag, Grant.UNIQUE, protect))
            elif kind == "shared-ref":
                self._disable_writers_above(stack, idx, cause, ctx, off)
                grant = Grant.SHARED_RW if _in_ranges(off, cell_ranges) else Grant.SHARED_RO
                stack.append(_Item(tag, grant, protect))
            elif kind in ("raw-mut", "cell"):
                stack.insert(idx + 1, _Item(tag, Grant.SHARED_RW, protect))
            elif kind == "raw-const":
                grant = Grant.SHARED_RW if _in_ranges(off, cell_ranges) else Grant.SHARED_RO
                stack.append(_Item(tag, grant, protect))
            else:
                raise ValueError(f"unknown retag kind: {kind}")
        return tag

    def access(self, prov: Provenance, rng: Range, kind: str, ctx: Optional[AccessContext] = None) -> None:
        ctx = ctx or AccessContext()
        for off in range(rng[0], rng[1]):
            stack = self.stacks[off]
            if prov is WILDCARD:
                idx = None
                for i in range(len(stack) - 1, -1, -1):
                    if kind == "read" or stack[i].grant.allows_write:
                        idx = i
                        break
                if idx is None:
                    raise self._error(
                        DiagnosticKind.INSUFFICIENT_PERMISSION,
                        f"{kind} via exposed address at alloc#{self.alloc_id}+{off}: "
                        f"no item in the borrow stack grants it",
                        off,
                    )
                cause = f"{kind} via exposed address"
                tag_for_history = stack[idx].tag
            else:
                if not isinstance(prov, int):
                    raise ValueError(
                        f"access with no provenance reached the tracker in alloc#{self.alloc_id}"
                    )
                idx = self._find(stack, prov)
                label = self.tags[prov].label if prov in self.tags else "?"
                if idx is None:
                    raise self._error(
                        DiagnosticKind.ACCESS_OUT_OF_BOUNDS,
                        f"{kind} at alloc#{self.alloc_id}+{off}: no item for tag#{prov} "
                        f"('{label}') in the borrow stack" + self._invalidation_note(prov),
                        off,
                    )
                if kind == "write" and not stack[idx].grant.allows_write:
                    raise self._error(
                        DiagnosticKind.INSUFFICIENT_PERMISSION,
                        f"write at alloc#{self.alloc_id}+{off} through tag#{prov} ('{label}'), "
                        f"which grants only reads",
                        off,
                    )
                cause = f"{kind} via tag#{prov} ('{label}')"
                tag_for_history = prov
            if kind == "write":
                self._pop_above(stack, idx, cause, ctx, off)
            else:
                self._disable_writers_above(stack, idx, cause, ctx, off)
            info = self.tags.get(tag_for_history)
            if info is not None:
                info.last_use = TagEvent(ctx.line, f"{kind} of [{rng[0]}..{rng[1]})")

    def protector_end(self, tag: int) -> None:
        for stack in self.stacks.values():
            for item in stack:
                if item.tag == tag:
                    item.protected = False

    def dealloc_check(self, ctx: Optional[AccessContext] = None) -> None:
        for off in sorted(self.stacks):
            for item in self.stacks[off]:
                if item.protected:
                    raise self._error(
                        DiagnosticKind.PROTECTED_PERMISSION,
                        f"deallocation of alloc#{self.alloc_id} while tag#{item.tag} "
                        f"('{self.tags[item.tag].label}') is protected",
                        off,
                    )

    # ---- rendering and history -----------------------------------------------

    def _invalidation_note(self, tag: int) -> str:
        info = self.tags.get(tag)
        if info is None or info.invalidated is None:
            return ""
        return f" (invalidated at line {info.invalidated.line}: {info.invalidated.description})"

    def _error(self, kind: DiagnosticKind, message: str, off: Optional[int]) -> UbError:
        return UbError(
            kind,
            message,
            history=self.history(),
            snapshot=self.render(off) if off is not None else self.render(),
        )

    def history(self) -> tuple[TagHistory, ...]:
        return tuple(
            TagHistory(
                tag=tag,
                label=info.label,
                created=info.created,
                last_valid_use=info.last_use,
                invalidated=info.invalidated,
            )
            for tag, info in ((t, self.tags[t]) for t in self._order)
        )

    def _stack_text(self, stack: list[_Item]) -> str:
        parts = []
        for item in stack:
            text = f"{self.tags[item.tag].label}: {item.grant.value}"
            if item.protected:
                text += " (protected)"
            parts.append(text)
        return "[" + ", ".join(parts) + "]"

    def render(self, off: Optional[int] = None) -> str:
        """Bottom-to-top stack drawing, per byte or coalesced over equal runs."""
        if off is not None:
            return self._stack_text(self.stacks[off])
        lines = []
        start = 0
        while start < self.size:
            text = self._stack_text(self.stacks[start])
            end = start + 1
            while end < self.size and self._stack_text(self.stacks[end]) == text:
                end += 1
            lines.append(f"[{start}..{end}) {text}")
            start = end
        return "\n".join(lines) if lines else "[]"

    def serialize(self) -> str:
        parts = []
        for off in sorted(self.stacks):
            items = ";".join(
                f"{i.tag}:{i.grant.value}:{int(i.protected)}" for i in self.stacks[off]
            )
            parts.append(f"{off}|{items}")
        return "\n".join(parts)
