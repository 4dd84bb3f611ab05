"""Diagnostics, run outcomes, deduplication, and report rendering.

A diagnostic carries both halves of the cross-dialect trace plus, for
aliasing errors, the permission history of the tags involved and a rendered
tracker snapshot. Deduplication keys are built from the error class, an
address-stripped message, and a trace fingerprint; they never contain
absolute addresses or allocation ids, so runs that differ only in address
assignment collapse to the same key.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional


class DiagnosticKind(enum.Enum):
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
class TraceFrame:
    dialect: str  # "host" or "foreign"
    function: str
    line: int
    statement: str


@dataclass(frozen=True)
class TagEvent:
    line: int
    description: str


@dataclass(frozen=True)
class TagHistory:
    """Creation, last valid use, and invalidation record for one tag."""

    tag: int
    label: str
    created: TagEvent
    last_valid_use: Optional[TagEvent] = None
    invalidated: Optional[TagEvent] = None


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    message: str
    host_trace: tuple[TraceFrame, ...] = ()
    foreign_trace: tuple[TraceFrame, ...] = ()
    permission_history: tuple[TagHistory, ...] = ()
    tracker_snapshot: Optional[str] = None
    allocation_origin: Optional[str] = None
    address: Optional[int] = None


class Classification(enum.Enum):
    PASS = "pass"
    BUG = "bug"
    UNSUPPORTED = "unsupported"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Outcome:
    classification: Classification
    diagnostics: tuple[Diagnostic, ...] = ()
    leaks: tuple[Diagnostic, ...] = ()
    note: str = ""  # human-readable cause for unsupported/timeout outcomes

    @property
    def bug_kind(self) -> Optional[DiagnosticKind]:
        if self.classification is Classification.BUG and self.diagnostics:
            return self.diagnostics[0].kind
        return None

    @property
    def is_violation(self) -> bool:
        return self.classification is Classification.BUG


@dataclass(frozen=True)
class DedupKey:
    exit_class: str
    normalized_log: str
    trace_fingerprint: tuple[str, ...]


_ADDR_RE = re.compile(r"0x[0-9a-fA-F]+")
_ALLOC_RE = re.compile(r"alloc#\d+")
_TAG_RE = re.compile(r"tag#\d+")


def _strip_identifiers(text: str) -> str:
    text = _ADDR_RE.sub("<addr>", text)
    text = _ALLOC_RE.sub("alloc#<id>", text)
    text = _TAG_RE.sub("tag#<id>", text)
    return text


def _frame_key(f: TraceFrame) -> str:
    return f"{f.dialect}:{f.function}:{f.line}"


def normalize(diag: Diagnostic, *, include_boundary_frame: bool = True) -> DedupKey:
    """Dedup key for one diagnostic.

    Foreign-located errors keep the foreign frames plus, by default, the first
    host frame at the boundary; errors located in host code keep only the
    innermost host frame. Addresses, allocation ids, and tag numbers are
    replaced by placeholders in the log half of the key.
    """
    if diag.foreign_trace:
        frames = [_frame_key(f) for f in diag.foreign_trace]
        if include_boundary_frame and diag.host_trace:
            frames.append(_frame_key(diag.host_trace[0]))
    elif diag.host_trace:
        frames = [_frame_key(diag.host_trace[0])]
    else:
        frames = []
    return DedupKey(
        exit_class=diag.kind.value,
        normalized_log=_strip_identifiers(diag.message),
        trace_fingerprint=tuple(frames),
    )


def outcome_key(outcome: Outcome, *, include_boundary_frame: bool = True) -> DedupKey:
    """Dedup key for a whole run outcome.

    Bug outcomes key on their primary diagnostic; leak-only passes key on the
    first leak record; everything else keys on the bare classification.
    """
    if outcome.classification is Classification.BUG and outcome.diagnostics:
        return normalize(outcome.diagnostics[0], include_boundary_frame=include_boundary_frame)
    if outcome.classification is Classification.PASS and outcome.leaks:
        return normalize(outcome.leaks[0], include_boundary_frame=include_boundary_frame)
    if outcome.diagnostics:
        d = outcome.diagnostics[0]
        return DedupKey(outcome.classification.value, _strip_identifiers(d.message), ())
    return DedupKey(outcome.classification.value, _strip_identifiers(outcome.note), ())


def dedup(items: Iterable[tuple[str, Outcome]]) -> dict[DedupKey, list[str]]:
    """Partition labelled outcomes by dedup key.

    Insertion order of keys follows first occurrence, so output is
    deterministic for a deterministically ordered input. The partition is
    idempotent: feeding each group's representative back in reproduces the
    same keys.
    """
    groups: dict[DedupKey, list[str]] = {}
    for label, outcome in items:
        groups.setdefault(outcome_key(outcome), []).append(label)
    return groups


# ---- serialization -----------------------------------------------------------


def _frame_to_dict(f: TraceFrame) -> dict:
    return {"dialect": f.dialect, "function": f.function, "line": f.line, "statement": f.statement}


def _frame_from_dict(d: dict) -> TraceFrame:
    return TraceFrame(d["dialect"], d["function"], d["line"], d["statement"])


def _event_to_dict(e: Optional[TagEvent]) -> Optional[dict]:
    return None if e is None else {"line": e.line, "description": e.description}


def _event_from_dict(d: Optional[dict]) -> Optional[TagEvent]:
    return None if d is None else TagEvent(d["line"], d["description"])


def _history_to_dict(h: TagHistory) -> dict:
    return {
        "tag": h.tag,
        "label": h.label,
        "created": _event_to_dict(h.created),
        "last_valid_use": _event_to_dict(h.last_valid_use),
        "invalidated": _event_to_dict(h.invalidated),
    }


def _history_from_dict(d: dict) -> TagHistory:
    return TagHistory(
        tag=d["tag"],
        label=d["label"],
        created=_event_from_dict(d["created"]),
        last_valid_use=_event_from_dict(d["last_valid_use"]),
        invalidated=_event_from_dict(d["invalidated"]),
    )


def diagnostic_to_dict(d: Diagnostic) -> dict:
    return {
        "kind": d.kind.value,
        "message": d.message,
        "host_trace": [_frame_to_dict(f) for f in d.host_trace],
        "foreign_trace": [_frame_to_dict(f) for f in d.foreign_trace],
        "permission_history": [_history_to_dict(h) for h in d.permission_history],
        "tracker_snapshot": d.tracker_snapshot,
        "allocation_origin": d.allocation_origin,
        "address": d.address,
    }


def diagnostic_from_dict(d: dict) -> Diagnostic:
    return Diagnostic(
        kind=DiagnosticKind(d["kind"]),
        message=d["message"],
        host_trace=tuple(_frame_from_dict(f) for f in d["host_trace"]),
        foreign_trace=tuple(_frame_from_dict(f) for f in d["foreign_trace"]),
        permission_history=tuple(_history_from_dict(h) for h in d["permission_history"]),
        tracker_snapshot=d["tracker_snapshot"],
        allocation_origin=d["allocation_origin"],
        address=d["address"],
    )


def outcome_to_dict(o: Outcome) -> dict:
    return {
        "classification": o.classification.value,
        "bug_kind": o.bug_kind.value if o.bug_kind else None,
        "diagnostics": [diagnostic_to_dict(d) for d in o.diagnostics],
        "leaks": [diagnostic_to_dict(d) for d in o.leaks],
        "note": o.note,
    }


def outcome_from_dict(d: dict) -> Outcome:
    return Outcome(
        classification=Classification(d["classification"]),
        diagnostics=tuple(diagnostic_from_dict(x) for x in d["diagnostics"]),
        leaks=tuple(diagnostic_from_dict(x) for x in d["leaks"]),
        note=d.get("note", ""),
    )


def dedup_key_to_dict(k: DedupKey) -> dict:
    return {
        "exit_class": k.exit_class,
        "normalized_log": k.normalized_log,
        "trace_fingerprint": list(k.trace_fingerprint),
    }


# ---- text rendering ----------------------------------------------------------


def render_diagnostic(d: Diagnostic) -> str:
    lines = [f"error[{d.kind.value}]: {d.message}"]
    for name, trace in (("host", d.host_trace), ("foreign", d.foreign_trace)):
        if trace:
            lines.append(f"  {name} trace:")
            for f in trace:
                lines.append(f"    at {f.function}:{f.line}  {f.statement}")
    if d.permission_history:
        lines.append("  permission history:")
        for h in d.permission_history:
            lines.append(f"    tag#{h.tag} '{h.label}' created at line {h.created.line}: {h.created.description}")
            if h.last_valid_use is not None:
                lines.append(f"      last valid use at line {h.last_valid_use.line}: {h.last_valid_use.description}")
            if h.invalidated is not None:
                lines.append(f"      invalidated at line {h.invalidated.line}: {h.invalidated.description}")
    if d.tracker_snapshot:
        lines.append("  borrow state:")
        for snap_line in d.tracker_snapshot.splitlines():
            lines.append(f"    {snap_line}")
    return "\n".join(lines)


def render(d: Diagnostic, format: str = "text"):
    """One diagnostic in the requested format: text block or structured dict.

    The structured form is lossless: diagnostic_from_dict(render(d, "json"))
    compares equal to the original.
    """
    if format == "text":
        return render_diagnostic(d)
    if format == "json":
        return diagnostic_to_dict(d)
    raise ValueError(f"unknown format: {format}")


def json_dumps(payload: dict) -> str:
    """Stable serialization used everywhere a report is compared byte-wise."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
