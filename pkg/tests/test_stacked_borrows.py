"""Per-byte borrow stacks: retag kinds, pop discipline, wildcard resolution."""

import itertools

import pytest

from seamcheck.diagnostics import DiagnosticKind
from seamcheck.memory import WILDCARD, AccessContext, UbError
from seamcheck.stacked_borrows import Grant, StackedBorrowTracker


def _tracker(size=4):
    counter = itertools.count(1)
    return StackedBorrowTracker(1, size, lambda: next(counter), "root")


def _ctx(line=1, description="test access"):
    return AccessContext(line=line, description=description)


def _stack(t, off=0):
    return [(item.tag, item.grant) for item in t.stacks[off]]


def test_root_item_is_unique():
    t = _tracker()
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE)]


def test_mutable_retag_pushes_unique_on_top():
    t = _tracker()
    child = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "child", _ctx())
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE), (child, Grant.UNIQUE)]


def test_mutable_retag_pops_items_above_the_parent():
    t = _tracker()
    a = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx())
    b = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "b", _ctx())
    assert all(tag != a for tag, _ in _stack(t))
    assert _stack(t)[-1] == (b, Grant.UNIQUE)


def test_mutable_retag_through_read_only_parent_is_insufficient():
    t = _tracker()
    shared = t.retag(t.root_tag, (0, 4), "shared-ref", (), False, "shared", _ctx())
    with pytest.raises(UbError) as e:
        t.retag(shared, (0, 4), "mutable-ref", (), False, "bad", _ctx())
    assert e.value.kind is DiagnosticKind.INSUFFICIENT_PERMISSION


def test_shared_retag_pushes_read_only_and_removes_writers_above():
    t = _tracker()
    writer = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "writer", _ctx())
    reader = t.retag(t.root_tag, (0, 4), "shared-ref", (), False, "reader", _ctx())
    tags = [tag for tag, _ in _stack(t)]
    assert writer not in tags
    assert _stack(t)[-1] == (reader, Grant.SHARED_RO)


def test_shared_retag_grants_writes_on_cell_bytes():
    t = _tracker()
    reader = t.retag(t.root_tag, (0, 4), "shared-ref", ((1, 3),), False, "reader", _ctx())
    assert t.stacks[0][-1].grant is Grant.SHARED_RO
    assert t.stacks[1][-1].grant is Grant.SHARED_RW
    assert t.stacks[2][-1].grant is Grant.SHARED_RW
    assert t.stacks[3][-1].grant is Grant.SHARED_RO


def test_raw_mut_retag_inserts_above_granting_item():
    t = _tracker()
    ref = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "ref", _ctx())
    raw = t.retag(t.root_tag, (0, 4), "raw-mut", (), False, "raw", _ctx())
    # The raw alias slots in directly above root, below the reference.
    assert _stack(t) == [
        (t.root_tag, Grant.UNIQUE),
        (raw, Grant.SHARED_RW),
        (ref, Grant.UNIQUE),
    ]


def test_raw_const_retag_pushes_on_top():
    t = _tracker()
    ref = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "ref", _ctx())
    raw = t.retag(ref, (0, 4), "raw-const", (), False, "raw", _ctx())
    assert _stack(t)[-1] == (raw, Grant.SHARED_RO)


def test_write_pops_everything_above_the_granting_item():
    t = _tracker()
    ref = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "ref", _ctx())
    top = t.retag(ref, (0, 4), "mutable-ref", (), False, "top", _ctx())
    t.access(ref, (0, 4), "write", _ctx())
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE), (ref, Grant.UNIQUE)]


def test_read_disables_only_writers_above():
    t = _tracker()
    ref = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "ref", _ctx())
    shared = t.retag(ref, (0, 4), "shared-ref", (), False, "shared", _ctx())
    t.access(ref, (0, 4), "read", _ctx())
    # The read-only item above survives a read through its parent.
    assert _stack(t) == [
        (t.root_tag, Grant.UNIQUE),
        (ref, Grant.UNIQUE),
        (shared, Grant.SHARED_RO),
    ]


def test_use_of_popped_tag_is_out_of_bounds_with_invalidation_note():
    t = _tracker()
    a = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx(line=2))
    t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "b", _ctx(line=3))
    with pytest.raises(UbError) as e:
        t.access(a, (0, 4), "write", _ctx(line=4))
    assert e.value.kind is DiagnosticKind.ACCESS_OUT_OF_BOUNDS
    assert "no item for tag" in str(e.value)
    assert "invalidated at line 3" in str(e.value)


def test_write_through_read_only_item_is_insufficient():
    t = _tracker()
    shared = t.retag(t.root_tag, (0, 4), "shared-ref", (), False, "shared", _ctx())
    with pytest.raises(UbError) as e:
        t.access(shared, (0, 4), "write", _ctx())
    assert e.value.kind is DiagnosticKind.INSUFFICIENT_PERMISSION
    assert "grants only reads" in str(e.value)


def test_shared_rw_on_cell_bytes_allows_writes():
    t = _tracker()
    reader = t.retag(t.root_tag, (0, 4), "shared-ref", ((0, 4),), False, "reader", _ctx())
    t.access(reader, (0, 4), "write", _ctx())  # no error on cell bytes


def test_wildcard_access_resolves_to_topmost_granting_item():
    t = _tracker()
    ref = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "ref", _ctx())
    shared = t.retag(ref, (0, 4), "shared-ref", (), False, "shared", _ctx())
    # A wildcard write acts through the topmost writer (ref), popping shared.
    t.access(WILDCARD, (0, 4), "write", _ctx())
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE), (ref, Grant.UNIQUE)]


def test_wildcard_read_needs_any_item():
    t = _tracker()
    t.access(WILDCARD, (0, 4), "read", _ctx())  # root grants it
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE)]


def test_protected_item_cannot_be_popped():
    t = _tracker()
    guard = t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    with pytest.raises(UbError) as e:
        t.access(t.root_tag, (0, 4), "write", _ctx())
    assert e.value.kind is DiagnosticKind.PROTECTED_PERMISSION
    assert "protected" in str(e.value)


def test_protected_item_survives_reads_but_blocks_writer_removal():
    t = _tracker()
    guard = t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    with pytest.raises(UbError):
        t.access(t.root_tag, (0, 4), "read", _ctx())  # would remove the writer


def test_protector_end_allows_later_pops():
    t = _tracker()
    guard = t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    t.protector_end(guard)
    t.access(t.root_tag, (0, 4), "write", _ctx())
    assert _stack(t) == [(t.root_tag, Grant.UNIQUE)]


def test_dealloc_check_errors_on_protected_items():
    t = _tracker()
    t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    with pytest.raises(UbError) as e:
        t.dealloc_check(_ctx())
    assert e.value.kind is DiagnosticKind.PROTECTED_PERMISSION


def test_dealloc_check_passes_after_protector_end():
    t = _tracker()
    guard = t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    t.protector_end(guard)
    t.dealloc_check(_ctx())


def test_retag_of_partial_range_only_touches_those_bytes():
    t = _tracker(size=4)
    child = t.retag(t.root_tag, (0, 2), "mutable-ref", (), False, "child", _ctx())
    assert len(t.stacks[0]) == 2
    assert len(t.stacks[2]) == 1


def test_retag_with_popped_parent_is_out_of_bounds():
    t = _tracker()
    a = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx())
    t.access(t.root_tag, (0, 4), "write", _ctx())
    with pytest.raises(UbError) as e:
        t.retag(a, (0, 4), "mutable-ref", (), False, "child", _ctx())
    assert e.value.kind is DiagnosticKind.ACCESS_OUT_OF_BOUNDS


def test_render_single_byte_lists_bottom_to_top():
    t = _tracker()
    x = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "x", _ctx())
    s = t.retag(x, (0, 4), "shared-ref", (), False, "s", _ctx())
    assert t.render(0) == "[root: Unique, x: Unique, s: SharedReadOnly]"


def test_render_coalesces_equal_stacks():
    t = _tracker(size=4)
    t.retag(t.root_tag, (0, 2), "mutable-ref", (), False, "low", _ctx())
    text = t.render()
    assert text.splitlines() == [
        "[0..2) [root: Unique, low: Unique]",
        "[2..4) [root: Unique]",
    ]


def test_render_marks_protected_items():
    t = _tracker()
    t.retag(t.root_tag, (0, 4), "mutable-ref", (), True, "guard", _ctx())
    assert "(protected)" in t.render(0)


def test_history_records_pop_causes():
    t = _tracker()
    a = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx(line=2))
    t.access(t.root_tag, (0, 4), "write", _ctx(line=5))
    record = {h.tag: h for h in t.history()}[a]
    assert record.invalidated.line == 5
    assert "write via" in record.invalidated.description


def test_errors_carry_history_and_snapshot():
    t = _tracker()
    a = t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx())
    t.access(t.root_tag, (0, 4), "write", _ctx())
    with pytest.raises(UbError) as e:
        t.access(a, (0, 4), "read", _ctx())
    assert e.value.history
    assert "[root: Unique]" in e.value.snapshot


def test_serialize_is_stable_under_wildcard_reads():
    t = _tracker()
    t.retag(t.root_tag, (0, 4), "mutable-ref", (), False, "a", _ctx())
    before = t.serialize()
    t.access(WILDCARD, (0, 4), "read", _ctx())
    assert t.serialize() == before
