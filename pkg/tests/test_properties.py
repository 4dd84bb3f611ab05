"""Randomized property suites for the model and pipeline invariants.

Six suites, each driven by at least a thousand generated cases:

1. tree model: Disabled is absorbing and no foreign tag stays Active
2. stack model: accesses only ever mutate the stack above the granting item
3. boundary translation: plans succeed exactly when byte sizes agree, and
   scalar and pointer crossings are bit-exact round trips
4. memory: the initialization mask only ever grows
5. dedup keys: identifier-invariant and idempotent partitioning
6. whole runs: byte-identical structured reports under a fixed seed
"""

import re

from hypothesis import given, settings
from hypothesis import strategies as st

from seamcheck.diagnostics import (
    Classification,
    Diagnostic,
    DiagnosticKind,
    Outcome,
    TraceFrame,
    dedup,
    json_dumps,
    normalize,
    outcome_key,
)
from seamcheck.machine import MachineConfig
from seamcheck.memory import (
    WILDCARD,
    AccessContext,
    AllocOrigin,
    Memory,
    PointerValue,
    UbError,
)
from seamcheck.parser import parse_file
from seamcheck.runner import run_single, single_report
from seamcheck.stacked_borrows import StackedBorrowTracker
from seamcheck.translate import TranslationError, field_count, plan_call, reinterpret
from seamcheck.tree_borrows import Permission, TreeBorrowTracker
from seamcheck.ir import BindingSignature, Dialect, FnDef, Param
from seamcheck.types import (
    ArrayType,
    CellType,
    FieldDef,
    IntType,
    PtrKind,
    PtrType,
    StructType,
    UnitType,
    size_of,
)

from conftest import corpus_path

_SIZE = 4
_RETAG_KINDS = ("mutable-ref", "shared-ref", "raw-mut", "raw-const", "cell")

_op = st.tuples(
    st.integers(0, 1),  # 0 retag, 1 access
    st.integers(0, 2**16),  # actor selector
    st.integers(0, 2**16),  # kind selector
    st.integers(0, 2**16),  # range start selector
    st.integers(0, 2**16),  # range width / protect selector
)
_ops = st.lists(_op, min_size=1, max_size=10)


def _range_from(a, b):
    lo = a % _SIZE
    hi = lo + 1 + b % (_SIZE - lo)
    return (lo, hi)


def _ancestors(tracker, tag):
    out = set()
    cur = tag
    while cur is not None:
        out.add(cur)
        cur = tracker.nodes[cur].parent
    return out


@settings(max_examples=1000, deadline=None)
@given(ops=_ops)
def test_suite_tree_disabled_absorbing_and_no_foreign_active(ops):
    counter = iter(range(1, 10_000))
    tracker = TreeBorrowTracker(1, _SIZE, lambda: next(counter), "root")
    tags = [tracker.root_tag]
    disabled: set[tuple[int, int]] = set()

    for op, actor_sel, kind_sel, start_sel, extra_sel in ops:
        actor = tags[actor_sel % len(tags)]
        rng = _range_from(start_sel, extra_sel)
        try:
            if op == 0:
                kind = _RETAG_KINDS[kind_sel % len(_RETAG_KINDS)]
                protect = extra_sel % 7 == 0
                tags.append(
                    tracker.retag(actor, rng, kind, (), protect, f"t{len(tags)}", AccessContext())
                )
            else:
                kind = "read" if kind_sel % 2 == 0 else "write"
                tracker.access(actor, rng, kind, AccessContext())
        except UbError:
            break
        # Root stays Active at every location.
        root = tracker.nodes[tracker.root_tag]
        for off in range(_SIZE):
            assert root.peek_at(off)[0] is Permission.ACTIVE
        # Disabled never comes back.
        for tag, off in disabled:
            assert tracker.nodes[tag].peek_at(off)[0] is Permission.DISABLED
        for tag in tracker.nodes:
            for off in range(_SIZE):
                if tracker.nodes[tag].peek_at(off)[0] is Permission.DISABLED:
                    disabled.add((tag, off))
        # After an access, no tag foreign to it is still Active there.
        if op == 1:
            child_side = _ancestors(tracker, actor)
            for tag, node in tracker.nodes.items():
                if tag in child_side:
                    continue
                for off in range(*rng):
                    assert node.peek_at(off)[0] is not Permission.ACTIVE


def _is_subsequence(needle, haystack):
    it = iter(haystack)
    return all(x in it for x in needle)


@settings(max_examples=1000, deadline=None)
@given(ops=_ops)
def test_suite_stack_mutation_only_above_granting_item(ops):
    counter = iter(range(1, 10_000))
    tracker = StackedBorrowTracker(1, _SIZE, lambda: next(counter), "root")
    tags = [tracker.root_tag]

    for op, actor_sel, kind_sel, start_sel, extra_sel in ops:
        rng = _range_from(start_sel, extra_sel)
        if op == 0:
            actor = tags[actor_sel % len(tags)]
            kind = _RETAG_KINDS[kind_sel % len(_RETAG_KINDS)]
            try:
                tags.append(
                    tracker.retag(actor, rng, kind, (), False, f"t{len(tags)}", AccessContext())
                )
            except UbError:
                break
            continue
        wildcard = actor_sel % 5 == 0
        actor = WILDCARD if wildcard else tags[actor_sel % len(tags)]
        kind = "read" if kind_sel % 2 == 0 else "write"
        before = {
            off: [(i.tag, i.grant, i.protected) for i in tracker.stacks[off]]
            for off in range(*rng)
        }
        grant_idx = {}
        for off in range(*rng):
            stack = tracker.stacks[off]
            idx = None
            for i in range(len(stack) - 1, -1, -1):
                if wildcard:
                    if kind == "read" or stack[i].grant.allows_write:
                        idx = i
                        break
                elif stack[i].tag == actor:
                    idx = i
                    break
            grant_idx[off] = idx
        try:
            tracker.access(actor, rng, kind, AccessContext())
        except UbError:
            break
        for off in range(*rng):
            old = before[off]
            new = [(i.tag, i.grant, i.protected) for i in tracker.stacks[off]]
            idx = grant_idx[off]
            assert idx is not None  # the access succeeded, so something granted it
            # Everything below and including the granting item is untouched.
            assert new[: idx + 1] == old[: idx + 1]
            assert _is_subsequence(new, old)
            if kind == "write":
                # A write leaves its granting item on top.
                assert new[-1] == old[idx]
            else:
                # A read removes exactly the writers above the granting item.
                kept = [item for item in old[idx + 1 :] if not item[1].allows_write]
                assert new == old[: idx + 1] + kept


_INT_TYPES = [IntType(bits, signed) for bits in (8, 16, 32, 64) for signed in (True, False)]


def _struct_of(int_types):
    name = "S_" + "_".join(str(t) for t in int_types)
    return StructType(name, tuple(FieldDef(f"f{i}", t, None) for i, t in enumerate(int_types)))


_types = st.one_of(
    st.sampled_from(_INT_TYPES),
    st.just(PtrType(PtrKind.OPAQUE, None)),
    st.builds(
        PtrType,
        st.sampled_from([PtrKind.RAW_MUT, PtrKind.RAW_CONST]),
        st.sampled_from([IntType(8, False), IntType(32, True)]),
    ),
    st.builds(ArrayType, st.sampled_from(_INT_TYPES), st.integers(1, 4)),
    st.builds(_struct_of, st.lists(st.sampled_from(_INT_TYPES), min_size=1, max_size=4)),
    st.builds(CellType, st.sampled_from(_INT_TYPES)),
)


def _is_aggregate(t):
    return isinstance(t, (StructType, ArrayType, CellType))


def _translation_should_succeed(src, dst):
    if size_of(src) != size_of(dst):
        return False
    if isinstance(src, PtrType) and _is_aggregate(dst):
        return False
    if _is_aggregate(src) and isinstance(dst, PtrType):
        return False
    if _is_aggregate(src) and _is_aggregate(dst):
        return field_count(src) == field_count(dst)
    return True


@settings(max_examples=1000, deadline=None)
@given(src=_types, dst=_types, value=st.integers(0, 2**64 - 1), data=st.data())
def test_suite_translation_size_rule_and_bit_exact_round_trips(src, dst, value, data):
    binding = BindingSignature("b", "c_f", (src,), UnitType(), False)
    callee = FnDef("c_f", Dialect.FOREIGN, (Param("p", dst),), UnitType(), ())
    try:
        plan_call(binding, callee)
        succeeded = True
    except TranslationError:
        succeeded = False
    assert succeeded == _translation_should_succeed(src, dst)

    # Scalar crossings are two's-complement bit patterns: there and back is
    # the identity whenever the widths agree.
    if isinstance(src, IntType) and isinstance(dst, IntType) and src.size == dst.size:
        v = reinterpret(value, src)
        crossed = reinterpret(v, dst)
        assert reinterpret(crossed, src) == v
        assert crossed % (1 << dst.bits) == v % (1 << dst.bits)

    # Pointer round trips through memory keep address, identity, and tag.
    mem = Memory()
    target = mem.allocate(16, 8, AllocOrigin.HOST_STACK, "target")
    slot = mem.allocate(8, 8, AllocOrigin.HOST_STACK, "slot")
    offset = data.draw(st.integers(0, 15), label="pointer offset")
    tag = data.draw(st.integers(1, 99), label="pointer tag")
    original = PointerValue(target.base + offset, target.id, offset, tag)
    mem.write_pointer(PointerValue(slot.base, slot.id, 0, None), original)
    restored, tainted = mem.read_pointer(PointerValue(slot.base, slot.id, 0, None))
    assert not tainted
    assert restored == original


_mask_op = st.tuples(
    st.integers(0, 3),  # 0 write_int, 1 memset, 2 write_pointer, 3 assume_init
    st.integers(0, 2**16),
    st.integers(0, 2**64 - 1),
    st.integers(0, 2**16),
)


@settings(max_examples=1000, deadline=None)
@given(ops=st.lists(_mask_op, min_size=1, max_size=8), seed=st.integers(0, 2**32))
def test_suite_init_mask_only_grows(ops, seed):
    mem = Memory(seed=seed)
    alloc = mem.allocate(32, 8, AllocOrigin.FOREIGN_HEAP, "buf")
    ptr = PointerValue(alloc.base, alloc.id, 0, None)
    mask = alloc.init_mask()
    for op, off_sel, value, size_sel in ops:
        if op == 0:
            size = (1, 2, 4, 8)[size_sel % 4]
            off = (off_sel % (32 // size)) * size
            mem.write_int(ptr.with_byte_offset(off), size, value % (1 << (8 * size)))
            got, tainted = mem.read_int(ptr.with_byte_offset(off), size, False)
            assert got == value % (1 << (8 * size))
            assert not tainted
        elif op == 1:
            off = off_sel % 32
            size = size_sel % (32 - off + 1)
            mem.memset(ptr.with_byte_offset(off), value % 256, size)
        elif op == 2:
            off = (off_sel % 4) * 8
            mem.write_pointer(
                ptr.with_byte_offset(off),
                PointerValue(alloc.base, alloc.id, 0, 1),
            )
        else:
            off = off_sel % 32
            size = size_sel % (32 - off + 1)
            mem.assume_init(ptr.with_byte_offset(off), size)
        new_mask = alloc.init_mask()
        assert all(not was or now for was, now in zip(mask, new_mask))
        mask = new_mask


_lines = st.integers(1, 40)
_ids = st.integers(1, 500)


@st.composite
def _labelled_diagnostic(draw):
    kind = draw(st.sampled_from(list(DiagnosticKind)))
    tag = draw(_ids)
    alloc = draw(_ids)
    addr = draw(st.integers(0x1000, 2**48))
    off = draw(st.integers(0, 64))
    message = (
        f"write through tag#{tag} ('p') at alloc#{alloc}+{off}: "
        f"address 0x{addr:x} rejected"
    )
    host = tuple(
        TraceFrame("host", name, draw(_lines), "call f()")
        for name in draw(st.lists(st.sampled_from(["main", "outer"]), max_size=2))
    )
    foreign = tuple(
        TraceFrame("foreign", name, draw(_lines), "store i32 p 1")
        for name in draw(st.lists(st.sampled_from(["c_put", "c_fill"]), max_size=2))
    )
    return Diagnostic(kind, message, host_trace=host, foreign_trace=foreign), (tag, alloc, addr)


@settings(max_examples=1000, deadline=None)
@given(
    item=_labelled_diagnostic(),
    other=_labelled_diagnostic(),
    renumber=st.tuples(_ids, _ids, st.integers(0x1000, 2**48)),
)
def test_suite_dedup_identifier_invariance_and_idempotence(item, other, renumber):
    diag, (tag, alloc, addr) = item
    key = normalize(diag)
    assert "0x" not in key.normalized_log
    assert not re.search(r"alloc#\d", key.normalized_log)
    assert not re.search(r"tag#\d", key.normalized_log)

    # Renumbering addresses, allocation ids, and tags never changes the key.
    new_tag, new_alloc, new_addr = renumber
    renamed = Diagnostic(
        diag.kind,
        diag.message.replace(f"tag#{tag}", f"tag#{new_tag}")
        .replace(f"alloc#{alloc}", f"alloc#{new_alloc}")
        .replace(f"0x{addr:x}", f"0x{new_addr:x}"),
        host_trace=diag.host_trace,
        foreign_trace=diag.foreign_trace,
    )
    assert normalize(renamed) == key

    # Partitioning is idempotent: regrouping one representative per group
    # reproduces exactly the same keys.
    outcomes = [
        ("a.sc", Outcome(Classification.BUG, diagnostics=(diag,))),
        ("b.sc", Outcome(Classification.BUG, diagnostics=(renamed,))),
        ("c.sc", Outcome(Classification.BUG, diagnostics=(other[0],))),
    ]
    groups = dedup(outcomes)
    by_label = dict(outcomes)
    representatives = [(labels[0], by_label[labels[0]]) for labels in groups.values()]
    assert set(dedup(representatives)) == set(groups)
    assert sum(len(v) for v in groups.values()) == len(outcomes)
    for labels in groups.values():
        first = outcome_key(by_label[labels[0]])
        assert all(outcome_key(by_label[l]) == first for l in labels)


_POOL = [
    parse_file(corpus_path(name))
    for name in (
        "reborrow_siblings_disable.sc",
        "shared_ref_const_write.sc",
        "offset_beyond_borrow.sc",
        "into_raw_leak.sc",
        "box_raw_loan_clean.sc",
        "binding_width_mismatch.sc",
        "interior_mutability.sc",
        "double_free.sc",
        "spawn_join_worker.sc",
    )
]


@settings(max_examples=1000, deadline=None)
@given(
    index=st.integers(0, len(_POOL) - 1),
    model=st.sampled_from(["tb", "sb"]),
    seed=st.integers(0, 2**32),
)
def test_suite_full_run_determinism(index, model, seed):
    program = _POOL[index]
    config = MachineConfig(model=model, seed=seed)
    first = json_dumps(single_report(program, config, run_single(program, config)))
    second = json_dumps(single_report(program, config, run_single(program, config)))
    assert first == second
