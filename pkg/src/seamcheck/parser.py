"""Line-oriented parser for the scenario language.

A scenario file contains, in any order: `type` blocks, `host fn` and
`foreign fn` blocks, `bind` declarations, `expect` annotations, and `tag`
labels. Comments run from `#` to end of line. Statements are one per line;
blocks close with `end`.

The parser resolves struct names as it goes (declare before use), tracks
host local types so that `p.field` on a pointer local parses as a deref
place, and finishes with a validation pass that enforces dialect rules:
borrows, heap ownership, and threads belong to the host dialect; loads,
stores, and manual allocation to the foreign one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .ir import (
    AllocaRhs,
    AssertEqStmt,
    AssumeInitStmt,
    BindingSignature,
    BorrowKind,
    BorrowRhs,
    CallStmt,
    CastRhs,
    CellGetRhs,
    Dialect,
    Expectation,
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
    OutcomeTag,
    Param,
    Place,
    PlaceRhs,
    ReturnStmt,
    Rhs,
    ScenarioProgram,
    SpawnStmt,
    Stmt,
    StoreStmt,
    UninitRhs,
    WriteStmt,
    ZeroedRhs,
)
from .types import (
    UNIT,
    ArrayType,
    CellType,
    FieldDef,
    IntType,
    LayoutError,
    PhantomType,
    PtrKind,
    PtrType,
    StructType,
    TypeDesc,
    is_pointer,
    layout_of,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int = 0) -> None:
        super().__init__(f"line {line}: {message}" if col == 0 else f"line {line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<arrow>->)
  | (?P<ellipsis>\.\.\.)
  | (?P<int>-?0x[0-9a-fA-F]+|-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[()\[\]{}:,.*&=@;-])
  | (?P<ws>\s+)
    """,
    re.VERBOSE,
)

_SCALARS: dict[str, TypeDesc] = {
    "i8": IntType(8, True),
    "i16": IntType(16, True),
    "i32": IntType(32, True),
    "i64": IntType(64, True),
    "u8": IntType(8, False),
    "u16": IntType(16, False),
    "u32": IntType(32, False),
    "u64": IntType(64, False),
    "isize": IntType(64, True),
    "usize": IntType(64, False),
    "bool": IntType(8, False),
    "unit": UNIT,
}


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1)
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return out


class _Line:
    """Token cursor over one logical line."""

    def __init__(self, toks: list[_Tok], line: int) -> None:
        self.toks = toks
        self.line = line
        self.i = 0

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def take(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of line", self.line)
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t is None or t.text != text:
            got = t.text if t else "end of line"
            raise ParseError(f"expected {text!r}, found {got!r}", self.line, t.col if t else 0)
        return self.take()

    def ident(self, what: str = "name") -> str:
        t = self.peek()
        if t is None or t.kind != "ident":
            got = t.text if t else "end of line"
            raise ParseError(f"expected {what}, found {got!r}", self.line, t.col if t else 0)
        return self.take().text

    def integer(self) -> int:
        t = self.peek()
        if t is None or t.kind != "int":
            got = t.text if t else "end of line"
            raise ParseError(f"expected integer, found {got!r}", self.line, t.col if t else 0)
        return int(self.take().text, 0)

    def done(self) -> None:
        t = self.peek()
        if t is not None:
            raise ParseError(f"trailing input starting at {t.text!r}", self.line, t.col)


class _Parser:
    def __init__(self, text: str, path: str) -> None:
        self.path = path
        self.lines: list[tuple[int, str]] = []
        for n, raw in enumerate(text.splitlines(), start=1):
            body = raw.split("#", 1)[0].strip()
            if body:
                self.lines.append((n, body))
        self.pos = 0
        self.structs: dict[str, StructType] = {}
        self.struct_order: list[StructType] = []
        self.functions: list[FnDef] = []
        self.bindings: list[BindingSignature] = []
        self.expectations: list[Expectation] = []
        self.tags: list[str] = []

    def _next_line(self) -> Optional[_Line]:
        if self.pos >= len(self.lines):
            return None
        n, body = self.lines[self.pos]
        self.pos += 1
        return _Line(_tokenize(body, n), n)

    # ---- types ---------------------------------------------------------------

    def parse_type(self, ln: _Line) -> TypeDesc:
        t = ln.peek()
        if t is None:
            raise ParseError("expected a type", ln.line)
        if t.text == "&":
            ln.take()
            if ln.at("mut"):
                ln.take()
                return PtrType(PtrKind.MUT_REF, self.parse_type(ln))
            return PtrType(PtrKind.SHARED_REF, self.parse_type(ln))
        if t.text == "*":
            ln.take()
            if ln.at("mut"):
                ln.take()
                return PtrType(PtrKind.RAW_MUT, self.parse_type(ln))
            if ln.at("const"):
                ln.take()
                return PtrType(PtrKind.RAW_CONST, self.parse_type(ln))
            raise ParseError("raw pointer needs 'mut' or 'const'", ln.line, t.col)
        if t.text == "[":
            ln.take()
            elem = self.parse_type(ln)
            ln.expect(";")
            count = ln.integer()
            ln.expect("]")
            return ArrayType(elem, count)
        if t.kind == "ident":
            name = ln.take().text
            if name == "ptr":
                return PtrType(PtrKind.OPAQUE, None)
            if name in ("cell", "phantom"):
                ln.expect("(")
                inner = self.parse_type(ln)
                ln.expect(")")
                return CellType(inner) if name == "cell" else PhantomType(inner)
            if name in _SCALARS:
                return _SCALARS[name]
            if name in self.structs:
                return self.structs[name]
            raise ParseError(f"unknown type '{name}'", ln.line, t.col)
        raise ParseError(f"expected a type, found {t.text!r}", ln.line, t.col)

    def _parse_type_block(self, ln: _Line) -> None:
        name = ln.ident("type name")
        ln.done()
        if name in self.structs or name in _SCALARS:
            raise ParseError(f"type '{name}' already defined", ln.line)
        fields: list[FieldDef] = []
        while True:
            fl = self._next_line()
            if fl is None:
                raise ParseError(f"type '{name}' never closed with 'end'", ln.line)
            if fl.at("end"):
                fl.take()
                fl.done()
                break
            fname = fl.ident("field name")
            fl.expect(":")
            ftype = self.parse_type(fl)
            offset = None
            if fl.at("@"):
                fl.take()
                offset = fl.integer()
            fl.done()
            fields.append(FieldDef(fname, ftype, offset))
        struct = StructType(name, tuple(fields))
        try:
            layout_of(struct)
        except LayoutError as e:
            raise ParseError(str(e), ln.line) from None
        self.structs[name] = struct
        self.struct_order.append(struct)

    # ---- places and operands -------------------------------------------------

    def parse_place(self, ln: _Line, locals_env: dict[str, TypeDesc]) -> Place:
        deref = False
        if ln.at("*"):
            ln.take()
            deref = True
        base = ln.ident("place")
        steps: list[Union[str, int]] = []
        while True:
            if ln.at("."):
                saved = ln.i
                ln.take()
                nxt = ln.peek()
                if nxt is None or nxt.kind != "ident":
                    ln.i = saved
                    break
                # `.get(` and `.offset(` are method forms, not field steps.
                after = ln.toks[ln.i + 1].text if ln.i + 1 < len(ln.toks) else ""
                if nxt.text in ("get", "offset") and after == "(":
                    ln.i = saved
                    break
                steps.append(ln.take().text)
            elif ln.at("["):
                ln.take()
                steps.append(ln.integer())
                ln.expect("]")
            else:
                break
        if not deref and steps and is_pointer(locals_env.get(base, UNIT)):
            deref = True
        return Place(base, deref, tuple(steps))

    def parse_operand(self, ln: _Line) -> Operand:
        t = ln.peek()
        if t is None:
            raise ParseError("expected a value", ln.line)
        if t.kind == "int":
            return ln.integer()
        return ln.ident("value")

    def _parse_args(self, ln: _Line) -> tuple[Operand, ...]:
        ln.expect("(")
        args: list[Operand] = []
        if not ln.at(")"):
            while True:
                args.append(self.parse_operand(ln))
                if ln.at(","):
                    ln.take()
                    continue
                break
        ln.expect(")")
        return tuple(args)

    # ---- statements ----------------------------------------------------------

    def _parse_host_rhs(self, ln: _Line, env: dict[str, TypeDesc]) -> Rhs:
        t = ln.peek()
        if t is None:
            raise ParseError("missing right-hand side", ln.line)
        if t.kind == "int":
            return LiteralRhs(ln.integer())
        if t.text == "&":
            ln.take()
            if ln.at("raw"):
                ln.take()
                if ln.at("mut"):
                    ln.take()
                    return BorrowRhs(BorrowKind.RAW_MUT, self.parse_place(ln, env))
                ln.expect("const")
                return BorrowRhs(BorrowKind.RAW_CONST, self.parse_place(ln, env))
            if ln.at("mut"):
                ln.take()
                return BorrowRhs(BorrowKind.MUT, self.parse_place(ln, env))
            return BorrowRhs(BorrowKind.SHARED, self.parse_place(ln, env))
        if t.text == "uninit":
            ln.take()
            return UninitRhs()
        if t.text == "zeroed":
            ln.take()
            return ZeroedRhs()
        if t.text == "heap_new":
            ln.take()
            ty = self.parse_type(ln)
            if ln.at("zeroed"):
                ln.take()
                return HeapNewRhs(ty, "zeroed")
            nxt = ln.peek()
            if nxt is not None and nxt.kind == "int":
                return HeapNewRhs(ty, ln.integer())
            return HeapNewRhs(ty, None)
        if t.text == "heap_into_raw":
            ln.take()
            return HeapIntoRawRhs(ln.ident())
        if t.text == "heap_from_raw":
            ln.take()
            return HeapFromRawRhs(ln.ident())
        if t.text == "call":
            ln.take()
            name = ln.ident("function name")
            args = self._parse_args(ln)
            return CallStmt(name, args, line=ln.line)  # repackaged by caller
        # Remaining forms start with an identifier: cast, offset, get, or place.
        saved = ln.i
        if t.kind == "ident":
            name = ln.take().text
            if ln.at("as"):
                ln.take()
                return _TypedCast(name, self.parse_type(ln))
            if ln.at(".") and len(ln.toks) > ln.i + 1 and ln.toks[ln.i + 1].text == "offset":
                ln.take()
                ln.take()
                ln.expect("(")
                count = self.parse_operand(ln)
                ln.expect(")")
                return OffsetRhs(name, count)
            ln.i = saved
        place = self.parse_place(ln, env)
        if ln.at(".") and len(ln.toks) > ln.i + 1 and ln.toks[ln.i + 1].text == "get":
            ln.take()
            ln.take()
            ln.expect("(")
            ln.expect(")")
            return CellGetRhs(place)
        return PlaceRhs(place)

    def _parse_host_stmt(self, ln: _Line, env: dict[str, TypeDesc]) -> Stmt:
        n = ln.line
        if ln.at("let"):
            ln.take()
            name = ln.ident()
            ln.expect(":")
            ty = self.parse_type(ln)
            ln.expect("=")
            rhs = self._parse_host_rhs(ln, env)
            ln.done()
            env[name] = ty
            if isinstance(rhs, CallStmt):
                return CallStmt(rhs.callee, rhs.args, dest=name, dest_type=ty, line=n)
            if isinstance(rhs, _TypedCast):
                if rhs.target != ty:
                    raise ParseError(
                        f"cast target {rhs.target} disagrees with declared type {ty}", n
                    )
                return LetStmt(name, ty, CastRhs(rhs.source), line=n)
            return LetStmt(name, ty, rhs, line=n)
        if ln.at("assume_init"):
            ln.take()
            place = self.parse_place(ln, env)
            ln.done()
            return AssumeInitStmt(place, line=n)
        if ln.at("assert_eq"):
            ln.take()
            left = self.parse_operand(ln)
            right = self.parse_operand(ln)
            ln.done()
            return AssertEqStmt(left, right, line=n)
        if ln.at("spawn"):
            ln.take()
            handle = ln.ident("handle")
            ln.expect("=")
            callee = ln.ident("function name")
            args = self._parse_args(ln)
            ln.done()
            return SpawnStmt(handle, callee, args, line=n)
        if ln.at("join"):
            ln.take()
            handle = ln.ident("handle")
            ln.done()
            return JoinStmt(handle, line=n)
        if ln.at("call"):
            ln.take()
            name = ln.ident("function name")
            args = self._parse_args(ln)
            ln.done()
            return CallStmt(name, args, line=n)
        if ln.at("return"):
            ln.take()
            value = None if ln.peek() is None else self.parse_operand(ln)
            ln.done()
            return ReturnStmt(value, line=n)
        place = self.parse_place(ln, env)
        ln.expect("=")
        value = self.parse_operand(ln)
        ln.done()
        return WriteStmt(place, value, line=n)

    def _parse_foreign_rhs(self, ln: _Line) -> Rhs:
        t = ln.peek()
        if t is None:
            raise ParseError("missing right-hand side", ln.line)
        if t.kind == "int":
            return LiteralRhs(ln.integer())
        if t.text == "load":
            ln.take()
            ty = self.parse_type(ln)
            return LoadRhs(ty, ln.ident("pointer"))
        if t.text == "malloc":
            ln.take()
            return MallocRhs(self.parse_operand(ln))
        if t.text == "alloca":
            ln.take()
            return AllocaRhs(self.parse_operand(ln))
        if t.text == "gep":
            ln.take()
            ptr = ln.ident("pointer")
            return GepRhs(ptr, self.parse_operand(ln))
        if t.text == "call":
            ln.take()
            name = ln.ident("function name")
            args = self._parse_args(ln)
            return CallStmt(name, args, line=ln.line)
        name = ln.ident("value")
        return PlaceRhs(Place(name))

    def _parse_foreign_stmt(self, ln: _Line) -> Stmt:
        n = ln.line
        if ln.at("let"):
            ln.take()
            name = ln.ident()
            ln.expect("=")
            rhs = self._parse_foreign_rhs(ln)
            ln.done()
            if isinstance(rhs, CallStmt):
                return CallStmt(rhs.callee, rhs.args, dest=name, line=n)
            return LetStmt(name, UNIT, rhs, line=n)
        if ln.at("store"):
            ln.take()
            ty = self.parse_type(ln)
            ptr = ln.ident("pointer")
            value = self.parse_operand(ln)
            ln.done()
            return StoreStmt(ty, ptr, value, line=n)
        if ln.at("free"):
            ln.take()
            ptr = ln.ident("pointer")
            ln.done()
            return FreeStmt(ptr, line=n)
        if ln.at("memset"):
            ln.take()
            ptr = ln.ident("pointer")
            value = self.parse_operand(ln)
            size = self.parse_operand(ln)
            ln.done()
            return MemsetStmt(ptr, value, size, line=n)
        if ln.at("memcpy"):
            ln.take()
            dest = ln.ident("pointer")
            src = ln.ident("pointer")
            size = self.parse_operand(ln)
            ln.done()
            return MemcpyStmt(dest, src, size, line=n)
        if ln.at("call"):
            ln.take()
            name = ln.ident("function name")
            args = self._parse_args(ln)
            ln.done()
            return CallStmt(name, args, line=n)
        if ln.at("return"):
            ln.take()
            value = None if ln.peek() is None else self.parse_operand(ln)
            ln.done()
            return ReturnStmt(value, line=n)
        t = ln.peek()
        raise ParseError(f"unknown foreign statement starting with {t.text!r}", n, t.col)

    # ---- blocks --------------------------------------------------------------

    def _parse_fn(self, ln: _Line, dialect: Dialect) -> None:
        ln.expect("fn")
        name = ln.ident("function name")
        ln.expect("(")
        params: list[Param] = []
        variadic = False
        if not ln.at(")"):
            while True:
                if ln.at("..."):
                    ln.take()
                    variadic = True
                    break
                pname = ln.ident("parameter name")
                ln.expect(":")
                ptype = self.parse_type(ln)
                params.append(Param(pname, ptype))
                if ln.at(","):
                    ln.take()
                    continue
                break
        ln.expect(")")
        ret: TypeDesc = UNIT
        if ln.at("->"):
            ln.take()
            ret = self.parse_type(ln)
        ln.done()
        env: dict[str, TypeDesc] = {p.name: p.type for p in params}
        body: list[Stmt] = []
        while True:
            sl = self._next_line()
            if sl is None:
                raise ParseError(f"function '{name}' never closed with 'end'", ln.line)
            if sl.at("end"):
                sl.take()
                sl.done()
                break
            if dialect is Dialect.HOST:
                body.append(self._parse_host_stmt(sl, env))
            else:
                body.append(self._parse_foreign_stmt(sl))
        self.functions.append(
            FnDef(name, dialect, tuple(params), ret, tuple(body), variadic, line=ln.line)
        )

    def _parse_bind(self, ln: _Line) -> None:
        first = ln.ident("function name")
        alias = first
        target = first
        if ln.at("="):
            ln.take()
            target = ln.ident("function name")
        ln.expect("(")
        params: list[TypeDesc] = []
        variadic = False
        if not ln.at(")"):
            while True:
                if ln.at("..."):
                    ln.take()
                    variadic = True
                    break
                params.append(self.parse_type(ln))
                if ln.at(","):
                    ln.take()
                    continue
                break
        ln.expect(")")
        ret: TypeDesc = UNIT
        if ln.at("->"):
            ln.take()
            ret = self.parse_type(ln)
        ln.done()
        self.bindings.append(
            BindingSignature(alias, target, tuple(params), ret, variadic, line=ln.line)
        )

    def _parse_expect(self, ln: _Line) -> None:
        model = None
        t = ln.peek()
        if t is not None and t.text in ("tb", "sb") and len(ln.toks) > ln.i + 1 and ln.toks[ln.i + 1].text == ":":
            model = ln.take().text
            ln.take()
        words = []
        while ln.peek() is not None:
            tok = ln.take()
            words.append(tok.text)
        tag_text = "".join(words)
        try:
            outcome = OutcomeTag(tag_text)
        except ValueError:
            raise ParseError(f"unknown outcome '{tag_text}'", ln.line) from None
        self.expectations.append(Expectation(outcome, model))

    def parse(self) -> ScenarioProgram:
        while True:
            ln = self._next_line()
            if ln is None:
                break
            if ln.at("type"):
                ln.take()
                self._parse_type_block(ln)
            elif ln.at("host"):
                ln.take()
                self._parse_fn(ln, Dialect.HOST)
            elif ln.at("foreign"):
                ln.take()
                self._parse_fn(ln, Dialect.FOREIGN)
            elif ln.at("bind"):
                ln.take()
                self._parse_bind(ln)
            elif ln.at("expect"):
                ln.take()
                self._parse_expect(ln)
            elif ln.at("tag"):
                ln.take()
                words = []
                while ln.peek() is not None:
                    words.append(ln.take().text)
                if not words:
                    raise ParseError("tag needs a label", ln.line)
                self.tags.append("".join(words))
            else:
                t = ln.peek()
                raise ParseError(f"unexpected top-level input {t.text!r}", ln.line, t.col)
        program = ScenarioProgram(
            path=self.path,
            types=tuple(self.struct_order),
            functions=tuple(self.functions),
            bindings=tuple(self.bindings),
            expectations=tuple(self.expectations),
            tags=tuple(self.tags),
        )
        _validate(program)
        return program


@dataclass(frozen=True)
class _TypedCast:
    """Parser-internal: cast with its spelled target, folded into LetStmt."""

    source: str
    target: TypeDesc


def parse_text(text: str, path: str = "<string>") -> ScenarioProgram:
    return _Parser(text, path).parse()


def parse_file(path: str) -> ScenarioProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), path)


# ---- validation --------------------------------------------------------------


_HOST_ONLY_RHS = (BorrowRhs, CastRhs, OffsetRhs, CellGetRhs, HeapNewRhs, HeapIntoRawRhs, HeapFromRawRhs, UninitRhs, ZeroedRhs)
_FOREIGN_ONLY_RHS = (LoadRhs, MallocRhs, AllocaRhs, GepRhs)


def _validate(program: ScenarioProgram) -> None:
    names: dict[str, FnDef] = {}
    for f in program.functions:
        if f.name in names:
            raise ParseError(f"function '{f.name}' defined twice", f.line)
        names[f.name] = f
    binding_names: dict[str, BindingSignature] = {}
    for b in program.bindings:
        if b.name in binding_names:
            raise ParseError(f"binding '{b.name}' declared twice", b.line)
        binding_names[b.name] = b
    try:
        entry = program.entry
    except KeyError:
        raise ParseError("no 'main' function", 1) from None
    if entry.dialect is not Dialect.HOST:
        raise ParseError("'main' must be a host function", entry.line)
    if entry.params:
        raise ParseError("'main' takes no parameters", entry.line)

    for f in program.functions:
        for s in f.body:
            _validate_stmt(program, f, s, names, binding_names)


def _validate_stmt(
    program: ScenarioProgram,
    f: FnDef,
    s: Stmt,
    names: dict[str, FnDef],
    bindings: dict[str, BindingSignature],
) -> None:
    host = f.dialect is Dialect.HOST
    if isinstance(s, LetStmt):
        bad = not host and isinstance(s.rhs, _HOST_ONLY_RHS)
        bad = bad or (host and isinstance(s.rhs, _FOREIGN_ONLY_RHS))
        if bad:
            raise ParseError(
                f"'{type(s.rhs).__name__}' is not available in the {f.dialect.value} dialect",
                s.line,
            )
    elif isinstance(s, (WriteStmt, AssumeInitStmt, AssertEqStmt, SpawnStmt, JoinStmt)):
        if not host:
            raise ParseError("host-only statement in a foreign function", s.line)
    elif isinstance(s, (StoreStmt, FreeStmt, MemsetStmt, MemcpyStmt)):
        if host:
            raise ParseError("foreign-only statement in a host function", s.line)
    if isinstance(s, SpawnStmt):
        callee = names.get(s.callee)
        if callee is None or callee.dialect is not Dialect.HOST:
            raise ParseError(f"spawn target '{s.callee}' is not a host function", s.line)
    if isinstance(s, CallStmt):
        if host:
            if s.callee in bindings:
                target = bindings[s.callee].target
                if target not in names or names[target].dialect is not Dialect.FOREIGN:
                    raise ParseError(
                        f"binding '{s.callee}' names '{target}', which is not a foreign function",
                        s.line,
                    )
            elif s.callee in names:
                if names[s.callee].dialect is not Dialect.HOST:
                    raise ParseError(
                        f"calls into foreign code go through a binding; none declares '{s.callee}'",
                        s.line,
                    )
            else:
                raise ParseError(f"unknown function '{s.callee}'", s.line)
        else:
            callee = names.get(s.callee)
            if callee is None:
                raise ParseError(f"unknown function '{s.callee}'", s.line)
            if callee.dialect is not Dialect.HOST:
                raise ParseError(
                    "foreign-to-foreign calls are out of scope; only host functions "
                    "may be called back",
                    s.line,
                )


# ---- rendering ---------------------------------------------------------------


def _render_operand(op: Operand) -> str:
    return str(op)


def _render_rhs(rhs: Rhs) -> str:
    if isinstance(rhs, LiteralRhs):
        return str(rhs.value)
    if isinstance(rhs, UninitRhs):
        return "uninit"
    if isinstance(rhs, ZeroedRhs):
        return "zeroed"
    if isinstance(rhs, PlaceRhs):
        return str(rhs.place)
    if isinstance(rhs, BorrowRhs):
        prefix = {
            BorrowKind.MUT: "&mut ",
            BorrowKind.SHARED: "&",
            BorrowKind.RAW_MUT: "&raw mut ",
            BorrowKind.RAW_CONST: "&raw const ",
        }[rhs.kind]
        return f"{prefix}{rhs.place}"
    if isinstance(rhs, OffsetRhs):
        return f"{rhs.source}.offset({_render_operand(rhs.count)})"
    if isinstance(rhs, CellGetRhs):
        return f"{rhs.place}.get()"
    if isinstance(rhs, HeapNewRhs):
        if rhs.init == "zeroed":
            return f"heap_new {rhs.type} zeroed"
        if rhs.init is None:
            return f"heap_new {rhs.type}"
        return f"heap_new {rhs.type} {rhs.init}"
    if isinstance(rhs, HeapIntoRawRhs):
        return f"heap_into_raw {rhs.source}"
    if isinstance(rhs, HeapFromRawRhs):
        return f"heap_from_raw {rhs.source}"
    if isinstance(rhs, LoadRhs):
        return f"load {rhs.type} {rhs.pointer}"
    if isinstance(rhs, MallocRhs):
        return f"malloc {_render_operand(rhs.size)}"
    if isinstance(rhs, AllocaRhs):
        return f"alloca {_render_operand(rhs.size)}"
    if isinstance(rhs, GepRhs):
        return f"gep {rhs.pointer} {_render_operand(rhs.offset)}"
    raise TypeError(f"unrenderable rhs: {rhs!r}")


def _render_stmt(s: Stmt) -> str:
    if isinstance(s, LetStmt):
        if isinstance(s.rhs, CastRhs):
            return f"let {s.name}: {s.type} = {s.rhs.source} as {s.type}"
        return f"let {s.name}: {s.type} = {_render_rhs(s.rhs)}"
    if isinstance(s, WriteStmt):
        return f"{s.place} = {_render_operand(s.value)}"
    if isinstance(s, StoreStmt):
        return f"store {s.type} {s.pointer} {_render_operand(s.value)}"
    if isinstance(s, CallStmt):
        args = ", ".join(_render_operand(a) for a in s.args)
        call = f"call {s.callee}({args})"
        if s.dest is None:
            return call
        if s.dest_type is None:
            return f"let {s.dest} = {call}"
        return f"let {s.dest}: {s.dest_type} = {call}"
    if isinstance(s, SpawnStmt):
        args = ", ".join(_render_operand(a) for a in s.args)
        return f"spawn {s.handle} = {s.callee}({args})"
    if isinstance(s, JoinStmt):
        return f"join {s.handle}"
    if isinstance(s, ReturnStmt):
        return "return" if s.value is None else f"return {_render_operand(s.value)}"
    if isinstance(s, AssertEqStmt):
        return f"assert_eq {_render_operand(s.left)} {_render_operand(s.right)}"
    if isinstance(s, AssumeInitStmt):
        return f"assume_init {s.place}"
    if isinstance(s, FreeStmt):
        return f"free {s.pointer}"
    if isinstance(s, MemsetStmt):
        return f"memset {s.pointer} {_render_operand(s.value)} {_render_operand(s.size)}"
    if isinstance(s, MemcpyStmt):
        return f"memcpy {s.dest} {s.src} {_render_operand(s.size)}"
    raise TypeError(f"unrenderable statement: {s!r}")


def _render_foreign_let(s: LetStmt) -> str:
    return f"let {s.name} = {_render_rhs(s.rhs)}"


def render_stmt(s: Stmt, dialect: Dialect) -> str:
    """One statement as source text, used for trace display."""
    if dialect is Dialect.FOREIGN and isinstance(s, LetStmt):
        return _render_foreign_let(s)
    return _render_stmt(s)


def render_program(program: ScenarioProgram) -> str:
    """Source text that parses back to an equal program."""
    out: list[str] = []
    for tag in program.tags:
        out.append(f"tag {tag}")
    for t in program.types:
        out.append(f"type {t.name}")
        for f in t.fields:
            suffix = f" @ {f.explicit_offset}" if f.explicit_offset is not None else ""
            out.append(f"  {f.name}: {f.type}{suffix}")
        out.append("end")
    for b in program.bindings:
        params = ", ".join(str(p) for p in b.params)
        if b.variadic:
            params = f"{params}, ..." if params else "..."
        head = b.name if b.name == b.target else f"{b.name} = {b.target}"
        ret = "" if b.ret == UNIT else f" -> {b.ret}"
        out.append(f"bind {head}({params}){ret}")
    for f in program.functions:
        params = ", ".join(f"{p.name}: {p.type}" for p in f.params)
        if f.variadic:
            params = f"{params}, ..." if params else "..."
        ret = "" if f.ret == UNIT else f" -> {f.ret}"
        out.append(f"{f.dialect.value} fn {f.name}({params}){ret}")
        for s in f.body:
            if f.dialect is Dialect.FOREIGN and isinstance(s, LetStmt):
                out.append(f"  {_render_foreign_let(s)}")
            else:
                out.append(f"  {_render_stmt(s)}")
        out.append("end")
    for e in program.expectations:
        prefix = f"{e.model}: " if e.model else ""
        out.append(f"expect {prefix}{e.outcome.value}")
    return "\n".join(out) + "\n"
