"""Plan files: parameter declarations, task scripts and placemaker substitution.

A plan is a sequence of ``parameter`` statements followed by ``task`` blocks::

    parameter ligand_number integer range from 1 to 2000 step 1;
    task main
      node:substitute dock_base dock_run
      node:execute $HOME/bin/dock.$OS -i dock_run -o dock_out
      copy node:dock_out ./results/dock_out.$jobname
    endtask

Parameter statements are free-form (whitespace-insensitive, ``;``-terminated);
task bodies are line oriented.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping, Union

__all__ = [
    "PSEUDO_PARAMETERS",
    "Copy",
    "Diagnostic",
    "Execute",
    "FloatDefault",
    "IntegerDefault",
    "IntegerRange",
    "ParameterDecl",
    "PlanError",
    "PlanFile",
    "SelectionError",
    "Substitute",
    "SubstitutionError",
    "TaskScript",
    "TextDefault",
    "TextSelectOneOf",
    "coerce_value",
    "enumerate_values",
    "parse_plan",
    "placemakers",
    "render_value",
    "serialize_plan",
    "substitute",
    "validate_plan",
]

PSEUDO_PARAMETERS = frozenset({"HOME", "OS", "jobname"})

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_IDENT_FULL = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NUMBER_RE = re.compile(r"-?[0-9]+(?:\.[0-9]+)?")

Value = Union[int, Decimal, str]


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class TextSelectOneOf:
    values: tuple[str, ...]
    default: str | None = None


@dataclass(frozen=True)
class TextDefault:
    value: str


@dataclass(frozen=True)
class IntegerDefault:
    value: int


@dataclass(frozen=True)
class IntegerRange:
    start: int
    stop: int
    step: int = 1

    def __len__(self) -> int:
        return (self.stop - self.start) // self.step + 1

    def __contains__(self, value: object) -> bool:
        return (
            isinstance(value, int)
            and self.start <= value <= self.stop
            and (value - self.start) % self.step == 0
        )


@dataclass(frozen=True)
class FloatDefault:
    value: Decimal


ParameterDomain = Union[TextSelectOneOf, TextDefault, IntegerDefault, IntegerRange, FloatDefault]


@dataclass(frozen=True)
class ParameterDecl:
    name: str
    domain: ParameterDomain
    label: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Copy:
    """File copy between the home node and a worker node.

    ``to_node`` is True when the destination carries the ``node:`` prefix.
    ``src`` and ``dst`` are stored without the prefix.
    """

    src: str
    dst: str
    to_node: bool
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Substitute:
    input: str
    output: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Execute:
    argv: str
    line: int = field(default=0, compare=False)


Command = Union[Copy, Substitute, Execute]


@dataclass(frozen=True)
class TaskScript:
    kind: str
    commands: tuple[Command, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PlanFile:
    parameters: tuple[ParameterDecl, ...]
    tasks: tuple[TaskScript, ...]
    source: str | None = field(default=None, compare=False, repr=False)

    def parameter(self, name: str) -> ParameterDecl:
        for decl in self.parameters:
            if decl.name == name:
                return decl
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [decl.name for decl in self.parameters]

    def task(self, kind: str) -> TaskScript | None:
        for task in self.tasks:
            if task.kind == kind:
                return task
        return None

    @property
    def digest(self) -> str:
        """SHA-256 of the plan source (or of its canonical form if built in code)."""
        text = self.source if self.source is not None else serialize_plan(self)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def render(self, filename: str = "<plan>") -> str:
        return f"{filename}:{self.line}: {self.message}"


class PlanError(ValueError):
    """Raised by :func:`parse_plan` when the source has syntax errors."""

    def __init__(self, diagnostics: list[Diagnostic], filename: str = "<plan>"):
        self.diagnostics = diagnostics
        self.filename = filename
        super().__init__("\n".join(d.render(filename) for d in diagnostics))


class SubstitutionError(ValueError):
    def __init__(self, message: str, names: Iterable[str] = ()):
        self.names = tuple(names)
        super().__init__(message)


class SelectionError(ValueError):
    pass


# --------------------------------------------------------------------------
# Lexer


@dataclass
class _Token:
    kind: str  # word, string, number, semi, eof
    text: str
    line: int


class _SyntaxError(Exception):
    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1

    def _skip_blank(self) -> None:
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "\n":
                self.line += 1
                self.pos += 1
            elif ch in " \t\r\f\v":
                self.pos += 1
            elif ch == "#":
                end = text.find("\n", self.pos)
                self.pos = len(text) if end < 0 else end
            else:
                break

    def next(self) -> _Token:
        self._skip_blank()
        text = self.text
        if self.pos >= len(text):
            return _Token("eof", "", self.line)
        ch = text[self.pos]
        line = self.line
        if ch == ";":
            self.pos += 1
            return _Token("semi", ";", line)
        if ch == '"':
            end = self.pos + 1
            while end < len(text) and text[end] not in '"\n':
                end += 1
            if end >= len(text) or text[end] != '"':
                raise _SyntaxError(line, "unterminated string")
            value = text[self.pos + 1 : end]
            self.pos = end + 1
            return _Token("string", value, line)
        m = _NUMBER_RE.match(text, self.pos)
        if m:
            self.pos = m.end()
            return _Token("number", m.group(), line)
        m = IDENT_RE.match(text, self.pos)
        if m:
            self.pos = m.end()
            return _Token("word", m.group(), line)
        raise _SyntaxError(line, f"unexpected character {ch!r}")

    def rest_of_line(self) -> str:
        end = self.text.find("\n", self.pos)
        if end < 0:
            end = len(self.text)
        chunk = self.text[self.pos : end]
        self.pos = end
        return chunk

    def raw_line(self) -> tuple[str, int] | None:
        """Consume the next physical line (after the current one ends)."""
        if self.pos < len(self.text) and self.text[self.pos] == "\n":
            self.pos += 1
            self.line += 1
        if self.pos >= len(self.text):
            return None
        end = self.text.find("\n", self.pos)
        if end < 0:
            end = len(self.text)
        chunk = self.text[self.pos : end]
        line = self.line
        self.pos = end
        return chunk.rstrip("\r"), line

    def skip_to_recovery(self) -> None:
        """Move past the next ';' or to the next line starting a statement."""
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == ";":
                self.pos += 1
                return
            if ch == "\n":
                self.line += 1
                self.pos += 1
                rest = text[self.pos :].lstrip(" \t")
                if rest.startswith(("parameter", "task")):
                    return
                continue
            if ch == '"':
                close = text.find('"', self.pos + 1)
                newline = text.find("\n", self.pos + 1)
                if close < 0 or (0 <= newline < close):
                    self.pos += 1
                    continue
                self.pos = close + 1
                continue
            self.pos += 1


# --------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.lex = _Lexer(text)
        self.tok = None  # type: _Token | None
        self.diagnostics: list[Diagnostic] = []

    def advance(self) -> _Token:
        self.tok = self.lex.next()
        return self.tok

    def expect(self, kind: str, what: str, text: str | None = None) -> _Token:
        tok = self.advance()
        if tok.kind != kind or (text is not None and tok.text != text):
            shown = tok.text if tok.kind != "eof" else "end of input"
            raise _SyntaxError(tok.line, f"expected {what}, got {shown!r}")
        return tok

    def parse(self) -> PlanFile:
        params: list[ParameterDecl] = []
        tasks: list[TaskScript] = []
        seen: dict[str, int] = {}
        while True:
            try:
                tok = self.advance()
            except _SyntaxError as exc:
                self.diagnostics.append(Diagnostic(exc.line, exc.message))
                self.lex.skip_to_recovery()
                continue
            if tok.kind == "eof":
                break
            try:
                if tok.kind == "word" and tok.text == "parameter":
                    decl = self.parse_parameter(tok.line)
                    if decl.name in seen:
                        self.diagnostics.append(
                            Diagnostic(
                                decl.line,
                                f"duplicate parameter {decl.name!r} "
                                f"(first declared on line {seen[decl.name]})",
                            )
                        )
                    else:
                        seen[decl.name] = decl.line
                        params.append(decl)
                elif tok.kind == "word" and tok.text == "task":
                    task = self.parse_task(tok.line)
                    if task is not None:
                        tasks.append(task)
                else:
                    raise _SyntaxError(tok.line, f"unknown keyword {tok.text!r}")
            except _SyntaxError as exc:
                self.diagnostics.append(Diagnostic(exc.line, exc.message))
                # semantic errors are raised after the closing ';' was consumed
                if self.tok is None or self.tok.kind != "semi":
                    self.lex.skip_to_recovery()
        return PlanFile(tuple(params), tuple(tasks))

    def parse_parameter(self, line: int) -> ParameterDecl:
        name = self.expect("word", "parameter name").text
        label = None
        tok = self.expect("word", "type or 'label'")
        if tok.text == "label":
            label = self.expect("string", "label string").text
            tok = self.expect("word", "parameter type")
        kind = tok.text
        if kind == "text":
            domain = self.parse_text_clause()
        elif kind == "integer":
            domain = self.parse_integer_clause()
        elif kind == "float":
            self.expect("word", "'default'", "default")
            num = self.expect("number", "decimal value")
            domain = FloatDefault(Decimal(num.text))
            self.expect("semi", "';'")
        else:
            raise _SyntaxError(tok.line, f"unknown keyword {kind!r}")
        return ParameterDecl(name, domain, label, line)

    def parse_text_clause(self) -> ParameterDomain:
        tok = self.expect("word", "'select' or 'default'")
        if tok.text == "default":
            value = self.expect("string", "default string").text
            self.expect("semi", "';'")
            return TextDefault(value)
        if tok.text != "select":
            raise _SyntaxError(tok.line, f"unknown keyword {tok.text!r}")
        self.expect("word", "'oneof'", "oneof")
        values: list[str] = []
        default = None
        while True:
            tok = self.advance()
            if tok.kind == "string":
                values.append(tok.text)
            elif tok.kind == "word" and tok.text == "default":
                default_tok = self.expect("string", "default string")
                default = default_tok.text
                self.expect("semi", "';'")
                break
            elif tok.kind == "semi":
                break
            else:
                shown = tok.text if tok.kind != "eof" else "end of input"
                raise _SyntaxError(tok.line, f"expected string, 'default' or ';', got {shown!r}")
        if not values:
            raise _SyntaxError(tok.line, "select oneof needs at least one value")
        if len(set(values)) != len(values):
            raise _SyntaxError(tok.line, "select oneof lists a value twice")
        if default is not None and default not in values:
            raise _SyntaxError(tok.line, f"default {default!r} is not one of the listed values")
        return TextSelectOneOf(tuple(values), default)

    def parse_integer_clause(self) -> ParameterDomain:
        tok = self.expect("word", "'default' or 'range'")
        if tok.text == "default":
            value = self._integer("integer default")
            self.expect("semi", "';'")
            return IntegerDefault(value)
        if tok.text != "range":
            raise _SyntaxError(tok.line, f"unknown keyword {tok.text!r}")
        line = tok.line
        try:
            self.expect("word", "'from'", "from")
            start = self._integer("range start")
            self.expect("word", "'to'", "to")
            stop = self._integer("range end")
            tok = self.advance()
            step = 1
            if tok.kind == "word" and tok.text == "step":
                step = self._integer("range step")
                self.expect("semi", "';'")
            elif tok.kind != "semi":
                raise _SyntaxError(tok.line, "expected 'step' or ';'")
        except _SyntaxError as exc:
            raise _SyntaxError(exc.line, f"malformed range: {exc.message}") from None
        if start > stop:
            raise _SyntaxError(line, "range from exceeds to")
        if step < 1:
            raise _SyntaxError(line, "range step must be at least 1")
        return IntegerRange(start, stop, step)

    def _integer(self, what: str) -> int:
        tok = self.expect("number", what)
        if "." in tok.text:
            raise _SyntaxError(tok.line, f"{what} must be an integer, got {tok.text!r}")
        return int(tok.text)

    def parse_task(self, line: int) -> TaskScript | None:
        kind_tok = self.expect("word", "task kind")
        if kind_tok.text not in ("nodestart", "main"):
            raise _SyntaxError(kind_tok.line, f"unknown task kind {kind_tok.text!r}")
        trailing = self.lex.rest_of_line().strip()
        if trailing and not trailing.startswith("#"):
            raise _SyntaxError(kind_tok.line, f"unexpected text after task kind: {trailing!r}")
        commands: list[Command] = []
        while True:
            raw = self.lex.raw_line()
            if raw is None:
                raise _SyntaxError(line, f"task {kind_tok.text} has no endtask")
            text, lineno = raw
            self.lex.line = lineno
            stripped = text.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped == "endtask":
                break
            try:
                commands.append(_parse_command(stripped, lineno))
            except _SyntaxError as exc:
                self.diagnostics.append(Diagnostic(exc.line, exc.message))
        return TaskScript(kind_tok.text, tuple(commands), line)


def _parse_command(text: str, line: int) -> Command:
    head, _, rest = text.partition(" ")
    rest = rest.strip()
    if head in ("node:execute", "execute"):
        if not rest:
            raise _SyntaxError(line, "execute needs a command line")
        return Execute(rest, line)
    args = rest.split()
    if head in ("node:substitute", "substitute"):
        if len(args) != 2:
            raise _SyntaxError(line, "substitute takes exactly two file names")
        return Substitute(args[0], args[1], line)
    if head == "copy":
        if len(args) != 2:
            raise _SyntaxError(line, "copy takes exactly two paths")
        src, dst = args
        src_node = src.startswith("node:")
        dst_node = dst.startswith("node:")
        if src_node == dst_node:
            raise _SyntaxError(line, "copy needs exactly one side prefixed with 'node:'")
        if dst_node:
            return Copy(src, dst[len("node:") :], True, line)
        return Copy(src[len("node:") :], dst, False, line)
    raise _SyntaxError(line, f"unknown command {head!r}")


def parse_plan(source: str, filename: str = "<plan>") -> PlanFile:
    """Parse plan text. Raises :class:`PlanError` carrying line diagnostics."""
    parser = _Parser(source.replace("\r\n", "\n"))
    plan = parser.parse()
    if parser.diagnostics:
        raise PlanError(sorted(parser.diagnostics, key=lambda d: d.line), filename)
    return PlanFile(plan.parameters, plan.tasks, source=source)


# --------------------------------------------------------------------------
# Serialization


def _quote(value: str) -> str:
    if '"' in value or "\n" in value:
        raise ValueError(f"text value cannot be written to a plan: {value!r}")
    return f'"{value}"'


def _serialize_decl(decl: ParameterDecl) -> str:
    parts = ["parameter", decl.name]
    if decl.label is not None:
        parts += ["label", _quote(decl.label)]
    dom = decl.domain
    if isinstance(dom, TextSelectOneOf):
        parts += ["text", "select", "oneof"] + [_quote(v) for v in dom.values]
        if dom.default is not None:
            parts += ["default", _quote(dom.default)]
    elif isinstance(dom, TextDefault):
        parts += ["text", "default", _quote(dom.value)]
    elif isinstance(dom, IntegerDefault):
        parts += ["integer", "default", str(dom.value)]
    elif isinstance(dom, IntegerRange):
        parts += ["integer", "range", "from", str(dom.start), "to", str(dom.stop), "step", str(dom.step)]
    elif isinstance(dom, FloatDefault):
        parts += ["float", "default", str(dom.value)]
    return " ".join(parts) + ";"


def _serialize_command(cmd: Command) -> str:
    if isinstance(cmd, Copy):
        if cmd.to_node:
            return f"copy {cmd.src} node:{cmd.dst}"
        return f"copy node:{cmd.src} {cmd.dst}"
    if isinstance(cmd, Substitute):
        return f"node:substitute {cmd.input} {cmd.output}"
    return f"node:execute {cmd.argv}"


def serialize_plan(plan: PlanFile) -> str:
    lines = [_serialize_decl(d) for d in plan.parameters]
    for task in plan.tasks:
        lines.append(f"task {task.kind}")
        lines += ["  " + _serialize_command(c) for c in task.commands]
        lines.append("endtask")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Values


def render_value(value: Value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean values are not plan values")
    return str(value)


def coerce_value(decl: ParameterDecl, text: str) -> Value:
    """Convert user-supplied text (e.g. a CLI selection) into a typed value."""
    dom = decl.domain
    if isinstance(dom, (IntegerDefault, IntegerRange)):
        try:
            return int(text)
        except ValueError:
            raise SelectionError(f"{decl.name}: {text!r} is not an integer") from None
    if isinstance(dom, FloatDefault):
        try:
            return Decimal(text)
        except InvalidOperation:
            raise SelectionError(f"{decl.name}: {text!r} is not a decimal") from None
    return text


def enumerate_values(decl: ParameterDecl, selection: Iterable[Value] | None = None) -> list[Value]:
    """Values a parameter takes in the sweep, optionally restricted to ``selection``.

    Ranges come out ascending and ``oneof`` lists in declaration order; for the
    single-valued variants a selection replaces the default.
    """
    dom = decl.domain
    if selection is None:
        if isinstance(dom, IntegerRange):
            return list(range(dom.start, dom.stop + 1, dom.step))
        if isinstance(dom, TextSelectOneOf):
            return [dom.default if dom.default is not None else dom.values[0]]
        return [dom.value]

    chosen = list(dict.fromkeys(selection))
    if not chosen:
        raise SelectionError(f"{decl.name}: empty selection")
    if isinstance(dom, IntegerRange):
        bad = [v for v in chosen if v not in dom]
        if bad:
            raise SelectionError(f"{decl.name}: {bad[0]!r} outside range {dom.start}..{dom.stop} step {dom.step}")
        return sorted(chosen)
    if isinstance(dom, TextSelectOneOf):
        bad = [v for v in chosen if v not in dom.values]
        if bad:
            raise SelectionError(f"{decl.name}: {bad[0]!r} is not one of the declared values")
        wanted = set(chosen)
        return [v for v in dom.values if v in wanted]
    if isinstance(dom, IntegerDefault):
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in chosen):
            raise SelectionError(f"{decl.name}: integer values required")
    elif isinstance(dom, FloatDefault):
        try:
            chosen = list(dict.fromkeys(Decimal(str(v)) for v in chosen))
        except InvalidOperation:
            raise SelectionError(f"{decl.name}: decimal values required") from None
    elif isinstance(dom, TextDefault):
        if not all(isinstance(v, str) for v in chosen):
            raise SelectionError(f"{decl.name}: text values required")
    return chosen


# --------------------------------------------------------------------------
# Substitution


def _scan(template: str):
    """Yield ('text', str) and ('name', str) pieces of a template."""
    i = 0
    n = len(template)
    start = 0
    while i < n:
        if template[i] != "$":
            i += 1
            continue
        if i + 1 >= n:
            raise SubstitutionError("dangling '$' at end of input")
        nxt = template[i + 1]
        if nxt == "$":
            yield "text", template[start:i] + "$"
            i += 2
            start = i
        elif nxt == "{":
            close = template.find("}", i + 2)
            if close < 0:
                raise SubstitutionError(f"unterminated '${{' at offset {i}")
            name = template[i + 2 : close]
            if not _IDENT_FULL.match(name):
                raise SubstitutionError(f"bad placemaker name {name!r} at offset {i}")
            yield "text", template[start:i]
            yield "name", name
            i = close + 1
            start = i
        else:
            m = IDENT_RE.match(template, i + 1)
            if m is None:
                i += 1
                continue
            yield "text", template[start:i]
            yield "name", m.group()
            i = m.end()
            start = i
    yield "text", template[start:]


def placemakers(template: str) -> list[str]:
    """Names referenced by ``template``, in first-use order."""
    return list(dict.fromkeys(piece for kind, piece in _scan(template) if kind == "name"))


def substitute(template: str, bindings: Mapping[str, Value]) -> str:
    pieces = list(_scan(template))
    missing = sorted({p for k, p in pieces if k == "name" and p not in bindings})
    if missing:
        raise SubstitutionError("unbound placemaker(s): " + ", ".join(missing), missing)
    return "".join(p if k == "text" else render_value(bindings[p]) for k, p in pieces)


# --------------------------------------------------------------------------
# Validation


def _command_templates(cmd: Command) -> list[str]:
    if isinstance(cmd, Copy):
        return [cmd.src, cmd.dst]
    if isinstance(cmd, Substitute):
        return [cmd.input, cmd.output]
    return [cmd.argv]


def validate_plan(plan: PlanFile) -> list[Diagnostic]:
    """Semantic checks on a parsed plan; an empty list means the plan is usable."""
    diags: list[Diagnostic] = []
    declared = set(plan.names)
    for decl in plan.parameters:
        if decl.name in PSEUDO_PARAMETERS:
            diags.append(Diagnostic(decl.line, f"{decl.name!r} is a pseudo-parameter and cannot be declared"))
    kinds_seen: dict[str, int] = {}
    for task in plan.tasks:
        if task.kind in kinds_seen:
            diags.append(Diagnostic(task.line, f"duplicate task {task.kind!r}"))
        kinds_seen.setdefault(task.kind, task.line)
        for cmd in task.commands:
            for tmpl in _command_templates(cmd):
                try:
                    names = placemakers(tmpl)
                except SubstitutionError as exc:
                    diags.append(Diagnostic(cmd.line, str(exc)))
                    continue
                for name in names:
                    if name not in declared and name not in PSEUDO_PARAMETERS:
                        diags.append(Diagnostic(cmd.line, f"unresolved placemaker ${name}"))
    if "main" not in kinds_seen:
        diags.append(Diagnostic(1, "plan has no main task"))
    return diags
