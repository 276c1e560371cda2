"""Restricted line-oriented expression language for tool programs.

A program is a sequence of lines, each an assignment or a bare expression.
Expressions are builtin tool calls, literals, variable references, list
literals, and single comparisons. There are no loops, no conditionals, no
user-defined functions, no imports, and no attribute access: programs can
touch nothing but their bindings and the session's enabled tools.

Every runtime problem, including parse failures when running raw source,
is converted into an error Feedback whose payload starts with the exact
Traceback sentinel. Bindings keep the effects of statements before the
faulting one and nothing from it onward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .model import TRACEBACK_SENTINEL, Feedback

Bindings = dict[str, Any]


# ============================================================
# Errors
# ============================================================

class DslSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownBuiltinError(ValueError):
    def __init__(self, name: str, line: int, column: int) -> None:
        super().__init__(f"UnknownBuiltin: {name} (line {line}, column {column})")
        self.name = name
        self.line = line
        self.column = column


class ToolFault(RuntimeError):
    """Raised by a session when a tool invocation fails (simulated or real)."""


class _Fault(Exception):
    # Internal: evaluation failure carrying the payload fields.
    def __init__(self, kind: str, message: str, line: int) -> None:
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.line = line


# ============================================================
# Values
# ============================================================

@dataclass(frozen=True)
class ObjectHandle:
    """Agent-visible reference to one detected scene object. Hidden scene
    attributes are deliberately absent from the repr."""

    name: str
    ordinal: int
    bbox: tuple[int, int, int, int]

    def render(self) -> str:
        l, u, r, lo = self.bbox
        return f"{self.name}#{self.ordinal}(bbox=({l},{u},{r},{lo}))"


@dataclass(frozen=True)
class Region:
    left: int
    upper: int
    right: int
    lower: int

    def render(self) -> str:
        return f"region({self.left},{self.upper},{self.right},{self.lower})"

    def contains_center(self, bbox: tuple[int, int, int, int]) -> bool:
        cx = (bbox[0] + bbox[2]) / 2
        cy = (bbox[1] + bbox[3]) / 2
        return self.left <= cx < self.right and self.upper <= cy < self.lower


def render_value(value: Any) -> str:
    """Deterministic feedback text for a DSL value. Strings render bare."""
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, (ObjectHandle, Region)):
        return value.render()
    if isinstance(value, list):
        return "[" + ", ".join(render_value(v) for v in value) + "]"
    raise TypeError(f"unrenderable value: {value!r}")


# ============================================================
# Library capabilities
# ============================================================

DETECTOR = "detector"
CHECK_EXISTENCE = "check_existence"
SIMPLE_QUERY = "simple_query"
EXTERNAL_KNOWLEDGE = "external_knowledge"
PROPERTY_MATCHING = "property_matching"
VERIFY_PROPERTY = "verify_property"
IMAGE_CROP = "image_crop"

COMPLETE_LIBRARY: frozenset[str] = frozenset({
    DETECTOR,
    CHECK_EXISTENCE,
    SIMPLE_QUERY,
    EXTERNAL_KNOWLEDGE,
    PROPERTY_MATCHING,
    VERIFY_PROPERTY,
    IMAGE_CROP,
})

# Builtins that invoke a (noisy) session tool, keyed by capability.
_SESSION_BUILTINS = {
    "find": DETECTOR,
    "exists": CHECK_EXISTENCE,
    "verify_property": VERIFY_PROPERTY,
    "best_description_from_options": PROPERTY_MATCHING,
    "simple_query": SIMPLE_QUERY,
    "llm_query": EXTERNAL_KNOWLEDGE,
}

_CROP_BUILTINS = {
    "crop_left_of_bbox",
    "crop_right_of_bbox",
    "crop_above_bbox",
    "crop_below_bbox",
}

# Pure helpers usable regardless of the library.
_PURE_BUILTINS = {"count", "bool_to_yesno"}

BUILTIN_NAMES: frozenset[str] = frozenset(
    set(_SESSION_BUILTINS) | _CROP_BUILTINS | _PURE_BUILTINS
)


# ============================================================
# AST
# ============================================================

@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class ListExpr:
    items: tuple[Any, ...]


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Any, ...]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Statement:
    line: int
    target: str | None      # assignment target, None for bare expressions
    expr: Any


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]


# ============================================================
# Tokenizer
# ============================================================

_OPS = ("==", "!=", "<=", ">=", "<", ">", "=", "(", ")", "[", "]", ",")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_BODY = _IDENT_START | set("0123456789")
_ESCAPES = {"\\": "\\", '"': '"', "'": "'", "n": "\n", "t": "\t"}


def _tokenize_line(text: str, line: int) -> list[tuple[str, Any, int]]:
    tokens: list[tuple[str, Any, int]] = []
    i = 0
    while i < len(text):
        ch = text[i]
        col = i + 1
        if ch in " \t":
            i += 1
            continue
        if ch in "\"'":
            quote = ch
            i += 1
            chars: list[str] = []
            while i < len(text) and text[i] != quote:
                if text[i] == "\\":
                    if i + 1 >= len(text) or text[i + 1] not in _ESCAPES:
                        raise DslSyntaxError("bad string escape", line, i + 1)
                    chars.append(_ESCAPES[text[i + 1]])
                    i += 2
                else:
                    chars.append(text[i])
                    i += 1
            if i >= len(text):
                raise DslSyntaxError("unterminated string literal", line, col)
            i += 1
            tokens.append(("STRING", "".join(chars), col))
            continue
        if ch.isdigit() or (
            ch == "-" and i + 1 < len(text) and text[i + 1].isdigit()
        ):
            j = i + 1
            seen_dot = False
            while j < len(text) and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            raw = text[i:j]
            if raw.endswith("."):
                raise DslSyntaxError("bad number literal", line, col)
            tokens.append(("NUMBER", float(raw) if seen_dot else int(raw), col))
            i = j
            continue
        if ch in _IDENT_START:
            j = i + 1
            while j < len(text) and text[j] in _IDENT_BODY:
                j += 1
            tokens.append(("IDENT", text[i:j], col))
            i = j
            continue
        for op in _OPS:
            if text.startswith(op, i):
                tokens.append(("OP", op, col))
                i += len(op)
                break
        else:
            raise DslSyntaxError(f"unexpected character {ch!r}", line, col)
    return tokens


# ============================================================
# Parser (one statement per line)
# ============================================================

class _LineParser:
    def __init__(self, tokens: list[tuple[str, Any, int]], line: int) -> None:
        self.tokens = tokens
        self.line = line
        self.pos = 0

    def _peek(self) -> tuple[str, Any, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self) -> tuple[str, Any, int]:
        token = self._peek()
        if token is None:
            last_col = self.tokens[-1][2] if self.tokens else 1
            raise DslSyntaxError("unexpected end of line", self.line, last_col)
        self.pos += 1
        return token

    def _expect_op(self, op: str) -> None:
        token = self._next()
        if token[0] != "OP" or token[1] != op:
            raise DslSyntaxError(f"expected {op!r}", self.line, token[2])

    def statement(self) -> Statement:
        target = None
        if (
            len(self.tokens) >= 2
            and self.tokens[0][0] == "IDENT"
            and self.tokens[1] == ("OP", "=", self.tokens[1][2])
        ):
            name = self.tokens[0][1]
            if name in BUILTIN_NAMES:
                raise DslSyntaxError(
                    f"cannot assign to builtin {name!r}", self.line, self.tokens[0][2]
                )
            target = name
            self.pos = 2
        expr = self.expression()
        trailing = self._peek()
        if trailing is not None:
            raise DslSyntaxError("unexpected trailing tokens", self.line, trailing[2])
        return Statement(line=self.line, target=target, expr=expr)

    def expression(self) -> Any:
        left = self.operand()
        token = self._peek()
        if token is not None and token[0] == "OP" and token[1] in ("==", "!=", "<=", ">=", "<", ">"):
            self.pos += 1
            right = self.operand()
            nxt = self._peek()
            if nxt is not None and nxt[0] == "OP" and nxt[1] in ("==", "!=", "<=", ">=", "<", ">"):
                raise DslSyntaxError("chained comparisons are not allowed", self.line, nxt[2])
            return Compare(op=token[1], left=left, right=right)
        return left

    def operand(self) -> Any:
        token = self._next()
        kind, value, col = token
        if kind == "STRING":
            return Literal(value)
        if kind == "NUMBER":
            return Literal(value)
        if kind == "OP" and value == "[":
            items: list[Any] = []
            nxt = self._peek()
            if nxt is not None and nxt[0] == "OP" and nxt[1] == "]":
                self.pos += 1
                return ListExpr(())
            while True:
                items.append(self.expression())
                closer = self._next()
                if closer[0] == "OP" and closer[1] == "]":
                    return ListExpr(tuple(items))
                if not (closer[0] == "OP" and closer[1] == ","):
                    raise DslSyntaxError("expected ',' or ']' in list", self.line, closer[2])
        if kind == "IDENT":
            if value in ("True", "False"):
                return Literal(value == "True")
            nxt = self._peek()
            if nxt is not None and nxt[0] == "OP" and nxt[1] == "(":
                if value not in BUILTIN_NAMES:
                    raise UnknownBuiltinError(value, self.line, col)
                self.pos += 1
                args: list[Any] = []
                closing = self._peek()
                if closing is not None and closing[0] == "OP" and closing[1] == ")":
                    self.pos += 1
                    return Call(name=value, args=())
                while True:
                    args.append(self.expression())
                    closer = self._next()
                    if closer[0] == "OP" and closer[1] == ")":
                        return Call(name=value, args=tuple(args))
                    if not (closer[0] == "OP" and closer[1] == ","):
                        raise DslSyntaxError(
                            "expected ',' or ')' in call", self.line, closer[2]
                        )
            return VarRef(value)
        raise DslSyntaxError(f"unexpected token {value!r}", self.line, col)


def parse_program(source: str) -> Program:
    """Parse source text; raises DslSyntaxError or UnknownBuiltinError with
    the offending line and column."""
    statements: list[Statement] = []
    for number, text in enumerate(source.splitlines(), start=1):
        if not text.strip():
            continue
        tokens = _tokenize_line(text, number)
        statements.append(_LineParser(tokens, number).statement())
    return Program(statements=tuple(statements))


# ============================================================
# Evaluation
# ============================================================

def _fault_payload(kind: str, message: str, line: int) -> str:
    return (
        f"{TRACEBACK_SENTINEL}\n"
        f'  File "<program>", line {line}\n'
        f"{kind}: {message}"
    )


def _require(condition: bool, kind: str, message: str, line: int) -> None:
    if not condition:
        raise _Fault(kind, message, line)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _Evaluator:
    def __init__(self, bindings: Bindings, session: Any) -> None:
        self.bindings = bindings
        self.session = session

    def eval_expr(self, expr: Any, line: int) -> Any:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, ListExpr):
            return [self.eval_expr(item, line) for item in expr.items]
        if isinstance(expr, VarRef):
            if expr.name not in self.bindings:
                raise _Fault("NameError", f"name {expr.name!r} is not defined", line)
            return self.bindings[expr.name]
        if isinstance(expr, Compare):
            return self._compare(expr, line)
        if isinstance(expr, Call):
            args = [self.eval_expr(a, line) for a in expr.args]
            return self._call(expr.name, args, line)
        raise _Fault("TypeFault", f"unknown expression node {expr!r}", line)

    def _compare(self, expr: Compare, line: int) -> bool:
        left = self.eval_expr(expr.left, line)
        right = self.eval_expr(expr.right, line)
        if expr.op == "==":
            return left == right
        if expr.op == "!=":
            return left != right
        ordered = (_is_number(left) and _is_number(right)) or (
            isinstance(left, str) and isinstance(right, str)
        )
        _require(
            ordered, "TypeFault",
            f"cannot order {type(left).__name__} and {type(right).__name__}", line,
        )
        if expr.op == "<":
            return left < right
        if expr.op == "<=":
            return left <= right
        if expr.op == ">":
            return left > right
        return left >= right

    def _invoke(self, tool: str, args: tuple, line: int) -> Any:
        capability = _SESSION_BUILTINS[tool]
        if not self.session.is_enabled(capability):
            raise _Fault(
                "ToolUnavailable", f"{tool} is not enabled in this library", line
            )
        try:
            return self.session.invoke(tool, args)
        except ToolFault as exc:
            raise _Fault("ToolFault", str(exc), line) from exc

    def _call(self, name: str, args: list[Any], line: int) -> Any:
        if name == "count":
            _require(len(args) == 1, "TypeFault", "count takes one argument", line)
            _require(isinstance(args[0], list), "TypeFault", "count expects a list", line)
            return len(args[0])
        if name == "bool_to_yesno":
            _require(len(args) == 1, "TypeFault", "bool_to_yesno takes one argument", line)
            _require(
                isinstance(args[0], bool), "TypeFault",
                "bool_to_yesno expects True or False", line,
            )
            return "yes" if args[0] else "no"
        if name in _CROP_BUILTINS:
            return self._crop(name, args, line)
        if name in ("find", "exists"):
            _require(
                len(args) in (1, 2), "TypeFault", f"{name} takes a name and an optional region", line
            )
            _require(isinstance(args[0], str), "TypeFault", f"{name} expects a name string", line)
            if len(args) == 2:
                _require(
                    isinstance(args[1], Region), "TypeFault",
                    f"{name} optional second argument must be a region", line,
                )
            return self._invoke(name, tuple(args), line)
        if name == "verify_property":
            _require(
                len(args) == 2 and all(isinstance(a, str) for a in args),
                "TypeFault", "verify_property expects (name, property)", line,
            )
            return self._invoke(name, tuple(args), line)
        if name == "best_description_from_options":
            ok = (
                len(args) == 2
                and isinstance(args[0], str)
                and isinstance(args[1], list)
                and all(isinstance(o, str) for o in args[1])
            )
            _require(ok, "TypeFault", "best_description_from_options expects (name, options)", line)
            return self._invoke(name, (args[0], tuple(args[1])), line)
        if name in ("simple_query", "llm_query"):
            _require(
                len(args) == 1 and isinstance(args[0], str),
                "TypeFault", f"{name} expects a question string", line,
            )
            return self._invoke(name, tuple(args), line)
        raise _Fault("TypeFault", f"unhandled builtin {name}", line)

    def _crop(self, name: str, args: list[Any], line: int) -> Region:
        if not self.session.is_enabled(IMAGE_CROP):
            raise _Fault(
                "ToolUnavailable", f"{name} is not enabled in this library", line
            )
        _require(
            len(args) == 4 and all(_is_number(a) for a in args),
            "TypeFault", f"{name} expects four coordinates", line,
        )
        left, upper, right, lower = (int(a) for a in args)
        width, height = self.session.canvas
        if name == "crop_left_of_bbox":
            region = Region(0, 0, max(0, left), height)
        elif name == "crop_right_of_bbox":
            region = Region(min(width, right), 0, width, height)
        elif name == "crop_above_bbox":
            region = Region(0, 0, width, max(0, upper))
        else:
            region = Region(0, min(height, lower), width, height)
        return region


def evaluate(
    program: Program | str,
    bindings: Bindings,
    session: Any,
    *,
    step_index: int,
) -> Feedback:
    """Run a program against the session, mutating bindings statement by
    statement. Never raises: every failure becomes an error Feedback."""
    if isinstance(program, str):
        try:
            program = parse_program(program)
        except UnknownBuiltinError as exc:
            return Feedback.from_payload(
                step_index, _fault_payload("UnknownBuiltin", exc.name, exc.line)
            )
        except DslSyntaxError as exc:
            return Feedback.from_payload(
                step_index, _fault_payload("SyntaxError", str(exc), exc.line)
            )
    evaluator = _Evaluator(bindings, session)
    last_value: Any = None
    last_was_assignment = True
    for statement in program.statements:
        try:
            value = evaluator.eval_expr(statement.expr, statement.line)
        except _Fault as fault:
            return Feedback.from_payload(
                step_index, _fault_payload(fault.kind, fault.message, fault.line)
            )
        if statement.target is not None:
            bindings[statement.target] = value
            last_was_assignment = True
        else:
            last_was_assignment = False
        last_value = value
    if last_was_assignment or not program.statements:
        return Feedback.from_payload(step_index, "")
    return Feedback.from_payload(step_index, render_value(last_value))


# ============================================================
# Tool documentation
# ============================================================

_DOC_ENTRIES: tuple[tuple[str | None, str, str], ...] = (
    (DETECTOR, "find(name) -> list",
     "Detect Object: return a handle for every scene object matching name."),
    (DETECTOR, "count(items) -> int",
     "Count the entries of a find result."),
    (CHECK_EXISTENCE, "exists(name) -> bool",
     "Check Object Existence: report whether a matching object is present."),
    (VERIFY_PROPERTY, "verify_property(name, property) -> bool",
     "Verify Visual Property: check whether the named object shows the property."),
    (PROPERTY_MATCHING, "best_description_from_options(name, options) -> str",
     "Identify the Best-Matching Visual Property: pick the option fitting the named object."),
    (SIMPLE_QUERY, "simple_query(question) -> str",
     "Answering Simple Questions with a Word or Phrase: ask a short templated question."),
    (EXTERNAL_KNOWLEDGE, "llm_query(question) -> str",
     "Acquire External Knowledge: look up facts beyond the scene."),
    (IMAGE_CROP, "crop_left_of_bbox(left, upper, right, lower) -> region",
     "Crop Images Based on Provided Coordinates: the area left of the box."),
    (IMAGE_CROP, "crop_right_of_bbox(left, upper, right, lower) -> region",
     "Crop Images Based on Provided Coordinates: the area right of the box."),
    (IMAGE_CROP, "crop_above_bbox(left, upper, right, lower) -> region",
     "Crop Images Based on Provided Coordinates: the area above the box."),
    (IMAGE_CROP, "crop_below_bbox(left, upper, right, lower) -> region",
     "Crop Images Based on Provided Coordinates: the area below the box."),
    (None, "bool_to_yesno(value) -> str",
     "Convert True/False to Yes/No."),
)


def builtin_docs(library: frozenset[str]) -> str:
    """Render the tool documentation for the enabled capability set. Pure
    helpers are always listed; everything else needs its capability."""
    unknown = library - COMPLETE_LIBRARY
    if unknown:
        raise ValueError(f"unknown capabilities: {sorted(unknown)}")
    lines: list[str] = []
    for capability, signature, description in _DOC_ENTRIES:
        if capability is None or capability in library:
            lines.append(signature)
            lines.append(f"    {description}")
    lines.append("Comparisons ==, !=, <, <=, >, >= are available in expressions.")
    return "\n".join(lines)
