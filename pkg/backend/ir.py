"""
Intermediate class representation of analyzed SCOOP programs.

Parses the `.scp` class syntax (the Maude-style listing with quoted
identifiers), prints it back, validates name resolution, and answers feature
lookups for the engines.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError

from backend.errors import FeatureNotFound, ParseError, ScoopError

logger = logging.getLogger(__name__)

CURRENT = "Current"


class Name(str):
    """
    Identifier text. Remembers whether it was written quoted ('FORK) and where
    it appeared; equality and hashing only look at the text.
    """

    def __new__(cls, text: str, quoted: bool = False, line: int = 0, col: int = 0):
        obj = super().__new__(cls, text)
        obj.quoted = quoted
        obj.line = line
        obj.col = col
        return obj

    def __reduce__(self):
        return (Name, (str(self), self.quoted, self.line, self.col))

    def render(self) -> str:
        return f"'{self}" if self.quoted else str(self)


# ---------------------------------------------------------------------------
# Program structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expression:
    """Dot path: Current, an identifier, or a boolean literal, then attribute selectors"""

    root: Name
    selectors: Tuple[Name, ...] = ()
    literal: Optional[bool] = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def is_literal(self) -> bool:
        return self.literal is not None

    @property
    def is_current(self) -> bool:
        return self.literal is None and self.root == CURRENT

    def __str__(self) -> str:
        return ".".join([str(self.root), *map(str, self.selectors)])


@dataclass(frozen=True)
class TypeAnnot:
    """[!,T,'FORK]: attachment mark, processor tag (None means T), class name"""

    attached: bool
    processor: Optional[Name]
    class_name: Name

    @property
    def is_separate(self) -> bool:
        return self.processor is None

    def __str__(self) -> str:
        mark = "!" if self.attached else "?"
        tag = "T" if self.processor is None else self.processor.render()
        return f"[{mark},{tag},{self.class_name.render()}]"


@dataclass(frozen=True)
class Entity:
    """A formal argument or a local variable"""

    name: Name
    type: TypeAnnot


@dataclass(frozen=True)
class Attribute:
    name: Name
    type: TypeAnnot
    exports: Tuple[Name, ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Create:
    target: Expression
    creator: Name
    args: Tuple[Expression, ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assign:
    target: Expression
    source: Expression
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Command:
    target: Expression
    feature: Name
    args: Tuple[Expression, ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class NilInstruction:
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Conditional:
    condition: Expression
    then_branch: Tuple["Instruction", ...]
    else_branch: Tuple["Instruction", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Instruction = Union[Create, Assign, Command, NilInstruction, Conditional]


@dataclass(frozen=True)
class Procedure:
    name: Name
    exports: Tuple[Name, ...]
    formals: Tuple[Entity, ...]
    precondition: Expression
    locals: Tuple[Entity, ...]
    body: Tuple[Instruction, ...]
    postcondition: Expression
    rescue: Tuple[Instruction, ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def arity(self) -> int:
        return len(self.formals)

    def entity(self, name: str) -> Optional[Entity]:
        for entity in self.formals + self.locals:
            if entity.name == name:
                return entity
        return None


@dataclass(frozen=True)
class ClassDecl:
    name: Name
    creators: Tuple[Name, ...]
    attributes: Tuple[Attribute, ...]
    procedures: Tuple[Procedure, ...]
    invariant: Expression
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    def attribute(self, name: str) -> Optional[Attribute]:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute
        return None

    def procedure(self, name: str) -> Optional[Procedure]:
        for procedure in self.procedures:
            if procedure.name == name:
                return procedure
        return None


@dataclass(frozen=True)
class Settings:
    root_class: Name
    root_procedure: Name
    flag: bool = False
    deadlock_check: bool = True


@dataclass(frozen=True)
class Program:
    classes: Tuple[ClassDecl, ...]
    settings: Settings
    strategy: Optional[str] = None

    def class_decl(self, name: str) -> Optional[ClassDecl]:
        for decl in self.classes:
            if decl.name == name:
                return decl
        return None


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int = 0
    col: int = 0
    severity: str = "error"

    def to_dict(self) -> Dict:
        return {
            'code': self.code,
            'message': self.message,
            'line': self.line,
            'col': self.col,
            'severity': self.severity,
        }


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

GRAMMAR = r"""
    start: "srew"? "(" "(" "import" "default" class_decl* ")" settings ")" using_clause?

    class_decl: "(" "class" name "create" name_set "(" feature* ")" "invariant" expr "end" ")" ";"
    name_set: "{" "nil" "}"
            | "{" name ("," name)* "}"
    ?feature: attribute | procedure
    attribute: "attribute" name_set name ":" type_annot ";"
    procedure: "procedure" name_set name "(" entities ")" "require" expr "local" "(" entities ")" "do" block "ensure" expr "rescue" rescue_clause "end" ";"
    entities: "nil" -> no_entities
            | entity+
    entity: name ":" type_annot ";"
    type_annot: "[" mark "," tag "," name "]"
    mark: "!" -> attached
        | "?" -> detachable
    tag: "T" -> any_tag
       | name -> explicit_tag

    block: "(" "nil" ")" -> empty_block
         | "(" (instruction ";")* ")"
    rescue_clause: "nil"
                 | block
    instruction: "create" "(" call ")" -> create
               | "assign" "(" expr "," expr ")" -> assign
               | "command" "(" call ")" -> command
               | "nil" -> skip
               | "if" expr "then" block "else" block "end" -> conditional
    call: name ("." name)+ "(" args ")"
    args: "nil" -> no_args
        | (expr ";")+
    expr: root ("." name)*
    ?root: name | TRUE | FALSE
    name: QNAME | NAME

    settings: "settings" "(" name "," name "," flag "," check ")"
    flag: "true" -> flag_true
        | "false" -> flag_false
    check: "deadlock-on" -> check_on
         | "deadlock-off" -> check_off
    using_clause: "using" STRATEGY "."

    TRUE: "True"
    FALSE: "False"
    QNAME: /'[A-Za-z_][A-Za-z0-9_]*/
    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    STRATEGY: /[^.\s][^.]*/
    COMMENT: /---[^\n]*/

    %import common.WS
    %ignore WS
    %ignore COMMENT
"""


def _pos(meta) -> Dict[str, int]:
    if getattr(meta, 'empty', True):
        return {'line': 0, 'col': 0}
    return {'line': meta.line, 'col': meta.column}


class _ProgramBuilder(Transformer):
    """Turns the lark parse tree into IR dataclasses"""

    def name(self, children):
        token = children[0]
        if token.type == 'QNAME':
            return Name(token[1:], quoted=True, line=token.line, col=token.column)
        return Name(str(token), line=token.line, col=token.column)

    def name_set(self, children):
        return tuple(children)

    @v_args(meta=True)
    def expr(self, meta, children):
        root, selectors = children[0], tuple(children[1:])
        if not isinstance(root, Name):
            literal = root.type == 'TRUE'
            return Expression(Name(str(root)), selectors, literal, **_pos(meta))
        return Expression(root, selectors, None, **_pos(meta))

    # Types and entities

    def attached(self, _):
        return True

    def detachable(self, _):
        return False

    def any_tag(self, _):
        return None

    def explicit_tag(self, children):
        return children[0]

    def type_annot(self, children):
        attached, tag, class_name = children
        return TypeAnnot(attached, tag, class_name)

    def entity(self, children):
        return Entity(children[0], children[1])

    def no_entities(self, _):
        return ()

    def entities(self, children):
        return tuple(children)

    # Instructions

    def call(self, children):
        names, args = children[:-1], children[-1]
        target = Expression(names[0], tuple(names[1:-1]), None, line=names[0].line, col=names[0].col)
        return target, names[-1], args

    def no_args(self, _):
        return ()

    def args(self, children):
        return tuple(children)

    @v_args(meta=True)
    def create(self, meta, children):
        target, feature, args = children[0]
        return Create(target, feature, args, **_pos(meta))

    @v_args(meta=True)
    def assign(self, meta, children):
        return Assign(children[0], children[1], **_pos(meta))

    @v_args(meta=True)
    def command(self, meta, children):
        target, feature, args = children[0]
        return Command(target, feature, args, **_pos(meta))

    @v_args(meta=True)
    def skip(self, meta, _):
        return NilInstruction(**_pos(meta))

    @v_args(meta=True)
    def conditional(self, meta, children):
        condition, then_branch, else_branch = children
        return Conditional(condition, then_branch, else_branch, **_pos(meta))

    def empty_block(self, _):
        return ()

    def block(self, children):
        return tuple(children)

    def rescue_clause(self, children):
        return children[0] if children else ()

    # Declarations

    @v_args(meta=True)
    def attribute(self, meta, children):
        exports, name, annot = children
        return Attribute(name, annot, exports, **_pos(meta))

    @v_args(meta=True)
    def procedure(self, meta, children):
        exports, name, formals, pre, local_entities, body, post, rescue = children
        return Procedure(name, exports, formals, pre, local_entities, body, post, rescue, **_pos(meta))

    @v_args(meta=True)
    def class_decl(self, meta, children):
        name, creators = children[0], children[1]
        features, invariant = children[2:-1], children[-1]
        attributes = tuple(f for f in features if isinstance(f, Attribute))
        procedures = tuple(f for f in features if isinstance(f, Procedure))
        return ClassDecl(name, creators, attributes, procedures, invariant, **_pos(meta))

    def flag_true(self, _):
        return True

    def flag_false(self, _):
        return False

    def check_on(self, _):
        return True

    def check_off(self, _):
        return False

    def settings(self, children):
        return Settings(*children)

    def using_clause(self, children):
        return ('using', str(children[0]).strip())

    def start(self, children):
        classes = tuple(c for c in children if isinstance(c, ClassDecl))
        settings = next(c for c in children if isinstance(c, Settings))
        strategy = next((c[1] for c in children if isinstance(c, tuple)), None)
        return Program(classes, settings, strategy)


_PARSER = Lark(GRAMMAR, start='start', parser='lalr', propagate_positions=True)


def parse_program(text: str) -> Program:
    """
    Parse `.scp` source text into a Program.

    Raises:
        ParseError: syntax errors (with line, column and the expected-token
            set) and duplicate class names
    """
    try:
        tree = _PARSER.parse(text)
        program = _ProgramBuilder().transform(tree)
    except UnexpectedInput as exc:
        expected = getattr(exc, 'expected', None) or getattr(exc, 'allowed', None) or []
        line = exc.line if getattr(exc, 'line', -1) and exc.line > 0 else 1
        column = exc.column if getattr(exc, 'column', -1) and exc.column > 0 else 1
        token = getattr(exc, 'token', None)
        found = f"unexpected {token!r}" if token is not None else "unexpected input"
        raise ParseError(found, line, column, expected) from None
    except VisitError as exc:
        if isinstance(exc.orig_exc, ScoopError):
            raise exc.orig_exc
        raise ParseError(f"malformed program: {exc.orig_exc}") from None

    seen = set()
    for decl in program.classes:
        if decl.name in seen:
            raise ParseError(f"duplicate class {decl.name}", decl.line or 1, decl.col or 1)
        seen.add(decl.name)

    logger.debug("parsed program with %d classes", len(program.classes))
    return program


def program_fingerprint(program: Program) -> str:
    """Stable hash of the program structure (used to tie traces to programs)"""
    return hashlib.sha256(format_program(program).encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

def format_expression(expr: Expression) -> str:
    if expr.is_literal:
        head = "True" if expr.literal else "False"
    else:
        head = expr.root.render()
    return " . ".join([head, *(s.render() for s in expr.selectors)])


def _format_names(names: Tuple[Name, ...]) -> str:
    if not names:
        return "{ nil }"
    return "{ " + " , ".join(n.render() for n in names) + " }"


def _format_entities(entities: Tuple[Entity, ...]) -> str:
    if not entities:
        return "nil"
    return " ".join(f"{e.name.render()} : {e.type} ;" for e in entities)


def _format_args(args: Tuple[Expression, ...]) -> str:
    if not args:
        return "nil"
    return " ".join(f"{format_expression(a)} ;" for a in args)


def _format_call(target: Expression, feature: Name, args: Tuple[Expression, ...]) -> str:
    return f"{format_expression(target)} . {feature.render()}({_format_args(args)})"


def _format_block(instructions, indent: str) -> List[str]:
    if not instructions:
        return [f"{indent}( nil )"]
    lines = [f"{indent}("]
    for instr in instructions:
        lines.extend(_format_instruction(instr, indent + "    "))
    lines.append(f"{indent})")
    return lines


def _format_instruction(instr, indent: str) -> List[str]:
    if isinstance(instr, Create):
        return [f"{indent}create ({_format_call(instr.target, instr.creator, instr.args)}) ;"]
    if isinstance(instr, Assign):
        return [f"{indent}assign ({format_expression(instr.target)}, {format_expression(instr.source)}) ;"]
    if isinstance(instr, Command):
        return [f"{indent}command ({_format_call(instr.target, instr.feature, instr.args)}) ;"]
    if isinstance(instr, NilInstruction):
        return [f"{indent}nil ;"]
    lines = [f"{indent}if {format_expression(instr.condition)} then"]
    lines.extend(_format_block(instr.then_branch, indent + "    "))
    lines.append(f"{indent}else")
    lines.extend(_format_block(instr.else_branch, indent + "    "))
    lines.append(f"{indent}end ;")
    return lines


def _format_procedure(proc: Procedure) -> List[str]:
    lines = [
        f"        procedure {_format_names(proc.exports)} {proc.name.render()} ({_format_entities(proc.formals)})",
        f"            require {format_expression(proc.precondition)}",
        f"            local ( {_format_entities(proc.locals)} )",
        "            do",
    ]
    lines.extend(_format_block(proc.body, "                "))
    lines.append(f"            ensure {format_expression(proc.postcondition)}")
    if proc.rescue:
        lines.append("            rescue")
        lines.extend(_format_block(proc.rescue, "                "))
    else:
        lines.append("            rescue nil")
    lines.append("        end ;")
    return lines


def format_program(program: Program) -> str:
    """Render a Program in the concrete syntax accepted by parse_program"""
    lines = ["(( import default", ""]
    for decl in program.classes:
        lines.append(f"(class {decl.name.render()}")
        lines.append(f"    create {_format_names(decl.creators)}")
        lines.append("    (")
        for attribute in decl.attributes:
            lines.append(
                f"        attribute {_format_names(attribute.exports)} "
                f"{attribute.name.render()} : {attribute.type} ;"
            )
        for proc in decl.procedures:
            lines.append("")
            lines.extend(_format_procedure(proc))
        lines.append("    )")
        lines.append(f"    invariant {format_expression(decl.invariant)}")
        lines.append("end) ;")
        lines.append("")
    s = program.settings
    lines.append(
        f") settings({s.root_class.render()}, {s.root_procedure.render()}, "
        f"{'true' if s.flag else 'false'}, {'deadlock-on' if s.deadlock_check else 'deadlock-off'}))"
    )
    if program.strategy:
        lines.append(f"using {program.strategy} .")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

class _Scope:
    """Names visible inside one procedure (or at class level when proc is None)"""

    def __init__(self, program: Program, decl: ClassDecl, proc: Optional[Procedure] = None):
        self.program = program
        self.decl = decl
        self.proc = proc

    def entity_type(self, name: str) -> Optional[TypeAnnot]:
        if self.proc is not None:
            entity = self.proc.entity(name)
            if entity is not None:
                return entity.type
        attribute = self.decl.attribute(name)
        return attribute.type if attribute else None

    def is_formal(self, name: str) -> bool:
        return self.proc is not None and any(f.name == name for f in self.proc.formals)

    def names(self) -> set:
        names = {a.name for a in self.decl.attributes}
        if self.proc is not None:
            names.update(e.name for e in self.proc.formals + self.proc.locals)
        return names


def _diag(out: List[Diagnostic], code: str, message: str, node=None, severity: str = "error"):
    line = getattr(node, 'line', 0) if node is not None else 0
    col = getattr(node, 'col', 0) if node is not None else 0
    out.append(Diagnostic(code, message, line, col, severity))


def _check_type(annot: TypeAnnot, scope: _Scope, node, out: List[Diagnostic]):
    if scope.program.class_decl(annot.class_name) is None:
        _diag(out, "unknown-class", f"unknown class {annot.class_name}", annot.class_name)
    tag = annot.processor
    if tag is not None and tag != CURRENT and tag not in scope.names():
        _diag(out, "unknown-processor-tag", f"processor tag {tag} does not name an entity", tag)


def _check_contract(expr: Expression, where: str, out: List[Diagnostic]):
    if not (expr.is_literal and expr.literal is True):
        _diag(out, "non-literal-contract",
              f"{where} contract '{expr}' is not executable and is ignored", expr, "warning")


def expression_class(expr: Expression, scope: _Scope, out: Optional[List[Diagnostic]] = None) -> Optional[str]:
    """Static class of a dot path, or None for literals and unresolved names"""
    out = out if out is not None else []
    if expr.is_literal:
        return None
    if expr.is_current:
        current = scope.decl.name
    else:
        annot = scope.entity_type(expr.root)
        if annot is None:
            _diag(out, "unknown-identifier", f"{expr.root} is not declared in {scope.decl.name}", expr)
            return None
        current = annot.class_name
    for selector in expr.selectors:
        decl = scope.program.class_decl(current)
        attribute = decl.attribute(selector) if decl else None
        if attribute is None:
            _diag(out, "unknown-identifier", f"class {current} has no attribute {selector}", expr)
            return None
        current = attribute.type.class_name
    return current


def _check_target(expr: Expression, scope: _Scope, out: List[Diagnostic]) -> Optional[str]:
    if expr.is_literal or (expr.is_current and not expr.selectors):
        _diag(out, "invalid-target", f"cannot assign to {expr}", expr)
        return None
    if not expr.selectors and scope.is_formal(expr.root):
        _diag(out, "invalid-target", f"formal argument {expr.root} is read-only", expr)
        return None
    return expression_class(expr, scope, out)


def _check_call(class_name: Optional[str], feature: Name, args, scope: _Scope, node,
                out: List[Diagnostic], creation: bool = False):
    for arg in args:
        if arg.is_literal:
            _diag(out, "invalid-argument", f"literal {arg} cannot be passed as an object", arg)
        else:
            expression_class(arg, scope, out)
    if class_name is None:
        return
    decl = scope.program.class_decl(class_name)
    proc = decl.procedure(feature) if decl else None
    if proc is None:
        _diag(out, "unknown-feature", f"class {class_name} has no feature {feature}", node)
        return
    if creation and feature not in decl.creators:
        _diag(out, "unknown-creator", f"{feature} is not a creation procedure of {class_name}", node)
    if proc.arity != len(args):
        _diag(out, "arity-mismatch",
              f"{class_name}.{feature} expects {proc.arity} argument(s), got {len(args)}", node)


def _check_instructions(instructions, scope: _Scope, out: List[Diagnostic]):
    for instr in instructions:
        if isinstance(instr, Create):
            class_name = _check_target(instr.target, scope, out)
            _check_call(class_name, instr.creator, instr.args, scope, instr, out, creation=True)
        elif isinstance(instr, Assign):
            _check_target(instr.target, scope, out)
            if instr.source.is_literal:
                _diag(out, "invalid-source", f"literal {instr.source} is not an object", instr.source)
            else:
                expression_class(instr.source, scope, out)
        elif isinstance(instr, Command):
            if instr.target.is_literal:
                _diag(out, "invalid-target", f"cannot call {instr.feature} on a literal", instr)
                continue
            class_name = expression_class(instr.target, scope, out)
            _check_call(class_name, instr.feature, instr.args, scope, instr, out)
        elif isinstance(instr, Conditional):
            expression_class(instr.condition, scope, out)
            _check_instructions(instr.then_branch, scope, out)
            _check_instructions(instr.else_branch, scope, out)


def _check_procedure(decl: ClassDecl, proc: Procedure, scope: _Scope, out: List[Diagnostic]):
    attribute_names = {a.name for a in decl.attributes}
    seen = set()
    for entity in proc.formals + proc.locals:
        if entity.name in seen or entity.name in attribute_names:
            _diag(out, "duplicate-name",
                  f"{entity.name} in {decl.name}.{proc.name} clashes with another declaration", entity.name)
        seen.add(entity.name)
        _check_type(entity.type, scope, entity.name, out)
    _check_contract(proc.precondition, f"{decl.name}.{proc.name} require", out)
    _check_contract(proc.postcondition, f"{decl.name}.{proc.name} ensure", out)
    _check_instructions(proc.body, scope, out)
    _check_instructions(proc.rescue, scope, out)


def _check_class(program: Program, decl: ClassDecl, out: List[Diagnostic]):
    class_scope = _Scope(program, decl)
    feature_names = set()
    for feature in decl.attributes + decl.procedures:
        if feature.name in feature_names:
            _diag(out, "duplicate-feature", f"{decl.name} declares {feature.name} twice", feature)
        feature_names.add(feature.name)
    for creator in decl.creators:
        if decl.procedure(creator) is None:
            _diag(out, "unknown-creator", f"creator {creator} of {decl.name} is not a procedure", creator)
    for attribute in decl.attributes:
        _check_type(attribute.type, class_scope, attribute, out)
    _check_contract(decl.invariant, f"{decl.name} invariant", out)
    for proc in decl.procedures:
        _check_procedure(decl, proc, _Scope(program, decl, proc), out)


def validate_program(program: Program) -> List[Diagnostic]:
    """
    Check that types, creators, call targets and the settings root resolve.

    Returns:
        Diagnostics in source order; empty iff the program is well formed.
        Warnings (non-executable contracts) use severity 'warning'.
    """
    out: List[Diagnostic] = []
    settings = program.settings
    root = program.class_decl(settings.root_class)
    if root is None:
        _diag(out, "unresolved-root", f"settings name unknown class {settings.root_class}", settings.root_class)
    elif settings.root_procedure not in root.creators or root.procedure(settings.root_procedure) is None:
        _diag(out, "unresolved-root",
              f"{settings.root_procedure} is not a creation procedure of {settings.root_class}",
              settings.root_procedure)
    for decl in program.classes:
        _check_class(program, decl, out)
    return out


def errors_only(diagnostics: List[Diagnostic]) -> List[Diagnostic]:
    return [d for d in diagnostics if d.severity == "error"]


def lookup_feature(program: Program, class_name: str, feature_name: str) -> Procedure:
    """
    Find a procedure by class and feature name.

    Raises:
        FeatureNotFound: unknown class or feature
    """
    decl = program.class_decl(class_name)
    proc = decl.procedure(feature_name) if decl else None
    if proc is None:
        raise FeatureNotFound(class_name, feature_name)
    return proc
