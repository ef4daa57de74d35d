import pytest

from backend.errors import FeatureNotFound, ParseError
from backend.ir import (
    Assign,
    Command,
    Conditional,
    Create,
    errors_only,
    format_program,
    lookup_feature,
    parse_program,
    program_fingerprint,
    validate_program,
)

from conftest import load_corpus

CORPUS = ['dining_wrong.scp', 'dining_correct.scp', 'conditional_alias.scp', 'straight_assign.scp']


def _program(body: str, settings: str = "settings('APP, 'make, false, deadlock-off)") -> str:
    return f"""
(( import default
(class 'APP
    create {{ 'make }}
    (
        attribute {{'ANY}} 'other : [?,T,'APP] ;
        {body}
    )
    invariant True
end) ;
) {settings})
"""


def _make(instructions: str, formals: str = "nil") -> str:
    return f"""
        procedure {{ 'ANY }} 'make ({formals})
            require True
            local ( nil )
            do ( {instructions} )
            ensure True
            rescue nil
        end ;
"""


def test_settings_line_is_parsed(dining_wrong):
    settings = dining_wrong.settings
    assert settings.root_class == 'APPLICATION'
    assert settings.root_procedure == 'make'
    assert settings.flag is False
    assert settings.deadlock_check is True


def test_corpus_classes_and_strategy(dining_wrong):
    assert [c.name for c in dining_wrong.classes] == ['APPLICATION', 'MEAL', 'PHILOSOPHER', 'FORK']
    assert dining_wrong.strategy.startswith('init ;')
    meal = dining_wrong.class_decl('MEAL')
    assert [a.name for a in meal.attributes] == ['p1', 'p2', 'f1', 'f2']
    make = meal.procedure('make')
    assert all(isinstance(i, Create) for i in make.body)
    assert [str(i.target) for i in make.body] == ['f1', 'f2', 'p1', 'p2']


def test_instruction_kinds(dining_wrong, conditional_alias):
    phil = dining_wrong.class_decl('PHILOSOPHER')
    assert all(isinstance(i, Assign) for i in phil.procedure('make').body)
    call = phil.procedure('pick_in_turn').body[0]
    assert isinstance(call, Command)
    assert call.target.is_current
    assert call.feature == 'pick_two'
    assert [str(a) for a in call.args] == ['f', 'right']

    eat = conditional_alias.class_decl('PHILOSOPHER').procedure('eat')
    branch = eat.body[0]
    assert isinstance(branch, Conditional)
    assert branch.condition.literal is False
    assert len(branch.then_branch) == 2 and len(branch.else_branch) == 2


@pytest.mark.parametrize('name', CORPUS)
def test_corpus_round_trips_through_printer(name):
    program = load_corpus(name)
    again = parse_program(format_program(program))
    assert again == program
    assert program_fingerprint(again) == program_fingerprint(program)


@pytest.mark.parametrize('name', CORPUS)
def test_corpus_validates_cleanly(name):
    assert validate_program(load_corpus(name)) == []


def test_syntax_error_reports_position():
    source = _program(_make("create ('other . 'make(nil)) ;")).replace("'make(nil)) ;", "'make(nil) ;", 1)
    with pytest.raises(ParseError) as info:
        parse_program(source)
    assert info.value.line > 1
    assert info.value.column >= 1
    assert info.value.to_dict()['code'] == 'syntax-error'


def test_bad_deadlock_token_is_a_syntax_error():
    with pytest.raises(ParseError):
        parse_program(_program(_make("nil ;"), "settings('APP, 'make, false, deadlock-maybe)"))


def test_duplicate_class_is_rejected():
    source = _program(_make("nil ;"))
    duplicated = source.replace("(( import default", "(( import default (class 'APP create { nil } ( ) invariant True end) ;")
    with pytest.raises(ParseError, match="duplicate class"):
        parse_program(duplicated)


def test_validation_diagnostics():
    source = _program(_make("create ('other . 'make('missing ;)) ; command ('other . 'fly(nil)) ;"))
    diagnostics = validate_program(parse_program(source))
    codes = [d.code for d in errors_only(diagnostics)]
    assert 'unknown-identifier' in codes
    assert 'arity-mismatch' in codes
    assert 'unknown-feature' in codes
    first = diagnostics[0].to_dict()
    assert set(first) == {'code', 'message', 'line', 'col', 'severity'}
    assert first['line'] > 0


def test_unresolved_root():
    program = parse_program(_program(_make("nil ;"), "settings('APP, 'start, false, deadlock-on)"))
    assert [d.code for d in validate_program(program)] == ['unresolved-root']


def test_non_literal_contract_is_only_a_warning():
    source = _program(_make("nil ;")).replace("require True", "require other")
    diagnostics = validate_program(parse_program(source))
    assert [d.code for d in diagnostics] == ['non-literal-contract']
    assert errors_only(diagnostics) == []


def test_lookup_feature(dining_wrong):
    pick_two = lookup_feature(dining_wrong, 'PHILOSOPHER', 'pick_two')
    assert [f.name for f in pick_two.formals] == ['fa', 'fb']
    assert lookup_feature(dining_wrong, 'FORK', 'use').body == ()
    with pytest.raises(FeatureNotFound):
        lookup_feature(dining_wrong, 'FORK', 'nonexistent')
    with pytest.raises(FeatureNotFound):
        lookup_feature(dining_wrong, 'SPOON', 'use')
