import json
import os

import pytest
from jsonschema import Draft202012Validator

from backend.cli import main
from conftest import CORPUS_DIR, corpus_path

SCHEMA_PATH = os.path.join(os.path.dirname(CORPUS_DIR), 'docs', 'report.schema.json')
PROGRAMS = sorted(name for name in os.listdir(CORPUS_DIR) if name.endswith('.scp'))


@pytest.fixture(scope='module')
def validator():
    with open(SCHEMA_PATH, 'r', encoding='utf-8') as f:
        schema = json.load(f)
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def _report(capsys, tmp_path, *args):
    main(['--config-dir', str(tmp_path)] + list(args) + ['--format', 'json'])
    return json.loads(capsys.readouterr().out)


def _assert_valid(validator, report):
    errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
    assert not errors, [f"{list(e.path)}: {e.message}" for e in errors]


@pytest.mark.parametrize('program', PROGRAMS)
@pytest.mark.parametrize('mode', [('run',), ('explore',), ('abstract',), ('abstract', '--single')])
def test_reports_match_schema(validator, capsys, tmp_path, program, mode):
    report = _report(capsys, tmp_path, mode[0], corpus_path(program), *mode[1:])
    _assert_valid(validator, report)
    assert report['mode'] == ('abstract-run' if '--single' in mode else mode[0])


@pytest.mark.parametrize('program', PROGRAMS)
def test_replay_reports_match_schema(validator, capsys, tmp_path, program):
    trace_file = tmp_path / 'run.jsonl'
    main(['--config-dir', str(tmp_path), 'run', corpus_path(program), '--trace-out', str(trace_file)])
    capsys.readouterr()
    report = _report(capsys, tmp_path, 'replay', corpus_path(program), str(trace_file))
    _assert_valid(validator, report)
    assert report['mode'] == 'replay'
