from flask import Flask, request, jsonify
from flask_cors import CORS
import logging
import os

from backend.abstract_semantics import explore_abstract, run_abstract
from backend.errors import ScoopError, ValidationFailed
from backend.explorer import Explorer
from backend.file_manager import FileManager, check_program
from backend.ir import parse_program, validate_program
from backend.rule_registry import RuleRegistry
from backend.settings import DEFAULT_SETTINGS, RunConfig
from backend.strategy import parse_strategy

logger = logging.getLogger(__name__)

app = Flask(__name__)
CORS(app)

file_manager = FileManager(os.environ.get('SCOOPLOCK_HOME', '.'))


def _program_from_request(data):
    source = data.get('source')
    if not source:
        raise ScoopError("request needs a 'source' field with the program text")
    return check_program(parse_program(source))


def _deadlock_flag(data):
    value = data.get('deadlock')
    if value is None:
        return None
    if isinstance(value, bool):
        return value
    return str(value).lower() == 'on'


def _error(e: ScoopError):
    payload = {'success': False, 'error': str(e), 'detail': e.to_dict()}
    if isinstance(e, ValidationFailed):
        payload['diagnostics'] = [d.to_dict() for d in e.diagnostics]
    logger.info("request rejected: %s", e)
    return jsonify(payload), 400


@app.route('/api/health', methods=['GET'])
def health():
    return jsonify({'success': True, 'status': 'ok'})


@app.route('/api/rules', methods=['GET'])
def rules():
    return jsonify({
        'success': True,
        'rules': RuleRegistry.get_all_rules(),
        'categories': list(RuleRegistry.get_rules_by_category()),
    })


@app.route('/api/validate', methods=['POST'])
def validate():
    data = request.json or {}
    try:
        program = parse_program(data.get('source') or '')
        diagnostics = validate_program(program)
        return jsonify({
            'success': True,
            'valid': not any(d.severity == 'error' for d in diagnostics),
            'diagnostics': [d.to_dict() for d in diagnostics],
        })
    except ScoopError as e:
        return _error(e)
    except Exception as e:
        logger.exception("validate failed")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@app.route('/api/run', methods=['POST'])
def run():
    data = request.json or {}
    try:
        program = _program_from_request(data)
        strategy = data.get('strategy') or program.strategy or file_manager.load_settings()['strategy']
        report = Explorer(program, _deadlock_flag(data)).run_strategy(parse_strategy(strategy))
        logger.info("run finished with %d deadlock(s)", len(report.deadlocks))
        return jsonify({'success': True, 'report': report.to_dict()})
    except ScoopError as e:
        return _error(e)
    except Exception as e:
        logger.exception("run failed")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@app.route('/api/explore', methods=['POST'])
def explore():
    data = request.json or {}
    try:
        program = _program_from_request(data)
        config = RunConfig.from_settings(
            file_manager.load_settings(),
            input_path='<request>',
            mode='explore',
            depth_bound=data.get('depth_bound'),
            state_bound=data.get('state_bound'),
            workers=data.get('workers'),
        )
        explorer = Explorer(program, _deadlock_flag(data), config.workers)
        report = explorer.explore_bounded(config.depth_bound, config.state_bound)
        logger.info("explore visited %d states", report.states_visited)
        return jsonify({'success': True, 'report': report.to_dict()})
    except ScoopError as e:
        return _error(e)
    except Exception as e:
        logger.exception("explore failed")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@app.route('/api/abstract', methods=['POST'])
def abstract():
    data = request.json or {}
    try:
        program = _program_from_request(data)
        config = RunConfig.from_settings(
            file_manager.load_settings(),
            input_path='<request>',
            mode='abstract',
            depth_bound=data.get('depth_bound'),
            state_bound=data.get('state_bound'),
            alias_depth=data.get('alias_depth'),
        )
        if data.get('single'):
            report = run_abstract(program, config.alias_depth, _deadlock_flag(data), strategy=data.get('strategy'))
        else:
            report = explore_abstract(program, config.depth_bound, config.state_bound, config.alias_depth,
                                      _deadlock_flag(data))
        logger.info("abstract analysis flagged %d state(s)", len(report.deadlocks))
        return jsonify({'success': True, 'report': report.to_dict()})
    except ScoopError as e:
        return _error(e)
    except Exception as e:
        logger.exception("abstract analysis failed")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@app.route('/api/settings', methods=['GET', 'POST'])
def settings():
    if request.method == 'GET':
        try:
            return jsonify({
                'success': True,
                'settings': file_manager.load_settings()
            })
        except ScoopError as e:
            return _error(e)

    data = request.json or {}
    try:
        merged = {**DEFAULT_SETTINGS, **file_manager.load_settings(), **data}
        RunConfig.from_settings(merged, input_path='<settings>', mode='run')
        parse_strategy(merged['strategy'])
        file_manager.save_settings(merged)
        return jsonify({
            'success': True,
            'message': 'Settings saved successfully'
        })
    except ScoopError as e:
        return _error(e)
    except Exception as e:
        logger.exception("saving settings failed")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    logger.info("scooplock API listening on http://localhost:5000")
    app.run(host='0.0.0.0', port=5000, debug=True, threaded=True)
