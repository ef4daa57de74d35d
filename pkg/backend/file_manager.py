import json
import logging
import os
from datetime import datetime
from typing import Dict, Optional

from backend.errors import ConfigError, ReplayDivergence, ValidationFailed
from backend.explorer import ExplorationReport, Trace, TraceStep
from backend.ir import Program, errors_only, parse_program, validate_program
from backend.runtime import Status
from backend.settings import DEFAULT_SETTINGS, apply_environment

logger = logging.getLogger(__name__)

TRACE_FORMAT = 'scooplock-trace/1'


class FileManager:
    def __init__(self, base_dir: str = '.'):
        self.config_dir = os.path.join(base_dir, 'config')
        self.data_dir = os.path.join(base_dir, 'data')
        self.traces_dir = os.path.join(self.data_dir, 'traces')
        self.reports_dir = os.path.join(self.data_dir, 'reports')

    def _ensure_dirs(self):
        os.makedirs(self.config_dir, exist_ok=True)
        os.makedirs(self.traces_dir, exist_ok=True)
        os.makedirs(self.reports_dir, exist_ok=True)

    def load_settings(self, environ=None) -> Dict:
        """Defaults, then config/settings.json, then SCOOPLOCK_* environment variables"""
        settings = dict(DEFAULT_SETTINGS)
        settings_path = os.path.join(self.config_dir, 'settings.json')
        if os.path.exists(settings_path):
            try:
                with open(settings_path, 'r') as f:
                    stored = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{settings_path} is not valid JSON: {e}") from None
            unknown = set(stored) - set(DEFAULT_SETTINGS)
            if unknown:
                logger.warning("ignoring unknown settings: %s", ", ".join(sorted(unknown)))
            settings.update({k: v for k, v in stored.items() if k in DEFAULT_SETTINGS})
        return apply_environment(settings, environ)

    def save_settings(self, settings: Dict):
        self._ensure_dirs()
        settings_path = os.path.join(self.config_dir, 'settings.json')
        known = {k: v for k, v in settings.items() if k in DEFAULT_SETTINGS}
        with open(settings_path, 'w') as f:
            json.dump(known, f, indent=2)

    def load_program(self, path: str) -> Program:
        """
        Raises:
            ParseError: the file does not parse
            ValidationFailed: the program has error diagnostics
        """
        with open(path, 'r', encoding='utf-8') as f:
            program = parse_program(f.read())
        return check_program(program)

    def save_trace(self, trace: Trace, path: Optional[str] = None) -> str:
        """JSON lines: one header object, then one object per step"""
        if path is None:
            self._ensure_dirs()
            timestamp = datetime.now().strftime('%Y%m%d_%H%M%S_%f')
            path = os.path.join(self.traces_dir, f'trace_{timestamp}.jsonl')
        header = {
            'format': TRACE_FORMAT,
            'program_hash': trace.program_hash,
            'engine': trace.engine,
            'terminal': trace.terminal.value,
            'steps': len(trace.steps),
        }
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps(header) + '\n')
            for step in trace.steps:
                f.write(json.dumps(step.to_dict(), ensure_ascii=False) + '\n')
        return path

    def load_trace(self, path: str) -> Trace:
        with open(path, 'r', encoding='utf-8') as f:
            lines = [line for line in f.read().splitlines() if line.strip()]
        if not lines:
            raise ReplayDivergence(f"{path} is empty")
        try:
            header = json.loads(lines[0])
            steps = tuple(TraceStep.from_dict(json.loads(line)) for line in lines[1:])
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ReplayDivergence(f"{path} is not a trace file: {e}") from None
        if header.get('format') != TRACE_FORMAT:
            raise ReplayDivergence(f"{path} is not a {TRACE_FORMAT} file")
        return Trace(header['program_hash'], steps, Status(header['terminal']), header.get('engine', 'concrete'))

    def save_report(self, report: ExplorationReport, path: Optional[str] = None) -> str:
        if path is None:
            self._ensure_dirs()
            timestamp = datetime.now().strftime('%Y%m%d_%H%M%S_%f')
            path = os.path.join(self.reports_dir, f'{report.mode}_{timestamp}.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2, ensure_ascii=False)
        return path


def check_program(program: Program) -> Program:
    diagnostics = validate_program(program)
    for diagnostic in diagnostics:
        if diagnostic.severity != 'error':
            logger.warning("line %d: %s", diagnostic.line, diagnostic.message)
    errors = errors_only(diagnostics)
    if errors:
        raise ValidationFailed(errors)
    return program
