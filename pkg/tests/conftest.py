import os

import pytest

from backend.explorer import explore_bounded
from backend.ir import parse_program

CORPUS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'corpus')


def corpus_path(name: str) -> str:
    return os.path.join(CORPUS_DIR, name)


def load_corpus(name: str):
    with open(corpus_path(name), 'r', encoding='utf-8') as f:
        return parse_program(f.read())


@pytest.fixture(scope='session')
def dining_wrong():
    return load_corpus('dining_wrong.scp')


@pytest.fixture(scope='session')
def dining_correct():
    return load_corpus('dining_correct.scp')


@pytest.fixture(scope='session')
def conditional_alias():
    return load_corpus('conditional_alias.scp')


@pytest.fixture(scope='session')
def straight_assign():
    return load_corpus('straight_assign.scp')


@pytest.fixture(scope='session')
def wrong_exploration(dining_wrong):
    return explore_bounded(dining_wrong, 200, 100000, keep_states=True)


@pytest.fixture(scope='session')
def correct_exploration(dining_correct):
    return explore_bounded(dining_correct, 200, 100000, keep_states=True)
