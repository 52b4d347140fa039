import pytest

from segfree.corpus import GrammarConfig, generate_synthetic_corpus
from segfree.toy import ToyLexicon


@pytest.fixture
def small_lexicon():
    return ToyLexicon({"aa": ["AA"], "bb": ["BB", "BB"], "stop": ["STOP"]}, {"stop"})


@pytest.fixture(scope="session")
def mixed_corpus():
    return generate_synthetic_corpus(7, 6, 6, GrammarConfig())


@pytest.fixture(scope="session")
def fertility_one_corpus():
    return generate_synthetic_corpus(11, 6, 6, GrammarConfig(fertility_mix={1: 1.0}))


_ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])
