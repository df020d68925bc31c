import textwrap

import numpy as np
import pytest

from ltvpassivity import corpus
from ltvpassivity.errors import ParseError
from ltvpassivity.io import dump_definition, load_definition, parse_definition

BASE = """\
name: demo
interval: [0, 2]
parameters: {k: 3}
functions:
  A:
    segments:
      - interval: [0, 1]
        entries: [["-k", "t"], ["0", "-1"]]
      - interval: [1, 2]
        samples:
          times: [1, 2]
          values: [[[-3, 1], [0, -1]], [[-1, 0], [0, -1]]]
    points:
      - time: 1
        entries: [["0", "0"], ["0", "0"]]
  B: {constant: [[1], [0]]}
  C: {constant: [[1, "2i"]]}
  D: {constant: [[0]]}
"""


def test_parse_full_layout():
    d = parse_definition(BASE, "demo.yaml")
    sys = d.system()
    assert (sys.n, sys.m) == (2, 1)
    assert d.storage is None
    A = d.functions["A"]
    assert A(0.5)[0, 1] == pytest.approx(0.5)
    assert A(0.5)[0, 0] == pytest.approx(-3.0)
    assert A(1.5)[0, 0] == pytest.approx(-2.0)
    assert np.allclose(A(1.0), 0)
    assert d.functions["C"](0.3)[0, 1] == pytest.approx(2j)


@pytest.mark.parametrize("edit, line, fragment", [
    (("  D: {constant: [[0]]}", "  E: {constant: [[0]]}"), 5, "unknown function names"),
    (('entries: [["-k", "t"], ["0", "-1"]]', 'entries: [["-k", "s"], ["0", "-1"]]'), 9, "unknown identifier"),
    (("interval: [0, 2]", "interval: [2, 0]"), 1, "empty interval"),
    (("      - interval: [1, 2]", "      - interval: [1, 1.5]"), 6, "must cover"),
    (("times: [1, 2]", "times: [2, 1]"), 12, "strictly increasing"),
    (("name: demo", "name: demo\nextra: 1"), 1, "unknown top-level keys"),
    (('  C: {constant: [[1, "2i"]]}', '  C: {constant: [[1, "1/(t-1)"]]}'), 19, "vanishes"),
])
def test_errors_carry_file_and_line(edit, line, fragment):
    text = BASE.replace(*edit)
    with pytest.raises(ParseError) as info:
        parse_definition(text, "demo.yaml").system()
    assert fragment in str(info.value)
    assert str(info.value).startswith("demo.yaml:")
    assert info.value.line is not None and abs(info.value.line - line) <= 2


def test_invalid_yaml_reports_line():
    with pytest.raises(ParseError) as info:
        parse_definition("name: [unclosed\ninterval: [0, 1]\n", "x.yaml")
    assert info.value.line is not None


def test_missing_file():
    with pytest.raises(ParseError, match="cannot read"):
        load_definition("/nonexistent/system.yaml")


def test_system_requires_all_four_functions():
    text = textwrap.dedent("""\
        interval: [0, 1]
        functions:
          A: {constant: [[0]]}
    """)
    with pytest.raises(ParseError, match="needs functions"):
        parse_definition(text).system()


@pytest.mark.parametrize("name", corpus.names())
def test_round_trip_is_structurally_identical(name):
    d = corpus.load(name)
    again = parse_definition(dump_definition(d))
    assert set(again.functions) == set(d.functions)
    grid = np.linspace(*d.interval, 57)
    for key, f in d.functions.items():
        g = again.functions[key]
        assert np.array_equal(f.breakpoints, g.breakpoints)
        assert f.points.keys() == g.points.keys()
        assert np.allclose(f(grid), g(grid), rtol=1e-15, atol=1e-15)
    assert dump_definition(again) == dump_definition(d)


def test_corpus_lookup():
    assert set(corpus.names()) == {"antipassive", "msd", "scalar_flow", "scalar_lti", "three_drop"}
    assert corpus.resolve("corpus:msd").name == "msd"
    with pytest.raises(KeyError):
        corpus.load("nope")
