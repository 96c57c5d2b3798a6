"""Tests for terminal output."""

import pytest

from src.ui_controller import UIController, format_cell, is_numeric_column


@pytest.mark.parametrize(
    "cell, text",
    [(True, "yes"), (3, "3"), (0.1 + 0.2, "0.3"), (1e-12, "1e-12"), ("L", "L")],
)
def test_format_cell(cell, text):
    assert format_cell(cell) == text


def test_numeric_columns():
    rows = [[8, "bernoulli", True], [16, "layered", False]]
    assert is_numeric_column(rows, 0)
    assert not is_numeric_column(rows, 1)
    assert not is_numeric_column(rows, 2)
    assert not is_numeric_column([], 0)


def test_plain_table(capsys):
    ui = UIController("plain")
    ui.display_table(["L", "law"], [[8, "constant"], [128, "bernoulli"]], "sweep")
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "sweep:"
    assert lines[1] == "  L | law      "
    assert lines[3] == "  8 | constant "
    assert lines[4] == "128 | bernoulli"


def test_plain_matrix(capsys):
    UIController("plain").display_matrix("Dcal", [[1.0, 0.0], [0.0, 1.5]])
    out = capsys.readouterr().out
    assert out.startswith("Dcal:")
    assert "e2 |  0 | 1.5" in out


def test_unknown_mode():
    with pytest.raises(ValueError):
        UIController("cartoon")
