"""
Terminal output for the pchm laboratory: result tables, diffusion matrices and
status messages.
"""

import numbers
from abc import ABC, abstractmethod
from typing import Any, List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

STYLES = {
    "success": "green",
    "error": "bold red",
    "warning": "yellow",
    "info": "blue",
}


def format_cell(cell: Any) -> str:
    if isinstance(cell, (bool, np.bool_)):
        return "yes" if cell else "no"
    if isinstance(cell, numbers.Integral):
        return str(int(cell))
    if isinstance(cell, numbers.Real):
        return f"{float(cell):.6g}"
    return str(cell)


def is_numeric_column(rows: List[List[Any]], index: int) -> bool:
    values = [row[index] for row in rows if index < len(row)]
    return bool(values) and all(
        isinstance(v, numbers.Real) and not isinstance(v, (bool, np.bool_))
        for v in values
    )


class DisplayStrategy(ABC):
    @abstractmethod
    def display_table(
        self, headers: List[str], rows: List[List[Any]], title: Optional[str] = None
    ) -> None:
        pass

    @abstractmethod
    def display_message(self, message: str, style: Optional[str] = None) -> None:
        pass

    def display_matrix(self, title: str, matrix: Sequence[Sequence[float]]) -> None:
        """Show a square matrix with e1..ed row and column labels."""
        m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        headers = [""] + [f"e{j + 1}" for j in range(m.shape[1])]
        rows = [[f"e{i + 1}"] + m[i].tolist() for i in range(m.shape[0])]
        self.display_table(headers, rows, title)


class PlainDisplay(DisplayStrategy):
    """Pipe-separated columns; numbers right-aligned."""

    def display_table(
        self, headers: List[str], rows: List[List[Any]], title: Optional[str] = None
    ) -> None:
        cells = [[format_cell(c) for c in row] for row in rows]
        widths = [
            max([len(h)] + [len(row[i]) for row in cells if i < len(row)])
            for i, h in enumerate(headers)
        ]
        numeric = [is_numeric_column(rows, i) for i in range(len(headers))]

        def line(values: List[str]) -> str:
            return " | ".join(
                v.rjust(w) if right else v.ljust(w)
                for v, w, right in zip(values, widths, numeric)
            )

        if title:
            print(f"{title}:")
        header = line(headers)
        print(header)
        print("-" * len(header))
        for row in cells:
            print(line(row))

    def display_message(self, message: str, style: Optional[str] = None) -> None:
        print(message)


class RichDisplay(DisplayStrategy):
    def __init__(self):
        self.console = Console()

    def display_table(
        self, headers: List[str], rows: List[List[Any]], title: Optional[str] = None
    ) -> None:
        table = Table(title=title, header_style="bold")
        for i, header in enumerate(headers):
            justify = "right" if is_numeric_column(rows, i) else "left"
            table.add_column(header, justify=justify)
        for row in rows:
            table.add_row(*[format_cell(cell) for cell in row])
        self.console.print(table)

    def display_message(self, message: str, style: Optional[str] = None) -> None:
        self.console.print(message, style=STYLES.get(style), highlight=False)


class UIController:
    """Routes output to the strategy selected by the display_mode setting."""

    def __init__(self, display_mode: str = "plain"):
        self.display_strategies = {
            "plain": PlainDisplay(),
            "rich": RichDisplay(),
        }
        self.set_display_mode(display_mode)

    def set_display_mode(self, mode: str) -> None:
        if mode not in self.display_strategies:
            raise ValueError(f"Invalid display mode: {mode}")
        self.current_strategy = self.display_strategies[mode]

    def display_table(
        self, headers: List[str], rows: List[List[Any]], title: Optional[str] = None
    ) -> None:
        self.current_strategy.display_table(headers, rows, title)

    def display_message(self, message: str, style: Optional[str] = None) -> None:
        self.current_strategy.display_message(message, style)

    def display_matrix(self, title: str, matrix: Sequence[Sequence[float]]) -> None:
        self.current_strategy.display_matrix(title, matrix)
