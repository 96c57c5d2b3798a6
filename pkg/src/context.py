"""
Context shared between CLI commands.
"""

from typing import Any, List, Optional, Sequence

from .config import Config
from .laboratory import Laboratory
from .ui_controller import UIController


class Context:
    """Settings, display and the laboratory for one CLI invocation."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.lab = Laboratory(self.config)
        self.ui = UIController(self.config.display_mode)

    def display_table(
        self, headers: List[str], rows: List[List[Any]], title: Optional[str] = None
    ) -> None:
        self.ui.display_table(headers, rows, title)

    def display_message(self, message: str, style: Optional[str] = None) -> None:
        self.ui.display_message(message, style)

    def display_matrix(self, title: str, matrix: Sequence[Sequence[float]]) -> None:
        self.ui.display_matrix(title, matrix)

    def update_display_mode(self, mode: str) -> None:
        self.config.display_mode = mode
        self.ui.set_display_mode(mode)
