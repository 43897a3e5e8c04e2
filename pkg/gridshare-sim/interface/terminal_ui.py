"""
Terminal UI Components

Rich terminal rendering of run results.
"""
from rich.console import Console
from rich.table import Table
from rich.panel import Panel
from typing import Optional, Sequence

import pandas as pd

from features.utils import format_energy, format_money, format_price


class TerminalUI:
    """Terminal user interface utilities."""

    def __init__(self, console: Optional[Console] = None):
        """Initialize terminal UI.

        Args:
            console: Optional Rich console (tests pass a recording console)
        """
        self.console = console or Console()

    def print_success(self, message: str):
        """Print success message."""
        self.console.print(f"[green]✓ {message}[/green]")

    def print_error(self, message: str):
        """Print error message."""
        self.console.print(f"[red]✗ {message}[/red]")

    def print_warning(self, message: str):
        """Print warning message."""
        self.console.print(f"[yellow]⚠ {message}[/yellow]")

    def print_info(self, message: str):
        """Print info message."""
        self.console.print(f"[blue]ℹ {message}[/blue]")

    def create_table(self, title: str, columns: list) -> Table:
        """Create a Rich table.

        Args:
            title: Table title
            columns: List of tuples (name, style)

        Returns:
            Rich Table instance
        """
        table = Table(title=title)

        for col_name, col_style in columns:
            table.add_column(col_name, style=col_style)

        return table

    def print_table(self, table: Table):
        """Print table to console.

        Args:
            table: Rich Table to print
        """
        self.console.print(table)

    def print_frame(self, title: str, frame: pd.DataFrame,
                    columns: Optional[Sequence[str]] = None, digits: int = 6):
        """Render selected DataFrame columns as a table.

        Args:
            title: Table title
            frame: Data to show
            columns: Columns to include (all by default)
            digits: Significant digits for floats
        """
        columns = list(columns or frame.columns)
        table = self.create_table(title, [(name, "cyan" if i == 0 else "white")
                                          for i, name in enumerate(columns)])
        for _, row in frame[columns].iterrows():
            table.add_row(*[f"{value:.{digits}g}" if isinstance(value, float) else str(value)
                            for value in row])
        self.print_table(table)

    def print_panel(self, content: str, title: Optional[str] = None,
                    style: str = "blue"):
        """Print panel to console.

        Args:
            content: Panel content
            title: Optional panel title
            style: Panel border style
        """
        self.console.print(Panel(content, title=title, border_style=style))

    def print_run_summary(self, summary: dict):
        """Headline figures of a run in a panel."""
        lines = [
            f"Regime: [bold]{summary['regime']}[/bold]   g_scale: {summary['g_scale']:.6g}",
            f"Generation: {format_energy(summary['G0_kwh'])}   "
            f"Net consumption: {format_energy(summary['Z0_kwh'])}",
            f"Welfare: {format_money(summary['welfare_usd'])}   "
            f"Standalone surplus: {format_money(summary['standalone_surplus_usd'])}",
            f"Thresholds: {format_energy(summary['sigma1_kwh'])} / "
            f"{format_energy(summary['sigma2_kwh'])}",
        ]
        if summary.get('mu_usd_per_kwh') is not None:
            lines.append(f"Balanced price: {format_price(summary['mu_usd_per_kwh'])}")
        lines.append(f"Operator balance: {format_money(summary['operator_balance_usd'])}")
        passed = summary['kkt']['passed'] and summary['equilibrium']['passed']
        self.print_panel("\n".join(lines), title=summary['scenario'],
                         style="green" if passed else "red")
