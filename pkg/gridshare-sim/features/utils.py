"""
Utility Functions

Formatting and parsing helpers for the command line.
"""
from pathlib import Path
from typing import List

from core.errors import ConfigError


def format_price(value: float) -> str:
    """Format a price in dollars per kWh.

    Args:
        value: Price in $/kWh

    Returns:
        Formatted string (e.g., "$0.1200/kWh")
    """
    return f"${value:.4f}/kWh"


def format_energy(value: float) -> str:
    """Format an energy quantity.

    Args:
        value: Energy in kWh

    Returns:
        Formatted string (e.g., "12.50 kWh", "1.25 MWh")
    """
    if abs(value) >= 1000.0:
        return f"{value / 1000.0:.2f} MWh"
    return f"{value:.2f} kWh"


def format_money(value: float) -> str:
    """Format a dollar amount, sign in front."""
    sign = "-" if value < 0 else ""
    return f"{sign}${abs(value):,.2f}"


def format_duration(seconds: float) -> str:
    """Format duration to human-readable string.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted string (e.g., "850ms", "12.3s", "2m 5s")
    """
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, rest = divmod(seconds, 60)
    return f"{minutes:.0f}m {rest:.0f}s"


def parse_scales(text: str) -> List[float]:
    """Parse generation scales.

    Accepts a comma separated list ("0,0.5,1") or a range "start:stop:count"
    with inclusive ends ("0:2:21").

    Raises:
        ConfigError: malformed or negative values
    """
    text = text.strip()
    if not text:
        return []
    try:
        if ':' in text:
            parts = text.split(':')
            if len(parts) != 3:
                raise ValueError("range needs start:stop:count")
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1:
                raise ValueError("count must be at least 1")
            if count == 1:
                scales = [start]
            else:
                step = (stop - start) / (count - 1)
                scales = [start + k * step for k in range(count)]
        else:
            scales = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse {text!r}: {e}", field="g_scales")
    if any(scale < 0 for scale in scales):
        raise ConfigError("scales must be non-negative", field="g_scales")
    return scales


def ensure_directory(path: str) -> Path:
    """Ensure directory exists.

    Args:
        path: Directory path
    """
    directory = Path(path).expanduser()
    directory.mkdir(parents=True, exist_ok=True)
    return directory
