"""
Run Logger

Local JSON event log for simulation runs, solver outcomes and verification
results. The file handler sits on the ``gridshare`` logger, so warnings from
the library modules (``gridshare.welfare``, ``gridshare.harness``, ...) land
in the same file as the events.
"""
import logging
import json
from datetime import datetime
from typing import Dict, Any, Optional


ROOT_LOGGER_NAME = 'gridshare'
LOGGER_NAME = 'gridshare.runs'


class RunLogger:
    """Logs simulation activity for later inspection."""

    def __init__(self, config_manager):
        """Initialize run logger.

        Args:
            config_manager: ConfigManager instance
        """
        self.config_manager = config_manager
        self.log_dir = config_manager.config_dir / "logs"
        self.log_dir.mkdir(exist_ok=True)

        self.log_file = self.log_dir / "runs.log"
        self.enabled = bool(config_manager.get_setting('logging.enabled', True))
        self.logger = self._setup_logger()

    def _setup_logger(self) -> logging.Logger:
        """Setup logging configuration.

        Returns:
            Configured logger instance
        """
        root = logging.getLogger(ROOT_LOGGER_NAME)
        level_name = str(self.config_manager.get_setting('logging.level', 'INFO')).upper()
        level = getattr(logging, level_name, logging.INFO)
        root.setLevel(level)

        # One run log per process: drop handlers left by an earlier RunLogger
        target = str(self.log_file.resolve())
        for existing in list(root.handlers):
            if not getattr(existing, 'gridshare_run_log', False):
                continue
            if self.enabled and existing.baseFilename == target:
                existing.setLevel(level)
                return logging.getLogger(LOGGER_NAME)
            root.removeHandler(existing)
            existing.close()

        if self.enabled:
            handler = logging.FileHandler(self.log_file)
            handler.setLevel(level)
            handler.gridshare_run_log = True

            formatter = logging.Formatter(
                '%(asctime)s - %(levelname)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            )
            handler.setFormatter(formatter)

            root.addHandler(handler)

        return logging.getLogger(LOGGER_NAME)

    def _emit(self, level: int, event: Dict[str, Any]):
        if not self.enabled:
            return
        event['timestamp'] = datetime.now().isoformat()
        self.logger.log(level, json.dumps(event, default=str))

    def log_run(self, scenario: str, g_scale: float, regime: str,
                welfare: float, success: bool):
        """Log a completed (or failed) scenario run.

        Args:
            scenario: Scenario name
            g_scale: Generation scale used
            regime: Selected netting regime
            welfare: Central welfare in dollars
            success: Whether every check passed
        """
        self._emit(logging.INFO, {
            'event_type': 'run',
            'scenario': scenario,
            'g_scale': g_scale,
            'regime': regime,
            'welfare': welfare,
            'success': success,
        })

    def log_solver(self, scenario: str, regime: str, stats: Dict[str, Any]):
        """Log solver statistics for one regime subproblem."""
        self._emit(logging.INFO, {
            'event_type': 'solver',
            'scenario': scenario,
            'regime': regime,
            'stats': stats,
        })

    def log_verification(self, scenario: str, passed: bool,
                         details: Dict[str, Any]):
        """Log an equilibrium / KKT verification outcome."""
        self._emit(logging.INFO if passed else logging.WARNING, {
            'event_type': 'verification',
            'scenario': scenario,
            'passed': passed,
            'details': details,
        })

    def log_error(self, error_type: str, message: str,
                  context: Optional[Dict[str, Any]] = None):
        """Log error event.

        Args:
            error_type: Type of error
            message: Error message
            context: Optional context information
        """
        self._emit(logging.ERROR, {
            'event_type': 'error',
            'error_type': error_type,
            'message': message,
            'context': context or {},
        })

    def get_recent_logs(self, count: int = 100) -> list:
        """Get recent log entries.

        Args:
            count: Number of entries to retrieve

        Returns:
            List of log entries
        """
        if not self.log_file.exists():
            return []

        for handler in logging.getLogger(ROOT_LOGGER_NAME).handlers:
            handler.flush()

        try:
            with open(self.log_file, 'r') as f:
                lines = f.readlines()

            return [line.strip() for line in lines[-count:]]

        except OSError:
            return []
