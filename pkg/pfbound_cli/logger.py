"""Logging system with optional run-log file output and rich console mirroring."""

import os
import sys
import logging
import threading
import traceback
from datetime import datetime
from threading import Lock
from typing import Optional

from rich.console import Console


class Logger:
    """Logger that appends to the current run log and can mirror messages to the console.

    All instances share one log file, set with ``Logger.set_log_file``. Until a
    file is set, messages only reach the console (when requested).
    """

    _instances = {}
    _lock = Lock()
    _shared_log_file: Optional[str] = None

    def __new__(cls, log_file=None, console_output=False):
        """Singleton pattern: return same instance for same parameters."""
        key = (log_file, console_output)

        if key not in cls._instances:
            with cls._lock:
                # Double-check after acquiring lock
                if key not in cls._instances:
                    instance = super().__new__(cls)
                    cls._instances[key] = instance
                    instance._initialized = False
        return cls._instances[key]

    def __init__(self, log_file=None, console_output=False):
        """Initialize logger (only once per instance)."""
        if self._initialized:
            return

        self._own_log_file = log_file
        self.lock = Lock()
        self.console_output = console_output
        self.console = Console(highlight=False)

        if log_file is not None:
            self._ensure_log_file(log_file)

        self._initialized = True

    @classmethod
    def set_log_file(cls, log_file: Optional[str]) -> None:
        """Route every logger instance without an explicit file to ``log_file``.

        Passing None switches file output off again.
        """
        with cls._lock:
            cls._shared_log_file = str(log_file) if log_file is not None else None
        if log_file is not None:
            cls._ensure_log_file(str(log_file))

    @property
    def log_file(self) -> Optional[str]:
        return self._own_log_file or Logger._shared_log_file

    @staticmethod
    def _ensure_log_file(log_file: str) -> None:
        """Ensure log file exists and add header if it's a new file."""
        directory = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(directory, exist_ok=True)
        if not os.path.exists(log_file):
            with open(log_file, 'w', encoding='utf-8') as f:
                f.write(f"pfbound log - started at {datetime.now().isoformat()}\n")
                f.write("=" * 60 + "\n")

    def _write_log(self, level, message, exc_info=False, console=False):
        """Write log entry to file and optionally to console."""
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        thread_prefix = f"[{threading.current_thread().name}] "

        # Rich renderables (tables, panels) are console-only
        is_text = isinstance(message, str)
        log_entry = f"[{timestamp}] {thread_prefix}{level}: {message if is_text else type(message).__name__}\n"

        if exc_info:
            exc_type, exc_value, exc_tb = sys.exc_info()
            if exc_type is not None:
                tb_lines = ''.join(traceback.format_exception(exc_type, exc_value, exc_tb))
                if tb_lines.strip():
                    log_entry += tb_lines

        with self.lock:
            log_file = self.log_file
            if log_file is not None:
                with open(log_file, 'a', encoding='utf-8') as f:
                    f.write(log_entry)

            verbose = logging.getLogger().getEffectiveLevel() <= logging.DEBUG
            if console or verbose or (self.console_output and level != "DEBUG"):
                self.console.print(message)

    def info(self, message, exc_info=False, console=False):
        """Log info message.

        Args:
            message: Message (or rich renderable) to log
            exc_info: Include exception traceback if True
            console: Print to console if True
        """
        self._write_log("INFO", message, exc_info=exc_info, console=console)

    def error(self, message, exc_info=False, console=False):
        """Log error message."""
        self._write_log("ERROR", message, exc_info=exc_info, console=console)

    def warning(self, message, exc_info=False, console=False):
        """Log warning message."""
        self._write_log("WARNING", message, exc_info=exc_info, console=console)

    def debug(self, message, exc_info=False, console=False):
        """Log debug message."""
        self._write_log("DEBUG", message, exc_info=exc_info, console=console)
