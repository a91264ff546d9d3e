"""
Logging setup for the command line.
"""
import logging


class _StageFormatter(logging.Formatter):
    """Prefix records with the stage passed through ``extra``."""

    def format(self, record: logging.LogRecord) -> str:
        stage = getattr(record, "stage", None)
        record.stage_prefix = f"[{stage}] " if stage else ""
        return super().format(record)


def setup_logging(level: str = "INFO") -> None:
    """Configure a single stream handler on the root logger."""
    handler = logging.StreamHandler()
    handler.setFormatter(_StageFormatter("%(asctime)s %(levelname)s %(name)s: %(stage_prefix)s%(message)s"))
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
