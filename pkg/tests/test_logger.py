import logging
from unittest.mock import MagicMock, patch

import pytest
from rich.logging import RichHandler

from src.core import logger as logger_module
from src.core.logger import get_logger, log_timing


@pytest.fixture
def fresh_root(monkeypatch):
    """Unconfigured logger module with the root handlers restored afterwards"""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    monkeypatch.setattr(logger_module, "_configured", False)
    yield root
    for handler in root.handlers:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


class TestLogger:
    """Tests for the logger module"""

    def test_get_logger_default(self):
        logger = get_logger("test_logger")
        assert isinstance(logger, logging.Logger)
        assert logger.name == "test_logger"

    def test_get_logger_no_name(self):
        assert get_logger().name == "root"

    @patch("src.core.logger.settings")
    def test_console_handler_on_stderr(self, mock_settings, fresh_root):
        mock_settings.LOG_LEVEL = "WARNING"
        mock_settings.LOG_FILE = None
        get_logger("gcm.test")
        added = [h for h in fresh_root.handlers if isinstance(h, RichHandler)]
        assert len(added) == 1
        assert added[0].console.stderr
        assert fresh_root.level == logging.WARNING

    @patch("src.core.logger.settings")
    def test_log_file(self, mock_settings, fresh_root, tmp_path):
        log_file = tmp_path / "gcmcf.log"
        mock_settings.LOG_LEVEL = "INFO"
        mock_settings.LOG_FILE = str(log_file)
        get_logger("gcm.file").info("epoch 1 done")
        for handler in fresh_root.handlers:
            handler.flush()
        text = log_file.read_text()
        assert "gcm.file - INFO - epoch 1 done" in text

    @patch("src.core.logger.settings")
    def test_unknown_level_falls_back_to_info(self, mock_settings, fresh_root):
        mock_settings.LOG_LEVEL = "CHATTY"
        mock_settings.LOG_FILE = None
        get_logger("gcm.level")
        assert fresh_root.level == logging.INFO

    @patch("src.core.logger.settings")
    def test_configures_once(self, mock_settings, fresh_root):
        mock_settings.LOG_LEVEL = "INFO"
        mock_settings.LOG_FILE = None
        before = len(fresh_root.handlers)
        get_logger("a")
        get_logger("b")
        assert len(fresh_root.handlers) == before + 1


class TestLogTiming:
    """Tests for the log_timing decorator"""

    def test_returns_result_and_logs(self):
        mock_logger = MagicMock()

        @log_timing(mock_logger)
        def train(epochs):
            return epochs * 2

        assert train(3) == 6
        message = mock_logger.info.call_args[0][0]
        assert message.startswith("[TIMING] train took")

    def test_preserves_metadata(self):
        @log_timing(MagicMock())
        def evaluate():
            """Runs the evaluation"""

        assert evaluate.__name__ == "evaluate"
        assert evaluate.__doc__ == "Runs the evaluation"

    def test_exceptions_propagate(self):
        mock_logger = MagicMock()

        @log_timing(mock_logger)
        def broken():
            raise ValueError("bad batch")

        with pytest.raises(ValueError, match="bad batch"):
            broken()
        mock_logger.info.assert_not_called()
