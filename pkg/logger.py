import sys
import time
import logging
from pathlib import Path
from config import Config


LOG_FORMAT  = "[%(asctime)s %(name)s %(filename)s:%(lineno)s] %(levelname)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class LoggerSetup:
    def __init__(self, logger_name : str = None, logger_file : str = None):
        """
        Named logger writing to <LOG_DIR>/<name>_logs/<file>_<start time>.log and to stderr.

        Arguments:
        ----------
            logger_name { str } : Logger and directory name, defaults to `logger_file`

            logger_file { str } : Prefix of the log file name, defaults to `logger_name`
        """
        name        = logger_name or logger_file or 'spat'
        prefix      = logger_file or name
        self.logger = logging.getLogger(name)
        self.logger.setLevel(Config.LOG_LEVEL)

        # handlers are attached once per process, whatever the number of instances
        if not self.logger.handlers:
            formatter = logging.Formatter(LOG_FORMAT, datefmt = DATE_FORMAT)
            for handler in (self._file_handler(name, prefix), logging.StreamHandler(sys.stderr)):
                handler.setFormatter(formatter)
                self.logger.addHandler(handler)

    @staticmethod
    def _file_handler(name : str, prefix : str) -> logging.FileHandler:
        log_dir = Path(Config.LOG_DIR) / f'{name}_logs'
        log_dir.mkdir(parents = True, exist_ok = True)
        stamp   = time.strftime('%Y%m%d_%H%M%S')
        return logging.FileHandler(log_dir / f'{prefix}_{stamp}.log', encoding = 'utf-8', delay = True)

    def get_logger(self) -> logging.Logger:
        return self.logger
