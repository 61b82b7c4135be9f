"""
Process wide logger for ratervar. Every module logs through a child of the
``ratervar`` logger, so a single call to LoggerManager.config_logger (or
the ``--log-file`` / ``-v`` flags of the command line) redirects all of
them.
"""

import logging
import os

LOG_FORMAT = "%(asctime)s - %(name)s - %(funcName)s - %(levelname)s - %(message)s"
ROOT_NAME = "ratervar"
LOG_FILE_ENV = "RATERVAR_LOG_FILE"


class LoggerManager:
    """
    Singleton owning the ``ratervar`` logger and its two handlers.

    The console handler always exists (WARNING and above unless
    configured otherwise). A file handler is attached only when a file name
    is configured, either through config_logger or the RATERVAR_LOG_FILE
    environment variable at first use.

    Attributes
    ----------
        logger : logging.Logger
            The ``ratervar`` logger; it does not propagate to the root logger.
        console_handler : logging.StreamHandler
        file_handler : logging.FileHandler or None
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            instance = super().__new__(cls)
            instance._setup()
            cls._instance = instance
        return cls._instance

    def _setup(self):
        self.logger = logging.getLogger(ROOT_NAME)
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)

        self.console_handler = logging.StreamHandler()
        self.console_handler.setLevel(logging.WARNING)
        self.console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        self.logger.addHandler(self.console_handler)

        self.file_handler = None
        envFile = os.environ.get(LOG_FILE_ENV)
        if envFile:
            self._attach_file(envFile, logging.INFO)

    def _attach_file(self, filename, flevel):
        handler = logging.FileHandler(filename)
        handler.setLevel(flevel)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        self.logger.addHandler(handler)
        self.file_handler = handler

    def _detach_file(self):
        if self.file_handler is None:
            return
        self.logger.removeHandler(self.file_handler)
        self.file_handler.close()
        self.file_handler = None

    @classmethod
    def get_logger(cls, name=None):
        """
        The ``ratervar`` logger, or a child of it.

        Parameters
        ----------
            name : str, optional
                Dotted module name such as 'ratervar.train.trainer'; the
                leading 'ratervar.' may be omitted.

        Returns
        -------
            logger : logging.Logger
        """
        root = cls().logger
        if name is None or name == ROOT_NAME:
            return root
        prefix = ROOT_NAME + "."
        return root.getChild(name[len(prefix) :] if name.startswith(prefix) else name)

    @classmethod
    def config_logger(
        cls, filename, level=logging.INFO, flevel=logging.INFO, clevel=logging.WARNING
    ):
        """
        Set the log levels and (re)direct file output.

        Parameters
        ----------
            filename : str or None
                Log file to write; None drops any existing file handler.
            level : int, default=logging.INFO
                Level of the logger itself.
            flevel : int, default=logging.INFO
                Level of the file handler.
            clevel : int, default=logging.WARNING
                Level of the console handler.
        """
        manager = cls()
        manager.logger.setLevel(level)
        manager._detach_file()
        if filename:
            manager._attach_file(filename, flevel)
        manager.console_handler.setLevel(clevel)
