# logger.py
#
# Copyright 2026 The mpfm contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, in version 3 of the License.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
#
import logging
import os
import re
import sys

_HOME = re.compile(r"/home/([^/]*)/")


class _ColorFormatter(logging.Formatter):
    __colors = {
        logging.DEBUG: 37,
        logging.INFO: 36,
        logging.WARNING: 33,
        logging.ERROR: 31,
        logging.CRITICAL: 41,
    }

    def __init__(self, use_color: bool):
        super().__init__(
            fmt="%(asctime)s \033[1m(%(levelname)s)\033[0m %(message)s"
            if use_color
            else "%(asctime)s (%(levelname)s) %(message)s",
            datefmt="%H:%M:%S",
        )
        self.use_color = use_color

    def formatMessage(self, record: logging.LogRecord) -> str:
        message = record.message
        if "\n" in message:
            message = message.replace("\n", "\n\t") + "\n"
        if self.use_color:
            message = "\033[%dm%s\033[0m" % (self.__colors.get(record.levelno, 0), message)
        return self._style._fmt % {**record.__dict__, "message": message}


class Logger(logging.getLoggerClass()):
    """
    Console logger shared by the backend and the CLI. Every instance
    writes through the "mpfm" logger, which gets one stderr handler
    with timestamped, coloured output. LOG_LEVEL sets the level.
    """

    __handler: logging.Handler | None = None

    def __init__(self):
        super().__init__("mpfm")
        self.__target = logging.getLogger("mpfm")
        if Logger.__handler is None:
            use_color = sys.stderr.isatty() and "NO_COLOR" not in os.environ
            Logger.__handler = logging.StreamHandler()
            Logger.__handler.setFormatter(_ColorFormatter(use_color))
            self.__target.addHandler(Logger.__handler)
            self.__target.setLevel(os.environ.get("LOG_LEVEL", "INFO").upper())

    def debug(self, message, *args, **kwargs):
        self.__target.debug(message, *args, **kwargs)

    def info(self, message, *args, **kwargs):
        self.__target.info(message, *args, **kwargs)

    def warning(self, message, *args, **kwargs):
        self.__target.warning(message, *args, **kwargs)

    def error(self, message, *args, **kwargs):
        self.__target.error(message, *args, **kwargs)

    def critical(self, message, *args, **kwargs):
        self.__target.critical(message, *args, **kwargs)

    @staticmethod
    def write_log(lines: list[str], directory: str) -> str:
        """
        Write lines (usually a formatted traceback) to crash.log in
        directory, with home directories replaced by /home/USER/.
        """
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "crash.log")
        with open(path, "w") as crash_log:
            for line in lines:
                line = _HOME.sub("/home/USER/", line)
                crash_log.write(line if line.endswith("\n") else line + "\n")
        return path

    def set_silent(self):
        """Mute console output, e.g. while the CLI prints JSON."""
        if Logger.__handler is not None:
            Logger.__handler.setLevel(logging.CRITICAL + 1)
