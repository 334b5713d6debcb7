# journal.py
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

import os
from typing import IO

from mpfm.backend.utils import json


class MetricsJournal:
    """
    Line-delimited JSON record of a training run, one entry per
    optimizer step. A journal without a path keeps entries in memory only.
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self.entries: list[dict] = []
        self.__fp: IO[bytes] | None = None
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self.__fp = open(path, "wb")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def record(self, entry: dict):
        self.entries.append(entry)
        if self.__fp is not None:
            json.dump_line(entry, self.__fp)

    def flush(self):
        if self.__fp is not None:
            self.__fp.flush()

    def close(self):
        if self.__fp is not None:
            self.__fp.close()
            self.__fp = None

    def column(self, key: str) -> list:
        return [e[key] for e in self.entries if key in e]

    @staticmethod
    def read(path: str) -> list[dict]:
        with open(path, "rb") as f:
            return [json.loads(line) for line in f if line.strip()]
