# result.py
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
from typing import Generic, TypeVar

T = TypeVar("T")


class Result(Generic[T]):
    """
    Return object for backend I/O helpers (config documents, snapshot
    headers). A failed Result carries the error message and, when known,
    the exception class that caused it so the CLI can pick an exit code.
    """

    status: bool = False
    data: T | None = None
    message: str = ""
    error: type[BaseException] | None = None

    def __init__(
        self,
        status: bool = False,
        data: T | None = None,
        message: str = "",
        error: type[BaseException] | None = None,
    ):
        self.status = status
        self.data = data
        self.message = message
        self.error = error

    @property
    def ok(self) -> bool:
        return self.status

    def unwrap(self) -> T:
        """Return data or raise the recorded error type with the message."""
        if self.ok:
            return self.data  # type: ignore[return-value]
        raise (self.error or RuntimeError)(self.message)
