# rng.py
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

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, *path). The same key always
    yields the same stream, so streams for (sample id, step) pairs can be
    created independently in any order or thread.
    """
    entropy = [int(seed)] + [int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

