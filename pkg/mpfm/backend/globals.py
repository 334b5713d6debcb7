# globals.py
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


class Numerics:
    # lower bound for the shared prototype std
    s_floor = 1e-3
    # mixture weights are kept at least this large before renormalising
    weight_floor = 1e-12
    # additive guard inside log for entropies, keeps 0 * log 0 == 0
    log_guard = 1e-300
