# checks.py
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

import math

import numpy as np
from scipy import optimize, stats

from mpfm.backend.flow.field import GMVelocity, gm_nll
from mpfm.backend.flow.mimr import mimr_loss
from mpfm.backend.flow.prototype import GMPrototype
from mpfm.backend.flow.sampler import (
    reverse_coefficients,
    reverse_step_composed,
    reverse_transition,
)
from mpfm.backend.logger import Logger
from mpfm.backend.models.enum import Precision
from mpfm.backend.nn.gradcheck import finite_diff_check
from mpfm.backend.nn.tensor import Tensor, backward, log_softmax, set_precision
from mpfm.backend.params import APP_VERSION
from mpfm.backend.utils import yaml
from mpfm.backend.utils.rng import make_rng

logging = Logger()


class InvariantChecker:
    """
    Runtime versions of the closed-form identities the model relies on.
    Each check stores its worst observed error and whether it is within
    tolerance.
    """

    coefficient_algebra: dict = {}
    mixture_closure: dict = {}
    k1_reduction: dict = {}
    mimr_bounds: dict = {}
    gradients: dict = {}

    def __init__(self, seed: int = 0, draws: int = 100_000, bins: int = 20):
        set_precision(Precision.FLOAT64)
        self.seed = seed
        self.draws = draws
        self.bins = bins
        self.coefficient_algebra = self.check_coefficient_algebra()
        self.mixture_closure = self.check_mixture_closure()
        self.k1_reduction = self.check_k1_reduction()
        self.mimr_bounds = self.check_mimr_bounds()
        self.gradients = self.check_gradients()

    @property
    def passed(self) -> bool:
        return all(
            c["passed"]
            for c in (
                self.coefficient_algebra,
                self.mixture_closure,
                self.k1_reduction,
                self.mimr_bounds,
                self.gradients,
            )
        )

    def check_coefficient_algebra(self) -> dict:
        rng = make_rng(self.seed, 10)
        worst = 0.0
        for _ in range(1000):
            t = rng.uniform(1e-3, 1.0)
            dt = rng.uniform(1e-6, t)
            c = reverse_coefficients(t, dt)
            s = t - dt
            worst = max(
                worst,
                abs(c.c1 * (1 - t) + c.c2 - (1 - s)),
                abs(c.c1**2 * t**2 + c.c3 - s**2),
            )
        ref = reverse_coefficients(0.5, 0.25)
        ref_err = max(
            abs(ref.c1 - 1 / 6), abs(ref.c2 - 2 / 3), abs(ref.c3 - 1 / 18)
        )
        return {"max_error": worst, "reference_error": ref_err, "passed": worst < 1e-12 and ref_err < 1e-6}

    def check_mixture_closure(self) -> dict:
        rng = make_rng(self.seed, 11)
        pred = GMVelocity.from_arrays(
            [0.2, 0.5, 0.3], rng.normal(0.0, 2.0, size=(3, 2)), 0.4
        )
        z_t, t, dt = np.array([0.3, -0.7]), 0.6, 0.2
        analytic = reverse_transition(pred, z_t, t, dt)
        draws = reverse_step_composed(pred, z_t, t, dt, rng, size=self.draws)

        cov = analytic.covariance()
        se = np.sqrt(np.diag(cov) / self.draws)
        mean_err = float(np.max(np.abs(draws.mean(axis=0) - analytic.mean()) / se))
        cov_err = float(np.linalg.norm(np.cov(draws, rowvar=False) - cov) / np.linalg.norm(cov))

        # first coordinate against the analytic marginal on equiprobable bins
        lo = analytic.means[:, 0].min() - 20 * analytic.std
        hi = analytic.means[:, 0].max() + 20 * analytic.std
        edges = [
            optimize.brentq(lambda x, q=q: analytic.marginal_cdf(x) - q, lo, hi)
            for q in np.arange(1, self.bins) / self.bins
        ]
        observed = np.bincount(np.searchsorted(edges, draws[:, 0]), minlength=self.bins)
        _, p_value = stats.chisquare(observed, np.full(self.bins, self.draws / self.bins))
        return {
            "mean_error_se": mean_err,
            "covariance_rel_error": cov_err,
            "chi_square_p": float(p_value),
            "passed": mean_err < 4.0 and cov_err < 0.02 and p_value > 1e-3,
        }

    def check_k1_reduction(self) -> dict:
        rng = make_rng(self.seed, 12)
        worst = 0.0
        for _ in range(100):
            d = int(rng.integers(1, 5))
            s = float(rng.uniform(0.2, 2.0))
            mean = Tensor(rng.normal(size=(1, d)), requires_grad=True)
            u = rng.normal(size=d)
            pred = GMVelocity(log_softmax(Tensor(np.zeros(1))), mean, Tensor(s))
            (grad,) = backward(gm_nll(pred, u), [mean])
            expected = (mean.data[0] - u) / s**2
            scale = float(np.max(np.abs(expected))) + 1e-12
            worst = max(worst, float(np.max(np.abs(grad[0] - expected))) / scale)
        return {"max_rel_error": worst, "passed": worst < 1e-10}

    def check_mimr_bounds(self) -> dict:
        rng = make_rng(self.seed, 13)
        violations = 0
        for _ in range(200):
            k = int(rng.integers(1, 6))
            proto = GMPrototype(rng.dirichlet(np.ones(k)), rng.normal(0, 3, size=(k, 2)), rng.uniform(0.3, 2))
            report = mimr_loss(proto, rng.normal(0, 3, size=(int(rng.integers(1, 20)), 2)))
            bound = math.log(k) + 1e-12
            if not -bound <= report.value <= bound or report.mi_estimate != -report.value:
                violations += 1

        proto = GMPrototype(np.full(4, 0.25), 100.0 * np.eye(4), 1.0)
        one_hot = mimr_loss(proto, 100.0 * np.eye(4)).value
        one_hot_err = abs(one_hot + math.log(4))
        return {
            "violations": violations,
            "one_hot_error": one_hot_err,
            "passed": violations == 0 and one_hot_err < 1e-12,
        }

    def check_gradients(self) -> dict:
        rng = make_rng(self.seed, 14)
        logits = Tensor(rng.normal(size=3), requires_grad=True)
        means = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        u = rng.normal(size=2)
        nll_err = finite_diff_check(
            lambda: gm_nll(GMVelocity(log_softmax(logits), means, Tensor(0.7)), u),
            [logits, means],
        )

        proto = GMPrototype([0.3, 0.7], rng.normal(size=(2, 2)), 0.9)
        y = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        mimr_err = finite_diff_check(lambda: mimr_loss(proto, y).loss, [proto.means, y])
        worst = max(nll_err, mimr_err)
        return {"gm_nll": nll_err, "mimr": mimr_err, "passed": worst < 1e-4}

    def get_results(self, plain: bool = False):
        results = {
            "Version": APP_VERSION,
            "Passed": self.passed,
            "Coefficient algebra": self.coefficient_algebra,
            "Mixture closure": self.mixture_closure,
            "K=1 reduction": self.k1_reduction,
            "MI regularizer bounds": self.mimr_bounds,
            "Gradients": self.gradients,
        }

        if plain:
            return yaml.dump(results, sort_keys=False, indent=4)

        return results
