from dataclasses import dataclass

import numpy as np

from mpfm.backend.flow.prototype import GMPrototype
from mpfm.backend.globals import Numerics
from mpfm.backend.models.errors import ContractViolationError, RejectedInputError
from mpfm.backend.nn.tensor import Tensor, as_tensor, exp, log, log_softmax, tsum


@dataclass
class MimrReport:
    """Entropies are in nats."""

    conditional_entropy: float
    marginal_entropy: float
    loss: Tensor
    mi_estimate: float
    usage: np.ndarray

    @property
    def value(self) -> float:
        return self.loss.item()

    def to_dict(self) -> dict:
        return {
            "conditional_entropy": self.conditional_entropy,
            "marginal_entropy": self.marginal_entropy,
            "loss": self.value,
            "mi_estimate": self.mi_estimate,
        }


def mimr_loss(
    proto: GMPrototype,
    y,
    labels=None,
    literal: bool = False,
    batch_marginal: bool = False,
) -> MimrReport:
    """
    H(c|y) - H(c) over a batch of transformed normal features.

    H(c|y) is the batch mean of the responsibility entropy. H(c) comes
    from the prototype weights, or from the batch-averaged
    responsibilities when batch_marginal is set. With literal=True the
    sign is flipped, so minimizing the loss minimizes the estimate.
    """
    y = as_tensor(y)
    if y.ndim != 2 or y.shape[0] == 0:
        raise RejectedInputError(f"Expected a nonempty batch of points, got shape {y.shape}")
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise ContractViolationError("The MI regularizer only accepts normal samples")

    log_resp = log_softmax(proto.log_joint(y), axis=-1)
    resp = exp(log_resp)
    conditional = -tsum(resp * log_resp, axis=-1).mean()

    if batch_marginal:
        usage = resp.mean(axis=0)
        marginal = -tsum(usage * log(usage + Numerics.log_guard))
    else:
        log_pi = proto.log_pi()
        marginal = -tsum(exp(log_pi) * log_pi)

    loss = marginal - conditional if literal else conditional - marginal
    h_cond, h_marg = conditional.item(), marginal.item()
    return MimrReport(
        conditional_entropy=h_cond,
        marginal_entropy=h_marg,
        loss=loss,
        mi_estimate=h_marg - h_cond,
        usage=resp.data.mean(axis=0),
    )


def mutual_info_estimate(proto: GMPrototype, y, batch_marginal: bool = False) -> float:
    """H(c) - H(c|y), the negation of the regularizer."""
    return -mimr_loss(proto, as_tensor(y).detach(), batch_marginal=batch_marginal).value
