# lattice/posterior.py
# Thiqa - Lattice forward-backward and node priors

import logging
import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.special import logsumexp

from lattice.config import ACOUSTIC_SCALE
from lattice.core import Lattice, topological_order
from lattice.errors import ContractError, NonFiniteScoreError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorAnnotatedLattice:
    lattice: Lattice
    arc_log_posterior: Dict[int, float]
    node_log_prior: Dict[int, float]
    acoustic_scale: float


def _check_finite(lattice: Lattice) -> None:
    for arc in lattice.arcs:
        if not (math.isfinite(arc.acoustic_logp) and math.isfinite(arc.trans_logp)):
            raise NonFiniteScoreError(
                f"{lattice.utterance_id}: arc {arc.id} has non-finite score "
                f"(a={arc.acoustic_logp}, l={arc.trans_logp})"
            )


def _log_accumulate(terms) -> float:
    if not terms:
        return -np.inf
    return float(logsumexp(np.asarray(terms, dtype=np.float64)))


def forward_backward(lattice: Lattice, acoustic_scale: float = ACOUSTIC_SCALE) -> PosteriorAnnotatedLattice:
    """
    Arc posteriors P(e|X) in the log domain.

    Arc weight is acoustic_scale * acoustic_logp + trans_logp; alpha/beta are
    accumulated with logsumexp so long utterances do not underflow.
    """
    if not acoustic_scale > 0:
        raise ContractError(f"acoustic_scale must be positive, got {acoustic_scale}")
    _check_finite(lattice)

    order = topological_order(lattice)
    weight = {a.id: acoustic_scale * a.acoustic_logp + a.trans_logp for a in lattice.arcs}

    alpha: Dict[int, float] = {}
    for nid in order:
        if nid == lattice.source_node_id:
            alpha[nid] = 0.0
            continue
        alpha[nid] = _log_accumulate(
            [alpha[a.start_node] + weight[a.id] for a in lattice.incoming[nid]]
        )

    beta: Dict[int, float] = {}
    for nid in reversed(order):
        if nid == lattice.sink_node_id:
            beta[nid] = 0.0
            continue
        beta[nid] = _log_accumulate(
            [weight[a.id] + beta[a.end_node] for a in lattice.outgoing[nid]]
        )

    total = beta[lattice.source_node_id]
    if not math.isfinite(total):
        raise NonFiniteScoreError(f"{lattice.utterance_id}: total path score is {total}")

    posteriors = {}
    for arc in lattice.arcs:
        post = alpha[arc.start_node] + weight[arc.id] + beta[arc.end_node] - total
        posteriors[arc.id] = min(post, 0.0)

    logger.debug(
        "%s: forward-backward over %d arcs, log total %.4f",
        lattice.utterance_id, len(lattice.arcs), total,
    )
    return PosteriorAnnotatedLattice(
        lattice=lattice,
        arc_log_posterior=posteriors,
        node_log_prior=node_priors(lattice),
        acoustic_scale=acoustic_scale,
    )


def node_priors(lattice: Lattice) -> Dict[int, float]:
    """Lattice-forward pass over transitional scores only; log P(source) = 0."""
    _check_finite(lattice)
    priors: Dict[int, float] = {}
    for nid in topological_order(lattice):
        if nid == lattice.source_node_id:
            priors[nid] = 0.0
            continue
        priors[nid] = _log_accumulate(
            [priors[a.start_node] + a.trans_logp for a in lattice.incoming[nid]]
        )
    return priors
