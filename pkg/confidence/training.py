# confidence/training.py
# Thiqa - Cross-entropy training and dev-EER model selection

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from confidence.features import Standardizer
from confidence.model import ConfidenceModel, build_plan, score_arcs
from lattice.config import (
    BATCH_SIZE,
    DEFAULT_SEED,
    EPOCHS,
    HIDDEN_DIM,
    L2,
    LEARNING_RATE,
    MODEL_GRID,
    STATE_DIM,
)
from lattice.errors import ContractError, TrainingError
from lattice.hwcn import Hwcn

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = LEARNING_RATE
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE  # utterances per step
    l2: float = L2
    seed: int = DEFAULT_SEED

    def validate(self) -> None:
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.l2 >= 0:
            raise ContractError(f"l2 must be >= 0, got {self.l2}")


@dataclass
class Candidate:
    model: ConfidenceModel
    loss_curve: List[float]
    dev_eer: float

    def as_row(self) -> Dict[str, object]:
        return {
            "model": self.model.describe(),
            "params": self.model.n_params,
            "final_train_loss": self.loss_curve[-1] if self.loss_curve else float("nan"),
            "dev_eer": self.dev_eer,
        }


def train(
    model: ConfidenceModel,
    corpus: Sequence[Hwcn],
    cfg: Optional[TrainConfig] = None,
) -> Tuple[ConfidenceModel, List[float]]:
    """
    Mini-batch gradient descent on mean binary cross-entropy.

    Returns a trained copy and the loss curve: the loss before training,
    then the full-corpus loss after every epoch.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not model.trainable:
        raise ContractError("posterior_passthrough cannot be trained")
    unlabeled = [h.utterance_id for h in corpus if not h.is_labeled]
    if unlabeled:
        raise ContractError(f"unlabeled HWCNs in training corpus: {unlabeled[:5]}")

    model = model.copy()
    if model.standardizer is None:
        model.standardizer = Standardizer.fit(corpus)
    plans = [build_plan(h, model.standardizer) for h in corpus]
    rng = np.random.default_rng(cfg.seed)

    curve = [model.loss(plans)]
    logger.info("%s: %d utterances, initial loss %.5f", model.describe(), len(plans), curve[0])
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(plans))
        for start in range(0, len(plans), cfg.batch_size):
            batch = [plans[i] for i in order[start:start + cfg.batch_size]]
            _, grad = model.loss_and_grad(batch)
            theta = model.flat()
            if cfg.l2:
                grad = grad + cfg.l2 * theta
            model.set_flat(theta - cfg.learning_rate * grad)
        loss = model.loss(plans)
        if not math.isfinite(loss):
            raise TrainingError(f"loss became {loss}", epoch=epoch)
        curve.append(loss)
        logger.debug("%s epoch %d/%d loss %.5f", model.describe(), epoch, cfg.epochs, loss)
    logger.info("%s: final loss %.5f after %d epochs", model.describe(), curve[-1], cfg.epochs)
    return model, curve


def dev_eer(model: ConfidenceModel, dev: Sequence[Hwcn]) -> float:
    from evaluation.metrics import collect_arc_scores, eer

    scored = [score_arcs(model, h) for h in dev]
    value, _ = eer(collect_arc_scores(scored))
    return value


def select_model(
    train_corpus: Sequence[Hwcn],
    dev_corpus: Sequence[Hwcn],
    grid: Optional[Sequence[Dict[str, object]]] = None,
    cfg: Optional[TrainConfig] = None,
) -> Tuple[Candidate, List[Candidate]]:
    """
    Train every grid entry and keep the lowest development-set EER.
    Ties go to the earlier grid entry.
    """
    cfg = cfg or TrainConfig()
    grid = list(grid or MODEL_GRID)
    if not grid:
        raise ContractError("model grid is empty")
    standardizer = Standardizer.fit(train_corpus)

    candidates = []
    for spec in grid:
        model = ConfidenceModel(
            kind=str(spec["kind"]),
            state_dim=int(spec.get("state_dim", STATE_DIM)),
            hidden_dim=int(spec.get("hidden_dim", HIDDEN_DIM)),
            seed=cfg.seed,
        )
        model.standardizer = standardizer
        if model.trainable:
            model, curve = train(model, train_corpus, cfg)
        else:
            curve = []
        candidate = Candidate(model=model, loss_curve=curve, dev_eer=dev_eer(model, dev_corpus))
        logger.info("candidate %s: dev EER %.4f", model.describe(), candidate.dev_eer)
        candidates.append(candidate)

    best = min(range(len(candidates)), key=lambda i: (candidates[i].dev_eer, i))
    return candidates[best], candidates
