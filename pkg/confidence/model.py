# confidence/model.py
# Thiqa - Confidence models: posterior passthrough, logistic, lattice-recurrent

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from confidence.features import Standardizer, feature_matrix
from lattice.config import (
    CONFIDENCE_CLAMP,
    DEFAULT_SEED,
    FEATURE_DIM,
    HIDDEN_DIM,
    MODEL_FORMAT,
    STATE_DIM,
)
from lattice.core import topological_order
from lattice.errors import ContractError, FormatError, NumericError
from lattice.hwcn import Hwcn

logger = logging.getLogger(__name__)

MODEL_KINDS = ["posterior_passthrough", "logistic", "lattice_rnn"]
INIT_SCALE = 0.1


@dataclass
class GraphPlan:
    """Index arrays for one HWCN, so recurrences run over numpy slices."""
    utterance_id: str
    arc_ids: List[int]
    x: np.ndarray                 # (n_arcs, FEATURE_DIM), standardized
    starts: np.ndarray            # start node position in topological order, per arc
    ends: np.ndarray
    incoming: List[np.ndarray]    # arc rows entering each node position
    outgoing: List[np.ndarray]
    labels: Optional[np.ndarray]
    log_posterior: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.incoming)


def build_plan(h: Hwcn, standardizer: Optional[Standardizer]) -> GraphPlan:
    order = topological_order(h)
    position = {nid: i for i, nid in enumerate(order)}
    starts = np.array([position[a.start_node] for a in h.arcs], dtype=np.int64)
    ends = np.array([position[a.end_node] for a in h.arcs], dtype=np.int64)
    incoming = [np.flatnonzero(ends == i) for i in range(len(order))]
    outgoing = [np.flatnonzero(starts == i) for i in range(len(order))]
    labels = None
    if h.is_labeled:
        labels = np.array([a.label for a in h.arcs], dtype=np.float64)
    return GraphPlan(
        utterance_id=h.utterance_id,
        arc_ids=[a.id for a in h.arcs],
        x=feature_matrix(h, standardizer),
        starts=starts,
        ends=ends,
        incoming=incoming,
        outgoing=outgoing,
        labels=labels,
        log_posterior=np.array([a.merged_log_posterior for a in h.arcs], dtype=np.float64),
    )


def _param_shapes(kind: str, state_dim: int, hidden_dim: int, bias_only: bool) -> Dict[str, Tuple[int, ...]]:
    if kind == "posterior_passthrough":
        return {}
    if kind == "logistic":
        if bias_only:
            return {"b": (1,)}
        return {"w": (FEATURE_DIM,), "b": (1,)}
    if kind == "lattice_rnn":
        d, h = state_dim, hidden_dim
        return {
            "P": (d, FEATURE_DIM), "p": (d,),
            "Uf": (d, d), "bf": (d,),
            "Ub": (d, d), "bb": (d,),
            "Wh": (h, FEATURE_DIM + 2 * d), "ch": (h,),
            "v": (h,), "co": (1,),
        }
    raise ContractError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


_ZERO_INIT = {"b", "p", "bf", "bb", "ch", "co"}


@dataclass
class ConfidenceModel:
    """
    Trainable arc-confidence model.

    Parameters live in `params` under fixed names; `flat()` / `set_flat()` give
    the flat-vector view used by training and gradient checks.
    """
    kind: str
    state_dim: int = STATE_DIM
    hidden_dim: int = HIDDEN_DIM
    seed: int = DEFAULT_SEED
    bias_only: bool = False
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    standardizer: Optional[Standardizer] = None

    def __post_init__(self):
        shapes = self.shapes
        if not self.params:
            rng = np.random.default_rng(self.seed)
            for name, shape in shapes.items():
                if self.kind == "logistic" or name in _ZERO_INIT:
                    self.params[name] = np.zeros(shape)
                else:
                    self.params[name] = rng.normal(0.0, INIT_SCALE, size=shape)
        for name, shape in shapes.items():
            if name not in self.params or self.params[name].shape != shape:
                raise ContractError(f"{self.kind}: parameter {name} must have shape {shape}")

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return _param_shapes(self.kind, self.state_dim, self.hidden_dim, self.bias_only)

    @property
    def trainable(self) -> bool:
        return self.kind != "posterior_passthrough"

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def flat(self) -> np.ndarray:
        if not self.shapes:
            return np.zeros(0)
        return np.concatenate([self.params[name].ravel() for name in self.shapes])

    def set_flat(self, vector: np.ndarray) -> None:
        offset = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            self.params[name] = np.array(vector[offset:offset + size], dtype=np.float64).reshape(shape)
            offset += size

    def copy(self) -> "ConfidenceModel":
        return ConfidenceModel(
            kind=self.kind,
            state_dim=self.state_dim,
            hidden_dim=self.hidden_dim,
            seed=self.seed,
            bias_only=self.bias_only,
            params={k: v.copy() for k, v in self.params.items()},
            standardizer=self.standardizer,
        )

    def describe(self) -> str:
        if self.kind == "lattice_rnn":
            return f"lattice_rnn(D={self.state_dim},H={self.hidden_dim})"
        if self.kind == "logistic" and self.bias_only:
            return "logistic(bias_only)"
        return self.kind

    # -- forward -----------------------------------------------------------

    def _logits(self, plan: GraphPlan, keep: bool = False):
        if self.kind == "logistic":
            if self.bias_only:
                z = np.full(len(plan.arc_ids), self.params["b"][0])
            else:
                z = plan.x @ self.params["w"] + self.params["b"][0]
            return (z, None) if keep else z
        return self._rnn_forward(plan, keep)

    def _rnn_forward(self, plan: GraphPlan, keep: bool):
        prm = self.params
        d = self.state_dim
        n_arcs, n_nodes = len(plan.arc_ids), plan.n_nodes
        u = plan.x @ prm["P"].T + prm["p"]

        fwd = np.zeros((n_nodes, d))
        s_fwd = np.zeros((n_arcs, d))
        for v in range(1, n_nodes):
            rows = plan.incoming[v]
            s_fwd[rows] = np.tanh(u[rows] + fwd[plan.starts[rows]] @ prm["Uf"].T + prm["bf"])
            fwd[v] = s_fwd[rows].mean(axis=0)

        bwd = np.zeros((n_nodes, d))
        s_bwd = np.zeros((n_arcs, d))
        for v in range(n_nodes - 2, -1, -1):
            rows = plan.outgoing[v]
            s_bwd[rows] = np.tanh(u[rows] + bwd[plan.ends[rows]] @ prm["Ub"].T + prm["bb"])
            bwd[v] = s_bwd[rows].mean(axis=0)

        joined = np.hstack([plan.x, fwd[plan.starts], bwd[plan.ends]])
        hidden = np.tanh(joined @ prm["Wh"].T + prm["ch"])
        z = hidden @ prm["v"] + prm["co"][0]
        if not keep:
            return z
        cache = dict(u=u, fwd=fwd, s_fwd=s_fwd, bwd=bwd, s_bwd=s_bwd, joined=joined, hidden=hidden)
        return z, cache

    def predict(self, plan: GraphPlan) -> np.ndarray:
        """Confidence per arc, in plan row order, inside (0, 1)."""
        if self.kind == "posterior_passthrough":
            y = np.exp(plan.log_posterior)
        else:
            z = self._logits(plan)
            bad = np.flatnonzero(~np.isfinite(z))
            if bad.size:
                raise NumericError(
                    f"{plan.utterance_id}: non-finite activation on arc {plan.arc_ids[bad[0]]}"
                )
            y = expit(z)
        return np.clip(y, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)

    # -- loss and gradient -------------------------------------------------

    def loss_and_grad(self, plans: Sequence[GraphPlan]) -> Tuple[float, np.ndarray]:
        """Mean binary cross-entropy over every arc of `plans`, and its gradient."""
        if not self.trainable:
            raise ContractError("posterior_passthrough has no parameters to train")
        total_arcs = sum(len(p.arc_ids) for p in plans)
        if total_arcs == 0:
            return 0.0, np.zeros(self.n_params)
        grads = {name: np.zeros(shape) for name, shape in self.shapes.items()}
        loss = 0.0
        for plan in plans:
            if plan.labels is None:
                raise ContractError(f"{plan.utterance_id}: training needs labeled arcs")
            z, cache = self._logits(plan, keep=True)
            t = plan.labels
            loss += float(np.sum(np.logaddexp(0.0, z) - t * z))
            g_z = (expit(z) - t) / total_arcs
            if self.kind == "logistic":
                grads["b"][0] += g_z.sum()
                if not self.bias_only:
                    grads["w"] += plan.x.T @ g_z
            else:
                self._rnn_backward(plan, cache, g_z, grads)
        flat = np.concatenate([grads[name].ravel() for name in self.shapes])
        return loss / total_arcs, flat

    def _rnn_backward(self, plan: GraphPlan, cache, g_z: np.ndarray, grads) -> None:
        prm = self.params
        d = self.state_dim
        f0 = FEATURE_DIM

        hidden = cache["hidden"]
        grads["v"] += hidden.T @ g_z
        grads["co"][0] += g_z.sum()
        g_pre = np.outer(g_z, prm["v"]) * (1.0 - hidden ** 2)
        grads["Wh"] += g_pre.T @ cache["joined"]
        grads["ch"] += g_pre.sum(axis=0)
        g_joined = g_pre @ prm["Wh"]

        g_fwd = np.zeros_like(cache["fwd"])
        g_bwd = np.zeros_like(cache["bwd"])
        np.add.at(g_fwd, plan.starts, g_joined[:, f0:f0 + d])
        np.add.at(g_bwd, plan.ends, g_joined[:, f0 + d:])
        g_u = np.zeros_like(cache["u"])

        fwd, s_fwd = cache["fwd"], cache["s_fwd"]
        for v in range(plan.n_nodes - 1, 0, -1):
            rows = plan.incoming[v]
            g_act = (g_fwd[v] / len(rows)) * (1.0 - s_fwd[rows] ** 2)
            grads["Uf"] += g_act.T @ fwd[plan.starts[rows]]
            grads["bf"] += g_act.sum(axis=0)
            g_u[rows] += g_act
            np.add.at(g_fwd, plan.starts[rows], g_act @ prm["Uf"])

        bwd, s_bwd = cache["bwd"], cache["s_bwd"]
        for v in range(0, plan.n_nodes - 1):
            rows = plan.outgoing[v]
            g_act = (g_bwd[v] / len(rows)) * (1.0 - s_bwd[rows] ** 2)
            grads["Ub"] += g_act.T @ bwd[plan.ends[rows]]
            grads["bb"] += g_act.sum(axis=0)
            g_u[rows] += g_act
            np.add.at(g_bwd, plan.ends[rows], g_act @ prm["Ub"])

        grads["P"] += g_u.T @ plan.x
        grads["p"] += g_u.sum(axis=0)

    def loss(self, plans: Sequence[GraphPlan]) -> float:
        total_arcs = sum(len(p.arc_ids) for p in plans)
        if total_arcs == 0:
            return 0.0
        loss = 0.0
        for plan in plans:
            z = self._logits(plan)
            loss += float(np.sum(np.logaddexp(0.0, z) - plan.labels * z))
        return loss / total_arcs


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_arcs(model: ConfidenceModel, h: Hwcn) -> Hwcn:
    """Fill every arc's confidence."""
    plan = build_plan(h, model.standardizer)
    confidences = model.predict(plan)
    return h.with_confidences(dict(zip(plan.arc_ids, confidences.tolist())))


def gradient_check(model: ConfidenceModel, h: Hwcn, step: float = 1e-5) -> float:
    """
    Max relative error between the analytic gradient of the mean
    cross-entropy and central finite differences.
    """
    if not model.trainable:
        raise ContractError("posterior_passthrough has no gradient")
    if not h.is_labeled:
        raise ContractError(f"{h.utterance_id}: gradient check needs labeled arcs")
    if model.standardizer is None:
        model.standardizer = Standardizer.fit([h])
    plans = [build_plan(h, model.standardizer)]
    _, analytic = model.loss_and_grad(plans)

    base = model.flat()
    numeric = np.zeros_like(base)
    try:
        for i in range(base.size):
            bumped = base.copy()
            bumped[i] = base[i] + step
            model.set_flat(bumped)
            up = model.loss(plans)
            bumped[i] = base[i] - step
            model.set_flat(bumped)
            down = model.loss(plans)
            numeric[i] = (up - down) / (2.0 * step)
    finally:
        model.set_flat(base)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    errors = np.abs(analytic - numeric) / denom
    worst = float(errors.max()) if errors.size else 0.0
    logger.debug("%s gradient check on %s: max relative error %.3e", model.describe(), h.utterance_id, worst)
    return worst


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.9g}" for v in np.asarray(values).ravel())


def serialize_model(model: ConfidenceModel) -> str:
    std = model.standardizer or Standardizer.identity()
    lines = [
        MODEL_FORMAT,
        f"kind {model.kind}",
        f"state_dim {model.state_dim}",
        f"hidden_dim {model.hidden_dim}",
        f"seed {model.seed}",
        f"bias_only {int(model.bias_only)}",
        f"standardizer_mean {_fmt(std.mean)}",
        f"standardizer_std {_fmt(std.std)}",
    ]
    for name, shape in model.shapes.items():
        lines.append(f"param {name} {' '.join(str(s) for s in shape)}")
        lines.append(_fmt(model.params[name]))
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ConfidenceModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise FormatError(f"not a model file (expected header {MODEL_FORMAT!r})")
    header: Dict[str, str] = {}
    i = 1
    try:
        while i < len(lines) and not lines[i].startswith("param ") and lines[i] != "end":
            key, _, value = lines[i].partition(" ")
            header[key] = value
            i += 1
        kind = header["kind"]
        model = ConfidenceModel(
            kind=kind,
            state_dim=int(header["state_dim"]),
            hidden_dim=int(header["hidden_dim"]),
            seed=int(header["seed"]),
            bias_only=bool(int(header["bias_only"])),
        )
        mean = np.array([float(v) for v in header["standardizer_mean"].split()])
        std = np.array([float(v) for v in header["standardizer_std"].split()])
        model.standardizer = Standardizer(mean=mean, std=std)

        params = {}
        while i < len(lines) and lines[i].startswith("param "):
            parts = lines[i].split()
            name, shape = parts[1], tuple(int(s) for s in parts[2:])
            values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
            params[name] = values.reshape(shape)
            i += 2
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"corrupt model file near line {i + 1}: {exc}")
    if i >= len(lines) or lines[i] != "end":
        raise FormatError("model file is truncated (no 'end' line)")
    if set(params) != set(model.shapes):
        raise FormatError(f"model parameters {sorted(params)} do not match kind {kind}")
    for name, shape in model.shapes.items():
        if params[name].shape != shape:
            raise FormatError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
    model.params = params
    return model


def save_model(model: ConfidenceModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_model(model))


def load_model(path) -> ConfidenceModel:
    with open(path, "r", encoding="utf-8") as f:
        return parse_model(f.read())
