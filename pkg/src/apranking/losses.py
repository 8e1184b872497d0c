"""Listwise AP surrogate losses and pairwise baselines over QueryContexts.

Every loss returns its value together with closed-form gradients with respect
to each positive and negative score. The quad-linear surrogate replaces the
step penalty on positive-negative gaps with a piecewise map that is zero in
the dead zone (gap < -delta), quadratic across the margin, and linear beyond
it, so badly mis-ranked pairs keep a constant-slope gradient instead of the
vanishing sigmoid tail.

Conventions shared by all losses here:

* gaps are d = s_neg - s_pos (positive d means the pair is mis-ranked);
* a query with no positives is "skipped": value 0, empty gradients, and it
  does not count toward a batch mean's denominator;
* positive-positive rank weights in the quad-linear risk use the exact strict
  step and are treated as constants during differentiation;
* everything is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DegenerateInputError, ParameterError, StructuralError
from .ranking import QueryContext, RelevanceMatrix, heaviside, partition_query

__all__ = [
    "QuadLinearParams",
    "SmoothApParams",
    "LossOutput",
    "MatrixLossOutput",
    "r_minus",
    "r_minus_grad",
    "r_plus",
    "sigmoid_surrogate",
    "sigmoid_surrogate_grad",
    "quadlinear_ap_risk",
    "quadlinear_ap_risk_rows",
    "quadlinear_ap_batch_loss",
    "heaviside_ap_risk",
    "smooth_ap_risk",
    "triplet_loss",
    "contrastive_loss",
    "infonce_loss",
    "sshn_loss",
    "matrix_loss",
]

SSHN_CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class QuadLinearParams:
    """Margin and positive-pair weight of the quad-linear AP surrogate."""

    delta: float = 0.05
    rho: float = 0.10

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ParameterError(f"rho must be nonnegative, got {self.rho}")


@dataclass(frozen=True)
class SmoothApParams:
    """Sigmoid temperature of the smooth AP surrogate."""

    tau: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ParameterError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class LossOutput:
    """Scalar loss plus per-score gradients, aligned with the input context."""

    value: float
    grad_positives: np.ndarray
    grad_negatives: np.ndarray
    skipped: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(
            self, "grad_positives", np.asarray(self.grad_positives, dtype=np.float64)
        )
        object.__setattr__(
            self, "grad_negatives", np.asarray(self.grad_negatives, dtype=np.float64)
        )


@dataclass(frozen=True)
class MatrixLossOutput:
    """Batch loss over a similarity matrix; gradient is conformal to it."""

    value: float
    grad: np.ndarray
    active_queries: int


def _skipped() -> LossOutput:
    return LossOutput(0.0, np.zeros(0), np.zeros(0), skipped=True)


# ---------------------------------------------------------------------------
# scalar surrogate maps
# ---------------------------------------------------------------------------


def r_minus(x, delta: float):
    """Quad-linear penalty for a positive-negative gap x = s_neg - s_pos.

    Piecewise: 2x/delta + 1 for x >= 0; (x/delta + 1)^2 on [-delta, 0);
    exactly 0 below -delta. Continuous, convex, nondecreasing, and an upper
    bound of the strict step.
    """
    if not (np.isfinite(delta) and delta > 0):
        raise ParameterError(f"delta must be positive, got {delta}")
    x = np.asarray(x, dtype=np.float64)
    lin = 2.0 * x / delta + 1.0
    quad = (x / delta + 1.0) ** 2
    out = np.where(x >= 0.0, lin, np.where(x >= -delta, quad, 0.0))
    return float(out) if out.ndim == 0 else out


def r_minus_grad(x, delta: float):
    """Derivative of :func:`r_minus`; continuous, with value 2/delta on x >= 0."""
    if not (np.isfinite(delta) and delta > 0):
        raise ParameterError(f"delta must be positive, got {delta}")
    x = np.asarray(x, dtype=np.float64)
    # the ramp is written as 2(x/delta + 1)/delta so it is exactly 0 at the
    # dead-zone edge and exactly 2/delta at the linear joint
    ramp = 2.0 * (x / delta + 1.0) / delta
    slope = np.where(x >= 0.0, 2.0 / delta, np.where(x >= -delta, ramp, 0.0))
    return float(slope) if slope.ndim == 0 else slope


def r_plus(x):
    """Rank weight for positive-positive gaps: the exact strict step.

    Contributes zero gradient during differentiation.
    """
    return heaviside(x)


def sigmoid_surrogate(x, tau: float):
    """Temperature-tau sigmoid G(x) = 1 / (1 + exp(-x/tau)).

    Stable for large |x/tau|: saturates to exact 0.0 / 1.0 instead of
    overflowing.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ParameterError(f"tau must be positive, got {tau}")
    z = np.asarray(x, dtype=np.float64) / tau
    with np.errstate(over="ignore"):
        out = np.where(
            z >= 0.0,
            1.0 / (1.0 + np.exp(-np.maximum(z, 0.0))),
            np.exp(np.minimum(z, 0.0)) / (1.0 + np.exp(np.minimum(z, 0.0))),
        )
    return float(out) if out.ndim == 0 else out


def sigmoid_surrogate_grad(x, tau: float):
    """d/dx of :func:`sigmoid_surrogate`, computed in the exp(-|z|) form so the
    tail magnitude stays representable instead of rounding through 1 - G."""
    if not (np.isfinite(tau) and tau > 0):
        raise ParameterError(f"tau must be positive, got {tau}")
    z = np.abs(np.asarray(x, dtype=np.float64)) / tau
    e = np.exp(-z)
    out = e / (tau * (1.0 + e) ** 2)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# listwise AP risks
# ---------------------------------------------------------------------------


def quadlinear_ap_risk(q: QueryContext, p: QuadLinearParams) -> LossOutput:
    """Quad-linear AP risk of one query, with analytic gradients.

    value = mean over positives i of h(A_i / B_i) where
    A_i = sum_j r_minus(s_neg_j - s_pos_i), B_i = 1 + rho * (#positives
    strictly above i), and h(u) = u / (1 + u). The rank-weight denominator
    B_i is a constant during differentiation.
    """
    if q.num_positives == 0:
        return _skipped()
    pos, neg = q.positives, q.negatives
    values, gpos, gneg = quadlinear_ap_risk_rows(pos[None, :], neg[None, :], p)
    return LossOutput(float(values[0]), gpos[0], gneg[0])


def quadlinear_ap_risk_rows(pos: np.ndarray, neg: np.ndarray, p: QuadLinearParams):
    """Vectorized quad-linear risk over Q independent queries of equal shape.

    ``pos`` is (Q, P) and ``neg`` is (Q, M); returns (values (Q,),
    grad_pos (Q, P), grad_neg (Q, M)). Used for frame-level batches whose
    per-row positive/negative counts are uniform by construction.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    nq, npos = pos.shape
    if npos == 0:
        raise StructuralError("rows must have at least one positive")
    d_neg = neg[:, None, :] - pos[:, :, None]  # (Q, P, M)
    a = r_minus(d_neg, p.delta).sum(axis=-1) if neg.shape[1] else np.zeros((nq, npos))
    d_pos = pos[:, None, :] - pos[:, :, None]  # (Q, P, P), diagonal gaps are 0
    c = heaviside(d_pos).sum(axis=-1)
    b = 1.0 + p.rho * c
    denom = a + b
    values = (a / denom).mean(axis=-1)
    # dh/dA at u = A/B is B / (A + B)^2
    dterm = b / denom**2
    if neg.shape[1]:
        slope = r_minus_grad(d_neg, p.delta)  # (Q, P, M)
        grad_neg = (dterm[:, :, None] * slope).sum(axis=1) / npos
        grad_pos = -(dterm * slope.sum(axis=-1)) / npos
    else:
        grad_neg = np.zeros_like(neg)
        grad_pos = np.zeros_like(pos)
    return values, grad_pos, grad_neg


def heaviside_ap_risk(q: QueryContext) -> float:
    """Exact AP risk (1 - AP) of one query via strict-step rank counting.

    Evaluated in exact rational arithmetic and returned as the float
    complement of the exact AP, so that ``1.0 - average_precision(...)``
    compares bitwise equal for the same scores.
    """
    if q.num_positives == 0:
        raise StructuralError("AP risk undefined for a query with no positives")
    pos, neg = q.positives, q.negatives
    total = Fraction(0)
    for s in pos:
        n_above = int(np.count_nonzero(neg > s))
        p_above = int(np.count_nonzero(pos > s))
        total += Fraction(n_above, 1 + p_above + n_above)
    risk = total / len(pos)
    return 1.0 - float(1 - risk)


def smooth_ap_risk(q: QueryContext, p: SmoothApParams) -> LossOutput:
    """Sigmoid-smoothed AP risk with every step replaced by G(.; tau).

    value = mean over positives i of N_i / (1 + P_i + N_i) where N_i sums
    G over negatives and P_i sums G over all positives including i itself
    (the self gap is 0, contributing the constant G(0) = 1/2). Gradients
    flow through both sums.
    """
    if q.num_positives == 0:
        return _skipped()
    pos, neg = q.positives, q.negatives
    npos, nneg = pos.size, neg.size
    g_neg = sigmoid_surrogate(neg[None, :] - pos[:, None], p.tau) if nneg else np.zeros((npos, 0))
    g_pos = sigmoid_surrogate(pos[None, :] - pos[:, None], p.tau)
    n_i = g_neg.sum(axis=1)
    p_i = g_pos.sum(axis=1)
    d_i = 1.0 + p_i + n_i
    value = float(np.mean(n_i / d_i))

    dg_neg = sigmoid_surrogate_grad(neg[None, :] - pos[:, None], p.tau) if nneg else np.zeros((npos, 0))
    dg_pos = sigmoid_surrogate_grad(pos[None, :] - pos[:, None], p.tau)
    np.fill_diagonal(dg_pos, 0.0)  # the self gap is identically zero
    nd = dg_neg.sum(axis=1)
    pd = dg_pos.sum(axis=1)

    grad_neg = (dg_neg * ((1.0 + p_i) / d_i**2)[:, None]).sum(axis=0) / npos
    own = (-nd * d_i + n_i * (pd + nd)) / d_i**2
    cross = (dg_pos * (n_i / d_i**2)[:, None]).sum(axis=0)
    grad_pos = (own - cross) / npos
    return LossOutput(value, grad_pos, grad_neg)


# ---------------------------------------------------------------------------
# pairwise baselines and the self-supervised base losses
# ---------------------------------------------------------------------------


def triplet_loss(q: QueryContext, margin: float = 0.2) -> LossOutput:
    """Mean hinge over all positive-negative pairs: max(0, s_neg - s_pos + m)."""
    if margin < 0:
        raise ParameterError(f"margin must be nonnegative, got {margin}")
    if q.num_positives == 0:
        return _skipped()
    pos, neg = q.positives, q.negatives
    if neg.size == 0:
        return LossOutput(0.0, np.zeros_like(pos), np.zeros_like(neg))
    gap = neg[None, :] - pos[:, None] + margin
    active = gap > 0.0
    npairs = pos.size * neg.size
    value = float(np.where(active, gap, 0.0).sum() / npairs)
    grad_pos = -active.sum(axis=1) / npairs
    grad_neg = active.sum(axis=0) / npairs
    return LossOutput(value, grad_pos.astype(np.float64), grad_neg.astype(np.float64))


def contrastive_loss(q: QueryContext, margin: float = 0.2) -> LossOutput:
    """Mean of per-item terms: (1 - s_pos) for positives, max(0, s_neg - m)
    for negatives. Pulls positives toward similarity 1 and pushes negatives
    below the margin."""
    if margin < 0:
        raise ParameterError(f"margin must be nonnegative, got {margin}")
    if q.num_positives == 0:
        return _skipped()
    pos, neg = q.positives, q.negatives
    n_terms = pos.size + neg.size
    neg_active = neg > margin
    value = float(((1.0 - pos).sum() + np.where(neg_active, neg - margin, 0.0).sum()) / n_terms)
    grad_pos = np.full_like(pos, -1.0 / n_terms)
    grad_neg = neg_active.astype(np.float64) / n_terms
    return LossOutput(value, grad_pos, grad_neg)


def infonce_loss(q: QueryContext, tau: float) -> LossOutput:
    """InfoNCE over one query: each positive against the shared negatives.

    value = -(1/P) sum_i log[ exp(s_i/tau) / (exp(s_i/tau) +
    sum_j exp(s_neg_j/tau)) ], computed through log-sum-exp.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ParameterError(f"tau must be positive, got {tau}")
    if q.num_positives == 0:
        return _skipped()
    pos, neg = q.positives, q.negatives
    if neg.size == 0:
        return LossOutput(0.0, np.zeros_like(pos), np.zeros_like(neg))
    z_pos = pos / tau
    z_neg = neg / tau
    # per-positive logits: own score plus all negatives
    logits = np.concatenate([z_pos[:, None], np.broadcast_to(z_neg, (pos.size, neg.size))], axis=1)
    shift = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - shift)
    zsum = w.sum(axis=1)
    lse = shift[:, 0] + np.log(zsum)
    value = float(np.mean(lse - z_pos))
    soft = w / zsum[:, None]  # rows sum to 1
    grad_pos = -(1.0 - soft[:, 0]) / (pos.size * tau)
    grad_neg = soft[:, 1:].sum(axis=0) / (pos.size * tau)
    return LossOutput(value, grad_pos, grad_neg)


def sshn_loss(self_sim: float, hardest_negative: float) -> LossOutput:
    """Self-similarity / hardest-negative log loss.

    value = -log(s_self) - log(1 - s_neg), with s_self clamped to
    [eps, 1] and s_neg to [0, 1 - eps] (eps = 1e-6) before the logs.
    grad_positives holds d/d(self_sim); grad_negatives holds
    d/d(hardest_negative); the gradient is zero on a clamped side.
    """
    for name, v in (("self_sim", self_sim), ("hardest_negative", hardest_negative)):
        if not np.isfinite(v) or v < -1.0 - 1e-9 or v > 1.0 + 1e-9:
            raise DegenerateInputError(f"{name}={v} is outside the similarity range [-1, 1]")
    s = min(max(float(self_sim), SSHN_CLAMP_EPS), 1.0)
    n = min(max(float(hardest_negative), 0.0), 1.0 - SSHN_CLAMP_EPS)
    value = -np.log(s) - np.log(1.0 - n)
    g_self = -1.0 / s if SSHN_CLAMP_EPS < self_sim < 1.0 else 0.0
    g_neg = 1.0 / (1.0 - n) if 0.0 < hardest_negative < 1.0 - SSHN_CLAMP_EPS else 0.0
    return LossOutput(float(value), np.array([g_self]), np.array([g_neg]))


# ---------------------------------------------------------------------------
# batch reductions over similarity matrices
# ---------------------------------------------------------------------------


def matrix_loss(sim, relevance: RelevanceMatrix, per_query) -> MatrixLossOutput:
    """Average a per-QueryContext loss over the rows of a similarity matrix.

    Skipped queries (no positives) do not count toward the mean; their rows
    and the diagonal get zero gradient. ``per_query`` maps a QueryContext to
    a LossOutput.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise StructuralError("similarity matrix must be square")
    if sim.shape[0] != relevance.n:
        raise StructuralError(
            f"similarity is {sim.shape} but relevance is {relevance.n}x{relevance.n}"
        )
    n = relevance.n
    grad = np.zeros_like(sim)
    total = 0.0
    active = 0
    for k in range(n):
        ctx = partition_query(sim[k], relevance.entries[k], k)
        out = per_query(ctx)
        if out.skipped:
            continue
        active += 1
        total += out.value
        keep = np.ones(n, dtype=bool)
        keep[k] = False
        pos_idx = np.flatnonzero(keep & (relevance.entries[k] == 1))
        neg_idx = np.flatnonzero(keep & (relevance.entries[k] == 0))
        grad[k, pos_idx] = out.grad_positives
        grad[k, neg_idx] = out.grad_negatives
    if active == 0:
        return MatrixLossOutput(0.0, np.zeros_like(sim), 0)
    return MatrixLossOutput(total / active, grad / active, active)


def quadlinear_ap_batch_loss(sim, relevance: RelevanceMatrix, p: QuadLinearParams) -> MatrixLossOutput:
    """Quad-linear AP risk averaged over the non-skipped query rows."""
    return matrix_loss(sim, relevance, lambda q: quadlinear_ap_risk(q, p))
