"""Trainable similarity model: a linear patch head plus the refiner.

The head is a D-by-D map applied to every patch embedding before cosine
similarity; the refiner re-maps the frame-similarity matrix. Training runs
through the autodiff graph built in :func:`forward_similarity`; evaluation
uses the plain-numpy aggregation pipeline with the same parameters, and the
two paths are cross-checked in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .aggregation import (
    AggregationParams,
    PatchEmbeddings,
    RefinerParams,
    batch_similarity_matrix,
    topk_count,
)
from .errors import ParameterError, StructuralError

__all__ = ["Model", "init_model", "forward_similarity", "model_refiner_params"]


@dataclass
class Model:
    """Parameter container; every field that learns is an autodiff Var."""

    weight: ad.Var
    refiner_kind: str = "identity"
    downsample: int = 1
    refiner_scale: ad.Var | None = None
    refiner_bias: ad.Var | None = None
    conv_weights: ad.Var | None = None
    conv_bias: ad.Var | None = None

    def parameters(self) -> list[tuple[str, ad.Var]]:
        params = [("weight", self.weight)]
        if self.refiner_kind == "affine":
            params += [("refiner_scale", self.refiner_scale), ("refiner_bias", self.refiner_bias)]
        elif self.refiner_kind == "conv":
            params += [("conv_weights", self.conv_weights), ("conv_bias", self.conv_bias)]
        return params

    def zero_grads(self):
        for _, p in self.parameters():
            p.zero_grad()


def init_model(
    dim: int,
    refiner_kind: str = "identity",
    downsample: int = 1,
    seed: int = 0,
    init_noise: float = 0.02,
    affine_init: tuple[float, float] = (1.0, 0.0),
) -> Model:
    """Head initialized near the identity; refiner initialized near a pass-through."""
    if refiner_kind not in ("identity", "affine", "conv"):
        raise ParameterError(f"unknown refiner kind {refiner_kind!r}")
    if refiner_kind == "identity" and downsample != 1:
        raise ParameterError("identity refiner cannot downsample")
    rng = np.random.default_rng(seed)
    w = np.eye(dim) + init_noise * rng.standard_normal((dim, dim))
    model = Model(weight=ad.Var(w), refiner_kind=refiner_kind, downsample=downsample)
    if refiner_kind == "affine":
        model.refiner_scale = ad.Var(float(affine_init[0]))
        model.refiner_bias = ad.Var(float(affine_init[1]))
    elif refiner_kind == "conv":
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        model.conv_weights = ad.Var(kernel)
        model.conv_bias = ad.Var(0.0)
    return model


def model_refiner_params(model: Model) -> RefinerParams:
    """Snapshot the refiner Vars into the plain aggregation parameter object."""
    if model.refiner_kind == "identity":
        return RefinerParams()
    if model.refiner_kind == "affine":
        return RefinerParams(
            kind="affine",
            scale=model.refiner_scale.item(),
            bias=model.refiner_bias.item(),
            downsample=model.downsample,
        )
    return RefinerParams(
        kind="conv",
        conv_weights=model.conv_weights.value.copy(),
        conv_bias=model.conv_bias.item(),
        downsample=model.downsample,
    )


def forward_similarity(
    model: Model,
    batch_data: np.ndarray,
    params: AggregationParams,
    guard: ad.BreakpointGuard | None = None,
) -> tuple[ad.Var, ad.Var]:
    """Build the batch similarity graph.

    ``batch_data`` is the stacked student view (n, T, R, D). Returns the
    (n, n) video-similarity node and the (n, n, T*, T*) refined
    frame-similarity node (query clip, candidate clip, query frame,
    candidate frame) that the frame-level loss consumes.
    """
    batch_data = np.asarray(batch_data, dtype=np.float64)
    if batch_data.ndim != 4:
        raise StructuralError(f"expected (n, T, R, D) input, got {batch_data.shape}")
    n, t, r, d = batch_data.shape

    mapped = ad.linear(batch_data.reshape(n * t * r, d), model.weight)
    unit = ad.normalize_rows(mapped)
    cosines = ad.gram(unit)  # (nTR, nTR)
    # (query clip, query frame, query patch, candidate clip, candidate frame,
    #  candidate patch); the candidate patch axis is last, ready for top-K
    sim6 = ad.reshape(cosines, (n, t, r, n, t, r))

    k_s = topk_count(params.k_s, r)
    spatial = ad.topk_sum(sim6, k_s, guard=guard)  # (n, T, R, n, T)
    frame = ad.scale(ad.sum_axis(spatial, 2), 1.0 / (r * k_s))  # (n, T, n, T)
    frame = ad.moveaxis(frame, 1, 2)  # (n, n, T, T)

    if model.refiner_kind == "identity":
        refined = frame
    elif model.refiner_kind == "affine":
        pooled = ad.average_pool_ceil(frame, model.downsample)
        refined = ad.clamp(
            ad.add_scalar(ad.mul_scalar(pooled, model.refiner_scale), model.refiner_bias),
            -1.0,
            1.0,
            guard=guard,
        )
    else:
        refined = ad.tanh(
            ad.conv3x3(frame, model.conv_weights, model.conv_bias, stride=model.downsample)
        )

    t_ref, tc_ref = refined.shape[-2], refined.shape[-1]
    k_t = topk_count(params.k_t, tc_ref)
    temporal = ad.topk_sum(refined, k_t, guard=guard)  # (n, n, T*)
    sim = ad.scale(ad.sum_axis(temporal, 2), 1.0 / (t_ref * k_t))  # (n, n)
    return sim, refined


def eval_similarity_matrix(model: Model, clips, params: AggregationParams) -> np.ndarray:
    """Plain-numpy similarity matrix for evaluation: map each clip through
    the trained head, then run the library aggregation pipeline."""
    w = model.weight.value
    mapped = [PatchEmbeddings(c.student.data @ w.T) for c in clips]
    return batch_similarity_matrix(mapped, params, model_refiner_params(model))
