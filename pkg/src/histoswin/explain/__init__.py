"""Occlusion sensitivity, grid-LIME surrogates and Kernel SHAP over embedding principal components."""
from .lime import LimeExplanation, grid_segments, lime_explain, lime_surrogate, weighted_ridge
from .occlusion import OcclusionMap, occlusion_grid, occlusion_map
from .pca import PCAModel, pca_fit, pca_fit_transform
from .predictor import model_predictor
from .render import heat_levels, overlay, render_heatmap, upsample_nearest, write_manifest
from .shap import (
    ShapAttribution,
    attribution_rows,
    coalition_values,
    embedding_model,
    exact_shapley_oracle,
    global_importance,
    kernel_shap,
    shapley_kernel_weight,
    write_importance_csv,
)

__all__ = [
    "LimeExplanation", "grid_segments", "lime_explain", "lime_surrogate", "weighted_ridge",
    "OcclusionMap", "occlusion_grid", "occlusion_map", "PCAModel", "pca_fit", "pca_fit_transform",
    "model_predictor", "heat_levels", "overlay", "render_heatmap", "upsample_nearest", "write_manifest",
    "ShapAttribution", "attribution_rows", "coalition_values", "embedding_model", "exact_shapley_oracle",
    "global_importance", "kernel_shap", "shapley_kernel_weight", "write_importance_csv",
]
