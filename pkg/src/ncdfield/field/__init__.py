"""Neural field with color, density and embedding heads, volume-rendered per ray."""

from .losses import embedding_kl_loss, entropy_from_logits, photometric_loss, pixel_entropy, total_loss
from .model import FieldArch, FieldParams, field_forward, init_field, positional_encode
from .render import (
    RenderConfig,
    RenderOutput,
    ViewRender,
    composite,
    render_coarse_fine,
    render_ray,
    render_rays,
    render_view,
    render_views,
)
from .sampling import SampleSet, sample_hierarchical, sample_stratified
from .train import RayDataset, TrainConfig, TrainingDiverged, TrainState, train, train_step, write_loss_csv

__all__ = [
    "embedding_kl_loss", "entropy_from_logits", "photometric_loss", "pixel_entropy",
    "total_loss", "FieldArch", "FieldParams", "field_forward", "init_field",
    "positional_encode", "RenderConfig", "RenderOutput", "ViewRender", "composite",
    "render_coarse_fine", "render_ray", "render_rays", "render_view", "render_views",
    "SampleSet", "sample_hierarchical", "sample_stratified", "RayDataset",
    "TrainConfig", "TrainingDiverged", "TrainState", "train", "train_step",
    "write_loss_csv",
]
