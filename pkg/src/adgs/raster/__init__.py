from .projection import ALPHA_MAX, ALPHA_MIN, LOWPASS, T_STOP, Projection, project_gaussians
from .render import (GradBundle, RenderOutput, Splat2D, project_gaussian, render,
                     render_backward)

__all__ = [
    "ALPHA_MAX", "ALPHA_MIN", "LOWPASS", "T_STOP", "GradBundle", "Projection", "RenderOutput",
    "Splat2D", "project_gaussian", "project_gaussians", "render", "render_backward",
]
