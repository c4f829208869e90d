from .backend import HAS_COMPILED, resolve_backend
from .backward import GradientSet, backward, rechain_rotation
from .config import RenderConfig
from .forward import RenderedImage, render, render_bruteforce, render_with_state
from .projection import CULLED, ScreenGaussian, project_cloud, project_gaussian

__all__ = [
    "HAS_COMPILED",
    "resolve_backend",
    "GradientSet",
    "backward",
    "rechain_rotation",
    "RenderConfig",
    "RenderedImage",
    "render",
    "render_bruteforce",
    "render_with_state",
    "CULLED",
    "ScreenGaussian",
    "project_cloud",
    "project_gaussian",
]
