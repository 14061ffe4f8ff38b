"""Procedural paired-data synthesis: face proxies, parametric frames, shadows."""

from deglass.synth.dataset import (
    SynthConfig,
    generate_sample,
    load_manifest,
    read_sample,
    split_ids,
    synth_dataset,
    write_sample,
)
from deglass.synth.domain import StylizeConfig, stylize_real_domain
from deglass.synth.face import FaceProxy, make_face_proxy
from deglass.synth.glasses import GlassesModel, make_glasses
from deglass.synth.render import (
    SHADOW_MASK_THRESHOLD,
    Camera,
    RenderSample,
    SceneConfig,
    compute_shadow_map,
    rasterize_frame,
    render_sample,
    sample_scene,
)

__all__ = [
    "SHADOW_MASK_THRESHOLD", "Camera", "FaceProxy", "GlassesModel", "RenderSample",
    "SceneConfig", "StylizeConfig", "SynthConfig", "compute_shadow_map", "generate_sample",
    "load_manifest", "make_face_proxy", "make_glasses", "rasterize_frame", "read_sample",
    "render_sample", "sample_scene", "split_ids", "stylize_real_domain", "synth_dataset",
    "write_sample",
]
