"""stitchpano: tiled diffusion sampling for seamless 360-degree panoramas.

A denoiser-agnostic engine that fuses overlapping window denoisings by
per-cell weighted averaging, extends the loop with repeated pre-denoising
of a wraparound stitch block, and crops the extended canvas to a 2:1
equirectangular panorama whose left and right edges meet cleanly.  Ships
with mock backends for desk-scale experiments, an HTTP client for real
model servers, and the patch-based evaluation protocol (CLIP-score, FID,
seam ratio).
"""

__version__ = "0.1.0"

from .backends import (
    BackendConfig,
    ConcurrentDispatcher,
    MockSchedule,
    RemoteDenoiser,
    make_mock,
    mock_blur,
    mock_constant,
    mock_identity,
    mock_seeded_noise,
    remote_denoiser,
    with_concurrency,
)
from .captions import CaptionRule, prepare_caption
from .errors import (
    BackendError,
    BoundsError,
    ConfigError,
    DataError,
    DegenerateEmbeddingError,
    DimensionError,
    FormatError,
    InsufficientSamplesError,
    NumericalDomainError,
    ProtocolError,
    ShapeError,
    StitchPanoError,
    TransportError,
    UnsupportedChannelsError,
    UsageError,
)
from .evalkit import (
    EmbeddingSet,
    EvalReport,
    PatchLocation,
    clip_score,
    collect_embeddings,
    crop_patch,
    fid,
    load_embeddings,
    load_locations,
    matrix_sqrt_psd,
    sample_locations,
    save_embeddings,
    save_locations,
    seam_components,
    seam_discontinuity,
)
from .sampler import (
    MODE_MULTIDIFFUSION,
    MODE_STITCHDIFFUSION,
    Conditioning,
    DenoiseRequest,
    DenoiserHandle,
    RunResult,
    SamplerConfig,
    init_canvas,
    load_manifest,
    multidiffusion_step,
    run,
    stitchdiffusion_step,
    write_manifest,
)
from .tensors import (
    Canvas,
    Rng,
    derive_seed,
    export_image,
    gaussian_fill,
    import_image,
    ptsr_dumps,
    ptsr_loads,
    read_array,
    read_tensor,
    write_array,
    write_tensor,
)
from .tiling import (
    Region,
    StitchPlan,
    TilingPlan,
    WeightMap,
    coverage_map,
    extract_region,
    extract_stitch_block,
    extract_window,
    global_crop,
    plan_windows,
    scatter_accumulate,
    stitch_region,
    window_region,
)

__all__ = [
    "__version__",
    # tensors
    "Canvas", "Rng", "derive_seed", "gaussian_fill",
    "read_tensor", "write_tensor", "read_array", "write_array",
    "ptsr_dumps", "ptsr_loads", "export_image", "import_image",
    # tiling
    "TilingPlan", "StitchPlan", "Region", "WeightMap",
    "plan_windows", "extract_window", "extract_stitch_block", "extract_region",
    "window_region", "stitch_region", "scatter_accumulate", "coverage_map",
    "global_crop",
    # sampler
    "Conditioning", "DenoiseRequest", "DenoiserHandle", "SamplerConfig",
    "RunResult", "init_canvas", "multidiffusion_step", "stitchdiffusion_step",
    "run", "write_manifest", "load_manifest",
    "MODE_MULTIDIFFUSION", "MODE_STITCHDIFFUSION",
    # backends
    "MockSchedule", "BackendConfig", "RemoteDenoiser", "ConcurrentDispatcher",
    "mock_identity", "mock_constant", "mock_blur", "mock_seeded_noise",
    "make_mock", "remote_denoiser", "with_concurrency",
    # evalkit
    "PatchLocation", "EmbeddingSet", "EvalReport",
    "sample_locations", "crop_patch", "save_locations", "load_locations",
    "load_embeddings", "save_embeddings", "collect_embeddings",
    "clip_score", "matrix_sqrt_psd", "fid", "seam_discontinuity", "seam_components",
    # captions
    "CaptionRule", "prepare_caption",
    # errors
    "StitchPanoError", "DimensionError", "ShapeError", "BoundsError",
    "ConfigError", "FormatError", "UnsupportedChannelsError",
    "NumericalDomainError", "DegenerateEmbeddingError", "InsufficientSamplesError",
    "BackendError", "TransportError", "ProtocolError", "DataError", "UsageError",
]
