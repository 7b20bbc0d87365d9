from . import (
    ascii_grid,
    cli,
    config,
    embedding,
    errors,
    fusion,
    gft,
    metrics,
    parallel,
    prior,
    probe,
    raster,
    sampling,
    token_fuse,
    utils,
    vector,
)
from .ascii_grid import read_ascii_grid, write_ascii_grid
from .config import (
    Finding,
    LoadedConfig,
    PipelineConfig,
    load_config,
    read_config,
    validate,
)
from .embedding import (
    EmbeddingSet,
    GroupSimilarity,
    PcaColors,
    PrincipalComponents,
    cosine_disagreement,
    cosine_distance_map,
    pairwise_cosine,
    pca_rgb,
    principal_components,
    read_embeddings_csv,
    write_embeddings_csv,
)
from .errors import (
    AlignmentError,
    DataError,
    DegenerateError,
    FormatError,
    GeofuseError,
    KindError,
    MappingError,
    ParameterError,
    ParseError,
    ShapeError,
    UnsupportedFormatError,
)
from .fusion import (
    ChannelProvenance,
    ChannelSpec,
    FusedTensor,
    NormRule,
    center_crop,
    proc_stack,
    stack_channels,
)
from .gft import read_gft, read_gft_matrix, write_gft, write_gft_matrix
from .metrics import (
    MultiLabelResult,
    SeedSummary,
    SegmentationResult,
    average_precision,
    format_report,
    match_point,
    mean_squared_error,
    multilabel_metrics,
    r_squared,
    scores_from_confusion,
    segmentation_metrics,
    summarize_seeds,
)
from .prior import (
    Boost,
    BoostSpec,
    CoOccurrenceMatrix,
    PriorConfig,
    PriorManifest,
    PriorStack,
    boost_and_renormalize,
    estimate_cooccurrence,
    generate_prior,
    prior_from_coarse,
    read_cooccurrence,
    write_cooccurrence,
)
from .probe import (
    RidgeResult,
    data_efficiency_experiment,
    data_efficiency_trial,
    ridge_fit,
    ridge_probe,
)
from .raster import (
    GeoTransform,
    Grid,
    Kernel,
    gaussian_blur,
    gaussian_kernel,
    gaussian_kernel_1d,
    pixel_centers,
    resample,
)
from .sampling import (
    SplitMix64,
    SubsetPlan,
    epoch_schedule,
    shuffled_range,
    subset_sample,
    subset_size,
    write_subset_plan,
)
from .token_fuse import (
    EncoderBlockWeights,
    LocationEncoder,
    PatchEmbedding,
    Projection,
    StubLocationEncoder,
    TokenSequence,
    attention_weights,
    build_token_sequence,
    encode_location_stub,
    encoder_block_backward,
    encoder_block_forward,
    init_pos_embed,
    init_registers,
    patchify,
    project_embedding,
)
from .vector import (
    BinaryMask,
    ClassMap,
    ClassMapEntry,
    Feature,
    Geometry,
    TagSelector,
    VectorLayer,
    binary_mask,
    classes_from_rgb,
    load_builtin_classmap,
    parse_classmap,
    parse_geojson,
    rasterize_classes,
    to_rgb_raster,
    unmatched_tags,
)

__all__ = [
    "ascii_grid",
    "cli",
    "config",
    "embedding",
    "errors",
    "fusion",
    "gft",
    "metrics",
    "parallel",
    "prior",
    "probe",
    "raster",
    "sampling",
    "token_fuse",
    "utils",
    "vector",
    "read_ascii_grid",
    "write_ascii_grid",
    "Finding",
    "LoadedConfig",
    "PipelineConfig",
    "load_config",
    "read_config",
    "validate",
    "EmbeddingSet",
    "GroupSimilarity",
    "PcaColors",
    "PrincipalComponents",
    "cosine_disagreement",
    "cosine_distance_map",
    "pairwise_cosine",
    "pca_rgb",
    "principal_components",
    "read_embeddings_csv",
    "write_embeddings_csv",
    "AlignmentError",
    "DataError",
    "DegenerateError",
    "FormatError",
    "GeofuseError",
    "KindError",
    "MappingError",
    "ParameterError",
    "ParseError",
    "ShapeError",
    "UnsupportedFormatError",
    "ChannelProvenance",
    "ChannelSpec",
    "FusedTensor",
    "NormRule",
    "center_crop",
    "proc_stack",
    "stack_channels",
    "read_gft",
    "read_gft_matrix",
    "write_gft",
    "write_gft_matrix",
    "MultiLabelResult",
    "SeedSummary",
    "SegmentationResult",
    "average_precision",
    "format_report",
    "match_point",
    "mean_squared_error",
    "multilabel_metrics",
    "r_squared",
    "scores_from_confusion",
    "segmentation_metrics",
    "summarize_seeds",
    "Boost",
    "BoostSpec",
    "CoOccurrenceMatrix",
    "PriorConfig",
    "PriorManifest",
    "PriorStack",
    "boost_and_renormalize",
    "estimate_cooccurrence",
    "generate_prior",
    "prior_from_coarse",
    "read_cooccurrence",
    "write_cooccurrence",
    "RidgeResult",
    "data_efficiency_experiment",
    "data_efficiency_trial",
    "ridge_fit",
    "ridge_probe",
    "GeoTransform",
    "Grid",
    "Kernel",
    "gaussian_blur",
    "gaussian_kernel",
    "gaussian_kernel_1d",
    "pixel_centers",
    "resample",
    "SplitMix64",
    "SubsetPlan",
    "epoch_schedule",
    "shuffled_range",
    "subset_sample",
    "subset_size",
    "write_subset_plan",
    "EncoderBlockWeights",
    "LocationEncoder",
    "PatchEmbedding",
    "Projection",
    "StubLocationEncoder",
    "TokenSequence",
    "attention_weights",
    "build_token_sequence",
    "encode_location_stub",
    "encoder_block_backward",
    "encoder_block_forward",
    "init_pos_embed",
    "init_registers",
    "patchify",
    "project_embedding",
    "BinaryMask",
    "ClassMap",
    "ClassMapEntry",
    "Feature",
    "Geometry",
    "TagSelector",
    "VectorLayer",
    "binary_mask",
    "classes_from_rgb",
    "load_builtin_classmap",
    "parse_classmap",
    "parse_geojson",
    "rasterize_classes",
    "to_rgb_raster",
    "unmatched_tags",
]
