"""Graph skip-connection segmentation on synthetic data (C++ core)."""

from ._core import (
    ConfigError,
    DimensionError,
    GraphError,
    ManifestError,
    NumericError,
    ValidationError,
    __version__,
    bottom_m_select,
    build_dilated_knn,
    channel_entropy,
    count_parameters,
    default_config,
    dsc,
    evaluate,
    gen_data,
    generate,
    hd95,
    mae,
    miou,
    read_corpus,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
