"""Open-world relation discovery over embedding vectors."""

from ._core import (
    GmmModel,
    KMeansResult,
    MixoreError,
    Projection,
    __version__,
    ari,
    bcubed,
    decode,
    encode,
    fit_gmm,
    fit_sae,
    hungarian_align,
    kmeans,
    mapping_scores,
    purity,
    run_pipeline,
    select_outliers,
    synth,
    v_measure,
)

__all__ = [
    "GmmModel",
    "KMeansResult",
    "MixoreError",
    "Projection",
    "__version__",
    "ari",
    "bcubed",
    "decode",
    "encode",
    "fit_gmm",
    "fit_sae",
    "hungarian_align",
    "kmeans",
    "mapping_scores",
    "purity",
    "run_pipeline",
    "select_outliers",
    "synth",
    "v_measure",
]
