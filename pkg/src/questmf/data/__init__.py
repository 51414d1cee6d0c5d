"""Session data: in-memory model, file formats and the synthetic generator."""

from .io import (
    FeatureFormatError,
    ManifestError,
    SessionDescriptor,
    load_dataset,
    load_session,
    parse_manifest,
    read_feature_matrix,
    read_transcript,
    write_feature_matrix,
    write_transcript,
)
from .sessions import (
    MAX_TURNS,
    MODALITIES,
    N_QUESTIONS,
    QUESTIONS,
    SPLITS,
    DataError,
    Dataset,
    PaddedBatch,
    Session,
    Turn,
    aggregate_turn_window,
    build_padded_batch,
)
from .synth import SynthConfig, synth_generate, write_dataset
