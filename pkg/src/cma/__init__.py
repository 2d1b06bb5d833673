"""Cross-modal augmentation for few-shot multimodal classification.

A small numpy library that consumes precomputed text/image embedding
stores, builds five modality features per record (text, image,
normalized concatenation, and two cross-attention directions), trains
per-branch linear probes with a meta-linear ensemble on top, and runs
the episodic shots x seeds evaluation protocol with trimmed-mean
reporting, ablations, and domain-shift experiments.
"""

from .datastore import (
    Episode,
    FeatureRecord,
    FeatureStore,
    augment_with_labels,
    make_record,
    read_store,
    sample_episode,
    select_best_image,
    write_store,
)
from .errors import (
    BadMagicError,
    CmaError,
    ConfigError,
    DegenerateVectorError,
    DimensionError,
    DuplicateIdError,
    InsufficientPopulationError,
    InvalidRecordError,
    NumericError,
    StoreDimensionError,
    StoreFormatError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    UsageError,
)
from .fusion import (
    CrossAttentionParams,
    FeatureBundle,
    build_bundle,
    concat_normalized,
    cross_attend,
)
from .harness import (
    ProtocolConfig,
    ProtocolReport,
    accuracy,
    evaluate_accuracy,
    run_ablation,
    run_domain_shift,
    run_protocol,
    std_dev,
    trimmed_mean,
)
from .heads import (
    BranchHead,
    CmaModel,
    MetaHead,
    Prediction,
    branch_forward,
    cma_backward,
    cma_forward,
    cma_loss,
    cross_entropy,
    load_model,
    meta_forward,
    save_model,
)
from .numerics import affine, gradient_check, l2_normalize, softmax
from .optim import (
    AdamWState,
    TrainConfig,
    TrainHistory,
    adamw_step,
    init_model,
    load_train_config,
    train_episode,
)
from .synthetic import make_blob_store, make_complementary_store

__version__ = "0.1.0"
