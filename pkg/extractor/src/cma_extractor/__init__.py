"""Offline dual-encoder feature extraction into CMAF stores."""

from .cmaf import OutputRecord, write_cmaf, write_sidecar
from .encoders import EncoderError, HashEncoder, build_encoder, load_image
from .extract import ExtractionStats, cosine_best_index, extract, extract_file
from .manifest import DatasetManifest, ManifestError, ManifestItem, load_manifest

__version__ = "0.1.0"
