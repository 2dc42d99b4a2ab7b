"""Export shim: hook an ASR model's encoder frames, decoder taps, and logits
into the utterance-export interchange format consumed by the decoding engine.
"""

from .export import ExportEmptyError, ExportJob, export_corpus, resolve_model
from .manifest import ManifestEntry, load_manifest
from .stub import StubAsrModel
from .writer import UtteranceRecord, record_bytes, write_records

__version__ = "0.1.0"
