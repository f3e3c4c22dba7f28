"""Export pretrained encoder activations into padt tensor bundles."""

from .bundle import write_bundle
from .export import (
    ExportSpec,
    dump_outputs,
    export_pair,
    export_speech,
    export_text,
    read_wav_mono,
    resolve_layers,
)

__all__ = [
    "ExportSpec",
    "dump_outputs",
    "export_pair",
    "export_speech",
    "export_text",
    "read_wav_mono",
    "resolve_layers",
    "write_bundle",
]
