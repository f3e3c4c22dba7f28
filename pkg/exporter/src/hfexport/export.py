"""Extract hidden states and head-averaged attention from HF checkpoints.

Models run in eval mode under no_grad with eager attention (the sdpa kernels
do not return attention weights). Heads are averaged before export so the
bundles carry one row-stochastic map per selected layer.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .bundle import write_bundle

TARGET_SAMPLE_RATE = 16000


@dataclass
class ExportSpec:
    model_name: str
    kind: str                 # "text" | "speech"
    source: str               # sentence for text, wav path for speech
    layers: str = "all"       # "all" | "last" | comma-separated indices
    out_path: str = "bundle"


def resolve_layers(selection: str, depth: int) -> list[int]:
    if selection == "all":
        return list(range(depth))
    if selection == "last":
        return [depth - 1]
    try:
        layers = [int(part) for part in selection.split(",") if part.strip()]
    except ValueError as e:
        raise ValueError(f"bad layer selection {selection!r}") from e
    if not layers:
        raise ValueError("empty layer selection")
    for layer in layers:
        if not 0 <= layer < depth:
            raise ValueError(f"layer {layer} outside model depth {depth}")
    return layers


def read_wav_mono(path, target_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Load 16-bit PCM audio, mixed to mono and linearly resampled."""
    with wave.open(str(path), "rb") as fh:
        rate = fh.getframerate()
        n_channels = fh.getnchannels()
        width = fh.getsampwidth()
        frames = fh.readframes(fh.getnframes())
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    pcm = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    if n_channels > 1:
        pcm = pcm.reshape(-1, n_channels).mean(axis=1)
    if rate != target_rate:
        duration = pcm.shape[0] / rate
        n_out = int(round(duration * target_rate))
        pcm = np.interp(np.linspace(0.0, pcm.shape[0] - 1, n_out),
                        np.arange(pcm.shape[0]), pcm).astype(np.float32)
    return pcm


def dump_outputs(model, inputs: dict, layers: str) -> tuple[np.ndarray, np.ndarray]:
    """Run the model; return (hidden n x d, attention L' x n x n head-averaged)."""
    model.eval()
    with torch.no_grad():
        out = model(**inputs, output_attentions=True)
    hidden = out.last_hidden_state[0].cpu().numpy().astype(np.float32)
    attn_layers = out.attentions  # tuple of (1, heads, n, n)
    selected = resolve_layers(layers, len(attn_layers))
    maps = [attn_layers[i][0].mean(dim=0).cpu().numpy().astype(np.float32)
            for i in selected]
    return hidden, np.stack(maps, axis=0)


def load_text_model(name: str):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name)
    model = AutoModel.from_pretrained(name, attn_implementation="eager")
    return model, tokenizer


def load_speech_model(name: str):
    from transformers import AutoModel

    return AutoModel.from_pretrained(name, attn_implementation="eager")


def export_text(spec: ExportSpec, model=None, tokenizer=None) -> Path:
    if model is None or tokenizer is None:
        model, tokenizer = load_text_model(spec.model_name)
    encoded = tokenizer(spec.source, return_tensors="pt")
    hidden, attn = dump_outputs(model, dict(encoded), spec.layers)
    token_ids = encoded["input_ids"][0].cpu().numpy().astype(np.float32)
    return write_bundle(
        [("hidden", hidden, "hidden"), ("attention", attn, "attention"),
         ("tokens", token_ids, "tokens")],
        spec.out_path,
        meta={"model": spec.model_name, "kind": "text", "layers": spec.layers,
              "text": spec.source})


def export_speech(spec: ExportSpec, model=None) -> Path:
    if model is None:
        model = load_speech_model(spec.model_name)
    waveform = read_wav_mono(spec.source)
    inputs = {"input_values": torch.from_numpy(waveform)[None, :]}
    hidden, attn = dump_outputs(model, inputs, spec.layers)
    return write_bundle(
        [("hidden", hidden, "hidden"), ("attention", attn, "attention")],
        spec.out_path,
        meta={"model": spec.model_name, "kind": "speech", "layers": spec.layers,
              "audio": str(spec.source)})


def export_pair(spec_text: ExportSpec, spec_speech: ExportSpec) -> tuple[Path, Path]:
    return export_text(spec_text), export_speech(spec_speech)
