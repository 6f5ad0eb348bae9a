"""Checkpoint archive: named weight arrays plus a JSON header.

A checkpoint is a single zip holding `header.json` (model config,
vocabulary tokens and hash, provenance hashes) and `weights.npz` (the
state dict as named float arrays). Arrays round-trip bit-exactly, so a
reloaded model evaluates identically to the one that was saved.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from . import configio
from .model import CountingRecognizer, ModelConfig
from .vocab import SymbolVocabulary

FORMAT = "mathrec-checkpoint-v1"


class CheckpointError(RuntimeError):
    pass


def save(path, model: CountingRecognizer, vocab: SymbolVocabulary, extra: dict | None = None):
    header = {
        "format": FORMAT,
        "model_config": configio.to_dict(model.config),
        "vocab_tokens": vocab.tokens,
        "vocab_hash": vocab.content_hash(),
        "config_hash": configio.config_hash(model.config),
    }
    if extra:
        header.update(extra)
    arrays = {name: tensor.detach().cpu().numpy()
              for name, tensor in model.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
        zf.writestr("weights.npz", buf.getvalue())
    return path


def read_header(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
    if header.get("format") != FORMAT:
        raise CheckpointError(f"not a recognizer checkpoint: {path}")
    return header


def load(path):
    """Returns (model in eval mode, vocabulary, header)."""
    header = read_header(path)
    with zipfile.ZipFile(path) as zf:
        with zf.open("weights.npz") as fh:
            arrays = np.load(io.BytesIO(fh.read()))
            state = {name: torch.from_numpy(arrays[name]) for name in arrays.files}
    config = configio.from_dict(ModelConfig, header["model_config"])
    model = CountingRecognizer(config)
    model.load_state_dict(state)
    model.eval()
    vocab = SymbolVocabulary(header["vocab_tokens"])
    if vocab.content_hash() != header["vocab_hash"]:
        raise CheckpointError("checkpoint vocabulary hash does not match its tokens")
    return model, vocab, header
