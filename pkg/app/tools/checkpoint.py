"""Binary checkpoints for ``LipMotionNet``.

Layout: magic ``3LMN``, one version byte, u32 length + canonical JSON of the
``ModelConfig`` (sorted keys, no whitespace), then every parameter (theta last
when present) as little-endian float64 in declaration order. Shapes follow from
the config, so the payload length is checked rather than stored.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import CheckpointError
from app.core.logging import logger
from app.tools.models.network_model import ModelConfig
from app.tools.models.prior_model import PriorVector
from app.tools.models.sequence_model import N_LIP_POINTS
from app.tools.network import LipMotionNet

MAGIC = b"3LMN"
VERSION = 1


def canonical_config(config: ModelConfig) -> bytes:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model: LipMotionNet) -> bytes:
    cfg = canonical_config(model.config)
    parts = [MAGIC, bytes([VERSION]), struct.pack("<I", len(cfg)), cfg]
    parts.extend(t.values.astype("<f8").tobytes() for t in model.parameters())
    return b"".join(parts)


def save_checkpoint(model: LipMotionNet, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    logger.info("checkpoint_saved", path=str(path), parameters=model.parameter_count())
    return path


def checkpoint_from_bytes(blob: bytes, source: str = "<bytes>") -> LipMotionNet:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a 3LMN checkpoint")
    if blob[4] != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {blob[4]}")
    (cfg_len,) = struct.unpack_from("<I", blob, 5)
    start = 9 + cfg_len
    if start > len(blob):
        raise CheckpointError(f"{source}: truncated config block")
    try:
        config = ModelConfig.model_validate_json(blob[9:start])
    except ValidationError as exc:
        raise CheckpointError(f"{source}: invalid config block: {exc.errors()[0]['msg']}")

    model = LipMotionNet(config, prior=None) if not config.ablation_mode.needs_prior else _shell(config)
    params = model.parameters()
    expected = sum(t.size for t in params) * 8
    payload = blob[start:]
    if len(payload) != expected:
        raise CheckpointError(f"{source}: expected {expected} parameter bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for t in params:
        t.values = flat[offset : offset + t.size].astype(np.float64).reshape(t.shape)
        offset += t.size
    return model


def _shell(config: ModelConfig) -> LipMotionNet:
    """Network for a prior mode whose theta is about to be overwritten."""
    return LipMotionNet(config, prior=PriorVector(base=np.full(N_LIP_POINTS, 0.5)))


def load_checkpoint(path: str | Path) -> LipMotionNet:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}")
    model = checkpoint_from_bytes(blob, str(path))
    logger.info("checkpoint_loaded", path=str(path), mode=model.config.ablation_mode.value)
    return model
