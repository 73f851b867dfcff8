"""Two-stream lip motion network with a regional feedback gate.

Input layout is [batch, xyz, frames, landmarks]. The landmark-level stream sees
the gated input ``W * theta + W`` through a 5x5 convolution; the frame-level
stream sees the raw input through a 1x1 then a 3x1 (three adjacent frames)
convolution. Both give 32 channels by default and are concatenated before a
small residual backbone, global average pooling and the fc head.
"""

from __future__ import annotations

import math
from typing import (
    Dict,
    List,
    Optional,
    Tuple,
)

import numpy as np

from app.core.exceptions import (
    DimensionError,
    FeedbackError,
)
from app.core.logging import logger
from app.engine import tensor as T
from app.engine.tensor import DiffTensor
from app.tools.models.network_model import (
    AblationMode,
    FeedbackVector,
    ModelConfig,
)
from app.tools.models.prior_model import PriorVector
from app.tools.models.sequence_model import (
    N_FRAMES,
    N_LIP_POINTS,
)
from app.tools.prior import opposite_prior

NEUTRAL_FEEDBACK = 0.5
# every conv and hidden fc bias; the classifier bias starts at zero
BIAS_INIT = 0.01


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in), the ReLU-gain Kaiming bound."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_feedback(mode: AblationMode, prior: Optional[PriorVector]) -> Optional[FeedbackVector]:
    """theta_0: p for the prior mode, 1 - p for the opposed mode, 0.5 without prior, none for the baseline."""
    mode = AblationMode(mode)
    if not mode.has_feedback:
        return None
    if mode.needs_prior:
        if prior is None:
            raise FeedbackError(f"mode '{mode.value}' needs a fluctuation prior")
        values = prior.p if mode is AblationMode.RFM_PRIOR else opposite_prior(prior).p
    else:
        values = np.full(N_LIP_POINTS, NEUTRAL_FEEDBACK)
    return FeedbackVector(theta=DiffTensor(values, requires_grad=True, name="rfm.theta"))


def rfm_apply(w: DiffTensor, theta: DiffTensor) -> DiffTensor:
    """W * theta + W, i.e. each landmark scaled by (1 + theta)."""
    return T.add(T.hadamard_landmark(w, theta), w)


def update_feedback(feedback: Optional[FeedbackVector], grad: Optional[np.ndarray], lr: float) -> DiffTensor:
    """Plain gradient step theta <- theta - lr * grad, applied in place."""
    if feedback is None:
        raise FeedbackError("the baseline network has no feedback vector to update")
    if grad is not None:
        feedback.theta.values -= lr * np.asarray(grad, dtype=np.float64)
    return feedback.theta


class LipMotionNet:
    """Parameters live in ``self.params`` in declaration order; theta is kept apart in ``self.feedback``."""

    def __init__(self, config: ModelConfig, prior: Optional[PriorVector] = None, seed: int = 0):
        self.config = config
        self.params: Dict[str, DiffTensor] = {}
        self._blocks: List[Tuple[str, bool]] = []
        self._stage_starts: List[int] = []
        rng = np.random.default_rng(seed)

        c_lm, c_fr = config.landmark_stream_channels, config.frame_stream_channels
        self._conv(rng, "landmark.conv", c_lm, 3, 5, 5)
        self._conv(rng, "frame.point_conv", c_fr, 3, 1, 1)
        self._conv(rng, "frame.temporal_conv", c_fr, c_fr, 3, 1)

        in_ch = c_lm + c_fr
        for s, (blocks, width) in enumerate(config.backbone_stages):
            self._stage_starts.append(len(self._blocks))
            for b in range(blocks):
                prefix = f"backbone.{s}.{b}"
                self._conv(rng, f"{prefix}.conv1", width, in_ch, 3, 3)
                self._conv(rng, f"{prefix}.conv2", width, width, 3, 3)
                project = in_ch != width
                if project:
                    self._conv(rng, f"{prefix}.proj", width, in_ch, 1, 1)
                self._blocks.append((prefix, project))
                in_ch = width

        dims = [in_ch, *config.fc_dims]
        last = len(config.fc_dims) - 1
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            # zero classifier: step-0 logits are uniform, loss starts at ln(num_speakers)
            if i == last:
                weight, bias = np.zeros((d_in, d_out)), np.zeros(d_out)
            else:
                weight, bias = kaiming_uniform(rng, (d_in, d_out), d_in), np.full(d_out, BIAS_INIT)
            self.params[f"fc.{i}.weight"] = DiffTensor(weight, True, f"fc.{i}.weight")
            self.params[f"fc.{i}.bias"] = DiffTensor(bias, True, f"fc.{i}.bias")

        self.feedback = init_feedback(config.ablation_mode, prior)
        logger.debug(
            "network_built",
            mode=config.ablation_mode.value,
            parameters=self.parameter_count(),
            stages=config.backbone_stages,
        )

    def _conv(self, rng: np.random.Generator, name: str, k: int, c: int, kh: int, kw: int) -> None:
        weight = kaiming_uniform(rng, (k, c, kh, kw), c * kh * kw)
        self.params[f"{name}.weight"] = DiffTensor(weight, True, f"{name}.weight")
        self.params[f"{name}.bias"] = DiffTensor(np.full(k, BIAS_INIT), True, f"{name}.bias")

    def _apply_conv(self, name: str, x: DiffTensor, pad: Tuple[int, int]) -> DiffTensor:
        return T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], pad)

    # ───────────────────────────── parameters ─────────────────────────────
    def named_parameters(self) -> List[Tuple[str, DiffTensor]]:
        named = list(self.params.items())
        if self.feedback is not None:
            named.append(("rfm.theta", self.feedback.theta))
        return named

    def parameters(self) -> List[DiffTensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    # ───────────────────────────── streams ────────────────────────────────
    def landmark_stream(self, gated: DiffTensor) -> DiffTensor:
        return T.relu(self._apply_conv("landmark.conv", gated, (2, 2)))

    def frame_stream(self, w: DiffTensor) -> DiffTensor:
        h = T.relu(self._apply_conv("frame.point_conv", w, (0, 0)))
        return T.relu(self._apply_conv("frame.temporal_conv", h, (1, 0)))

    def _residual_block(self, prefix: str, project: bool, x: DiffTensor) -> DiffTensor:
        h = T.relu(self._apply_conv(f"{prefix}.conv1", x, (1, 1)))
        h = self._apply_conv(f"{prefix}.conv2", h, (1, 1))
        skip = self._apply_conv(f"{prefix}.proj", x, (0, 0)) if project else x
        return T.relu(T.add(h, skip))

    def backbone(self, x: DiffTensor) -> DiffTensor:
        for i, (prefix, project) in enumerate(self._blocks):
            if i in self._stage_starts and i > 0:
                x = T.avg_pool2d(x, 2)
            x = self._residual_block(prefix, project, x)
        return x

    def head(self, x: DiffTensor) -> DiffTensor:
        n_fc = len(self.config.fc_dims)
        for i in range(n_fc):
            x = T.linear(x, self.params[f"fc.{i}.weight"], self.params[f"fc.{i}.bias"])
            if i < n_fc - 1:
                x = T.relu(x)
        return x

    def forward(self, batch) -> DiffTensor:
        """[N, 3, 28, 200] in mm -> logits [N, num_speakers]; coordinates are divided by ``input_scale_mm``."""
        w = T.as_tensor(batch)
        expected = (3, N_FRAMES, N_LIP_POINTS)
        if w.values.ndim != 4:
            raise DimensionError("forward", "rank", 4, w.values.ndim)
        for axis, label, want in zip((1, 2, 3), ("coordinate", "frame", "landmark"), expected):
            if w.shape[axis] != want:
                raise DimensionError("forward", label, want, w.shape[axis])
        w = DiffTensor(w.values / self.config.input_scale_mm)
        gated = rfm_apply(w, self.feedback.theta) if self.feedback is not None else w
        merged = T.concat_channels(self.landmark_stream(gated), self.frame_stream(w))
        pooled = T.global_avg_pool(self.backbone(merged))
        return self.head(pooled)

    __call__ = forward

    def predict(self, batch: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Logits as a plain array, evaluated in chunks."""
        chunks = [self.forward(batch[i : i + batch_size]).values for i in range(0, len(batch), batch_size)]
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.config.num_speakers))


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count of ``LipMotionNet(config)``, theta included when present."""
    c_lm, c_fr = config.landmark_stream_channels, config.frame_stream_channels
    total = c_lm * 3 * 25 + c_lm
    total += c_fr * 3 + c_fr
    total += c_fr * c_fr * 3 + c_fr
    in_ch = c_lm + c_fr
    for blocks, width in config.backbone_stages:
        for _ in range(blocks):
            total += width * in_ch * 9 + width + width * width * 9 + width
            if in_ch != width:
                total += width * in_ch + width
            in_ch = width
    dims = [in_ch, *config.fc_dims]
    total += sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if config.ablation_mode.has_feedback:
        total += N_LIP_POINTS
    return total
