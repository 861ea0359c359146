"""Onset detection network with multi-scale temporal context.

The network runs several convolutional stacks over the same log-Mel input
in parallel.  Every stack shares the frequency pooling plan (three 1:4 max
pools and a final 1:3 average pool collapse 229 bands to one) but pools
time by a different total factor, so with the default upsample factors
(1, 16, 64, 128) one 32 ms frame of stack output summarizes 32, 512, 2048
or 4096 ms of audio.  Pooled stacks are brought back to the input frame
rate by nearest-neighbor repetition, concatenated along features together
with the difficulty flag and the beat guide, and fed to a bidirectional
LSTM with a sigmoid head that scores every frame.

A single-scale baseline variant reproduces the classic step-placement
design: one unpooled-in-time conv stack whose output is flattened across
bands and projected to the recurrent width by a linear layer.

Structured dropout (DropBlock) zeroes square patches of conv activations
instead of single units; each instance carries a schedule fraction so the
trainer can ramp its strength over the first part of a run.  Plain
channel dropout is available as a fallback switch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from chartgen.audio import FRAME_MS, MEL_BANDS, MelSpectrogram
from chartgen.beats import BeatGuide
from chartgen.charts import ChartError, Difficulty

CHECKPOINT_SCHEMA = "onset-checkpoint/1"

MULTI_SCALE = "multi-scale"
BASELINE = "ddc-baseline"


@dataclass(frozen=True)
class ConvBlockSpec:
    """One conv block: 3x3 conv, BatchNorm, ReLU, optional pool and
    structured dropout ``(prob, block_size, schedule_fraction)``."""

    channels: int
    time_pool: int = 1
    freq_pool: int = 1
    dropblock: tuple[float, int, float] | None = None

    def __post_init__(self):
        if self.channels < 1:
            raise ChartError(f"channels must be >= 1, got {self.channels}")
        if self.time_pool < 1 or self.freq_pool < 1:
            raise ChartError("pool factors must be >= 1")
        if self.dropblock is not None:
            prob, size, sched = self.dropblock
            if not 0.0 <= prob < 1.0:
                raise ChartError(f"dropblock prob must lie in [0, 1), got {prob}")
            if size < 1:
                raise ChartError(f"dropblock size must be >= 1, got {size}")
            if sched <= 0.0 or sched > 1.0:
                raise ChartError(f"dropblock schedule must lie in (0, 1], got {sched}")


@dataclass(frozen=True)
class ConvStackSpec:
    """A sequence of conv blocks plus a final frequency average pool."""

    blocks: tuple[ConvBlockSpec, ...]
    avg_freq_pool: int = 3

    def __post_init__(self):
        if not self.blocks:
            raise ChartError("a conv stack needs at least one block")
        if self.avg_freq_pool < 1:
            raise ChartError("avg_freq_pool must be >= 1")

    @property
    def upsample(self) -> int:
        """Factor restoring the input frame rate; equals the product of
        the stack's time pools by construction."""
        out = 1
        for b in self.blocks:
            out *= b.time_pool
        return out

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].channels

    def out_bands(self, in_bands: int) -> int:
        bands = in_bands
        for b in self.blocks:
            bands //= b.freq_pool
        bands //= self.avg_freq_pool
        if bands < 1:
            raise ChartError(
                f"frequency pooling collapses {in_bands} bands below 1"
            )
        return bands

    def freq_plan(self) -> tuple[int, ...]:
        return tuple(b.freq_pool for b in self.blocks) + (self.avg_freq_pool,)


def multi_scale_spec(
    upsample_factors: Sequence[int] = (1, 16, 64, 128), base_channels: int = 48
) -> tuple[ConvStackSpec, ...]:
    """Conv stacks for the multi-scale model, one per upsample factor.

    Factor 1 uses no time pooling; any other factor f must be a positive
    multiple of 8 and is realized as time pools (4, 2, f / 8).  Channel
    widths scale from ``base_channels`` (the default 48 gives the
    published 48/48/96 core with a 384-channel top for the unpooled stack
    and 192 for the pooled ones).
    """
    stacks = []
    for f_up in upsample_factors:
        if f_up == 1:
            tpools = (1, 1, 1)
        elif f_up >= 8 and f_up % 8 == 0:
            tpools = (4, 2, f_up // 8)
        else:
            raise ChartError(
                f"upsample factor must be 1 or a positive multiple of 8, got {f_up}"
            )
        top = 8 * base_channels if f_up == 1 else 4 * base_channels
        blocks = (
            ConvBlockSpec(base_channels, tpools[0], 4, dropblock=(0.25, 5, 0.25)),
            ConvBlockSpec(base_channels, tpools[1], 4, dropblock=(0.25, 3, 1.0)),
            ConvBlockSpec(2 * base_channels, tpools[2], 4),
            ConvBlockSpec(top, 1, 1),
        )
        stacks.append(ConvStackSpec(blocks=blocks, avg_freq_pool=3))
    return tuple(stacks)


def baseline_spec(base_channels: int = 48) -> tuple[ConvStackSpec, ...]:
    """Single-scale baseline stack: 48/48/96 channels, two 1:2 frequency
    pools, no time pooling, bands kept (flattened by the model head)."""
    blocks = (
        ConvBlockSpec(base_channels, 1, 2),
        ConvBlockSpec(base_channels, 1, 2),
        ConvBlockSpec(2 * base_channels, 1, 1),
    )
    return (ConvStackSpec(blocks=blocks, avg_freq_pool=1),)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild an :class:`OnsetNet`.

    Attributes:
        stacks: Conv stack specs run in parallel.
        variant: ``"multi-scale"`` (concat stack outputs directly) or
            ``"ddc-baseline"`` (flatten bands, project with a linear layer).
        mel_bands: Input band count.
        recurrent_width: Total BiLSTM width across both directions.
        recurrent_layers: Number of stacked LSTM layers.
        dropout_linear: Dropout before and after the recurrent block.
        dropout_recurrent: Dropout between LSTM layers.
        structured_dropout: Use DropBlock in conv stacks; plain channel
            dropout when False.
        baseline_hidden: Width of the baseline's projection layer.
    """

    stacks: tuple[ConvStackSpec, ...] = field(default_factory=multi_scale_spec)
    variant: str = MULTI_SCALE
    mel_bands: int = MEL_BANDS
    recurrent_width: int = 768
    recurrent_layers: int = 2
    dropout_linear: float = 0.3
    dropout_recurrent: float = 0.1
    structured_dropout: bool = True
    baseline_hidden: int = 768

    def __post_init__(self):
        if self.variant not in (MULTI_SCALE, BASELINE):
            raise ChartError(f"unknown model variant {self.variant!r}")
        if not self.stacks:
            raise ChartError("model needs at least one conv stack")
        if self.variant == BASELINE and len(self.stacks) != 1:
            raise ChartError("the baseline variant uses exactly one conv stack")
        plans = {s.freq_plan() for s in self.stacks}
        if len(plans) != 1:
            raise ChartError("all stacks must share one frequency pooling plan")
        if self.recurrent_width < 2 or self.recurrent_width % 2:
            raise ChartError("recurrent_width must be an even total across directions")
        if self.recurrent_layers < 1:
            raise ChartError("recurrent_layers must be >= 1")
        for name in ("dropout_linear", "dropout_recurrent"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ChartError(f"{name} must lie in [0, 1), got {p}")
        for s in self.stacks:
            s.out_bands(self.mel_bands)

    @property
    def time_pad_multiple(self) -> int:
        return math.lcm(*(s.upsample for s in self.stacks))

    @property
    def concat_width(self) -> int:
        """Feature width after stack concatenation, before flag and guide."""
        return sum(s.out_channels * s.out_bands(self.mel_bands) for s in self.stacks)

    @property
    def recurrent_input_width(self) -> int:
        base = self.baseline_hidden if self.variant == BASELINE else self.concat_width
        return base + 2


def receptive_scale(
    stack_index: int,
    config: ModelConfig | None = None,
    frame_ms: float = FRAME_MS,
) -> float:
    """Temporal span in milliseconds of one output step of a stack.

    ``stack_index`` is 1-based.  With the default arrangement the four
    stacks cover 32, 512, 2048 and 4096 ms.
    """
    config = config or ModelConfig()
    if not 1 <= stack_index <= len(config.stacks):
        raise ChartError(
            f"stack_index must lie in [1, {len(config.stacks)}], got {stack_index}"
        )
    return frame_ms * config.stacks[stack_index - 1].upsample


class DropBlock2d(nn.Module):
    """Structured dropout that removes square spatial patches.

    Args:
        drop_prob: Target fraction of activations dropped at full strength.
        block_size: Side of the square patches.
        schedule_fraction: Fraction of training over which strength ramps
            linearly from 0 to ``drop_prob``; the trainer drives it via
            :func:`set_training_progress`.
    """

    def __init__(self, drop_prob: float, block_size: int, schedule_fraction: float = 1.0):
        super().__init__()
        self.drop_prob = drop_prob
        self.block_size = block_size
        self.schedule_fraction = schedule_fraction
        self.progress = 1.0

    def effective_prob(self) -> float:
        ramp = min(1.0, self.progress / self.schedule_fraction)
        return self.drop_prob * ramp

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        p = self.effective_prob()
        if not self.training or p <= 0.0:
            return x
        _, _, h, w = x.shape
        size = min(self.block_size, h, w)
        valid = (h - size + 1) * (w - size + 1)
        gamma = min(1.0, p * h * w / (size * size * valid))
        centers = torch.bernoulli(
            torch.full(
                (x.shape[0], 1, h - size + 1, w - size + 1),
                gamma,
                device=x.device,
                dtype=x.dtype,
            )
        )
        # A center at (i, j) zeroes the size x size block whose top-left
        # corner is (i, j); dilating the padded center map with a max pool
        # marks exactly the covered positions.
        padded = F.pad(centers, [size - 1, size - 1, size - 1, size - 1])
        block = F.max_pool2d(padded, kernel_size=size, stride=1)
        keep = 1.0 - block
        scale = keep.numel() / keep.sum().clamp(min=1.0)
        return x * keep * scale

    def extra_repr(self) -> str:
        return (
            f"drop_prob={self.drop_prob}, block_size={self.block_size}, "
            f"schedule_fraction={self.schedule_fraction}"
        )


def set_training_progress(model: nn.Module, progress: float) -> None:
    """Propagate normalized training progress (0 to 1) to every
    :class:`DropBlock2d` so scheduled instances can ramp up."""
    progress = min(max(progress, 0.0), 1.0)
    for module in model.modules():
        if isinstance(module, DropBlock2d):
            module.progress = progress


class _ConvStack(nn.Module):
    def __init__(self, spec: ConvStackSpec, structured: bool):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 1
        for block in spec.blocks:
            layers.append(nn.Conv2d(in_ch, block.channels, kernel_size=3, padding=1))
            layers.append(nn.BatchNorm2d(block.channels))
            layers.append(nn.ReLU(inplace=True))
            if block.time_pool > 1 or block.freq_pool > 1:
                layers.append(nn.MaxPool2d((block.time_pool, block.freq_pool)))
            if block.dropblock is not None:
                prob, size, sched = block.dropblock
                if structured:
                    layers.append(DropBlock2d(prob, size, sched))
                else:
                    layers.append(nn.Dropout2d(prob))
            in_ch = block.channels
        if spec.avg_freq_pool > 1:
            layers.append(nn.AvgPool2d((1, spec.avg_freq_pool)))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class OnsetNet(nn.Module):
    """Frame-level onset probability model.

    Input is a log-Mel spectrogram ``(batch, frames, bands)``, the beat
    guide ``(batch, frames)`` and a per-example difficulty flag; output is
    a probability per frame.  The frame axis is zero-padded internally to
    the least common multiple of the stack upsample factors and cropped
    back, so any frame count works.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.stacks = nn.ModuleList(
            _ConvStack(s, config.structured_dropout) for s in config.stacks
        )
        if config.variant == BASELINE:
            self.project = nn.Linear(config.concat_width, config.baseline_hidden)
        else:
            self.project = None
        self.input_dropout = nn.Dropout(config.dropout_linear)
        self.rnn = nn.LSTM(
            input_size=config.recurrent_input_width,
            hidden_size=config.recurrent_width // 2,
            num_layers=config.recurrent_layers,
            batch_first=True,
            bidirectional=True,
            dropout=config.dropout_recurrent if config.recurrent_layers > 1 else 0.0,
        )
        self.output_dropout = nn.Dropout(config.dropout_linear)
        self.head = nn.Linear(config.recurrent_width, 1)

    def stack_features(self, spec: torch.Tensor) -> list[torch.Tensor]:
        """Per-stack conv outputs before upsampling, each
        ``(batch, channels, frames / upsample, bands_out)``.

        ``spec`` frames must already be a multiple of every stack's
        upsample factor.
        """
        x = spec.unsqueeze(1)
        return [stack(x) for stack in self.stacks]

    def combined_features(self, spec: torch.Tensor) -> torch.Tensor:
        """Upsampled, cropped and concatenated stack features
        ``(batch, frames, concat_width)``."""
        batch, frames, _ = spec.shape
        multiple = self.config.time_pad_multiple
        padded_frames = math.ceil(frames / multiple) * multiple
        if padded_frames != frames:
            spec = F.pad(spec, [0, 0, 0, padded_frames - frames])
        feats = []
        for stack_spec, out in zip(self.config.stacks, self.stack_features(spec)):
            if stack_spec.upsample > 1:
                out = out.repeat_interleave(stack_spec.upsample, dim=2)
            out = out[:, :, :frames, :]
            b, c, t, f_bands = out.shape
            feats.append(out.permute(0, 2, 1, 3).reshape(b, t, c * f_bands))
        return torch.cat(feats, dim=2)

    def forward(
        self, spec: torch.Tensor, guide: torch.Tensor, flags: torch.Tensor
    ) -> torch.Tensor:
        """Onset probabilities per frame.

        Args:
            spec: ``(batch, frames, bands)`` log-Mel values.
            guide: ``(batch, frames)`` beat guide in {0, 1, 2}.
            flags: ``(batch,)`` difficulty flags (10 to 50).

        Returns:
            ``(batch, frames)`` probabilities in (0, 1).
        """
        if spec.dim() != 3:
            raise ChartError("expected spec of shape (batch, frames, bands)")
        if spec.shape[2] != self.config.mel_bands:
            raise ChartError(
                f"expected {self.config.mel_bands} bands, got {spec.shape[2]}"
            )
        batch, frames, _ = spec.shape
        z = self.combined_features(spec)
        if self.project is not None:
            z = self.project(z)
        z = self.input_dropout(z)
        flag_col = flags.to(z.dtype).view(batch, 1, 1).expand(batch, frames, 1)
        guide_col = guide.to(z.dtype).unsqueeze(2)
        z = torch.cat([z, flag_col, guide_col], dim=2)
        out, _ = self.rnn(z)
        out = self.output_dropout(out)
        return torch.sigmoid(self.head(out).squeeze(2))


@dataclass(frozen=True)
class PredictionSeries:
    """Per-frame onset probabilities for one (song, difficulty)."""

    values: np.ndarray
    frame_ms: float = FRAME_MS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ChartError("prediction series must be one-dimensional")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def predict_series(
    model: OnsetNet,
    mel: MelSpectrogram,
    guide: BeatGuide,
    difficulty: Difficulty,
) -> PredictionSeries:
    """Run the model on one full song in eval mode."""
    if mel.num_frames != len(guide):
        raise ChartError("spectrogram and beat guide frame counts differ")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            spec = torch.from_numpy(mel.values).float().unsqueeze(0)
            g = torch.from_numpy(guide.values.astype(np.float32)).unsqueeze(0)
            flag = torch.tensor([float(difficulty.flag)])
            probs = model(spec, g, flag)[0].numpy().astype(np.float64)
    finally:
        model.train(was_training)
    return PredictionSeries(values=probs, frame_ms=mel.frame_ms)


def model_config_to_dict(config: ModelConfig) -> dict[str, Any]:
    d = asdict(config)
    d["stacks"] = [
        {
            "blocks": [
                {
                    "channels": b.channels,
                    "time_pool": b.time_pool,
                    "freq_pool": b.freq_pool,
                    "dropblock": list(b.dropblock) if b.dropblock else None,
                }
                for b in s.blocks
            ],
            "avg_freq_pool": s.avg_freq_pool,
        }
        for s in config.stacks
    ]
    return d


def model_config_from_dict(d: dict[str, Any]) -> ModelConfig:
    stacks = tuple(
        ConvStackSpec(
            blocks=tuple(
                ConvBlockSpec(
                    channels=b["channels"],
                    time_pool=b["time_pool"],
                    freq_pool=b["freq_pool"],
                    dropblock=tuple(b["dropblock"]) if b.get("dropblock") else None,
                )
                for b in s["blocks"]
            ),
            avg_freq_pool=s["avg_freq_pool"],
        )
        for s in d["stacks"]
    )
    rest = {k: v for k, v in d.items() if k != "stacks"}
    return ModelConfig(stacks=stacks, **rest)


def save_checkpoint(
    path: str | Path, model: OnsetNet, extra: dict[str, Any] | None = None
) -> None:
    """Write model weights plus config under a versioned schema id."""
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "model_config": model_config_to_dict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> tuple[OnsetNet, dict[str, Any]]:
    """Rebuild a model from :func:`save_checkpoint` output.

    Returns:
        ``(model, extra)`` where ``extra`` is the metadata dict given at
        save time.

    Raises:
        ChartError: If the file does not carry the expected schema id.
    """
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ChartError(f"{path}: not a {CHECKPOINT_SCHEMA} checkpoint")
    model = OnsetNet(model_config_from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
