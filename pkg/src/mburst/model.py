"""Unimodal / multimodal architectures and their learning passes.

Each modality channel is ``conv -> conv -> flatten -> dense(embed)`` with
ReLU units; the embeddings are concatenated and fed to a sigmoid dense head
with one unit per mask bin. ``mburst`` builds every layer as a burst layer,
the ``*-bp`` variants use backprop layers of identical shape.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baseline import BPConv2dLayer, BPDenseLayer
from .burst import BurstConfig, BurstConv2dLayer, BurstDenseLayer
from .loss_opt import Adam, AdamState, WeightedBceConfig, wbce_grad, wbce_loss
from .tensor import Conv2dSpec, DimensionError, Tensor, as_tensor, load_mbt1, make_rng, save_mbt1

VARIANTS = ("unimodal-bp", "multimodal-bp", "mburst")


@dataclass(frozen=True)
class ArchitectureConfig:
    audio_input: tuple[int, int, int] = (1, 8, 64)
    visual_input: tuple[int, int, int] = (1, 24, 24)
    conv_channels: int = 8
    audio_stride: int = 1
    visual_stride: int = 2
    kernel: int = 3
    padding: int = 1
    embed_units: int = 64
    mask_bins: int = 64

    @classmethod
    def desk(cls) -> "ArchitectureConfig":
        return cls()

    @classmethod
    def full(cls) -> "ArchitectureConfig":
        """Full-resolution preset: 500 frequency bins, 50x92 lip crops, 32 channels."""
        return cls(audio_input=(1, 8, 500), visual_input=(1, 50, 92), conv_channels=32, embed_units=256, mask_bins=500)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        d = dict(d)
        for k in ("audio_input", "visual_input"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def conv_specs(self, modality: str) -> list[Conv2dSpec]:
        in_ch = (self.audio_input if modality == "audio" else self.visual_input)[0]
        stride = self.audio_stride if modality == "audio" else self.visual_stride
        c = self.conv_channels
        k, p = self.kernel, self.padding
        return [Conv2dSpec(in_ch, c, k, k, stride, p), Conv2dSpec(c, c, k, k, stride, p)]

    def map_shapes(self, modality: str) -> list[tuple[int, int, int]]:
        """(C, H, W) after each conv of the channel."""
        _, h, w = self.audio_input if modality == "audio" else self.visual_input
        shapes = []
        for spec in self.conv_specs(modality):
            h, w = spec.output_hw(h, w)
            shapes.append((spec.out_channels, h, w))
        return shapes

    def flat_size(self, modality: str) -> int:
        return int(np.prod(self.map_shapes(modality)[-1]))


class ModelGraph:
    """Layer stacks for one variant plus the shared head."""

    def __init__(
        self,
        variant: str,
        arch: ArchitectureConfig = ArchitectureConfig(),
        seed: int = 0,
        burst_cfg: BurstConfig = BurstConfig(),
        feedback_init: str = "symmetric",
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant, self.arch, self.seed = variant, arch, seed
        self.burst_cfg, self.feedback_init = burst_cfg, feedback_init
        self.epoch = 0
        rng = make_rng(seed, "weights")
        self.modalities = ("audio",) if variant == "unimodal-bp" else ("audio", "visual")
        self.channels = {m: self._build_channel(m, rng) for m in self.modalities}
        n_head_in = arch.embed_units * len(self.modalities)
        self.head = self._dense(n_head_in, arch.mask_bins, "sigmoid", rng)
        self.activity: list[Tensor] = []

    @property
    def is_burst(self) -> bool:
        return self.variant == "mburst"

    def _dense(self, n_in, n_out, act, rng):
        if self.is_burst:
            return BurstDenseLayer(n_in, n_out, act, rng=rng, feedback_init=self.feedback_init)
        return BPDenseLayer(n_in, n_out, act, rng=rng)

    def _conv(self, spec, rng):
        if self.is_burst:
            return BurstConv2dLayer(spec, "relu", rng=rng, feedback_init=self.feedback_init)
        return BPConv2dLayer(spec, "relu", rng=rng)

    def _build_channel(self, modality, rng):
        convs = [self._conv(s, rng) for s in self.arch.conv_specs(modality)]
        return [*convs, self._dense(self.arch.flat_size(modality), self.arch.embed_units, "relu", rng)]

    # -- parameters -----------------------------------------------------------

    def named_layers(self):
        for m in self.modalities:
            for i, layer in enumerate(self.channels[m]):
                yield f"{m}.{i}", layer
        yield "head", self.head

    def parameters(self) -> dict[str, Tensor]:
        return {f"{name}.{p}": getattr(layer, p) for name, layer in self.named_layers() for p in layer.param_names()}

    def parameter_count(self) -> int:
        return sum(layer.W.size for _, layer in self.named_layers())

    # -- passes ---------------------------------------------------------------

    def _inputs(self, batch) -> dict[str, Tensor]:
        ins = {"audio": as_tensor(batch.audio)}
        if "visual" in self.modalities:
            ins["visual"] = as_tensor(batch.visual)
        for m, x in ins.items():
            expected = self.arch.audio_input if m == "audio" else self.arch.visual_input
            if x.ndim != 4 or tuple(x.shape[1:]) != tuple(expected):
                raise DimensionError(f"{m} input has shape {x.shape}, expected [B,{','.join(map(str, expected))}]")
        return ins

    def forward(self, batch) -> Tensor:
        """Mask probabilities [B, F]; records hidden event rates in ``self.activity``."""
        embeds, self.activity = [], []
        for m, x in self._inputs(batch).items():
            conv1, conv2, embed = self.channels[m]
            a = conv1.forward(x)
            c = conv2.forward(a)
            z = embed.forward(c.reshape(c.shape[0], -1))
            self.activity += [a, c, z]
            embeds.append(z)
        return self.head.forward(np.concatenate(embeds, axis=1))

    def gradients(self, batch, wbce_cfg: WeightedBceConfig) -> tuple[float, dict[str, Tensor]]:
        """Forward, loss and the per-parameter (pseudo-)gradients."""
        probs = self.forward(batch)
        target = as_tensor(batch.mask)
        loss = wbce_loss(probs, target, wbce_cfg)
        # per-sample derivative: layers average their updates over the batch
        g = wbce_grad(probs, target, wbce_cfg) * probs.shape[0]
        if self.is_burst:
            return loss, self._burst_grads(g)
        return loss, self._bp_grads(g)

    def _bp_grads(self, g: Tensor) -> dict[str, Tensor]:
        grads = {}
        g_in, grads["head.W"] = self.head.bp_backward(g)
        e = self.arch.embed_units
        for k, m in enumerate(self.modalities):
            conv1, conv2, embed = self.channels[m]
            g_c, grads[f"{m}.2.W"] = embed.bp_backward(g_in[:, k * e : (k + 1) * e])
            g_a, grads[f"{m}.1.W"] = conv2.bp_backward(g_c.reshape(conv2.e.shape))
            _, grads[f"{m}.0.W"] = conv1.bp_backward(g_a)
        return grads

    def _burst_grads(self, g: Tensor) -> dict[str, Tensor]:
        cfg = self.burst_cfg
        self.head.output_burst_prob(g, cfg)
        b, b_bar = self.head.burst_rates()
        fb, fb_bar = self.head.feedback(b), self.head.feedback(b_bar)
        e = self.arch.embed_units
        for k, m in enumerate(self.modalities):
            # positional split of the head's feedback at the concat boundary
            down = (fb[:, k * e : (k + 1) * e], fb_bar[:, k * e : (k + 1) * e])
            conv1, *upper = self.channels[m]
            for layer in reversed(upper):
                layer.dendritic_potentials(*down, eps_event=cfg.eps_event)
                layer.hidden_burst_prob(cfg)
                b, b_bar = layer.burst_rates()
                down = (layer.feedback(b), layer.feedback(b_bar))
            conv1.dendritic_potentials(*down, eps_event=cfg.eps_event)
            conv1.hidden_burst_prob(cfg)
            conv1.burst_rates()
        grads = {}
        for name, layer in self.named_layers():
            grads[f"{name}.W"], grads[f"{name}.Y"] = layer.weight_update()
        return grads

    def learn_step(self, batch, optimizer: Adam, wbce_cfg: WeightedBceConfig) -> float:
        loss, grads = self.gradients(batch, wbce_cfg)
        optimizer.step(self.parameters(), grads)
        return loss

    def predict_mask(self, batch, threshold: float = 0.5) -> Tensor:
        return predict_mask(self.forward(batch), threshold)

    # -- checkpoints ----------------------------------------------------------

    def descriptor(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "epoch": self.epoch,
            "feedback_init": self.feedback_init,
            "architecture": asdict(self.arch),
            "burst": asdict(self.burst_cfg),
            "layers": {name: layer.descriptor() for name, layer in self.named_layers()},
        }

    def save(self, path, optimizer: Adam | None = None) -> None:
        """Directory of MBT1 tensors plus ``graph.json``."""
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        desc = self.descriptor()
        for name, arr in self.parameters().items():
            save_mbt1(out / f"{name}.mbt", arr)
        if optimizer is not None:
            desc["optimizer"] = {"config": asdict(optimizer.cfg), "step": optimizer.step_count}
            for name, st in optimizer.state.items():
                save_mbt1(out / f"adam.m.{name}.mbt", st.m)
                save_mbt1(out / f"adam.v.{name}.mbt", st.v)
        (out / "graph.json").write_text(json.dumps(desc, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path, optimizer: Adam | None = None) -> "ModelGraph":
        src = Path(path)
        desc = json.loads((src / "graph.json").read_text())
        model = cls(
            desc["variant"],
            ArchitectureConfig.from_dict(desc["architecture"]),
            desc["seed"],
            BurstConfig(**desc["burst"]),
            desc["feedback_init"],
        )
        model.epoch = desc["epoch"]
        for name, arr in model.parameters().items():
            arr[...] = load_mbt1(src / f"{name}.mbt")
        if optimizer is not None and "optimizer" in desc:
            step = desc["optimizer"]["step"]
            for name in model.parameters():
                m_path = src / f"adam.m.{name}.mbt"
                if m_path.exists():
                    optimizer.state[name] = AdamState(load_mbt1(m_path), load_mbt1(src / f"adam.v.{name}.mbt"), step)
        return model


def predict_mask(probs, threshold: float = 0.5) -> Tensor:
    return (as_tensor(probs) >= threshold).astype(np.float64)
