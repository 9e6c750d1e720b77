"""Feedback super-resolution network for elevation grids, plus checkpoint I/O.

The network works at ILR resolution: it receives the bicubically upsampled
LR grid, runs a weight-shared feedback block ``T`` times and, at every step,
adds a predicted residual back onto the ILR grid.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn

PRELU_INIT = 0.25


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Network shape: ``m`` base filters, ``n`` residual units, ``T`` unroll steps.

    ``scale`` is the SR factor the weights were trained for and does not
    change the graph. ``height_scale`` (meters) normalizes elevations on the
    way in and rescales the predicted residual on the way out.
    """

    m: int = 64
    n: int = 16
    T: int = 4
    scale: int = 8
    height_scale: float = 100.0

    def __post_init__(self):
        for name in ("m", "n", "T", "scale"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n % 2:
            raise ConfigError(f"n must be even (fusion reads even-indexed units), got {self.n}")
        if not self.height_scale > 0:
            raise ConfigError(f"height_scale must be positive, got {self.height_scale}")

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid model config: {exc}") from None


@dataclass(frozen=True)
class LayerPlan:
    """Skip wiring of the feedback block.

    ``unit_sources[i - 1]`` lists the indices j of the features L_j that unit
    B_i reads (L_0 is the compressed block input). ``fusion_sources`` are the
    unit outputs merged into the block output.
    """

    n: int
    unit_sources: tuple[tuple[int, ...], ...]
    fusion_sources: tuple[int, ...]

    def sources(self, i: int) -> tuple[int, ...]:
        return self.unit_sources[i - 1]


def layer_plan(n: int) -> LayerPlan:
    """Alternate-parity wiring: B_i reads every earlier L_j with j of opposite parity."""
    if n < 2 or n % 2:
        raise ConfigError(f"n must be a positive even integer, got {n}")
    units = tuple(tuple(j for j in range(i) if j % 2 != i % 2) for i in range(1, n + 1))
    return LayerPlan(n=n, unit_sources=units, fusion_sources=tuple(range(2, n + 1, 2)))


@dataclass
class FeedbackState:
    features: torch.Tensor  # F_out of the last step, (N, m, H, W)


@dataclass
class SrOutputs:
    sr: list[torch.Tensor]
    residuals: list[torch.Tensor]
    state: FeedbackState

    def __len__(self):
        return len(self.sr)


def _conv(cin: int, cout: int, k: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel_size=k, padding=k // 2)


class ConvPReLU(nn.Sequential):
    def __init__(self, cin: int, cout: int, k: int):
        super().__init__(_conv(cin, cout, k), nn.PReLU(cout, init=PRELU_INIT))


class ResidualUnit(nn.Module):
    """1x1 fusion of the unit's skip inputs followed by a 3x3 convolution."""

    def __init__(self, n_inputs: int, m: int):
        super().__init__()
        self.fuse = ConvPReLU(n_inputs * m, m, 1)
        self.conv = ConvPReLU(m, m, 3)

    def forward(self, x):
        return self.conv(self.fuse(x))


class FeedbackBlock(nn.Module):
    def __init__(self, m: int, n: int):
        super().__init__()
        self.plan = layer_plan(n)
        self.compress_in = ConvPReLU(2 * m, m, 1)
        self.units = nn.ModuleList(ResidualUnit(len(src), m) for src in self.plan.unit_sources)
        self.compress_out = ConvPReLU(len(self.plan.fusion_sources) * m, m, 1)

    def forward(self, f_in, f_prev):
        feats = [self.compress_in(torch.cat([f_prev, f_in], dim=1))]
        for unit, src in zip(self.units, self.plan.unit_sources):
            x = feats[src[0]] if len(src) == 1 else torch.cat([feats[j] for j in src], dim=1)
            feats.append(unit(x))
        return self.compress_out(torch.cat([feats[j] for j in self.plan.fusion_sources], dim=1))


class DSRFB(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        m = config.m
        self.fe = nn.Sequential(ConvPReLU(1, 4 * m, 3), ConvPReLU(4 * m, m, 1))
        self.fb = FeedbackBlock(m, config.n)
        self.rb = _conv(m, 1, 3)

    def forward(self, ilr: torch.Tensor) -> SrOutputs:
        if ilr.dim() != 4 or ilr.shape[1] != 1:
            raise ValueError(f"expected input of shape (N, 1, H, W), got {tuple(ilr.shape)}")
        if not torch.isfinite(ilr).all():
            raise ValueError("input contains non-finite values")
        hs = self.config.height_scale
        x = (ilr - ilr.mean(dim=(2, 3), keepdim=True)) / hs
        f_in = self.fe(x)
        f_out = f_in
        sr, residuals = [], []
        for _ in range(self.config.T):
            f_out = self.fb(f_in, f_out)
            res = self.rb(f_out) * hs
            residuals.append(res)
            sr.append(res + ilr)
        return SrOutputs(sr=sr, residuals=residuals, state=FeedbackState(f_out))


def init_weights(net: nn.Module, seed: int | None = None) -> None:
    gen = None
    if seed is not None:
        gen = torch.Generator().manual_seed(int(seed))
    for mod in net.modules():
        if isinstance(mod, nn.Conv2d):
            nn.init.kaiming_normal_(mod.weight, a=PRELU_INIT, nonlinearity="leaky_relu", generator=gen)
            nn.init.zeros_(mod.bias)
        elif isinstance(mod, nn.PReLU):
            nn.init.constant_(mod.weight, PRELU_INIT)


def build(config: ModelConfig, seed: int | None = None) -> DSRFB:
    net = DSRFB(config)
    init_weights(net, seed)
    return net


def ensemble(outputs: SrOutputs, mode: str = "last") -> torch.Tensor:
    if not outputs.sr:
        raise ValueError("no outputs to combine")
    if mode == "last":
        return outputs.sr[-1]
    if mode == "mean":
        return torch.stack(outputs.sr).mean(dim=0)
    raise ValueError(f"unknown ensemble mode {mode!r} (expected 'last' or 'mean')")


def predict(net, grid: np.ndarray, mode: str = "last") -> np.ndarray:
    """Run ``net`` on one 2-D ILR grid and return the combined SR grid as float64."""
    param = next(net.parameters(), None) if isinstance(net, nn.Module) else None
    dtype = torch.float64 if param is None else param.dtype
    x = torch.as_tensor(np.asarray(grid), dtype=dtype)[None, None]
    with torch.no_grad():
        out = ensemble(net(x), mode)
    return out[0, 0].to(torch.float64).numpy()


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


# -- checkpoints ----------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(net: DSRFB, path, extra: dict | None = None) -> None:
    """Store config, parameter manifest and raw little-endian f32 blocks in one zip."""
    manifest, blob, offset = [], io.BytesIO(), 0
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blob.write(raw)
        offset += len(raw)
    meta = {"config": asdict(net.config), "parameters": manifest}
    if extra:
        meta["extra"] = extra
    with zipfile.ZipFile(path, "w") as zf:
        _zip_entry(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        _zip_entry(zf, "params.bin", blob.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[DSRFB, dict]:
    """Rebuild the network from a checkpoint, validating names and shapes."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            blob = zf.read("params.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from None
    net = DSRFB(ModelConfig.from_dict(meta["config"]))
    expected = net.state_dict()
    stored = {p["name"]: p for p in meta["parameters"]}
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise CheckpointError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")
    state = {}
    for name, ref in expected.items():
        rec = stored[name]
        if tuple(rec["shape"]) != tuple(ref.shape):
            raise CheckpointError(f"{path}: {name} has shape {rec['shape']}, expected {list(ref.shape)}")
        start, stop = rec["offset"], rec["offset"] + rec["nbytes"]
        if stop > len(blob) or rec["nbytes"] != ref.numel() * 4:
            raise CheckpointError(f"{path}: parameter block for {name} is truncated")
        arr = np.frombuffer(blob[start:stop], dtype="<f4").reshape(ref.shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
    net.load_state_dict(state)
    return net, meta.get("extra", {})
