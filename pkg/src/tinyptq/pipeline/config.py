"""Pipeline configuration: every ablation knob in one place."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

STRATEGIES = ("qparam", "weights", "bits", "round")
INITS = ("minmax", "mse")
GRANULARITIES = ("layerwise", "blockwise")

# per-strategy learning-rate defaults, used when `lr` is left unset
DEFAULT_LR = {"qparam": 1e-3, "weights": 1e-4, "bits": 0.0, "round": 1e-2}
BIAS_LR = 1e-3


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    b_w: int = 8
    b_a: int = 8
    w_init: str = "mse"
    a_init: str = "mse"
    cle: bool = True
    strategy: str = "round"
    granularity: str = "layerwise"
    bias_tune: bool = True
    calib_size: int = 1024
    iters: int = 2000
    lr: float | None = None
    batch_size: int = 32
    seed: int = 0
    mse_grid_steps: int = 100
    bit_sweeps: int = 2
    bit_scale_refit: bool = True
    eval_every: int = 100          # best-iterate checkpoint cadence
    bias_iters: int | None = None  # defaults to `iters`
    recalibrate_acts: bool = False
    adaround_lambda: float = 0.01
    adaround_beta: tuple = (20.0, 2.0)

    def __post_init__(self):
        for bits, label in ((self.b_w, "b_w"), (self.b_a, "b_a")):
            if not (2 <= bits <= 8 or bits == 32):
                raise ConfigError(f"{label} must be in 2..8 or 32 (disabled), got {bits}")
        for init, label in ((self.w_init, "w_init"), (self.a_init, "a_init")):
            if init not in INITS:
                raise ConfigError(f"{label} must be one of {INITS}, got {init!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}")
        if self.strategy == "bits" and self.granularity == "blockwise":
            raise ConfigError("opt_bits does not support blockwise optimization")
        if self.iters < 0:
            raise ConfigError("iters must be >= 0")
        if not (self.calib_size >= self.batch_size >= 1):
            raise ConfigError("need calib_size >= batch_size >= 1")

    @property
    def unit_lr(self) -> float:
        return DEFAULT_LR[self.strategy] if self.lr is None else self.lr

    @property
    def bias_tune_iters(self) -> int:
        return self.iters if self.bias_iters is None else self.bias_iters

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adaround_beta"] = list(self.adaround_beta)
        return d
