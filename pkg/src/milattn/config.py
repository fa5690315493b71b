"""Flat ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .losses import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    T: int = 32
    n: int = 7168
    n_h: int = 1024
    d_att1: int = 256
    n_det1: int = 512
    n_L: int = 96
    d_att2: int = 32
    n_cls: int = 256
    C: int = 13
    use_lstm: bool = True
    use_attn1: bool = True
    use_attn2: bool = True
    # loss
    lambda1: float = 8e-5
    lambda2: float = 8e-5
    lambda_d: float = 0.9
    lambda_att: float = 1e-6
    pairing: str = "pairs"
    # optimiser
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.0
    # sampler / schedule
    n_anomaly: int = 30
    n_normal: int = 30
    iterations: int = 8000
    seed: int = 0
    checkpoint_every: int = 1000
    eval_every: int = 500
    holdout_fraction: float = 0.1
    log_every: int = 1
    include_normal_in_maa: bool = True
    # paths
    manifest: str = ""
    features_dir: str = ""
    annotations: str = ""
    out_dir: str = "run"
    resume: str = ""

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda_d, self.lambda_att, self.pairing)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return RunConfig(**{**asdict(self), **changes})


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _convert(key: str, typ: str, raw: str):
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys fail."""
    types = {f.name: f.type for f in fields(RunConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, raw = (s.strip() for s in line.partition("="))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _convert(key, types[key], raw)
    return (base or RunConfig()).replace(**changes)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
