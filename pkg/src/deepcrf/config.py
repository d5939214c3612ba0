"""Training configuration and its flat ``key=value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.0
    lambda3: float = 2e-4
    step_theta: float = 0.005
    step_omega: float = 0.0005
    decay: float = 0.01
    epochs: int = 100
    layers: tuple[int, ...] = (100, 100, 64)
    rbm_epochs: int = 10
    rbm_lr: float = 0.1
    rbm_batch: int = 100
    ind_epochs: int = 30
    ind_lr: float = 1e-3
    ind_batch: int = 100
    seed: int = 0
    soft_encoder_grad: bool = False
    use_rbm: bool = True
    use_independent: bool = True
    freeze_encoder: bool = False
    w_init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))
        for name in ("lambda1", "lambda2", "lambda3", "decay"):
            if getattr(self, name) < 0:
                raise ConfigError("%s must be >= 0" % name)
        for name in ("step_theta", "step_omega", "rbm_lr", "ind_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError("%s must be > 0" % name)
        for name in ("epochs", "rbm_epochs", "ind_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError("%s must be >= 0" % name)
        for name in ("rbm_batch", "ind_batch"):
            if getattr(self, name) < 1:
                raise ConfigError("%s must be >= 1" % name)
        if not self.layers or min(self.layers) < 1:
            raise ConfigError("layers must list at least one positive hidden width")
        if self.w_init_scale < 0:
            raise ConfigError("w_init_scale must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layers"] = list(self.layers)
        return d

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = repr(v)
            lines.append("%s=%s" % (f.name, v))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build a config from string or typed values, starting at ``base``."""
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError("unknown config key %r" % key)
            try:
                parsed[key] = _coerce(getattr(base, key), raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError("bad value for %s: %r (%s)" % (key, raw, exc)) from None
        try:
            return dataclasses.replace(base, **parsed)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _coerce(default, raw):
    if not isinstance(raw, str):
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw)
        return type(default)(raw)
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key=value, got %r" % (lineno, line))
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update(overrides or {})
    return TrainConfig.from_mapping(values)
