"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    setup: int | None = 1
    problem_file: str | None = None
    tol: float = 1e-5
    theta_x: float = 0.3
    theta_y: float = 0.3
    estimate_period: int = 3
    family: str = "clenshaw_curtis"
    max_dofs: int = 200_000
    max_iter: int = 200
    record_q_every_iteration: bool = True
    workers: int = 1
    solver: str = "auto"
    seed: int = 0
    out_dir: str = "out"

    def validate(self):
        for name in ("theta_x", "theta_y"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} = {v} violates the marking bound 0 < theta <= 1")
        if not self.tol > 0:
            raise ConfigError(f"tol = {self.tol} must be positive")
        if self.estimate_period < 1:
            raise ConfigError("estimate_period must be >= 1")
        if self.family not in ("clenshaw_curtis", "leja"):
            raise ConfigError(f"unknown node family {self.family!r}")
        if self.solver not in ("auto", "direct", "amg", "cg"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.max_dofs < 1 or self.max_iter < 0 or self.workers < 1:
            raise ConfigError("caps and worker count must be positive")
        if self.setup is None and self.problem_file is None:
            raise ConfigError("need a setup id or a problem file")
        if self.setup is not None and self.setup not in (1, 2, 3, 4):
            raise ConfigError(f"unknown setup {self.setup}")
        return self

    def to_dict(self):
        return asdict(self)


def _convert(tp, text):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    if "bool" in tp:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if "int" in tp:
        return int(text)
    if "float" in tp:
        return float(text)
    return text


def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path, **overrides):
    types = {f.name: str(f.type) for f in fields(RunConfig)}
    kv = parse_kv(Path(path).read_text())
    args = {}
    for k, v in kv.items():
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            args[k] = _convert(types[k], v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    args.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**args).validate()
