"""Flat ``key = value`` experiment configuration.

One file fully determines a run. Every key has a default; the snapshot written
next to the results lists all of them, so nothing stays implicit.
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Tuple

from .errors import ConfigError
from .strategies import STRATEGIES, OmsiConfig
from .streams import NoiseSpec


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "idx"
    train_images: str = "data/mnist5k/train-images-idx3-ubyte.gz"
    train_labels: str = "data/mnist5k/train-labels-idx1-ubyte.gz"
    test_images: str = "data/mnist5k/t10k-images-idx3-ubyte.gz"
    test_labels: str = "data/mnist5k/t10k-labels-idx1-ubyte.gz"
    synthetic_classes: int = 10
    synthetic_per_class: int = 100
    synthetic_test_per_class: int = 20
    synthetic_dim: int = 20
    synthetic_separation: float = 6.0
    per_class: int = 0
    classes_per_exp: int = 2
    n_experiences: int = 0
    shuffle_classes: bool = True
    # stream
    batch_size: int = 10
    passes: int = 1
    # model and strategy
    hidden: Tuple[int, ...] = (256,)
    strategy: str = "omsi"
    buffer_capacity: int = 50
    alpha: float = 2.0
    k_inner: int = 1
    lr: float = 0.01
    buffer_draw: int = 0
    final_update_target: str = "combined"
    weight_projection: str = "none"
    meta_grad_mode: str = "exact_k1"
    # noise
    noise_fraction: float = 0.0
    noisy_parity: str = "even"
    clean_buffer: bool = False
    # seeds (repetition r adds r to each)
    model_seed: int = 0
    shuffle_seed: int = 0
    noise_seed: int = 0
    buffer_seed: int = 0
    sampling_seed: int = 0
    class_order_seed: int = 0
    data_seed: int = 0
    # execution
    repetitions: int = 3
    trace: bool = False
    output_dir: str = "results"

    def validate(self) -> None:
        if self.dataset not in ("idx", "synthetic"):
            raise ConfigError(f"dataset must be idx or synthetic, got {self.dataset!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.buffer_capacity < 0 or self.per_class < 0 or self.n_experiences < 0:
            raise ConfigError("buffer_capacity, per_class and n_experiences must be >= 0")
        if self.buffer_draw < 0:
            raise ConfigError("buffer_draw must be >= 0 (0 = stream batch size)")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not Path(getattr(self, key)).is_file():
                    raise FileNotFoundError(f"{key}: no such file: {getattr(self, key)}")
        self.omsi_config()
        self.noise_spec(0)

    def omsi_config(self) -> OmsiConfig:
        return OmsiConfig(alpha=self.alpha, k_inner=self.k_inner, lr=self.lr,
                          buffer_draw=self.buffer_draw or None,
                          final_update_target=self.final_update_target,
                          weight_projection=self.weight_projection,
                          meta_grad_mode=self.meta_grad_mode)

    def noise_spec(self, rep: int) -> NoiseSpec:
        return NoiseSpec(self.noise_fraction, self.noisy_parity, self.noise_seed + rep)

    def seeds(self, rep: int) -> dict:
        return {name: getattr(self, f"{name}_seed") + rep
                for name in ("model", "shuffle", "noise", "buffer", "sampling", "class_order", "data")}

    def dumps(self) -> str:
        lines = ["# materialized experiment configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors.

    Relative file paths are resolved against ``base_dir``.
    """
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, getattr(defaults, key))
    cfg = ExperimentConfig(**values)
    if base_dir is not None:
        for key in ("train_images", "train_labels", "test_images", "test_labels", "output_dir"):
            path = Path(getattr(cfg, key))
            if key in values and not path.is_absolute():
                setattr(cfg, key, str(base_dir / path))
    return cfg


def apply_overrides(cfg: ExperimentConfig, pairs: Iterable[str]) -> ExperimentConfig:
    """Return a copy with ``key=value`` overrides applied (command-line ``--set``)."""
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    changes = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in override")
        changes[key] = _coerce(key, raw, getattr(defaults, key))
    return cfg.replace(**changes)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)
