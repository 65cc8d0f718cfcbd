"""Experiment configuration: flat ``key = value`` files plus flag overrides."""

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

EXPERIMENTS = (
    "linear_snr",
    "width_sweep",
    "trainsize_sweep",
    "nonlinear_snr",
    "mismatch_snr",
    "mismatch_eta",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    d: Optional[int] = None
    snr_db: Optional[List[float]] = None
    widths: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    sizes: List[int] = field(default_factory=lambda: [50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000])
    eta: float = 2.0
    eta_grid: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0])
    sigma2: float = 1.0
    train_size: int = 20000
    test_size: int = 5000
    width: int = 40
    hidden_layers: int = 4
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    lr_final: Optional[float] = 1e-5
    batch_size: int = 128
    epochs: int = 200
    x_sat: float = 1.5
    omega: float = 1.0
    mc_trials: int = 100_000
    mc_test_size: int = 500
    seed: int = 0
    seeds: int = 1
    threads: int = 1
    out_path: str = "results.csv"

    def resolved(self):
        """Copy with experiment-dependent defaults filled in and values validated."""
        cfg = dataclasses.replace(self)
        if cfg.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {cfg.experiment!r} (choose from {', '.join(EXPERIMENTS)})")
        mismatch = cfg.experiment.startswith("mismatch")
        if cfg.d is None:
            cfg.d = 1 if mismatch else 2
        if cfg.snr_db is None:
            if cfg.experiment in ("width_sweep", "trainsize_sweep"):
                cfg.snr_db = [0.0, 10.0, 20.0]
            elif cfg.experiment == "mismatch_eta":
                cfg.snr_db = [0.0, 25.0]
            else:
                cfg.snr_db = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0]
        cfg.validate()
        return cfg

    def validate(self):
        checks = [
            ("d", self.d is None or self.d >= 1, "must be >= 1"),
            ("snr_db", self.snr_db is None or len(self.snr_db) > 0, "grid must be nonempty"),
            ("widths", len(self.widths) > 0 and min(self.widths) >= 1, "grid must be nonempty, entries >= 1"),
            ("sizes", len(self.sizes) > 0 and min(self.sizes) >= 1, "grid must be nonempty, entries >= 1"),
            ("eta", self.eta > 0, "must be positive"),
            ("eta_grid", len(self.eta_grid) > 0 and min(self.eta_grid) > 0, "grid must be nonempty and positive"),
            ("sigma2", self.sigma2 > 0, "must be positive"),
            ("train_size", self.train_size >= 1, "must be >= 1"),
            ("test_size", self.test_size >= 1, "must be >= 1"),
            ("width", self.width >= 1, "must be >= 1"),
            ("hidden_layers", self.hidden_layers >= 0, "must be >= 0"),
            ("optimizer", self.optimizer in ("adam", "sgd"), "must be adam or sgd"),
            ("learning_rate", self.learning_rate > 0, "must be positive"),
            ("lr_final", self.lr_final is None or self.lr_final > 0, "must be positive or none"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("x_sat", self.x_sat > 0, "must be positive"),
            ("omega", self.omega >= 1, "must be >= 1"),
            ("mc_trials", self.mc_trials >= 1000, "must be >= 1000"),
            ("mc_test_size", self.mc_test_size >= 1, "must be >= 1"),
            ("seeds", self.seeds >= 1, "must be >= 1"),
            ("threads", self.threads >= 1, "must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")


def _parse_list(cast):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [cast(t) for t in items]

    return parse


def _parse_optional_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


def _parse_optional_int(text):
    return None if text.strip().lower() in ("none", "") else int(text)


def _parse_optional_float_list(text):
    return None if text.strip().lower() in ("none", "") else _parse_list(float)(text)


PARSERS = {
    "experiment": str.strip,
    "d": _parse_optional_int,
    "snr_db": _parse_optional_float_list,
    "widths": _parse_list(int),
    "sizes": _parse_list(int),
    "eta": float,
    "eta_grid": _parse_list(float),
    "sigma2": float,
    "train_size": int,
    "test_size": int,
    "width": int,
    "hidden_layers": int,
    "optimizer": str.strip,
    "learning_rate": float,
    "lr_final": _parse_optional_float,
    "batch_size": int,
    "epochs": int,
    "x_sat": float,
    "omega": float,
    "mc_trials": int,
    "mc_test_size": int,
    "seed": int,
    "seeds": int,
    "threads": int,
    "out_path": str.strip,
}


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def parse_config(path=None, overrides=None):
    """Build a resolved config from an optional file and flag overrides.

    Overrides win over file values; ``None`` overrides are ignored.
    """
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_text(text, str(path)))
    for key, value in (overrides or {}).items():
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            values[key] = value
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    return ExperimentConfig(**values).resolved()


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg):
    """Render a config as ``key = value`` text that parses back to ``cfg``."""
    lines = ["# effective configuration"]
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"
