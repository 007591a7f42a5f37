"""Plain key=value experiment config files, with '#' comments."""

from __future__ import annotations

from pathlib import Path

from .data import SynthConfig
from .dictionary import CRCConfig
from .errors import ConfigError
from .harness import ExperimentConfig

_INT_KEYS = {
    "seed", "folds", "workers",
    "source_classes", "dim", "samples_per_class", "unlabeled_size",
    "positives", "negatives", "projection_dim",
    "source_epochs", "prt_epochs", "tl_epochs", "batch",
}
_FLOAT_KEYS = {"shift", "noise", "source_lr", "lr", "momentum", "ridge", "epsilon"}
_LIST_KEYS = {"ratios", "methods", "hidden"}
_STR_KEYS = {"out"}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS


def parse_config_file(path: str | Path) -> dict[str, tuple[str, int]]:
    """Return {key: (raw value, line number)}; raises ConfigError with the line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = (value, lineno)
    return values


def _convert(path, key: str, raw: str, lineno: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "ratios":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        if key == "hidden":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        if key == "methods":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {raw!r}") from exc


def build_experiment_config(
    config_path: str | Path | None = None,
    seed: int | None = None,
    out: str | Path | None = None,
    ratios: tuple[int, ...] | None = None,
    folds: int | None = None,
) -> ExperimentConfig:
    """Merge config-file values and flag overrides over the package defaults."""
    values: dict[str, object] = {}
    if config_path is not None:
        for key, (raw, lineno) in parse_config_file(config_path).items():
            values[key] = _convert(config_path, key, raw, lineno)
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["out"] = str(out)
    if ratios is not None:
        values["ratios"] = tuple(ratios)
    if folds is not None:
        values["folds"] = folds

    synth_defaults = SynthConfig()
    synth = SynthConfig(
        source_class_count=values.get("source_classes", synth_defaults.source_class_count),
        dim=values.get("dim", synth_defaults.dim),
        samples_per_class=values.get("samples_per_class", synth_defaults.samples_per_class),
        unlabeled_size=values.get("unlabeled_size", synth_defaults.unlabeled_size),
        positives=values.get("positives", synth_defaults.positives),
        negatives=values.get("negatives", synth_defaults.negatives),
        shift=values.get("shift", synth_defaults.shift),
        noise=values.get("noise", synth_defaults.noise),
    )
    crc_defaults = CRCConfig()
    crc = CRCConfig(
        ridge=values.get("ridge", crc_defaults.ridge),
        epsilon=values.get("epsilon", crc_defaults.epsilon),
    )
    defaults = {
        "out": "out", "seed": 0, "folds": 5, "workers": 1,
        "hidden": ExperimentConfig.hidden, "projection_dim": ExperimentConfig.projection_dim,
        "source_epochs": ExperimentConfig.source_epochs, "source_lr": ExperimentConfig.source_lr,
        "prt_epochs": ExperimentConfig.prt_epochs, "tl_epochs": ExperimentConfig.tl_epochs,
        "lr": ExperimentConfig.base_lr, "batch": ExperimentConfig.batch_size,
        "momentum": ExperimentConfig.momentum, "ratios": ExperimentConfig.ratios,
        "methods": ExperimentConfig.methods,
    }
    merged = {**defaults, **values}
    return ExperimentConfig(
        out_dir=Path(merged["out"]),
        master_seed=merged["seed"],
        synth=synth,
        hidden=tuple(merged["hidden"]),
        projection_dim=merged["projection_dim"],
        source_epochs=merged["source_epochs"],
        source_lr=merged["source_lr"],
        prt_epochs=merged["prt_epochs"],
        tl_epochs=merged["tl_epochs"],
        base_lr=merged["lr"],
        batch_size=merged["batch"],
        momentum=merged["momentum"],
        crc=crc,
        ratios=tuple(merged["ratios"]),
        fold_count=merged["folds"],
        methods=tuple(merged["methods"]),
        workers=merged["workers"],
    )
