"""Line-based experiment configuration and the registry of recognized keys.

Grammar (UTF-8)::

    file     := line*
    line     := blank | comment | entry
    comment  := ws* "#" any*
    entry    := ws* key ws* "=" ws* value ws* [ "#" any* ]
    key      := section "." name        (letters, digits, "_")
    value    := any text up to an unquoted "#"; surrounding blanks stripped

Values are typed by the registry: ``int``, ``float``, ``bool``
(``true/false/yes/no/on/off/1/0``), ``str`` (optionally restricted to a
set of choices) and comma-separated float lists. A key may appear at most
once per file and at most once among the command-line overrides;
overrides are applied after the file. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import ConfigError

__all__ = ["ConfigKey", "REGISTRY", "parse_config", "parse_overrides", "resolve", "render", "digest", "help_text"]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in (q.strip() for q in text.split(",")) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


_PARSERS: dict[str, Callable[[str], Any]] = {
    "int": int,
    "float": float,
    "bool": _bool,
    "str": str,
    "floats": _floats,
    "ints": _ints,
}


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: str
    default: Any
    help: str
    choices: tuple[str, ...] = ()

    def parse(self, text: str) -> Any:
        try:
            value = _PARSERS[self.kind](text.strip())
        except ValueError as exc:
            raise ConfigError(f"{self.name}: {exc}") from exc
        if self.choices and value not in self.choices:
            raise ConfigError(f"{self.name}: {value!r} is not one of {', '.join(self.choices)}")
        return value

    def format(self, value: Any) -> str:
        if self.kind == "bool":
            return "true" if value else "false"
        if self.kind in ("floats", "ints"):
            return ",".join(repr(v) for v in value)
        if self.kind == "float":
            return repr(float(value))
        return str(value)


_FAMILIES = ("blur", "haze", "rain", "identity")
_KEYS = [
    ConfigKey("schedule.N", "int", 1000, "number of diffusion steps"),
    ConfigKey("schedule.beta_start", "float", 1e-4, "first beta of the linear schedule"),
    ConfigKey("schedule.beta_end", "float", 0.02, "last beta of the linear schedule"),
    ConfigKey("task.family", "str", "blur", "degradation applied to the clean corpus", _FAMILIES),
    ConfigKey("task.blur_len", "int", 5, "motion blur length in pixels"),
    ConfigKey("task.blur_angle", "float", 0.0, "motion blur angle in degrees"),
    ConfigKey("task.transmission", "float", 0.6, "haze transmission"),
    ConfigKey("task.airlight", "float", 0.8, "haze airlight"),
    ConfigKey("task.streaks", "int", 12, "rain streak count"),
    ConfigKey("task.streak_angle", "float", 80.0, "rain streak angle in degrees"),
    ConfigKey("task.intensity", "float", 0.5, "rain streak intensity"),
    ConfigKey("task.noise_std", "float", 0.01, "additive Gaussian noise on the measurement"),
    ConfigKey("corpus.kind", "str", "smooth-blobs", "clean corpus generator", ("smooth-blobs", "checkerboards", "gmm-draws")),
    ConfigKey("corpus.size", "int", 32, "grid side (image kinds) or dimension (gmm-draws)"),
    ConfigKey("corpus.seed", "int", 2, "seed of the evaluation corpus"),
    ConfigKey("prior.source", "str", "spectral", "score model", ("spectral", "gmm", "net")),
    ConfigKey("prior.path", "str", "", "trained network directory (prior.source = net)"),
    ConfigKey("prior.train_count", "int", 400, "training corpus size for the spectral fit"),
    ConfigKey("prior.train_seed", "int", 1, "seed of the training corpus"),
    ConfigKey("restorer.kind", "str", "tikhonov", "restorer prototype", ("identity", "tikhonov", "dehaze", "derain")),
    ConfigKey("restorer.lam", "float", 0.2, "Tikhonov regularization weight"),
    ConfigKey("restorer.regularizer", "str", "gradient", "Tikhonov penalty", ("identity", "gradient")),
    ConfigKey("restorer.blur_len", "int", 0, "blur length the prototype assumes (0 = task value)"),
    ConfigKey("restorer.blur_angle", "float", -1.0, "blur angle the prototype assumes (negative = task value)"),
    ConfigKey("restorer.transmission", "float", 0.0, "haze transmission the prototype assumes (0 = task value)"),
    ConfigKey("restorer.airlight", "float", -1.0, "airlight the prototype assumes (negative = task value)"),
    ConfigKey("restorer.threshold", "float", 0.1, "derain outlier threshold"),
    ConfigKey("sampler.variant", "str", "bayesian", "solver", ("bayesian", "nullspace", "dps")),
    ConfigKey("sampler.kind", "str", "ancestral", "reverse process", ("ancestral", "deterministic")),
    ConfigKey("sampler.steps", "int", 100, "number of reverse steps (0 = every timestep)"),
    ConfigKey("sampler.seed", "int", 7, "seed for degradation noise and sampler noise"),
    ConfigKey("sampler.gradient_orientation", "bool", True, "evaluate likelihood terms at the unconditional update"),
    ConfigKey("sampler.restorer_traveling", "bool", False, "apply the restorer to the Tweedie estimate"),
    ConfigKey("sampler.measurement_boosting", "bool", False, "add the raw-measurement term"),
    ConfigKey("sampler.ddim_literal", "bool", False, "uncorrected deterministic update"),
    ConfigKey("guidance.eta", "float", 1.0, "scale of the unconditional update"),
    ConfigKey("guidance.rho", "float", 0.45, "restorer-likelihood step size"),
    ConfigKey("guidance.zeta", "float", 0.045, "measurement-boost step size"),
    ConfigKey("guidance.direction", "int", 1, "+1 restores, -1 deteriorates"),
    ConfigKey("guidance.normalize_likelihood", "bool", False, "divide the likelihood gradient by sigma_t^2"),
    ConfigKey("guidance.measurement_sign", "int", 1, "+1 adds the measurement term, -1 subtracts it"),
    ConfigKey("guidance.eta_on", "str", "update", "what eta scales", ("update", "score")),
    ConfigKey("nullspace.sigma", "float", 1.0, "range-space correction strength"),
    ConfigKey("nullspace.phi", "float", -1.0, "noise scale (negative = schedule default)"),
    ConfigKey("dps.step_size", "float", 0.1, "measurement-likelihood step size"),
    ConfigKey("dps.blur_len", "int", 0, "blur length of the operator the baseline assumes (0 = task value)"),
    ConfigKey("dps.blur_angle", "float", -1.0, "blur angle the baseline assumes (negative = task value)"),
    ConfigKey("experiment.trials", "int", 50, "number of corpus items solved"),
    ConfigKey("experiment.write_images", "bool", True, "write GRD/PGM images per trial"),
    ConfigKey("ood.blur_len", "int", 3, "blur length the mismatched prototype was built for"),
    ConfigKey("ood.blur_angle", "float", 0.0, "blur angle the mismatched prototype was built for"),
    ConfigKey("ood.zeta_gain", "float", 1.5, "measurement-boost amplification in the mismatched cell"),
    ConfigKey("control.rhos", "floats", (0.0, 0.3, 1.0), "restorer step sizes swept by the control command"),
    ConfigKey("control.steps", "int", 10, "reverse steps of the control sweep (reversed guidance grows geometrically)"),
    ConfigKey("control.item", "int", 0, "corpus item deteriorated by the control command"),
    ConfigKey("train.count", "int", 1000, "training corpus size"),
    ConfigKey("train.seed", "int", 0, "training seed"),
    ConfigKey("train.epochs", "int", 50, "passes over the training corpus"),
    ConfigKey("train.lr", "float", 1e-2, "SGD learning rate"),
    ConfigKey("train.momentum", "float", 0.9, "SGD momentum"),
    ConfigKey("train.batch_size", "int", 128, "minibatch size"),
    ConfigKey("train.hidden", "ints", (64, 64, 64), "hidden layer widths"),
    ConfigKey("train.time_features", "int", 8, "sinusoidal time features"),
]
REGISTRY: dict[str, ConfigKey] = {k.name: k for k in _KEYS}


def _split_entry(raw: str, where: str) -> tuple[str, str]:
    if "=" not in raw:
        raise ConfigError(f"{where}: expected 'section.key = value'")
    key, _, value = raw.partition("=")
    key = key.strip()
    if key not in REGISTRY:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return key, value


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parses config text into ``{key: typed value}`` (only keys present)."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        key, value = _split_entry(body, where)
        if key in out:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        out[key] = REGISTRY[key].parse(value)
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items:
        key, value = _split_entry(item, "override")
        if key in out:
            raise ConfigError(f"override: duplicate key {key!r}")
        out[key] = REGISTRY[key].parse(value)
    return out


def resolve(path: str | Path | None = None, overrides: Iterable[str] = ()) -> dict[str, Any]:
    """Defaults, then the file at ``path``, then ``overrides``."""
    values = {k.name: k.default for k in _KEYS}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config(text, str(path)))
    values.update(parse_overrides(overrides))
    return values


def render(values: Mapping[str, Any]) -> str:
    """Serializes a resolved config; ``parse_config(render(v)) == v``."""
    lines = []
    section = None
    for key in REGISTRY:
        if key not in values:
            continue
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        lines.append(f"{key} = {REGISTRY[key].format(values[key])}")
    return "\n".join(lines) + "\n"


def digest(values: Mapping[str, Any]) -> str:
    return hashlib.sha256(render(values).encode("utf-8")).hexdigest()[:16]


def help_text() -> str:
    width = max(len(k) for k in REGISTRY)
    rows = []
    for k in _KEYS:
        extra = f" [{'|'.join(k.choices)}]" if k.choices else ""
        rows.append(f"  {k.name:<{width}}  {k.kind:<6} default {k.format(k.default)}: {k.help}{extra}")
    return "config keys:\n" + "\n".join(rows)
