"""Run configuration: one human-readable file, sections per subsystem.

The file format is a small TOML subset (this interpreter ships no TOML
reader): `[section]` headers and `key = value` lines where a value is a
bool, int, float, quoted string or a flat list of those. Parsing and
serialization round-trip losslessly. Hyperparameter keys keep their
published names (alpha, lambda, lr_max, n_step, hlt_prelim, hlt_refine).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


@dataclass
class VectorizerConfig:
    min_df: int = 2
    ngram_max: int = 1
    lowercase: bool = True


@dataclass
class EncoderConfig:
    enabled: bool = True
    d_in: int = 65536
    hidden: int = 256
    d_dnn: int = 128
    lr_max: float = 1e-3
    n_step: int = 400          # total across all curriculum levels
    batch_size: int = 32
    loss: str = "squared_hinge"
    seed: int = 0


@dataclass
class TreeConfig:
    hlt_prelim: str = "auto"   # dash-separated level sizes, or "auto"
    hlt_refine: str = "auto"
    branching: int = 16
    max_leaf_size: int = 100
    kmeans_iters: int = 20
    seed: int = 0


@dataclass
class TrainerConfig:
    alpha: float = 1.0
    lam: float = 0.5           # serialized under the published name "lambda"
    beam: int = 10
    loss: str = "squared_hinge"
    prune: float = 0.1
    solver_tol: float = 1e-3
    solver_epochs: int = 100
    cost_sensitive: bool = True
    seed: int = 0


@dataclass
class RunConfig:
    vectorizer: VectorizerConfig = field(default_factory=VectorizerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def validate(self):
        if self.trainer.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.trainer.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.trainer.beam < 1:
            raise ValueError("beam must be at least 1")
        if self.encoder.lr_max <= 0 or self.encoder.n_step < 1:
            raise ValueError("lr_max must be positive and n_step >= 1")
        if self.encoder.loss not in ("squared_hinge", "logistic") or \
                self.trainer.loss not in ("squared_hinge", "logistic"):
            raise ValueError("loss must be squared_hinge or logistic")
        return self

    def to_dict(self):
        return asdict(self)


_RENAMED = {"lam": "lambda"}
_RENAMED_BACK = {v: k for k, v in _RENAMED.items()}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _parse_value(text, where):
    text = text.strip()
    if text == "true":
        return True
    if text == "false":
        return False
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(tok, where) for tok in inner.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{where}: cannot parse value {text!r}") from None


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section_field in fields(cfg):
        section = getattr(cfg, section_field.name)
        lines.append(f"[{section_field.name}]")
        for f in fields(section):
            key = _RENAMED.get(f.name, f.name)
            lines.append(f"{key} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text) -> RunConfig:
    cfg = RunConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    current = None
    for lineno, raw in enumerate(str(text).splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ValueError(f"{where}: unknown section [{name}]")
            current = sections[name]
            continue
        if "=" not in line:
            raise ValueError(f"{where}: expected key = value, got {line!r}")
        if current is None:
            raise ValueError(f"{where}: key outside any section")
        key, _, value = line.partition("=")
        key = _RENAMED_BACK.get(key.strip(), key.strip())
        if not hasattr(current, key):
            raise ValueError(
                f"{where}: unknown key {key!r} in section "
                f"[{type(current).__name__}]")
        parsed = _parse_value(value, where)
        declared = type(getattr(current, key))
        if declared is float and isinstance(parsed, int) and \
                not isinstance(parsed, bool):
            parsed = float(parsed)
        if declared is int and isinstance(parsed, bool):
            raise ValueError(f"{where}: {key} expects int, got bool")
        if not isinstance(parsed, declared):
            raise ValueError(
                f"{where}: {key} expects {declared.__name__}, "
                f"got {type(parsed).__name__}")
        setattr(current, key, parsed)
    return cfg.validate()


def _strip_comment(line):
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_config(cfg))
