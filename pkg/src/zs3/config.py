"""Run configuration: INI (or JSON) file -> validated dataclasses, plus the echo writer.

Every section maps onto a dataclass; keys not declared there are rejected so
that typos surface instead of silently falling back to defaults.
"""
import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from zs3.classifier import ClassifierTrainConfig
from zs3.errors import ConfigError
from zs3.gmmn import GeneratorConfig
from zs3.pipeline import Zs3RunConfig
from zs3.scene_data import WorldConfig

SEED_ENV = "ZS3_SEED"


@dataclass
class RunSection:
    seed: int = 0
    k: int = 2
    split_seed: int = None  # defaults to ``seed``
    n_train: int = 200
    n_test: int = 50
    n_pool: int = 100
    embeddings: str = "fixture"
    normalize_embeddings: bool = False

    def validate(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        for name in ("n_train", "n_test", "n_pool"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embeddings != "fixture" and not Path(self.embeddings).is_file():
            raise ConfigError(f"embeddings file not found: {self.embeddings}")


@dataclass
class PipelineSection:
    n_synthetic: int = 500
    p: float = 0.25
    rounds: int = 1
    graph_context: bool = False
    connectivity: int = 4
    n_structure_masks: int = 200


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    world: WorldConfig = field(default_factory=WorldConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    pipeline: PipelineSection = field(default_factory=PipelineSection)

    @property
    def split_seed(self):
        return self.run.seed if self.run.split_seed is None else self.run.split_seed

    def to_pipeline(self):
        p = self.pipeline
        return Zs3RunConfig(seed=self.run.seed, generator=self.generator, classifier=self.classifier,
                            n_synthetic=p.n_synthetic, p=p.p, rounds=p.rounds,
                            graph_context=p.graph_context, connectivity=p.connectivity,
                            n_structure_masks=p.n_structure_masks, world=self.world)

    def validate(self):
        for name in SECTION_NAMES:
            section = getattr(self, name)
            if hasattr(section, "validate"):
                try:
                    section.validate()
                except ConfigError as exc:
                    raise ConfigError(f"[{name}] {exc}") from None
        try:
            self.to_pipeline().validate()
        except ConfigError as exc:
            raise ConfigError(f"[pipeline] {exc}") from None
        return self


SECTION_NAMES = ("run", "world", "generator", "classifier", "pipeline")


def _convert(section, key, typ, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if typ is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            items = raw.split(",") if isinstance(raw, str) else raw
            return tuple(float(v) for v in items)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}") from None


def _build(values):
    """``{section: {key: raw}}`` -> validated :class:`RunConfig`."""
    unknown = sorted(set(values) - set(SECTION_NAMES))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    cfg = RunConfig()
    for name in SECTION_NAMES:
        given = values.get(name) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"section {name!r} must be a table of keys")
        section = getattr(cfg, name)
        fields = {f.name: f for f in dataclasses.fields(section)}
        bad = sorted(set(given) - set(fields))
        if bad:
            raise ConfigError(f"[{name}] unknown key(s): {', '.join(bad)}")
        updates = {}
        for key, raw in given.items():
            typ = fields[key].type
            if raw is None or (isinstance(raw, str) and raw.strip().lower() == "none"):
                updates[key] = None
            else:
                updates[key] = _convert(name, key, typ, raw)
        setattr(cfg, name, dataclasses.replace(section, **updates))
    return cfg


def parse_config_text(text, fmt="ini", source="<config>"):
    if fmt == "json":
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: top level must be an object of sections")
        return _build(values)
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}: line {lineno}: cannot parse {line.strip()}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"line {lineno}: " if lineno else ""
        raise ConfigError(f"{source}: {where}{exc.message.splitlines()[0]}") from None
    return _build({s: dict(parser.items(s)) for s in parser.sections()})


def load_config(path=None, seed=None, env=None):
    """Read, default and validate a run configuration.

    Seed priority: the ``seed`` argument (``--seed``), then ``[run] seed`` in
    the file, then the ``ZS3_SEED`` environment variable, then 0.
    """
    env = os.environ if env is None else env
    if path is None:
        cfg = RunConfig()
        file_has_seed = False
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        fmt = "json" if path.suffix.lower() == ".json" else "ini"
        cfg = parse_config_text(text, fmt, str(path))
        file_has_seed = _mentions_seed(text, fmt)
        emb = cfg.run.embeddings
        if emb != "fixture" and not Path(emb).is_absolute():
            cfg.run.embeddings = str((path.parent / emb).resolve())
    if seed is not None:
        cfg.run.seed = int(seed)
    elif not file_has_seed and env.get(SEED_ENV):
        try:
            cfg.run.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    if cfg.run.split_seed is None:
        cfg.run.split_seed = cfg.run.seed
    return cfg.validate()


def _mentions_seed(text, fmt):
    if fmt == "json":
        return "seed" in (json.loads(text).get("run") or {})
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    parser.read_string(text)
    return parser.has_option("run", "seed")


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_echo(cfg):
    """INI text with every effective value; loading it reproduces ``cfg``."""
    lines = []
    for name in SECTION_NAMES:
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_config_echo(cfg, path):
    Path(path).write_text(config_echo(cfg), encoding="utf-8")


def config_dict(cfg):
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTION_NAMES}
