"""Flat ``key = value`` config files with ``[section]`` headers.

UTF-8, ``#`` comments, booleans as true/false. Unknown keys are rejected
with the nearest valid key named, and the echoed form always lists every
key with its effective value so a run can be reproduced from its report
alone.
"""

import difflib
from dataclasses import dataclass, field

from .optim import AdamHyper


class ConfigError(ValueError):
    pass


def _bool(s):
    if s in ("true", "True", "1", "yes"):
        return True
    if s in ("false", "False", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _int_tuple(s):
    return tuple(int(p) for p in s.replace(",", " ").split())


# section -> key -> (parse, default)
SCHEMA = {
    "data": {
        "n_centers": (int, 3),
        "samples_per_center": (int, 1000),
        "image_size": (int, 32),
        "channels": (int, 3),
        "class_balance": (float, 0.5),
        "shift_magnitude": (float, 0.5),
        "blob_amplitude": (float, 0.35),
        "noise_level": (float, 0.15),
        "data_seed": (int, 0),
        "train_ratio": (float, 0.6),
        "val_ratio": (float, 0.2),
        "test_ratio": (float, 0.2),
    },
    "model": {
        "with_bn": (_bool, True),
        "conv_channels": (_int_tuple, (16, 32, 64)),
        "bn_momentum": (float, 0.1),
        "bn_eps": (float, 1e-5),
    },
    "optimizer": {
        "lr": (float, 1e-4),
        "beta1": (float, 0.0),
        "beta2": (float, 0.99),
        "l2": (float, 1e-3),
        "adam_eps": (float, 1e-8),
    },
    "federation": {
        "strategy": (str, "SiloBN"),
        "rounds": (int, 50),
        "local_updates": (int, 10),
        "batch_size": (int, 32),
        "fedprox_lambda": (float, 0.0),
    },
    "run": {
        "seed": (int, 0),
        "n_seeds": (int, 1),
        "dtype": (str, "float64"),
    },
    "evaluation": {
        "eval_batch_size": (int, 256),
        "adabn_batch_count": (int, 4),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {}
        for section, keys in SCHEMA.items():
            merged[section] = {k: spec[1] for k, spec in keys.items()}
            merged[section].update(self.values.get(section, {}))
        self.values = merged

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def echo(self):
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                v = self.values[section][key]
                if isinstance(v, bool):
                    v = "true" if v else "false"
                elif isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{key} = {v!r}" if isinstance(v, str) and " " in v
                             else f"{key} = {v}")
            lines.append("")
        return "\n".join(lines)

    def adam_hyper(self):
        o = self.values["optimizer"]
        return AdamHyper(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"],
                         l2=o["l2"], eps=o["adam_eps"])


def _suggest(key, candidates):
    match = difflib.get_close_matches(key, candidates, n=1)
    return f"; did you mean {match[0]!r}?" if match else ""


def parse_config_text(text, source="<config>"):
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{section}]"
                    f"{_suggest(section, list(SCHEMA))}"
                )
            values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r} in [{section}]"
                f"{_suggest(key, list(SCHEMA[section]))}"
            )
        parse = SCHEMA[section][key][0]
        try:
            values[section][key] = parse(val.strip("'\""))
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}")
    return ExperimentConfig(values=values)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), source=str(path))
