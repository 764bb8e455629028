"""
Configuration loader for rome.

Priority (highest → lowest):
1. CLI overrides                      (``--section.key value`` after the subcommand)
2. Environment variables              (e.g. ROME_EM_G)
3. INI file                           (``--config PATH``, else rome.ini / .rome.ini / ~/.config/rome/config.ini)
4. Code defaults                      (see DEFAULTS)
"""
from __future__ import annotations

import os
from configparser import ConfigParser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List

import numpy as np

from .analysis.subgroups import SubgroupScheme
from .errors import ConfigError
from .models.core import Dataset, FeatureSpec
from .models.dro import constraint_grid
from .models.em import EmConfig
from .models.moe import MoeConfig
from .simgen import SimSpec

CONFIG_FILENAMES = ("rome.ini", ".rome.ini")
ENV_PREFIX = "ROME_"
ALL_ROLES = "Baseline MLP,Baseline MLP - Fair,Vanilla MoE,ROME-MoE-S,ROME-MoE-AS"
CATEGORICAL_LEVELS = 10

DEFAULTS = {
    "data.path": "",
    "data.a_names": "",
    "data.s_names": "",
    "data.y_name": "y",
    "data.mem_names": "",  # empty = every sensitive column
    "data.out_names": "",
    "data.group_column": "",
    "data.standardize": "true",

    "split.fractions": "0.6,0.2,0.2",

    "run.seeds": "0,1,2,3,4,5,6,7,8,9",
    "run.workers": "0",  # 0 = auto
    "run.out": "runs",

    "em.g": "4",
    "em.max_iter": "100",
    "em.tau1": "1e-3",
    "em.tau2": "5e-3",
    "em.ridge": "1e-8",
    "em.min_group_n": "",
    "em.g_grid": "",

    "dro.c_grid": "",  # empty = the default 27-value sweep
    "dro.v0": "",
    "dro.max_iter": "5000",
    "dro.tol": "1e-10",
    "dro.gram_rows": "train",

    "moe.g": "4",
    "moe.alpha": "0.05",
    "moe.lr": "1e-3",
    "moe.batch": "256",
    "moe.epochs": "50",
    "moe.hidden_expert": "64",
    "moe.hidden_gate": "64",
    "moe.mask_threshold": "0.1",
    "moe.optimizer": "adam",
    "moe.group_residual": "mixture",
    "moe.roles": ALL_ROLES,

    "sim.n": "8000",
    "sim.n_test": "",
    "sim.g": "4",
    "sim.noise_sd": "1.0",
    "sim.misspec_rate": "0.5",

    "eval.schemes": "",  # ';'-separated, e.g. S2:quartile,S3:quartile;S1:median
    "eval.min_n": "30",
    "eval.r2_center": "local",
    "eval.baseline": "Baseline MLP - Fair",
    "eval.models": "",

    "ablation.alphas": "0,0.05,0.1,0.2,0.5,1.0",
    "ablation.variants": "s,as",

    "tune.lrs": "1e-2,1e-3,1e-4",
    "tune.hidden": "32,64,128",
    "tune.gate_hidden": "16,32,64,128",
    "tune.roles": ALL_ROLES,
}


def _search_config_file() -> Path | None:
    """Return first existing config file path or None."""
    paths = [Path.cwd() / name for name in CONFIG_FILENAMES] + [Path.home() / ".config" / "rome" / "config.ini"]
    return next((p for p in paths if p.exists()), None)


def parse_overrides(args: Iterable[str]) -> dict[str, str]:
    """``["--em.g", "3", "--run.seeds=1", "--run.seeds", "1"]`` -> ``{"em.g": "3", "run.seeds": "1,1"}``.

    A key given more than once accumulates into a comma list.
    """
    args = list(args)
    overrides: dict[str, str] = {}
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}; overrides look like --section.key value")
        key, eq, value = token[2:].partition("=")
        if not eq:
            if i + 1 >= len(args):
                raise ConfigError(f"override {token!r} has no value")
            value = args[i + 1]
            i += 1
        i += 1
        if key not in DEFAULTS:
            raise ConfigError(f"unknown setting {key!r}")
        overrides[key] = f"{overrides[key]},{value}" if key in overrides else value
    return overrides


def _split(raw: str, sep: str = ",") -> List[str]:
    return [item.strip() for item in raw.split(sep) if item.strip()]


@dataclass(slots=True)
class Settings:
    values: dict[str, str]
    source: Path | None = None
    seeds: List[int] = field(default_factory=list)
    fractions: List[float] = field(default_factory=list)
    workers: int = 0
    out: Path = Path("runs")

    @classmethod
    def load(cls, cli_overrides: dict | None = None, config_path: Path | None = None) -> "Settings":
        overrides = cli_overrides or {}
        parser = ConfigParser()
        structured: dict = {}
        for dotted_key, value in DEFAULTS.items():
            section, option = dotted_key.split(".")
            structured.setdefault(section, {})[option] = value
        parser.read_dict(structured)

        if config_path is not None and not Path(config_path).exists():
            raise ConfigError(f"config file not found: {config_path}")
        cfg = Path(config_path) if config_path else _search_config_file()
        if cfg:
            parser.read(cfg)

        def _get(dotted_key: str) -> str:
            """
            Resolve a config value with precedence:
            1) CLI overrides  2) ROME_* env var  3) INI file  4) DEFAULTS
            """
            if overrides.get(dotted_key) is not None:
                return str(overrides[dotted_key])
            env_key = f"{ENV_PREFIX}{dotted_key.replace('.', '_').upper()}"
            if env_val := os.getenv(env_key):
                return env_val
            section, option = dotted_key.split(".")
            return parser.get(section, option)

        values = {key: _get(key).strip() for key in DEFAULTS}
        settings = cls(values=values, source=cfg)
        settings.seeds = settings.get_ints("run.seeds")
        settings.fractions = settings.get_floats("split.fractions")
        settings.workers = settings.get_int("run.workers")
        settings.out = Path(values["run.out"] or "runs")
        settings._validate()
        return settings

    # -------- typed access -------- #
    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from exc

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from exc

    def get_bool(self, key: str) -> bool:
        raw = self.values[key].lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self.values[key]!r}")

    def get_list(self, key: str, sep: str = ",") -> List[str]:
        return _split(self.values[key], sep)

    def get_ints(self, key: str) -> List[int]:
        try:
            return [int(x) for x in self.get_list(key)]
        except ValueError as exc:
            raise ConfigError(f"{key} must be a comma list of integers, got {self.values[key]!r}") from exc

    def get_floats(self, key: str) -> List[float]:
        try:
            return [float(x) for x in self.get_list(key)]
        except ValueError as exc:
            raise ConfigError(f"{key} must be a comma list of numbers, got {self.values[key]!r}") from exc

    def _validate(self) -> None:
        if not self.seeds:
            raise ConfigError("run.seeds must name at least one seed")
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split.fractions must be three positive numbers summing to 1, got {self.fractions}")
        if self.workers < 0:
            raise ConfigError("run.workers must be >= 0")
        if self.values["dro.gram_rows"] not in ("train", "test"):
            raise ConfigError("dro.gram_rows must be 'train' or 'test'")
        if self.values["eval.r2_center"] not in ("local", "global"):
            raise ConfigError("eval.r2_center must be 'local' or 'global'")
        self.get_bool("data.standardize")
        self.c_grid()

    # -------- domain configs -------- #
    def feature_spec(self) -> FeatureSpec:
        a_names, s_names = self.get_list("data.a_names"), self.get_list("data.s_names")
        if not a_names or not s_names:
            raise ConfigError("data.a_names and data.s_names are required")

        def indices(key: str) -> list[int]:
            names = self.get_list(key) or s_names
            missing = [n for n in names if n not in s_names]
            if missing:
                raise ConfigError(f"{key} names columns that are not sensitive: {missing}")
            return [s_names.index(n) for n in names]

        return FeatureSpec(a_names, s_names, self.get("data.y_name"), indices("data.mem_names"), indices("data.out_names"))

    def data_path(self) -> Path:
        raw = self.get("data.path")
        if not raw:
            raise ConfigError("data.path is required")
        path = Path(raw)
        if not path.exists():
            raise ConfigError(f"data file not found: {path}")
        return path

    def em_config(self, seed: int | None = None) -> EmConfig:
        min_n = self.get("em.min_group_n")
        return EmConfig(
            g=self.get_int("em.g"),
            max_iter=self.get_int("em.max_iter"),
            tau1=self.get_float("em.tau1"),
            tau2=self.get_float("em.tau2"),
            ridge=self.get_float("em.ridge"),
            min_group_n=int(min_n) if min_n else None,
            seed=seed,
        )

    def c_grid(self) -> List[float]:
        grid = self.get_floats("dro.c_grid") or constraint_grid()
        if any(not 0.0 <= c <= 1.0 for c in grid):
            raise ConfigError(f"dro.c_grid values must lie in [0, 1], got {grid}")
        return grid

    def dro_solver(self) -> dict:
        """Keyword arguments shared by every DroConfig in a sweep."""
        v0 = self.get_floats("dro.v0")
        return {"v0": tuple(v0) if v0 else None, "max_iter": self.get_int("dro.max_iter"), "tol": self.get_float("dro.tol")}

    def moe_config(self, seed: int = 0) -> MoeConfig:
        return MoeConfig(
            g=self.get_int("moe.g"),
            alpha=self.get_float("moe.alpha"),
            lr=self.get_float("moe.lr"),
            batch=self.get_int("moe.batch"),
            epochs=self.get_int("moe.epochs"),
            hidden_expert=self.get_int("moe.hidden_expert"),
            hidden_gate=self.get_int("moe.hidden_gate"),
            mask_threshold=self.get_float("moe.mask_threshold"),
            seed=seed,
            optimizer=self.get("moe.optimizer"),
            group_residual=self.get("moe.group_residual"),
        )

    def sim_spec(self) -> SimSpec:
        return SimSpec(
            n=self.get_int("sim.n"),
            g=self.get_int("sim.g"),
            noise_sd=self.get_float("sim.noise_sd"),
            misspec_rate=self.get_float("sim.misspec_rate"),
        )

    def sim_n_test(self) -> int | None:
        return self.get_int("sim.n_test") if self.get("sim.n_test") else None

    def schemes(self, train: Dataset) -> List[SubgroupScheme]:
        """Configured schemes, fitted on ``train``.

        By default each sensitive column gets its own scheme: ``categorical`` when
        it takes at most ``CATEGORICAL_LEVELS`` distinct training values,
        ``quartile`` otherwise.
        """
        texts = self.get_list("eval.schemes", sep=";")
        if not texts:
            for k, name in enumerate(train.spec.s_names):
                levels = np.unique(train.s[:, k]).size
                texts.append(f"{name}:{'categorical' if levels <= CATEGORICAL_LEVELS else 'quartile'}")
            if train.labels is not None:
                texts.append("group:latent")
        return [SubgroupScheme.parse(text).fit(train) for text in texts]

    def canonical(self) -> str:
        """Resolved settings as a sorted INI document."""
        sections: dict[str, list[tuple[str, str]]] = {}
        for key in sorted(self.values):
            section, option = key.split(".")
            sections.setdefault(section, []).append((option, self.values[key]))
        lines = []
        for section, items in sections.items():
            lines.append(f"[{section}]")
            lines.extend(f"{option} = {value}" for option, value in items)
            lines.append("")
        return "\n".join(lines)

    def write_echo(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "run_config.ini"
        path.write_text(self.canonical(), encoding="utf-8")
        return path
