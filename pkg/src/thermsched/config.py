"""Experiment configuration: a YAML file merged over shipped defaults.

Every key is optional; a key that is present must have the right type, and
unknown keys are rejected. Errors name the offending field by its dotted path.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .schedulers import SCHEDULERS, LearnerConfig, baseline_learner_config
from .simcore import SimConfig
from .thermal import PowerParams, ThermalConfigError, ThermalParams
from .workload import TaskTypeTable, VFLevel


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "mesh": {"rows": 4, "cols": 4},
    "workload": {
        "lam": 8.41,
        "task_types": None,  # CSV path; None uses the bundled table
        "p_pair": 0.5,
        "xi": None,  # pairing end rate (1/s); None matches the mean execution time
        "fixed_level": 2,
    },
    "levels": [
        {"voltage": 0.9, "freq": 2.7},
        {"voltage": 1.0, "freq": 3.0},
        {"voltage": 1.1, "freq": 3.3},
        {"voltage": 1.2, "freq": 3.6},
    ],
    "thermal": {
        "t_amb": 318.0, "t_th": 358.0, "r_vert": 2.0, "r_lat": 3.0, "r_edge": 4.0,
        "capacitance": 2.0, "dt": 1e-3, "sigma": 0.5,
    },
    "power": {"p_static": 2.0, "p_dyn_max": 14.0, "p_rtr_static": 0.5, "p_rtr_dyn": 3.0},
    "learner": {
        "A": 50.0, "B": 1000.0, "eps_min": 0.05, "eps_decay": 500.0,
        "centers": 2, "rbf_centers": None, "rbf_sigma": None, "rbf_mode": "raw",
        "ref_delay": 250, "train_runs": 10, "train_seed": 0,
    },
    "run": {
        "scheduler": "dvfs", "horizon": 300.0, "warmup_frac": 0.1, "quota": 0.1,
        "reward_mode": "integral", "seeds": [0], "heatmap_every": None, "out": "out",
    },
    "sweep": {"grid": {}, "max_runs": 2000, "scale_load_with_mesh": True},
}

# fields that may be null; everything else must carry a value
_NULLABLE = {"workload.task_types", "workload.xi", "learner.rbf_centers", "learner.rbf_sigma",
             "run.heatmap_every", "thermal.r_edge"}


def _check_type(path: str, value: Any, default: Any) -> Any:
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigError(f"{path}: required field is missing (null)")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _merge(path: str, base: Any, override: Any) -> Any:
    if isinstance(base, dict):
        if path == "sweep.grid":
            if not isinstance(override, dict):
                raise ConfigError(f"{path}: expected a mapping of parameter -> list")
            return dict(override)
        if not isinstance(override, dict):
            raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(override).__name__}")
        out = copy.deepcopy(base)
        for key, val in override.items():
            sub = f"{path}.{key}" if path else str(key)
            if key not in base:
                raise ConfigError(f"{sub}: unknown field")
            out[key] = _merge(sub, base[key], val)
        return out
    if path == "levels":
        if not isinstance(override, list) or not override:
            raise ConfigError(f"{path}: expected a nonempty list of {{voltage, freq}}")
        for i, lv in enumerate(override):
            if not isinstance(lv, dict):
                raise ConfigError(f"{path}[{i}]: expected a mapping")
            for req in ("voltage", "freq"):
                if req not in lv or lv[req] is None:
                    raise ConfigError(f"{path}[{i}].{req}: required field is missing")
            extra = set(lv) - {"voltage", "freq"}
            if extra:
                raise ConfigError(f"{path}[{i}].{sorted(extra)[0]}: unknown field")
        return override
    if path == "run.seeds":
        if not isinstance(override, list) or not override or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in override):
            raise ConfigError(f"{path}: expected a nonempty list of integers")
        return override
    if path in ("learner.rbf_centers",) and override is not None:
        if not isinstance(override, list) or not override:
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(c) for c in override]
    if base is None:
        return override
    return _check_type(path, override, base)


@dataclass
class ExperimentConfig:
    raw: dict[str, Any]

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "ExperimentConfig":
        cfg = cls(_merge("", DEFAULTS, data or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({})
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        return cls.from_dict(data)

    def with_overrides(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with ``{"run.seeds": [1]}``-style overrides applied."""
        data = copy.deepcopy(self.raw)
        for key, val in dotted.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        return ExperimentConfig.from_dict(data)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=None)

    def header(self, prefix: str = "# ") -> str:
        """The resolved config as comment lines."""
        return "".join(f"{prefix}{line}\n" for line in self.dump().splitlines())

    # -- views ---------------------------------------------------------------------
    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.raw[section]

    @property
    def scheduler(self) -> str:
        return self.raw["run"]["scheduler"]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["run"]["seeds"])

    def validate(self) -> None:
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"run.scheduler: {self.scheduler!r} is not one of {', '.join(SCHEDULERS)}")
        for key in ("rows", "cols"):
            if self.raw["mesh"][key] < 2:
                raise ConfigError(f"mesh.{key}: must be at least 2")
        if self.raw["learner"]["train_runs"] < 0:
            raise ConfigError("learner.train_runs: must be nonnegative")
        if self.raw["sweep"]["max_runs"] < 1:
            raise ConfigError("sweep.max_runs: must be positive")
        try:
            self.thermal_params().validate()
        except ThermalConfigError as exc:
            raise ConfigError(f"thermal: unstable parameters: {exc}") from None
        try:
            self.sim_config()
        except ThermalConfigError as exc:
            raise ConfigError(f"thermal: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"config: {exc}") from None
        try:
            self.learner_config()
        except ValueError as exc:
            raise ConfigError(f"learner: {exc}") from None

    def levels(self) -> tuple[VFLevel, ...]:
        return tuple(VFLevel(float(lv["voltage"]), float(lv["freq"])) for lv in self.raw["levels"])

    def thermal_params(self) -> ThermalParams:
        t = self.raw["thermal"]
        return ThermalParams(t_amb=t["t_amb"], r_vert=t["r_vert"], r_lat=t["r_lat"],
                             capacitance=t["capacitance"], dt=t["dt"], sigma=t["sigma"],
                             r_edge=t["r_edge"])

    def sim_config(self) -> SimConfig:
        w, r, t = self.raw["workload"], self.raw["run"], self.raw["thermal"]
        table = TaskTypeTable.load(w["task_types"]) if w["task_types"] else TaskTypeTable.default()
        levels = self.levels()
        if not 0 <= w["fixed_level"] < len(levels):
            raise ConfigError(f"workload.fixed_level: {w['fixed_level']} outside 0..{len(levels) - 1}")
        if w["xi"] is not None and w["xi"] <= 0:
            raise ConfigError("workload.xi: must be positive")
        return SimConfig(
            rows=self.raw["mesh"]["rows"], cols=self.raw["mesh"]["cols"], table=table, lam=w["lam"],
            fixed_level=w["fixed_level"], thermal=self.thermal_params(),
            power=PowerParams(levels=levels, **self.raw["power"]), t_th=t["t_th"], p_pair=w["p_pair"],
            comm_mean=None if w["xi"] is None else 1.0 / w["xi"], horizon=r["horizon"],
            warmup_frac=r["warmup_frac"], quota=r["quota"], reward_mode=r["reward_mode"],
            heatmap_every=r["heatmap_every"])

    def learner_config(self, scheduler: str | None = None) -> LearnerConfig | None:
        name = scheduler or self.scheduler
        if name in ("rand", "tbo"):
            return None
        lr, r, t = self.raw["learner"], self.raw["run"], self.raw["thermal"]
        kw = dict(A=lr["A"], B=lr["B"], eps_min=lr["eps_min"], eps_decay=lr["eps_decay"],
                  fixed_level=self.raw["workload"]["fixed_level"], centers=lr["centers"],
                  rbf_centers=None if lr["rbf_centers"] is None else tuple(lr["rbf_centers"]),
                  rbf_sigma=lr["rbf_sigma"], rbf_mode=lr["rbf_mode"], ref_delay=lr["ref_delay"],
                  t_range=(t["t_amb"], t["t_th"]))
        if name in ("lct", "ldt"):
            return baseline_learner_config(name, **kw)
        return LearnerConfig(mode=name, **kw)
