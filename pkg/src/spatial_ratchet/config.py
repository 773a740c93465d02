"""Run configuration: a plain-text key/value document with named sections.

The document round-trips exactly (parse(emit(cfg)) == cfg), and every typed
accessor raises ConfigInvalid carrying the section/key context, so the CLI
can report field-level diagnostics.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid
from .model import FitnessSequence, ModelParams, RatePolynomials, Scaling
from .pde import Grid1D, SolverConfig
from .profiles import (
    Constant,
    GaussianBump,
    Indicator,
    InitialProfile,
    scaled_by_alpha,
)

EXPERIMENTS = (
    "solve-pde",
    "simulate-ips",
    "tracer",
    "speed",
    "equilibrium",
    "bounds",
    "converge",
    "poisson-limit",
    "oracle-check",
)

STOCHASTIC_EXPERIMENTS = ("simulate-ips", "converge")


@dataclass(frozen=True)
class RunConfig:
    """Immutable view of a parsed config document."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    # -- raw access -------------------------------------------------------

    def get(self, section: str, key: str, default: str | None = None) -> str:
        sec = self.sections.get(section, {})
        if key in sec:
            return sec[key]
        if default is None:
            raise ConfigInvalid(f"[{section}] {key}: required key missing")
        return default

    def _typed(self, section, key, conv, default=None):
        raw = self.get(section, key, default)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"[{section}] {key}: {exc}") from exc

    def get_float(self, section, key, default=None):
        return self._typed(section, key, float, default)

    def get_int(self, section, key, default=None):
        return self._typed(section, key, int, default)

    def get_bool(self, section, key, default=None):
        def conv(raw):
            val = raw.strip().lower()
            if val in ("true", "yes", "1", "on"):
                return True
            if val in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")

        return self._typed(section, key, conv, default)

    def get_floats(self, section, key, default=None):
        return self._typed(
            section, key, lambda raw: [float(tok) for tok in raw.split()], default
        )

    # -- document surgery ---------------------------------------------------

    def with_overrides(self, pairs: list[str]) -> "RunConfig":
        """Apply dotted --set overrides like 'model.mu=0.05'."""
        sections = {name: dict(body) for name, body in self.sections.items()}
        for pair in pairs:
            if "=" not in pair or "." not in pair.split("=", 1)[0]:
                raise ConfigInvalid(
                    f"override {pair!r} must look like section.key=value"
                )
            dotted, value = pair.split("=", 1)
            section, key = dotted.split(".", 1)
            sections.setdefault(section.strip(), {})[key.strip()] = value.strip()
        return RunConfig(sections)

    # -- typed model construction -------------------------------------------

    @property
    def experiment(self) -> str:
        exp = self.get("run", "experiment")
        if exp not in EXPERIMENTS:
            raise ConfigInvalid(
                f"[run] experiment: {exp!r} is not one of {', '.join(EXPERIMENTS)}"
            )
        return exp

    @property
    def output_format(self) -> str:
        fmt = self.get("run", "format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigInvalid(f"[run] format: {fmt!r} must be csv or json")
        return fmt

    @property
    def seed(self) -> int | None:
        if "run" not in self.sections or "seed" not in self.sections["run"]:
            return None
        return self.get_int("run", "seed")

    def require_seed(self) -> int:
        seed = self.seed
        if seed is None:
            raise ConfigInvalid(
                "[run] seed: mandatory for stochastic experiments"
            )
        return seed

    def model_params(self) -> ModelParams:
        fit_raw = self.get("model", "fitness").split()
        try:
            if fit_raw[0] == "geometric":
                fitness = FitnessSequence.geometric(float(fit_raw[1]))
            elif fit_raw[0] == "harmonic":
                fitness = FitnessSequence.harmonic()
            elif fit_raw[0] == "table":
                fitness = FitnessSequence.from_table([float(v) for v in fit_raw[1:]])
            else:
                raise ValueError(f"unknown fitness kind {fit_raw[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigInvalid(f"[model] fitness: {exc}") from exc
        try:
            rates = RatePolynomials(
                q_plus=tuple(self.get_floats("model", "q_plus")),
                q_minus=tuple(self.get_floats("model", "q_minus")),
            )
            scaling = Scaling(
                N=self.get_int("model", "N", "100"),
                L_ratio=self.get_float("model", "L_ratio", "1.0"),
            )
            return ModelParams(
                m=self.get_float("model", "m"),
                mu=self.get_float("model", "mu"),
                fitness=fitness,
                rates=rates,
                scaling=scaling,
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[model]: {exc}") from exc

    def grid(self) -> Grid1D:
        x_min = self.get_float("grid", "x_min")
        x_max = self.get_float("grid", "x_max")
        if "nx" in self.sections.get("grid", {}):
            return Grid1D(x_min, x_max, self.get_int("grid", "nx"))
        dx = self.get_float("grid", "dx")
        return Grid1D.from_dx(x_min, x_max, dx)

    def solver(self) -> SolverConfig:
        dt_raw = self.sections.get("solver", {}).get("dt")
        try:
            return SolverConfig(
                scheme=self.get("solver", "scheme", "rk4"),
                dt=float(dt_raw) if dt_raw is not None else None,
                safety=self.get_float("solver", "safety", "0.4"),
                clamp_negatives=self.get_bool("solver", "clamp_negatives", "true"),
                snapshot_times=tuple(self.get_floats("solver", "snapshots")),
                K=self.get_int("solver", "K", "32"),
            )
        except ValueError as exc:
            raise ConfigInvalid(f"[solver]: {exc}") from exc

    def profile(self, params: ModelParams, K: int) -> InitialProfile:
        sec = self.sections.get("profile", {})
        shapes = {}
        if "alpha_bump" in sec:
            toks = self.get_floats("profile", "alpha_bump")
            if len(toks) not in (1, 3):
                raise ConfigInvalid(
                    "[profile] alpha_bump: expected 'mass' or 'mass a b'"
                )
            from .analysis import alpha_sequence

            alpha = alpha_sequence(params, K)
            window = (toks[1], toks[2]) if len(toks) == 3 else (None, None)
            shapes.update(scaled_by_alpha(alpha, toks[0], *window))
        for key in sec:
            if not key.startswith("class_"):
                continue
            try:
                k = int(key.removeprefix("class_"))
            except ValueError as exc:
                raise ConfigInvalid(f"[profile] {key}: bad class index") from exc
            shapes[k] = self._parse_shape("profile", key)
        if not shapes:
            raise ConfigInvalid("[profile]: no shapes given")
        tracer_mode = sec.get("tracer", "none")
        profile = InitialProfile(shapes=shapes)
        if tracer_mode == "none":
            return profile
        if tracer_mode == "label_mutants":
            from .profiles import label_mutants

            return label_mutants(profile)
        raise ConfigInvalid(
            f"[profile] tracer: {tracer_mode!r} must be none or label_mutants"
        )

    def _parse_shape(self, section, key):
        toks = self.get(section, key).split()
        try:
            kind = toks[0]
            args = [float(v) for v in toks[1:]]
            if kind == "constant" and len(args) == 1:
                return Constant(args[0])
            if kind == "indicator" and len(args) == 3:
                return Indicator(*args)
            if kind == "gaussian" and len(args) == 3:
                return GaussianBump(*args)
        except ValueError as exc:
            raise ConfigInvalid(f"[{section}] {key}: {exc}") from exc
        raise ConfigInvalid(
            f"[{section}] {key}: expected 'constant c', 'indicator a b c' "
            f"or 'gaussian center width height'"
        )


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"config document does not parse: {exc}") from exc
    sections = {
        name: dict(parser.items(name)) for name in parser.sections()
    }
    return RunConfig(sections)


def emit_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, body in cfg.sections.items():
        parser[name] = dict(body)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# built-in presets


def _fig_sections(tracer: str) -> dict[str, dict[str, str]]:
    return {
        "run": {
            "experiment": "solve-pde" if tracer == "none" else "tracer",
            "format": "csv",
        },
        "model": {
            "m": "3.0",
            "mu": "0.025",
            "fitness": "geometric 0.05",
            "q_plus": "1.0",
            "q_minus": "0.0 1.0",
            "N": "100",
            "L_ratio": "1.0",
        },
        "grid": {"x_min": "-50.0", "x_max": "350.0", "dx": "0.25"},
        "solver": {
            "scheme": "rk4",
            "safety": "0.4",
            "clamp_negatives": "true",
            "K": "32",
            "T": "60.0",
            "snapshots": "0 10 20 30 40 50 60",
        },
        "profile": {"alpha_bump": "0.5 -5.0 5.0", "tracer": tracer},
        "experiment": {"level": "0.1", "t_fit": "20 60", "emit_max_class": "4"},
    }


def preset(name: str) -> RunConfig:
    """Built-in named configs."""
    if name == "fig1":
        return RunConfig(_fig_sections("none"))
    if name == "fig2":
        return RunConfig(_fig_sections("label_mutants"))
    if name == "speed-sweep":
        sections = _fig_sections("none")
        sections["run"]["experiment"] = "speed"
        sections["experiment"]["B_values"] = "0.5 1.5 3 5"
        sections["experiment"]["r"] = "1.0"
        sections["grid"] = {"x_min": "-40.0", "x_max": "260.0", "dx": "0.5"}
        sections["solver"]["T"] = "50.0"
        sections["solver"]["K"] = "16"
        sections["solver"]["snapshots"] = " ".join(
            str(float(t)) for t in range(0, 51, 2)
        )
        sections["experiment"]["t_fit"] = "20 50"
        return RunConfig(sections)
    if name == "converge":
        return RunConfig(
            {
                "run": {"experiment": "converge", "format": "csv", "seed": "1000"},
                "model": {
                    "m": "3.0",
                    "mu": "0.025",
                    "fitness": "geometric 0.05",
                    "q_plus": "1.0",
                    "q_minus": "0.0 1.0",
                    "N": "100",
                    "L_ratio": "1.0",
                },
                "profile": {"class_0": "constant 0.5", "tracer": "none"},
                "ips": {"W": "32", "K": "8", "n_reps": "32", "T": "5.0"},
                "experiment": {"N_values": "25 100 400"},
            }
        )
    raise ConfigInvalid(f"unknown preset {name!r}")


def resolve_config(path_or_preset: str) -> RunConfig:
    import os

    if os.path.exists(path_or_preset):
        with open(path_or_preset, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    try:
        return preset(path_or_preset)
    except ConfigInvalid:
        raise ConfigInvalid(
            f"config {path_or_preset!r}: no such file and not a built-in preset"
        ) from None
