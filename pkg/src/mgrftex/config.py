"""Flat key = value run configuration.

Every run writes its resolved configuration next to its outputs so an
experiment can be reproduced from the output directory alone.  Unknown keys
are rejected.  Command-line overrides take precedence over the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .learning import NestConfig, SelectionMode, SelectorSpec
from .sampling import SamplerConfig

__all__ = ["RunConfig", "parse_selectors", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data / run
    training_image: str = ""
    out_dir: str = "."
    seed: int = 0
    threads: int = 0  # 0 = MGRFTEX_THREADS env var, else 1
    # preprocessing
    levels: int = 8
    preprocess: str = "clahe"  # clahe | linear | none
    clahe_tile: int = 16
    clahe_clip: float = 0.03
    piece_size: int = 80
    piece_overlap: int = 22
    # model structure
    use_marginal: bool = True
    selectors: str = "gld2:8,jagstar9:8"
    selection_mode: str = "maxmin"  # plain | maxmin | softmin
    softmin_alpha: float = 10.0
    feature_radius: float = 40.0
    smoothing_eps: float = 0.1
    # annealing
    csa_runs: int = 4
    csa_sweeps: int = 50
    csa_size: int = 100
    csa_variant: str = "acsa"  # acsa | rm
    final_rounds: int = 1
    # synthesis
    synth_width: int = 180
    synth_height: int = 180
    synth_sweeps: int = 300
    synth_freeze_theta: bool = False
    seed_piece: int = 80
    # inpainting
    frame_size: int = 76
    hole_size: int = 54
    inpaint_sweeps: int = 300
    smooth_window: int = 50
    # benchmark
    bench_texture: str = "D77"
    bench_reps: int = 200
    bench_levels: int = 16
    bench_iterations: int = 8
    bench_family: str = "jagstar9"

    @classmethod
    def field_types(cls) -> dict[str, type]:
        # All fields carry defaults, so the default's type is the field type.
        return {f.name: type(f.default) for f in fields(cls)}

    @classmethod
    def from_file(cls, path: str, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls()
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                cfg.set(key, value, where=f"{path}:{lineno}")
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r}: expected key=value")
            key, value = (part.strip() for part in item.split("=", 1))
            cfg.set(key, value, where="command line")
        return cfg

    def set(self, key: str, value: str, where: str = "") -> None:
        types = self.field_types()
        if key not in types:
            raise ConfigError(f"{where}: unknown key {key!r}")
        t = types[key]
        try:
            if t is bool:
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                parsed = low in ("true", "1", "yes")
            else:
                parsed = t(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value {value!r} for {key}") from exc
        setattr(self, key, parsed)

    def resolved_text(self) -> str:
        lines = ["# resolved run configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def effective_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("MGRFTEX_THREADS", "")
        return int(env) if env.isdigit() and int(env) > 0 else 1

    def selection(self) -> SelectionMode:
        return SelectionMode(self.selection_mode, self.softmin_alpha)

    def nest_config(self) -> NestConfig:
        return NestConfig(
            levels=self.levels,
            with_marginal=self.use_marginal,
            mode=self.selection(),
            smoothing_eps=self.smoothing_eps,
            feature_radius=self.feature_radius,
            piece_size=self.piece_size,
            piece_overlap=self.piece_overlap,
            csa=SamplerConfig(
                sweeps=self.csa_sweeps,
                size=(self.csa_size, self.csa_size),
                runs=self.csa_runs,
                variant=self.csa_variant,
                threads=self.effective_threads(),
            ),
            final_rounds=self.final_rounds,
        )


def parse_selectors(text: str) -> list[SelectorSpec]:
    """Parse 'family:iterations[:add_count]' items separated by commas."""
    specs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        family = parts[0]
        iterations = int(parts[1]) if len(parts) > 1 else 8
        add = int(parts[2]) if len(parts) > 2 else 0
        try:
            specs.append(SelectorSpec(family, iterations=iterations, add_count=add))
        except ValueError as exc:
            raise ConfigError(f"bad selector {item!r}: {exc}") from exc
    if not specs:
        raise ConfigError("empty selector list")
    return specs
