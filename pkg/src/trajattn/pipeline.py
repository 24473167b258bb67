"""Step-gated control loop around the toy block.

Separation guidance (masked cross-attention to the union prompt embedding)
is active for the first ``t_a`` steps; the decoupled rotary table plus the
R-token self mask for the first ``t_b`` steps. The "denoiser" is a residual
surrogate: ``x <- x + step_size * cfg_combine(block(x | cond), block(x))``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .analysis import (
    control_tables,
    diagonal_ratio,
    frame_block,
    head_averaged_probs,
    inter_frame_fg_score,
    toy_features,
)
from .attention import BlockWeights, ConditionEmbedding, dit_block
from .errors import ConfigError, OutOfBounds, ShapeMismatch, TrajAttnError
from .export import (
    export_mask_csv,
    export_mask_pgm,
    export_rope_csv,
    to_gray,
    write_json,
    write_matrix_csv,
    write_pgm,
)
from .guidance import PromptBundle, RemoteSplitter, StubSplitter, encode_text, split_prompt, union_condition
from .lattice import LatentShape, TokenLattice, patchify
from .masking import AttentionMask, build_cross_mask
from .rope import RopeLayout, RopeTable, build_3d_rope, select_anchor
from .trajectory import Trajectory, foreground_token_set, parse_trajectory, trajectory_to_document

SCHEMA_VERSION = 1
FORMATS = ("csv", "pgm", "json")
PGM_MAX_TOKENS = 4096


@dataclass
class ScheduleConfig:
    total_steps: int = 50
    t_a: int = 30
    t_b: int = 5
    cfg_scale: float = 5.0
    seed: int = 0
    anchor_mode: str = "random"
    three_d_aware: bool = False
    # after t_a: "merged" = original prompt, no mask; "union" = union embedding, no mask
    post_guidance: str = "merged"
    step_size: float = 0.05

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        for name in ("t_a", "t_b"):
            v = getattr(self, name)
            if not 0 <= v <= self.total_steps:
                raise ConfigError(f"{name}={v} must lie in [0, total_steps={self.total_steps}]")
        if self.cfg_scale < 0:
            raise ConfigError("cfg_scale must be >= 0")
        self.anchor_mode = self.anchor_mode.replace("-", "_")
        if self.anchor_mode not in ("random", "min_box"):
            raise ConfigError(f"anchor_mode must be random or min_box, got {self.anchor_mode!r}")
        if self.post_guidance not in ("merged", "union"):
            raise ConfigError(f"post_guidance must be merged or union, got {self.post_guidance!r}")


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 4
    qk_align: float = 0.9
    theta_base: float = 10000.0
    channels: list[int] | None = None
    dtype: str = "float64"
    text_max_tokens: int = 64
    text_seed: int = 0

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")

    def layout(self) -> RopeLayout:
        hd = self.dim // self.heads
        if self.channels is None:
            return RopeLayout.default(hd, self.theta_base)
        return RopeLayout(hd, *self.channels, theta_base=self.theta_base)


@dataclass
class SplitterConfig:
    mode: str = "stub"
    endpoint: str | None = None
    model: str | None = None
    timeout: float = 60.0
    api_key_env: str = "SPLITTER_API_KEY"

    def client(self):
        if self.mode == "stub":
            return StubSplitter()
        if self.mode == "remote":
            if not self.endpoint or not self.model:
                raise ConfigError("remote splitter needs 'endpoint' and 'model'")
            return RemoteSplitter(self.endpoint, self.model, self.timeout, self.api_key_env)
        raise ConfigError(f"splitter mode must be stub or remote, got {self.mode!r}")


@dataclass
class ExportConfig:
    formats: list[str] = field(default_factory=lambda: list(FORMATS))
    attention_frames: list[int] | None = None
    masks: bool = True
    rope: bool = True

    def __post_init__(self):
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise ConfigError(f"unknown export formats {sorted(bad)}")


@dataclass
class RunConfig:
    latent: LatentShape
    trajectory: Trajectory
    prompt: str
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    splitter: SplitterConfig = field(default_factory=SplitterConfig)
    export: ExportConfig = field(default_factory=ExportConfig)
    output_dir: Path = Path("out")

    @property
    def lattice(self) -> TokenLattice:
        return patchify(self.latent)


_TOP_FIELDS = {"latent", "trajectory", "prompt", "schedule", "model", "splitter", "export", "output_dir"}


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown fields in '{name}': {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, TrajAttnError) as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from None


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON run config. Relative paths resolve against its directory.

    ``overrides`` maps ``"section.field"`` to a value and is applied before
    validation.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        raw.setdefault(section, {})
        if raw[section] is None:
            raw[section] = {}
        raw[section][name] = value
    return config_from_dict(raw, path.parent)


def config_from_dict(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(raw) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for key in ("latent", "trajectory", "prompt"):
        if key not in raw:
            raise ConfigError(f"config missing '{key}'")
    latent = _section(LatentShape, raw["latent"], "latent")

    traj_src = raw["trajectory"]
    if isinstance(traj_src, str):
        traj_path = (base_dir / traj_src).resolve()
        if not traj_path.is_file():
            raise ConfigError(f"trajectory file not found: {traj_path}")
        traj_src = traj_path
    try:
        trajectory = parse_trajectory(traj_src)
    except TrajAttnError as exc:
        raise ConfigError(f"trajectory: {exc}") from None

    out = Path(raw.get("output_dir", "out"))
    return RunConfig(
        latent=latent,
        trajectory=trajectory,
        prompt=str(raw["prompt"]),
        schedule=_section(ScheduleConfig, raw.get("schedule"), "schedule"),
        model=_section(ModelConfig, raw.get("model"), "model"),
        splitter=_section(SplitterConfig, raw.get("splitter"), "splitter"),
        export=_section(ExportConfig, raw.get("export"), "export"),
        output_dir=out if out.is_absolute() else base_dir / out,
    )


@dataclass
class ControlPlan:
    """Everything the gated step needs, computed once per run."""

    lattice: TokenLattice
    trajectory: Trajectory
    table: RopeTable
    std_table: RopeTable
    self_mask: AttentionMask
    cross_mask: AttentionMask
    union_cond: ConditionEmbedding
    merged_cond: ConditionEmbedding
    anchor_frame: int
    prompts: PromptBundle
    sets: dict

    @property
    def std_noop(self) -> bool:
        return self.std_table.equals(self.table)


def build_plan(cfg: RunConfig, client=None) -> ControlPlan:
    lattice = cfg.lattice
    traj = cfg.trajectory
    traj.check(lattice)
    m, s = cfg.model, cfg.schedule
    dtype = np.dtype(m.dtype)

    table = build_3d_rope(lattice, m.layout())
    anchor = select_anchor(traj, "min_box" if s.three_d_aware else s.anchor_mode, s.seed)
    std, self_mask, sets = control_tables(table, traj, anchor, s.three_d_aware)

    bundle = split_prompt(cfg.prompt, client or cfg.splitter.client())

    def enc(text):
        return encode_text(text, m.dim, m.text_seed, m.text_max_tokens, dtype)

    union = union_condition(enc(bundle.foreground), enc(bundle.background))
    merged = ConditionEmbedding(enc(cfg.prompt))
    cross = build_cross_mask(foreground_token_set(traj, lattice), lattice, union.layout)
    return ControlPlan(lattice, traj, table, std, self_mask, cross, union, merged, anchor, bundle, sets)


@dataclass
class PipelineState:
    step: int
    features: np.ndarray
    rope: RopeTable
    diagnostics: list = field(default_factory=list)


def cfg_combine(cond_out: np.ndarray, uncond_out: np.ndarray, scale: float) -> np.ndarray:
    if cond_out.shape != uncond_out.shape:
        raise ShapeMismatch(f"cond {cond_out.shape} vs uncond {uncond_out.shape}")
    return uncond_out + scale * (cond_out - uncond_out)


def initial_state(plan: ControlPlan, cfg: RunConfig) -> PipelineState:
    x = toy_features(plan.lattice, cfg.model.dim, cfg.schedule.seed).astype(cfg.model.dtype)
    return PipelineState(0, x, plan.table)


def make_weights(cfg: RunConfig) -> BlockWeights:
    m = cfg.model
    return BlockWeights.init(cfg.schedule.seed, m.dim, m.heads, m.qk_align, np.dtype(m.dtype))


def denoise_step(
    state: PipelineState, cfg: ScheduleConfig, plan: ControlPlan, weights: BlockWeights
) -> PipelineState:
    s = state.step
    if s >= cfg.total_steps:
        raise OutOfBounds(f"step {s} >= total_steps {cfg.total_steps}")
    std_active = s < cfg.t_b
    sg_active = s < cfg.t_a

    table = plan.std_table if std_active else plan.table
    self_mask = plan.self_mask if std_active else None
    if sg_active:
        cond, cross_mask = plan.union_cond, plan.cross_mask
    else:
        cond = plan.merged_cond if cfg.post_guidance == "merged" else plan.union_cond
        cross_mask = None

    try:
        out_c = dit_block(state.features, weights, table, cond, self_mask, cross_mask)
        out_u = dit_block(state.features, weights, table, None, self_mask)
    except TrajAttnError as exc:
        raise type(exc)(f"step {s}: {exc}") from None
    x = state.features + cfg.step_size * cfg_combine(out_c.residual, out_u.residual, cfg.cfg_scale)

    score = inter_frame_fg_score(out_c.self_probs.mean(axis=0), plan.trajectory, plan.lattice)
    record = {
        "step": s,
        "sg_active": sg_active,
        "std_active": std_active,
        "inter_frame_fg_score": score,
    }
    return PipelineState(s + 1, x, table, state.diagnostics + [record])


def run_steps(cfg: RunConfig, plan: ControlPlan, weights: BlockWeights) -> tuple[PipelineState, list[float]]:
    state = initial_state(plan, cfg)
    timings = []
    for _ in range(cfg.schedule.total_steps):
        t0 = time.perf_counter()
        state = denoise_step(state, cfg.schedule, plan, weights)
        timings.append(time.perf_counter() - t0)
    return state, timings


def features_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()


def attention_maps(plan: ControlPlan, weights: BlockWeights, x: np.ndarray, frame_a: int, frame_b: int) -> dict:
    """Frame-pair maps and inter-frame scores with the original and decoupled tables."""
    lattice = plan.lattice
    for f in (frame_a, frame_b):
        if not 0 <= f < lattice.frames:
            raise OutOfBounds(f"frame {f} outside [0, {lattice.frames})")
    p_before = head_averaged_probs(x, plan.table, weights)
    p_after = head_averaged_probs(x, plan.std_table, weights)
    p_masked = head_averaged_probs(x, plan.std_table, weights, plan.self_mask)
    score = lambda p: inter_frame_fg_score(p, plan.trajectory, lattice)  # noqa: E731
    before_map = frame_block(p_before, lattice, frame_a, frame_b)
    return {
        "maps": {
            "before": before_map,
            "after": frame_block(p_after, lattice, frame_a, frame_b),
            "after_masked": frame_block(p_masked, lattice, frame_a, frame_b),
        },
        "record": {
            "frame_a": frame_a,
            "frame_b": frame_b,
            "anchor_frame": plan.anchor_frame,
            "before": score(p_before),
            "after": score(p_after),
            "after_masked": score(p_masked),
            "diagonal_ratio_before": diagonal_ratio(before_map) if lattice.frame_size > 1 else None,
        },
    }


def write_attention_exports(result: dict, out_dir: Path, formats, prefix: str = "attention") -> list[str]:
    written = []
    a, b = result["record"]["frame_a"], result["record"]["frame_b"]
    for name, m in result["maps"].items():
        stem = f"{prefix}_f{a}_f{b}_{name}"
        if "csv" in formats:
            written.append(write_matrix_csv(out_dir / f"{stem}.csv", m).name)
        if "pgm" in formats:
            written.append(write_pgm(out_dir / f"{stem}.pgm", to_gray(m)).name)
    if "json" in formats:
        written.append(write_json(out_dir / f"{prefix}_f{a}_f{b}_uplift.json", result["record"]).name)
    return written


def write_mask_exports(plan: ControlPlan, out_dir: Path, formats) -> list[str]:
    written = []
    for name, mask in (("cross_mask", plan.cross_mask), ("self_mask", plan.self_mask)):
        if "csv" in formats:
            written.append(export_mask_csv(out_dir / f"{name}_blocked.csv", mask).name)
        if "pgm" in formats and plan.lattice.length <= PGM_MAX_TOKENS:
            written.append(export_mask_pgm(out_dir / f"{name}.pgm", mask).name)
    return written


def write_rope_exports(plan: ControlPlan, out_dir: Path) -> list[str]:
    return [
        export_rope_csv(out_dir / "rope_original.csv", plan.table).name,
        export_rope_csv(out_dir / "rope_std.csv", plan.std_table).name,
    ]


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def run_pipeline(cfg: RunConfig, out_dir: Path | None = None, client=None) -> dict:
    """Run every step, write ``report.json`` plus requested exports, return the report."""
    t_start = time.perf_counter()
    out_dir = Path(out_dir or cfg.output_dir)
    plan = build_plan(cfg, client)
    weights = make_weights(cfg)
    x0 = initial_state(plan, cfg).features
    state, step_times = run_steps(cfg, plan, weights)

    formats = cfg.export.formats
    exports: list[str] = []
    if cfg.export.rope and "csv" in formats:
        exports += write_rope_exports(plan, out_dir)
    if cfg.export.masks:
        exports += write_mask_exports(plan, out_dir, formats)
    if plan.lattice.frames >= 2:
        fa, fb = cfg.export.attention_frames or (0, plan.lattice.frames - 1)
        exports += write_attention_exports(attention_maps(plan, weights, x0, fa, fb), out_dir, formats)

    lat = plan.lattice
    report = {
        "schema_version": SCHEMA_VERSION,
        "lattice": {"frames": lat.frames, "rows": lat.rows, "cols": lat.cols, "length": lat.length},
        "trajectory": trajectory_to_document(plan.trajectory),
        "prompts": dataclasses.asdict(plan.prompts),
        "schedule": dataclasses.asdict(cfg.schedule),
        "model": dataclasses.asdict(cfg.model),
        "anchor_frame": plan.anchor_frame,
        "sets": plan.sets,
        "std_noop": plan.std_noop,
        "condition": {
            "fg_keys": len(range(*plan.union_cond.layout.fg_span)),
            "bg_keys": len(range(*plan.union_cond.layout.bg_span)),
            "merged_keys": len(plan.merged_cond),
        },
        "steps": state.diagnostics,
        "final_features": {
            "sha256": features_digest(state.features),
            "mean_abs": float(np.abs(state.features).mean()),
        },
        "exports": sorted(exports),
        "timings": {
            "total_s": time.perf_counter() - t_start,
            "per_step_s": step_times,
        },
    }
    report = _jsonable(report)
    write_json(out_dir / "report.json", report)
    return report


def strip_timings(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timings"}


def run_baseline(cfg: RunConfig) -> np.ndarray:
    """The same surrogate loop with no control at all: original table, no masks,
    original prompt. Used to check that closed gates change nothing."""
    plan = build_plan(cfg)
    weights = make_weights(cfg)
    x = initial_state(plan, cfg).features
    for _ in range(cfg.schedule.total_steps):
        c = dit_block(x, weights, plan.table, plan.merged_cond)
        u = dit_block(x, weights, plan.table, None)
        x = x + cfg.schedule.step_size * cfg_combine(c.residual, u.residual, cfg.schedule.cfg_scale)
    return x


def final_features(cfg: RunConfig) -> np.ndarray:
    plan = build_plan(cfg)
    state, _ = run_steps(cfg, plan, make_weights(cfg))
    return state.features

