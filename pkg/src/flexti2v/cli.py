"""Command-line entry point: config parsing, presets, run execution,
proxy metrics, and the swap-schedule inspection table.

Exit codes: 0 ok, 2 config error, 3 engine error, 4 transport error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import schedule as sched_mod
from .conditioning import DIRECTION_INVERTED, DIRECTION_PER_ALG1, swap_fraction, t_tilde
from .engine import (
    DummyEstimator,
    EngineConfig,
    OracleEstimator,
    PromptSpec,
    run_flexti2v,
)
from .errors import ConfigError, EngineError, FormatError, TransportError, WorkerError
from .remote import RemoteEstimator
from .tensors import (
    Codec,
    ConditionSet,
    LatentVideo,
    decode,
    encode,
    read_ltn,
    read_ppm,
    write_ltn,
    write_ppm,
)

PRESETS = ("animation", "rewind", "interpolate", "outpaint")

_ENGINE_KEYS = {
    "M": int,
    "K": int,
    "P0": float,
    "t0": float,
    "delta1": float,
    "delta2": float,
    "guidance_scale": float,
    "sigma": float,
    "seed": int,
    "enable_frame_replace": bool,
    "enable_rps": bool,
    "enable_dynamic_control": bool,
    "hard_replace_output": bool,
    "reuse_inversion_noise": bool,
}
_TOP_KEYS = set(_ENGINE_KEYS) | {
    "prompt",
    "negative_prompt",
    "conditions",
    "codec",
    "estimator",
    "output_dir",
    "emit",
    "direction",
    "T_train",
    "beta_start",
    "beta_end",
}
_EMIT_KEYS = ("frames", "latents", "metrics", "timing")


@dataclass
class ConditionSpec:
    path: Path
    position: int
    format: str  # "ppm" | "ltn"


@dataclass
class RunConfig:
    """Validated run description (JSON document + derived defaults)."""

    prompt: str
    conditions: list[ConditionSpec]
    engine: EngineConfig
    negative_prompt: str = ""
    codec: Codec = field(default_factory=Codec)
    estimator: str = "dummy"
    output_dir: Path = Path("out")
    emit: dict = field(default_factory=lambda: {
        "frames": True, "latents": False, "metrics": True, "timing": True,
    })
    T_train: int = sched_mod.DEFAULT_T_TRAIN
    beta_start: float = sched_mod.DEFAULT_BETA_START
    beta_end: float = sched_mod.DEFAULT_BETA_END


def _want(doc: dict, key: str, types, default, convert=None):
    if key not in doc:
        return default
    val = doc[key]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"key {key!r}: expected {types}, got bool")
    if not isinstance(val, types):
        raise ConfigError(f"key {key!r}: expected {types}, got {type(val).__name__}")
    return convert(val) if convert else val


def parse_config(raw: bytes | str, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate a JSON run config; unknown keys are rejected.

    Relative condition/estimator paths resolve against `base_dir` (the
    config file's directory when loaded from disk).
    """
    base = base_dir or Path.cwd()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")

    if "prompt" not in doc:
        raise ConfigError("key 'prompt' is required")
    prompt = _want(doc, "prompt", str, None)
    negative = _want(doc, "negative_prompt", str, "")

    engine_kwargs = {}
    for key, typ in _ENGINE_KEYS.items():
        if key not in doc:
            continue
        accepted = (int, float) if typ is float else (typ,)
        engine_kwargs[key] = _want(doc, key, accepted, None, typ)
    direction = _want(doc, "direction", str, DIRECTION_PER_ALG1)
    if direction not in (DIRECTION_PER_ALG1, DIRECTION_INVERTED):
        raise ConfigError(
            f"key 'direction': must be {DIRECTION_PER_ALG1!r} or {DIRECTION_INVERTED!r}"
        )
    engine_kwargs["direction"] = direction
    try:
        engine = EngineConfig(**engine_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"engine config: {exc}") from exc

    raw_conditions = doc.get("conditions")
    if not isinstance(raw_conditions, list) or not raw_conditions:
        raise ConfigError("key 'conditions': need a non-empty list")
    conditions = []
    for i, entry in enumerate(raw_conditions):
        if not isinstance(entry, dict):
            raise ConfigError(f"conditions[{i}]: must be an object")
        extra = set(entry) - {"path", "position", "format"}
        if extra:
            raise ConfigError(f"conditions[{i}]: unknown key {sorted(extra)[0]!r}")
        if "path" not in entry or "position" not in entry:
            raise ConfigError(f"conditions[{i}]: 'path' and 'position' are required")
        path = (base / str(entry["path"])).resolve()
        fmt = entry.get("format") or Path(entry["path"]).suffix.lstrip(".").lower()
        if fmt not in ("ppm", "ltn"):
            raise ConfigError(f"conditions[{i}]: format must be 'ppm' or 'ltn', got {fmt!r}")
        pos = entry["position"]
        if isinstance(pos, bool) or not isinstance(pos, int):
            raise ConfigError(f"conditions[{i}]: position must be an integer")
        if not path.exists():
            raise ConfigError(f"conditions[{i}]: path {path} does not exist")
        conditions.append(ConditionSpec(path=path, position=pos, format=fmt))
    _validate_positions([c.position for c in conditions], engine.M)

    codec_doc = _want(doc, "codec", dict, {})
    extra = set(codec_doc) - {"kind", "patch"}
    if extra:
        raise ConfigError(f"codec: unknown key {sorted(extra)[0]!r}")
    try:
        codec = Codec(
            kind=codec_doc.get("kind", "identity"),
            patch=int(codec_doc.get("patch", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"codec: {exc}") from exc

    estimator = _want(doc, "estimator", str, "dummy")
    split = _split_estimator(estimator, base)  # validate eagerly
    if split[0] == "oracle":
        estimator = f"oracle:{split[1]}"  # pin the resolved path

    emit = dict(RunConfig.__dataclass_fields__["emit"].default_factory())
    emit_doc = _want(doc, "emit", dict, {})
    extra = set(emit_doc) - set(_EMIT_KEYS)
    if extra:
        raise ConfigError(f"emit: unknown key {sorted(extra)[0]!r}")
    for key in _EMIT_KEYS:
        if key in emit_doc:
            if not isinstance(emit_doc[key], bool):
                raise ConfigError(f"emit.{key}: must be a boolean")
            emit[key] = emit_doc[key]

    T_train = _want(doc, "T_train", int, sched_mod.DEFAULT_T_TRAIN)
    beta_start = _want(doc, "beta_start", (int, float), sched_mod.DEFAULT_BETA_START, float)
    beta_end = _want(doc, "beta_end", (int, float), sched_mod.DEFAULT_BETA_END, float)
    if engine.K > T_train:
        raise ConfigError(f"key 'K': {engine.K} exceeds T_train={T_train}")

    output_dir = Path(_want(doc, "output_dir", str, "out"))
    if not output_dir.is_absolute():
        output_dir = base / output_dir

    return RunConfig(
        prompt=prompt,
        negative_prompt=negative,
        conditions=conditions,
        engine=engine,
        codec=codec,
        estimator=estimator,
        output_dir=output_dir,
        emit=emit,
        T_train=T_train,
        beta_start=beta_start,
        beta_end=beta_end,
    )


def _validate_positions(positions: list[int], M: int) -> None:
    for p in positions:
        if not 0 <= p <= M - 1:
            raise ConfigError(f"position out of range: {p} with M={M}")
    for a, b in zip(positions, positions[1:]):
        if b <= a:
            raise ConfigError("positions strictly increasing")


def _split_estimator(selector: str, base: Path):
    """Return ('dummy',), ('oracle', path) or ('remote', endpoint)."""
    if selector == "dummy":
        return ("dummy",)
    if selector.startswith("oracle:"):
        path = (base / selector[len("oracle:"):]).resolve()
        if not path.exists():
            raise ConfigError(f"estimator: oracle target {path} does not exist")
        return ("oracle", path)
    if selector.startswith("remote:"):
        endpoint = selector[len("remote:"):]
        if not (endpoint.startswith("tcp:") or endpoint.startswith("cmd:")):
            raise ConfigError(
                "estimator: remote endpoint must be 'tcp:host:port' or 'cmd:<command>'"
            )
        return ("remote", endpoint)
    raise ConfigError(
        f"estimator: expected 'dummy', 'oracle:<path>' or 'remote:<endpoint>', got {selector!r}"
    )


def apply_preset(config: RunConfig, preset: str) -> None:
    """Reassign condition positions per the named scenario."""
    M = config.engine.M
    layouts = {
        "animation": [0],
        "rewind": [M - 1],
        "interpolate": [0, M - 1],
        "outpaint": [M // 2 - 1],
    }
    if preset not in layouts:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    positions = layouts[preset]
    if len(config.conditions) != len(positions):
        raise ConfigError(
            f"preset {preset!r} needs {len(positions)} condition(s),"
            f" config supplies {len(config.conditions)}"
        )
    for cond, pos in zip(config.conditions, positions):
        cond.position = pos
    _validate_positions([c.position for c in config.conditions], M)


def load_conditions(config: RunConfig) -> ConditionSet:
    latents = []
    for cond in config.conditions:
        if cond.format == "ppm":
            latents.append(encode(read_ppm(cond.path), config.codec))
        else:
            video = read_ltn(cond.path)
            if video.num_frames != 1:
                raise ConfigError(
                    f"condition {cond.path} holds {video.num_frames} frames, expected 1"
                )
            latents.append(video.frame(0))
    try:
        return ConditionSet(tuple(latents), tuple(c.position for c in config.conditions))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _make_estimator(config: RunConfig, dims) -> tuple:
    """Build the estimator named by the config; returns (estimator, closer)."""
    kind = _split_estimator(config.estimator, Path("/"))
    if kind[0] == "dummy":
        return DummyEstimator(), None
    if kind[0] == "oracle":
        target = read_ltn(kind[1])
        expected = (config.engine.M, *dims)
        if target.data.shape != expected:
            raise ConfigError(
                f"oracle target shape {target.data.shape} != run shape {expected}"
            )
        noise_schedule = sched_mod.make_schedule(
            config.beta_start, config.beta_end, config.T_train
        )
        return OracleEstimator(target, noise_schedule), None
    endpoint = os.environ.get("FLEXTI2V_WORKER", kind[1])
    if endpoint.startswith("tcp:"):
        _, host, port = endpoint.split(":", 2)
        est = RemoteEstimator.connect(host, int(port))
    elif endpoint.startswith("cmd:"):
        est = RemoteEstimator.launch(endpoint[len("cmd:"):])
    else:
        raise ConfigError(f"invalid remote endpoint {endpoint!r}")
    return est, est.close


class _CountingEstimator:
    def __init__(self, inner):
        self._inner = inner
        self.uses_guidance = inner.uses_guidance
        self.calls = 0

    def estimate(self, z, t_train, prompt, conditional):
        self.calls += 1
        return self._inner.estimate(z, t_train, prompt, conditional)


def metrics(video: LatentVideo, conditions: ConditionSet) -> dict:
    """Desk-scale proxies evaluated in latent space."""
    if video.frame_dims != conditions.frame_dims:
        raise ConfigError(
            f"video dims {video.frame_dims} != condition dims {conditions.frame_dims}"
        )
    errs = []
    for lat, p in zip(conditions.latents, conditions.positions):
        diff = video.data[p].astype(np.float64) - lat.data.astype(np.float64)
        errs.append(float(np.mean(diff * diff)))
    mse = float(np.mean(errs))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(4.0 / mse)  # peak = 2
    if video.num_frames > 1:
        d = np.diff(video.data.astype(np.float64), axis=0)
        temporal = float(np.mean(np.mean(d * d, axis=(1, 2, 3))))
    else:
        temporal = 0.0
    return {
        "mse_at_conditions": mse,
        "psnr_at_conditions": psnr,
        "temporal_energy": temporal,
    }


def _json_metrics(values: dict) -> dict:
    return {k: ("inf" if v == math.inf else v) for k, v in values.items()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(config: RunConfig) -> dict:
    """Execute the pipeline and write outputs atomically; returns the report."""
    conditions = load_conditions(config)
    dims = conditions.frame_dims
    if config.emit["frames"] and dims[0] != config.codec.channels:
        raise ConfigError(
            f"cannot decode frames: latent has {dims[0]} channels,"
            f" codec {config.codec.kind!r} expects {config.codec.channels}"
        )
    noise_schedule = sched_mod.make_schedule(
        config.beta_start, config.beta_end, config.T_train
    )
    tmap = sched_mod.select_timesteps(config.T_train, config.engine.K)
    estimator, closer = _make_estimator(config, dims)
    counting = _CountingEstimator(estimator)
    step_ms: list[float] = []

    started = time.perf_counter()
    try:
        video = run_flexti2v(
            config.engine,
            conditions,
            PromptSpec(config.prompt, config.negative_prompt),
            counting,
            noise_schedule,
            tmap,
            observer=lambda rec: step_ms.append(rec.wall_ms),
        )
    finally:
        if closer is not None:
            closer()
    total_ms = (time.perf_counter() - started) * 1e3

    out_dir = config.output_dir
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".flexti2v-", dir=out_dir.parent))
    try:
        emitted: list[Path] = []
        if config.emit["frames"]:
            for m in range(video.num_frames):
                path = stage / f"frame_{m:03d}.ppm"
                write_ppm(decode(video.frame(m), config.codec), path)
                emitted.append(path)
        if config.emit["latents"]:
            path = stage / "latents.ltn"
            write_ltn(video, path)
            emitted.append(path)
        metric_values = metrics(video, conditions)
        if config.emit["metrics"]:
            path = stage / "metrics.json"
            path.write_text(
                json.dumps(_json_metrics(metric_values), indent=2, sort_keys=True) + "\n"
            )
            emitted.append(path)

        report = {
            "estimator_calls": counting.calls,
            "metrics": _json_metrics(metric_values),
            "manifest": [],
        }
        if config.emit["timing"]:
            report["per_step_ms"] = step_ms
            report["total_ms"] = total_ms

        out_dir.mkdir(parents=True, exist_ok=True)
        for path in emitted:
            final = out_dir / path.name
            report["manifest"].append(
                {"path": path.name, "sha256": _sha256(path)}
            )
            os.replace(path, final)
        report_path = out_dir / "report.json"
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return report
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def schedule_table(config: RunConfig) -> str:
    """CSV of P(m,n,t) and t_tilde for every frame/condition/step triple."""
    sched = config.engine.swap_schedule()
    positions = [c.position for c in config.conditions]
    lines = ["m,n,t,P,t_tilde,active"]
    for m in range(config.engine.M):
        for n in range(len(positions)):
            for t in range(1, config.engine.K + 1):
                frac = swap_fraction(m, n, t, sched, positions)
                budget = t_tilde(m, n, sched, positions)
                lines.append(
                    f"{m},{n},{t},{frac!r},{budget!r},{1 if frac > 0.0 else 0}"
                )
    return "\n".join(lines) + "\n"


def _load_config_file(path: str, seed=None, out=None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    config = parse_config(p.read_bytes(), base_dir=p.parent.resolve())
    if seed is not None:
        if not 0 <= seed <= (1 << 64) - 1:
            raise ConfigError("seed must fit in 64 bits")
        config.engine.seed = seed
    if out is not None:
        config.output_dir = Path(out).resolve()
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flexti2v",
        description="Training-free text-image-to-video conditioning engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full conditioning + sampling run")
    p_run.add_argument("--config", required=True, help="path to JSON run config")
    p_run.add_argument("--preset", choices=PRESETS, help="condition-position layout")
    p_run.add_argument("--out", help="output directory override")
    p_run.add_argument("--seed", type=int, help="seed override")

    p_ins = sub.add_parser(
        "inspect-schedule", help="print the swap-schedule table as CSV"
    )
    p_ins.add_argument("--config", required=True, help="path to JSON run config")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = _load_config_file(args.config, seed=args.seed, out=args.out)
            if args.preset:
                apply_preset(config, args.preset)
            report = run(config)
            print(json.dumps(report["metrics"], sort_keys=True))
            return 0
        config = _load_config_file(args.config)
        sys.stdout.write(schedule_table(config))
        return 0
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return 4
    except EngineError as exc:
        cause = exc.__cause__
        if isinstance(cause, TransportError):
            print(f"transport failure: {exc}", file=sys.stderr)
            return 4
        print(f"engine error: {exc}", file=sys.stderr)
        return 3
    except WorkerError as exc:
        print(f"engine error: worker reported: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
