"""JSON experiment configuration with line-precise validation errors.

A config looks like::

    {
      "camera": {"width": 160, "height": 120, "hfov_deg": 90},
      "pose": {"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]},
      "scene": {"preset": "box_in_room"},
      "perturbation": {"max_rotation_deg": 2.0, "max_translation_m": 0.02, "n_views": 6},
      "sampling": {"near": 1.1, "far": 2.8, "n_samples": 64, "jitter": true},
      "fusion": {"iterations": 2, "ablate": []},
      "monocular": {"blur_px": 3.0, "noise_m": 0.02, "scale": 1.1, "shift": 0.2},
      "output_dir": "out",
      "seed": 0
    }

``scene`` is either a preset name, an explicit ``primitives`` list, or a
``views_dir`` holding injected per-view depth/variance/pose files. Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .fusion import ABLATIONS, FusionConfig
from .geometry import Intrinsics, PerturbationSpec, Pose
from .scene import AnalyticScene, box_in_room, softness_panels
from .simulate import MonoCorruption

SCENE_PRESETS = {"box_in_room": box_in_room, "softness_panels": softness_panels}


class ConfigError(ValueError):
    """Invalid configuration; the message names the file, line and key."""


# ---------------------------------------------------------------------------
# key -> line lookup


_WS = re.compile(r"[ \t\n\r]*")
_SCALAR = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?|true|false|null")


def _line_index(text: str) -> dict[tuple, int]:
    """Map each JSON value path (tuple of keys/indices) to its 1-based line.

    Only called on text that ``json.loads`` already accepted.
    """
    lines: dict[tuple, int] = {}
    decoder = json.decoder

    def line_of(pos):
        return text.count("\n", 0, pos) + 1

    def skip(pos):
        return _WS.match(text, pos).end()

    def value(pos, path):
        pos = skip(pos)
        lines[path] = line_of(pos)
        ch = text[pos]
        if ch == "{":
            pos = skip(pos + 1)
            if text[pos] == "}":
                return pos + 1
            while True:
                key, pos = decoder.scanstring(text, skip(pos) + 1)
                pos = skip(pos) + 1  # colon
                pos = skip(value(pos, path + (key,)))
                if text[pos] == "}":
                    return pos + 1
                pos += 1
        if ch == "[":
            pos = skip(pos + 1)
            if text[pos] == "]":
                return pos + 1
            i = 0
            while True:
                pos = skip(value(pos, path + (i,)))
                i += 1
                if text[pos] == "]":
                    return pos + 1
                pos += 1
        if ch == '"':
            return decoder.scanstring(text, pos + 1)[1]
        return _SCALAR.match(text, pos).end()

    value(0, ())
    return lines


class _Reader:
    """Typed field access that reports the source line of any bad value."""

    def __init__(self, source: str, lines: dict[tuple, int]):
        self.source = source
        self.lines = lines

    def where(self, path: tuple) -> str:
        p = path
        while p not in self.lines and p:
            p = p[:-1]
        line = self.lines.get(p, 1)
        dotted = ".".join(str(k) for k in path) or "<root>"
        return f"{self.source}:{line}: {dotted}"

    def fail(self, path: tuple, msg: str):
        raise ConfigError(f"{self.where(path)}: {msg}")

    def section(self, data: dict, path: tuple, allowed: set[str]) -> dict:
        if not isinstance(data, dict):
            self.fail(path, "expected an object")
        for key in data:
            if key not in allowed:
                self.fail(path + (key,), f"unknown key; expected one of {', '.join(sorted(allowed))}")
        return data

    def number(self, data, path, default=None, *, integer=False, lo=None, hi=None, lo_open=False):
        key = path[-1]
        if key not in data:
            if default is None:
                self.fail(path, "missing required value")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {json.dumps(v)}")
        if integer and not (isinstance(v, int) or float(v).is_integer()):
            self.fail(path, f"expected an integer, got {v}")
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(path, f"must be <= {hi}, got {v}")
        return int(v) if integer else float(v)

    def boolean(self, data, path, default):
        v = data.get(path[-1], default)
        if not isinstance(v, bool):
            self.fail(path, f"expected true or false, got {json.dumps(v)}")
        return v

    def build(self, path, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError, KeyError) as exc:
            self.fail(path, str(exc))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingConfig:
    near: float = 1.1
    far: float = 2.8
    n_samples: int = 64
    jitter: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose.identity)
    scene: AnalyticScene | None = None
    views_dir: Path | None = None
    reconstruction_scale: float = 1.0
    perturbation: PerturbationSpec = PerturbationSpec()
    n_views: int = 10
    sampling: SamplingConfig = SamplingConfig()
    fusion: FusionConfig = FusionConfig()
    monocular: MonoCorruption = MonoCorruption()
    output_dir: Path = Path("out")
    seed: int = 0

    def with_overrides(
        self,
        seed: int | None = None,
        iterations: int | None = None,
        ablate: list[str] | None = None,
        n_views: int | None = None,
        n_samples: int | None = None,
        output_dir: str | Path | None = None,
    ) -> "ExperimentConfig":
        """Apply command-line overrides; raises ConfigError on bad values."""
        cfg = self
        try:
            if seed is not None:
                cfg = replace(cfg, seed=seed, perturbation=replace(cfg.perturbation, seed=seed))
            if iterations is not None:
                cfg = replace(cfg, fusion=replace(cfg.fusion, iterations=iterations))
            if ablate:
                cfg = replace(cfg, fusion=cfg.fusion.with_ablations(ablate))
            if n_views is not None:
                if n_views < 1:
                    raise ValueError("--views must be >= 1")
                cfg = replace(cfg, n_views=n_views)
            if n_samples is not None:
                if n_samples < 2:
                    raise ValueError("--samples must be >= 2")
                cfg = replace(cfg, sampling=replace(cfg.sampling, n_samples=n_samples))
            if output_dir is not None:
                cfg = replace(cfg, output_dir=Path(output_dir))
        except ValueError as exc:
            raise ConfigError(f"command line: {exc}") from None
        return cfg

    def to_dict(self) -> dict:
        scene = (
            {"views_dir": str(self.views_dir), "reconstruction_scale": self.reconstruction_scale}
            if self.views_dir is not None
            else {**self.scene.to_dict(), "reconstruction_scale": self.reconstruction_scale}
        )
        f = self.fusion
        ablate = [
            n for n in ABLATIONS if (getattr(f, n) is not None if n == "fixed_prior_variance" else getattr(f, n))
        ]
        m = self.monocular
        return {
            "camera": self.intrinsics.to_dict(),
            "pose": self.pose.to_dict(),
            "scene": scene,
            "perturbation": {
                "max_rotation_deg": self.perturbation.max_rotation_deg,
                "max_translation_m": self.perturbation.max_translation_m,
                "n_views": self.n_views,
            },
            "sampling": vars(self.sampling).copy(),
            "fusion": {
                "iterations": f.iterations,
                "ablate": ablate,
                "fixed_prior_variance": f.fixed_prior_variance,
                "variance_floor": f.variance_floor,
                "degeneracy_floor": f.degeneracy_floor,
            },
            "monocular": {"blur_px": m.blur_px, "noise_m": m.noise_m, "scale": m.scale, "shift": m.shift},
            "output_dir": str(self.output_dir),
            "seed": self.seed,
        }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, source=str(path), base_dir=path.parent)


def parse_config(text: str, source: str = "<config>", base_dir: Path | str = ".") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    r = _Reader(source, _line_index(text))
    base_dir = Path(base_dir)
    top = r.section(
        data,
        (),
        {"camera", "pose", "scene", "perturbation", "sampling", "fusion", "monocular", "output_dir", "seed"},
    )

    seed = r.number(top, ("seed",), 0, integer=True, lo=0)

    # camera
    if "camera" not in top:
        r.fail(("camera",), "missing required section")
    cam = r.section(top["camera"], ("camera",), {"width", "height", "hfov_deg", "fx", "fy", "cx", "cy"})
    width = r.number(cam, ("camera", "width"), integer=True, lo=1)
    height = r.number(cam, ("camera", "height"), integer=True, lo=1)
    if "hfov_deg" in cam:
        if any(k in cam for k in ("fx", "fy", "cx", "cy")):
            r.fail(("camera", "hfov_deg"), "give either hfov_deg or fx/fy/cx/cy, not both")
        fov = r.number(cam, ("camera", "hfov_deg"), lo=0, hi=179, lo_open=True)
        intr = r.build(("camera",), Intrinsics.from_fov, width, height, fov)
    else:
        vals = {k: r.number(cam, ("camera", k), lo=0 if k in ("fx", "fy") else None, lo_open=True)
                for k in ("fx", "fy", "cx", "cy")}
        intr = r.build(("camera",), Intrinsics, width=width, height=height, **vals)

    pose = Pose.identity()
    if "pose" in top:
        pose = r.build(("pose",), Pose.from_dict, r.section(top["pose"], ("pose",), {"rotation", "translation"}))

    # scene
    if "scene" not in top:
        r.fail(("scene",), "missing required section")
    sc = r.section(
        top["scene"],
        ("scene",),
        {"preset", "primitives", "views_dir", "reconstruction_scale", "peak_density", "softness"},
    )
    kinds = [k for k in ("preset", "primitives", "views_dir") if k in sc]
    if len(kinds) != 1:
        r.fail(("scene",), "give exactly one of preset, primitives or views_dir")
    recon = r.number(sc, ("scene", "reconstruction_scale"), 1.0, lo=0, lo_open=True)
    scene, views_dir = None, None
    if "preset" in sc:
        name = sc["preset"]
        if name not in SCENE_PRESETS:
            r.fail(("scene", "preset"), f"unknown preset {json.dumps(name)}; choose from {', '.join(SCENE_PRESETS)}")
        kw = {}
        for k in ("peak_density", "softness"):
            if k in sc:
                kw[k] = r.number(sc, ("scene", k), lo=0, lo_open=True)
        if kw and name != "box_in_room":
            r.fail(("scene",), f"preset {name} takes no density overrides")
        scene = r.build(("scene",), SCENE_PRESETS[name], **kw)
    elif "primitives" in sc:
        prims = sc["primitives"]
        if not isinstance(prims, list) or not prims:
            r.fail(("scene", "primitives"), "expected a non-empty list")
        for i, p in enumerate(prims):
            try:
                AnalyticScene.from_dict({"primitives": [p]})
            except (ValueError, TypeError, AttributeError) as exc:
                msg = str(exc).split(": ", 1)[-1]
                r.fail(("scene", "primitives", i), msg)
        scene = AnalyticScene.from_dict({"primitives": prims})
    else:
        v = sc["views_dir"]
        if not isinstance(v, str):
            r.fail(("scene", "views_dir"), "expected a path string")
        views_dir = (base_dir / v).resolve()
        if not views_dir.is_dir():
            r.fail(("scene", "views_dir"), f"directory not found: {views_dir}")

    # perturbation
    pert = r.section(
        top.get("perturbation", {}), ("perturbation",), {"max_rotation_deg", "max_translation_m", "n_views"}
    )
    spec = PerturbationSpec(
        max_rotation_deg=r.number(pert, ("perturbation", "max_rotation_deg"), 2.0, lo=0, hi=180),
        max_translation_m=r.number(pert, ("perturbation", "max_translation_m"), 0.02, lo=0),
        seed=seed,
    )
    n_views = r.number(pert, ("perturbation", "n_views"), 10, integer=True, lo=1)

    # sampling
    smp = r.section(top.get("sampling", {}), ("sampling",), {"near", "far", "n_samples", "jitter"})
    near = r.number(smp, ("sampling", "near"), 1.1, lo=0, lo_open=True)
    far = r.number(smp, ("sampling", "far"), 2.8, lo=0, lo_open=True)
    if not near < far:
        r.fail(("sampling", "far"), f"far ({far}) must exceed near ({near})")
    sampling = SamplingConfig(
        near=near,
        far=far,
        n_samples=r.number(smp, ("sampling", "n_samples"), 64, integer=True, lo=2),
        jitter=r.boolean(smp, ("sampling", "jitter"), True),
    )

    # fusion
    fu = r.section(
        top.get("fusion", {}),
        ("fusion",),
        {"iterations", "ablate", "fixed_prior_variance", "variance_floor", "degeneracy_floor"},
    )
    fixed = fu.get("fixed_prior_variance")
    if fixed is not None:
        fixed = r.number(fu, ("fusion", "fixed_prior_variance"), lo=0, lo_open=True)
    fusion = FusionConfig(
        iterations=r.number(fu, ("fusion", "iterations"), 2, integer=True, lo=1),
        variance_floor=r.number(fu, ("fusion", "variance_floor"), FusionConfig.variance_floor, lo=0, lo_open=True),
        degeneracy_floor=r.number(fu, ("fusion", "degeneracy_floor"), FusionConfig.degeneracy_floor, lo=0),
    )
    ablate = fu.get("ablate", [])
    if not isinstance(ablate, list) or not all(isinstance(a, str) for a in ablate):
        r.fail(("fusion", "ablate"), "expected a list of ablation names")
    for i, name in enumerate(ablate):
        if name not in ABLATIONS:
            r.fail(("fusion", "ablate", i), f"unknown ablation {json.dumps(name)}; choose from {', '.join(ABLATIONS)}")
    if "fixed_prior_variance" in ablate and fixed is None:
        r.fail(("fusion", "ablate"), "fixed_prior_variance ablation needs fusion.fixed_prior_variance")
    fusion = fusion.with_ablations(ablate, fixed)

    # monocular corruption
    mo = r.section(top.get("monocular", {}), ("monocular",), {"blur_px", "noise_m", "scale", "shift"})
    mono = MonoCorruption(
        blur_px=r.number(mo, ("monocular", "blur_px"), 3.0, lo=0),
        noise_m=r.number(mo, ("monocular", "noise_m"), 0.02, lo=0),
        scale=r.number(mo, ("monocular", "scale"), 1.1, lo=0, lo_open=True),
        shift=r.number(mo, ("monocular", "shift"), 0.2),
    )

    out = top.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        r.fail(("output_dir",), "expected a non-empty path string")

    return ExperimentConfig(
        intrinsics=intr,
        pose=pose,
        scene=scene,
        views_dir=views_dir,
        reconstruction_scale=recon,
        perturbation=spec,
        n_views=n_views,
        sampling=sampling,
        fusion=fusion,
        monocular=mono,
        output_dir=base_dir / out,
        seed=seed,
    )
