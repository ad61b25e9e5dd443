"""Scene files: flat `key = value` text describing one render setup.

A scene names either a grid file (`grid = path.ahf`) or a synthetic
generator (`synth = hill`, with `synth_cells` and `seed`), a camera, an
image size, and the cascade/shading parameters. `#` lines are comments.
Parsing and serialization round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .cascade import CameraView
from .grid import AdaptiveGrid, load_grid
from .render import FrameConfig
from .synth import SYNTH_KINDS, generate_synthetic


class SceneError(ValueError):
    """Invalid scene content; `key` names the offending entry when known."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Scene:
    grid: str | None = None
    synth: str | None = None
    synth_cells: int = 4096
    seed: int = 42
    eye: tuple[float, float, float] = (0.0, 0.0, 200.0)
    look_at: tuple[float, float, float] = (100.0, 100.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_y: float = 55.0
    near: float = 0.5
    far: float = 8000.0
    width: int = 640
    height: int = 480
    cascade_res: int = 1024
    sigma: float = 1.0
    overlap: float | str = "auto"
    colormap: tuple[float, float] = (0.0, 5.0)
    background: tuple[int, int, int] = (30, 40, 60)


_VEC3 = {"eye", "look_at", "up"}
_VEC2 = {"colormap"}
_IVEC3 = {"background"}
_INTS = {"synth_cells", "seed", "width", "height", "cascade_res"}
_FLOATS = {"fov_y", "near", "far", "sigma"}
_STRINGS = {"grid", "synth"}


def parse_scene(text: str) -> Scene:
    scene = Scene()
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SceneError("expected 'key = value'", line=no)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in seen:
            raise SceneError(f"duplicate key '{key}'", key=key, line=no)
        seen.add(key)
        try:
            _assign(scene, key, value)
        except SceneError:
            raise
        except ValueError as exc:
            raise SceneError(f"bad value for '{key}': {exc}", key=key, line=no) from None
    _validate(scene)
    return scene


def _assign(scene: Scene, key: str, value: str):
    if key in _STRINGS:
        setattr(scene, key, value)
    elif key in _INTS:
        setattr(scene, key, int(value))
    elif key in _FLOATS:
        setattr(scene, key, float(value))
    elif key == "overlap":
        scene.overlap = "auto" if value == "auto" else float(value)
    elif key in _VEC3:
        parts = value.split()
        if len(parts) != 3:
            raise ValueError("expected 3 numbers")
        setattr(scene, key, tuple(float(p) for p in parts))
    elif key in _VEC2:
        parts = value.split()
        if len(parts) != 2:
            raise ValueError("expected 2 numbers")
        setattr(scene, key, tuple(float(p) for p in parts))
    elif key in _IVEC3:
        parts = value.split()
        if len(parts) != 3:
            raise ValueError("expected 3 integers")
        setattr(scene, key, tuple(int(p) for p in parts))
    else:
        raise SceneError(f"unknown key '{key}'", key=key)


def _validate(scene: Scene):
    if scene.grid is None and scene.synth is None:
        raise SceneError("scene needs either 'grid' or 'synth'", key="grid")
    if scene.synth is not None and scene.synth not in SYNTH_KINDS:
        raise SceneError(f"unknown synth kind '{scene.synth}'", key="synth")
    if not 0.0 < scene.fov_y < 180.0:
        raise SceneError("fov_y must be in (0, 180)", key="fov_y")
    if scene.near <= 0.0:
        raise SceneError("near must be positive", key="near")
    if scene.far <= scene.near:
        raise SceneError("far must exceed near", key="far")
    if scene.width < 1 or scene.height < 1:
        raise SceneError("image size must be at least 1x1", key="width")
    if scene.sigma <= 0.0:
        raise SceneError("sigma must be positive", key="sigma")
    if isinstance(scene.overlap, float) and scene.overlap < 0.0:
        raise SceneError("overlap must be non-negative", key="overlap")
    if not scene.colormap[0] < scene.colormap[1]:
        raise SceneError("colormap range must be increasing", key="colormap")
    if scene.cascade_res < 4:
        raise SceneError("cascade_res must be at least 4", key="cascade_res")


def serialize_scene(scene: Scene) -> str:
    out = []
    for f in fields(Scene):
        val = getattr(scene, f.name)
        if val is None:
            continue
        if isinstance(val, tuple):
            out.append(f"{f.name} = {' '.join(_num(v) for v in val)}")
        else:
            out.append(f"{f.name} = {_num(val)}")
    return "\n".join(out) + "\n"


def _num(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_scene(path) -> Scene:
    with open(path, "r", encoding="ascii") as fh:
        return parse_scene(fh.read())


def scene_grid(scene: Scene) -> AdaptiveGrid:
    if scene.grid is not None:
        return load_grid(scene.grid)
    return generate_synthetic(scene.synth, scene.seed, scene.synth_cells)


def scene_camera(scene: Scene) -> CameraView:
    look = tuple(b - a for a, b in zip(scene.eye, scene.look_at))
    if all(v == 0.0 for v in look):
        raise SceneError("look_at coincides with eye", key="look_at")
    return CameraView(eye=scene.eye, look_dir=look, up=scene.up,
                      fov_y=scene.fov_y, aspect=scene.width / scene.height,
                      near_clip=scene.near, far_clip=scene.far)


def scene_frame_config(scene: Scene) -> FrameConfig:
    return FrameConfig(width=scene.width, height=scene.height,
                       camera=scene_camera(scene),
                       colormap_range=scene.colormap,
                       background=scene.background)


def demo_scene() -> Scene:
    """Bundled demo: synthetic hill terrain with a circular pond, seed 42."""
    return Scene(
        synth="pond",
        synth_cells=3000,
        seed=42,
        eye=(380.0, 260.0, 260.0),
        look_at=(1050.0, 1150.0, 40.0),
        fov_y=55.0,
        near=1.0,
        far=6000.0,
        width=320,
        height=240,
        cascade_res=256,
        colormap=(0.0, 4.0),
    )
