"""Scene configuration: one JSON document referencing binary assets.

A scene bundles cameras, per-frame observations (mask images plus either a
Gaussian point-set PLY or a precomputed surface cloud), the material kind
with optional ground truth, and the fill / simulation / identification
configurations. Asset paths are relative to the scene file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .formats import read_cloud_ply, read_gaussian_ply, read_gic_ply, read_pgm
from .geometry import FillConfig
from .identify import AdamParams, IdentConfig, Observation
from .materials import MaterialSpec
from .solver import SimConfig
from .splat import Camera


@dataclass
class FrameRef:
    time_s: float
    masks: list                      # per-view relative paths
    gaussians: str = None
    surface: str = None


@dataclass
class SceneConfig:
    base_dir: Path
    cameras: list
    frames: list                     # FrameRef, strictly increasing times
    material_kind: str
    density: float = 1000.0
    truth: dict = None               # parameter name -> value, may include v0
    init_guess: dict = None
    fill: FillConfig = field(default_factory=FillConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ident: IdentConfig = field(default_factory=IdentConfig)
    gic_path: str = None
    report_units: str = "m"          # "mm" switches CD reports to 10^3 mm^2
    name: str = "scene"

    def resolve(self, rel: str) -> Path:
        return (self.base_dir / rel).resolve()


def _require(doc, key, path):
    if key not in doc:
        raise ParseError(f"scene is missing required key {key!r}", path=str(path))
    return doc[key]


def load_scene(path) -> SceneConfig:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=str(path), line=e.lineno) from None

    cameras = []
    for i, c in enumerate(_require(doc, "cameras", path)):
        try:
            cameras.append(Camera(np.asarray(c["extrinsic"], dtype=np.float64),
                                  np.asarray(c["intrinsic"], dtype=np.float64),
                                  int(c["width"]), int(c["height"])))
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(f"camera {i} malformed: {e}", path=str(path)) from None
    if not cameras:
        raise ParseError("scene needs at least one camera", path=str(path))

    frames = []
    for i, f in enumerate(_require(doc, "frames", path)):
        try:
            frames.append(FrameRef(float(f["time_s"]), list(f.get("masks", [])),
                                   f.get("gaussians"), f.get("surface")))
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(f"frame {i} malformed: {e}", path=str(path)) from None
    times = [f.time_s for f in frames]
    if len(times) >= 2 and any(b <= a for a, b in zip(times, times[1:])):
        raise ParseError("frame times must be strictly increasing", path=str(path))

    material = _require(doc, "material", path)
    kind = _require(material, "kind", path)

    fill_doc = doc.get("fill", {})
    fill = FillConfig(**{k: fill_doc[k] for k in
                         ("dx", "n_u", "th_min", "th_max", "n_internal", "seed")
                         if k in fill_doc})

    sim_doc = dict(doc.get("sim", {}))
    for key in ("gravity", "grid_origin", "grid_dims"):
        if key in sim_doc and sim_doc[key] is not None:
            sim_doc[key] = np.asarray(sim_doc[key])
    sim = SimConfig(**sim_doc)

    ident_doc = dict(doc.get("ident", {}))
    adam = AdamParams(**ident_doc.pop("adam", {}))
    ident = IdentConfig(adam=adam, **ident_doc)

    return SceneConfig(
        base_dir=path.parent, cameras=cameras, frames=frames,
        material_kind=kind, density=float(material.get("density", 1000.0)),
        truth=material.get("truth"), init_guess=material.get("init"),
        fill=fill, sim=sim, ident=ident, gic_path=doc.get("gic"),
        report_units=doc.get("report_units", "m"), name=doc.get("name", path.stem),
    )


def scene_truth_material(scene: SceneConfig) -> MaterialSpec:
    if scene.truth is None:
        return None
    values = dict(scene.truth)
    v0 = values.pop("v0", (0.0, 0.0, 0.0))
    return MaterialSpec(kind=scene.material_kind, v0=np.asarray(v0, dtype=np.float64),
                        density=scene.density, **values)


def load_scene_gic(scene: SceneConfig):
    """Continuum particles plus surface flags referenced by the scene."""
    if scene.gic_path is None:
        raise InvalidInputError(
            "scene has no 'gic' entry; run the fill command and add its output")
    path = scene.resolve(scene.gic_path)
    if not path.exists():
        raise InvalidInputError(f"continuum file not found: {path}")
    gic, mask = read_gic_ply(path)
    if mask is None:
        mask = np.zeros(len(gic), dtype=bool)
    return gic, mask


def load_scene_gaussians(scene: SceneConfig, frame: int):
    if frame < 0 or frame >= len(scene.frames):
        raise InvalidInputError(
            f"frame {frame} out of range (scene has {len(scene.frames)} frames)")
    ref = scene.frames[frame]
    if ref.gaussians is None:
        raise InvalidInputError(f"frame {frame} has no gaussian point-set path")
    path = scene.resolve(ref.gaussians)
    if not path.exists():
        raise InvalidInputError(f"gaussian point set not found: {path}")
    return read_gaussian_ply(path)


def load_scene_observation(scene: SceneConfig) -> Observation:
    """Observation from per-frame surface clouds and mask images."""
    times = []
    surfaces = []
    masks = []
    have_masks = all(len(f.masks) == len(scene.cameras) for f in scene.frames)
    for i, ref in enumerate(scene.frames):
        if ref.surface is None:
            raise InvalidInputError(
                f"frame {i} has no surface cloud; run the fill command per frame")
        spath = scene.resolve(ref.surface)
        if not spath.exists():
            raise InvalidInputError(f"surface cloud not found: {spath}")
        pos, _ = read_cloud_ply(spath)
        surfaces.append(pos)
        times.append(ref.time_s)
        if have_masks:
            per_view = []
            for rel in ref.masks:
                mpath = scene.resolve(rel)
                if not mpath.exists():
                    raise InvalidInputError(f"mask image not found: {mpath}")
                per_view.append(read_pgm(mpath))
            masks.append(per_view)
    return Observation(np.asarray(times), surfaces,
                       masks if have_masks else None,
                       scene.cameras if have_masks else None)
