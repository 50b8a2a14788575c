"""Deterministic synthetic multi-view tabletop environment.

A table plane at z = 0 carries a procedural background texture, one target
object (sphere or box), a goal disc, and a gripper marker.  Rendering is
analytic ray-per-pixel shading with a z-test; dynamics are kinematic with a
per-step displacement clamp, a grasp radius, and a latched success flag.

The workspace shares the BEV ranges of the feature grid so one grid config
serves both perception and the environment.  Positions are sampled either in
the inner training square or in the surrounding square annulus, which are
disjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .episodes import Episode, EpisodePack
from .geometry import Camera, look_at_camera
from .tensorgrad.rng import CounterRng

# workspace == BEV ranges (meters)
X_RANGE = (0.0, 1.152)
Y_RANGE = (-0.64, 0.64)
Z_RANGE = (0.0, 0.768)
CENTER = np.array([0.5 * (X_RANGE[0] + X_RANGE[1]), 0.0, 0.0])

ID_HALF_WIDTH = 0.05       # inner training square, Chebyshev half-width
OOD_OUTER_HALF_WIDTH = 0.10  # outer bound of the evaluation annulus

STATE_DIM = 4   # gripper x, y, z, closed
ACTION_DIM = 4  # dx, dy, dz, gripper command

GOAL_OFFSET = np.array([0.18, 0.18, 0.0])
GRIPPER_HOME = CENTER + np.array([0.0, 0.0, 0.25])

BACKGROUND_IDS = (0, 1, 2, 3, 4)  # 0 = training texture, 1..4 = held-out
TRAIN_CAMERAS = ["B", "C", "D", "E"]
HELD_OUT_CAMERA = "A"

SKY_COLOR = np.array([0.05, 0.06, 0.08])
OBJECT_COLOR = np.array([0.95, 0.18, 0.10])
GOAL_COLOR = np.array([0.15, 0.75, 0.25])
GRIPPER_COLOR = np.array([0.20, 0.35, 0.95])
GRIPPER_MARKER_RADIUS = 0.016


@dataclass(frozen=True)
class EnvParams:
    max_step: float = 0.05       # meters per env step
    grasp_radius: float = 0.02   # attach distance for a closing gripper
    goal_radius: float = 0.03    # success distance, object center to goal


@dataclass(frozen=True)
class Scene:
    background: int
    object_kind: str            # "sphere" or "box"
    object_pos: np.ndarray      # (3,) center
    object_size: float          # radius / half-extent
    goal_center: np.ndarray     # (3,)
    goal_radius: float
    gripper_pos: np.ndarray     # (3,)
    gripper_closed: bool = False
    holding: bool = False
    succeeded: bool = False

    def robot_state(self) -> np.ndarray:
        return np.concatenate([self.gripper_pos,
                               [1.0 if self.gripper_closed else 0.0]]).astype(np.float32)


def make_scene(object_xy, background: int = 0, object_kind: str = "sphere",
               object_size: float = 0.04, goal_radius: float = 0.03) -> Scene:
    pos = np.array([CENTER[0] + object_xy[0], CENTER[1] + object_xy[1], object_size])
    goal = CENTER + GOAL_OFFSET + np.array([0.0, 0.0, object_size])
    if background not in BACKGROUND_IDS:
        raise ValueError(f"unknown background id {background}; known: {BACKGROUND_IDS}")
    if object_kind not in ("sphere", "box"):
        raise ValueError(f"unknown object kind {object_kind!r}")
    return Scene(background, object_kind, pos, object_size, goal,
                 goal_radius, GRIPPER_HOME.copy())


def scene_solvable(scene: Scene) -> bool:
    inside = (X_RANGE[0] < scene.object_pos[0] < X_RANGE[1]
              and Y_RANGE[0] < scene.object_pos[1] < Y_RANGE[1]
              and X_RANGE[0] < scene.goal_center[0] < X_RANGE[1]
              and Y_RANGE[0] < scene.goal_center[1] < Y_RANGE[1])
    return inside


# -- rendering ----------------------------------------------------------------------


def _texture(background: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Procedural table texture color per hit point, keyed by id."""
    if background == 0:     # muted gray checker (training)
        par = (np.floor(x / 0.06) + np.floor(y / 0.06)) % 2
        a, b = np.array([0.34, 0.35, 0.37]), np.array([0.44, 0.45, 0.47])
    elif background == 1:   # bold red/white checker
        par = (np.floor(x / 0.04) + np.floor(y / 0.04)) % 2
        a, b = np.array([0.80, 0.20, 0.20]), np.array([0.90, 0.88, 0.85])
    elif background == 2:   # diagonal stripes
        par = np.floor((x + y) / 0.05) % 2
        a, b = np.array([0.85, 0.75, 0.25]), np.array([0.20, 0.20, 0.25])
    elif background == 3:   # concentric rings
        r = np.sqrt((x - CENTER[0]) ** 2 + y ** 2)
        par = np.floor(r / 0.05) % 2
        a, b = np.array([0.15, 0.55, 0.55]), np.array([0.10, 0.15, 0.20])
    elif background == 4:   # fine magenta/green checker
        par = (np.floor(x / 0.025) + np.floor(y / 0.025)) % 2
        a, b = np.array([0.75, 0.25, 0.70]), np.array([0.30, 0.70, 0.30])
    else:
        raise ValueError(f"unknown background id {background}")
    return a[None, :] * (1 - par)[:, None] + b[None, :] * par[:, None]


def _ray_sphere(origin, dirs, center, radius):
    """Smallest positive ray parameter per ray, inf when missed."""
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, t1)
    return np.where(hit & (t > 1e-9), t, np.inf)


def _ray_box(origin, dirs, center, half):
    """Axis-aligned box intersection (slab method)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        lo = (center - half - origin) * inv
        hi = (center + half - origin) * inv
    t_near = np.nanmax(np.minimum(lo, hi), axis=1)
    t_far = np.nanmin(np.maximum(lo, hi), axis=1)
    t = np.where(t_near > 1e-9, t_near, t_far)
    ok = (t_far >= t_near) & (t > 1e-9)
    return np.where(ok, t, np.inf)


def render(scene: Scene, camera: Camera) -> np.ndarray:
    """Shade one view as a (3, H, W) float32 image in [0, 1]."""
    h, w = camera.height, camera.width
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = jj.ravel() + 0.5
    v = ii.ravel() + 0.5
    d_cam = np.stack([(u - camera.cx) / camera.fx,
                      (v - camera.cy) / camera.fy,
                      np.ones_like(u)], axis=1)
    dirs = d_cam @ camera.rotation  # R^T d, rows are world directions
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = camera.center()

    color = np.tile(SKY_COLOR, (h * w, 1))
    depth = np.full(h * w, np.inf)

    # table plane z = 0
    dz = dirs[:, 2]
    t_plane = np.where(np.abs(dz) > 1e-12, -origin[2] / dz, np.inf)
    plane_ok = t_plane > 1e-9
    px = origin[0] + t_plane * dirs[:, 0]
    py = origin[1] + t_plane * dirs[:, 1]
    on_table = (plane_ok
                & (px > X_RANGE[0] - 0.3) & (px < X_RANGE[1] + 0.3)
                & (py > Y_RANGE[0] - 0.3) & (py < Y_RANGE[1] + 0.3))
    tex = _texture(scene.background, px[on_table], py[on_table])
    goal_xy = np.hypot(px - scene.goal_center[0], py - scene.goal_center[1])
    color[on_table] = tex
    depth[on_table] = t_plane[on_table]
    goal_disc = on_table & (goal_xy <= scene.goal_radius * 1.8)
    color[goal_disc] = GOAL_COLOR

    def paint(t_hit, col):
        nonlocal color, depth
        closer = t_hit < depth
        color[closer] = col
        depth = np.where(closer, t_hit, depth)

    if scene.object_kind == "sphere":
        t_obj = _ray_sphere(origin, dirs, scene.object_pos, scene.object_size)
    else:
        t_obj = _ray_box(origin, dirs, scene.object_pos,
                         np.full(3, scene.object_size))
    paint(t_obj, OBJECT_COLOR)
    t_grip = _ray_sphere(origin, dirs, scene.gripper_pos, GRIPPER_MARKER_RADIUS)
    paint(t_grip, GRIPPER_COLOR)

    img = color.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def render_views(scene: Scene, cameras: list[Camera]) -> np.ndarray:
    return np.stack([render(scene, cam) for cam in cameras])


# -- dynamics -----------------------------------------------------------------------


def step(scene: Scene, action: np.ndarray,
         params: EnvParams = EnvParams()) -> tuple[Scene, bool]:
    """Advance one step; returns (next scene, success flag so far)."""
    action = np.asarray(action, dtype=np.float64)
    delta = action[:3]
    norm = float(np.linalg.norm(delta))
    if norm > params.max_step:
        delta = delta * (params.max_step / norm)
    new_pos = scene.gripper_pos + delta
    new_pos = np.clip(new_pos,
                      [X_RANGE[0], Y_RANGE[0], 0.0],
                      [X_RANGE[1], Y_RANGE[1], Z_RANGE[1]])
    closed = bool(action[3] > 0.0)

    holding = scene.holding
    object_pos = scene.object_pos
    if holding and not closed:
        holding = False
        object_pos = np.array([object_pos[0], object_pos[1], scene.object_size])
    if holding:
        object_pos = new_pos.copy()
    elif closed and np.linalg.norm(new_pos - scene.object_pos) <= params.grasp_radius:
        holding = True
        object_pos = new_pos.copy()

    succeeded = scene.succeeded or \
        bool(np.linalg.norm(object_pos - scene.goal_center) <= params.goal_radius)
    nxt = replace(scene, gripper_pos=new_pos, gripper_closed=closed,
                  holding=holding, object_pos=object_pos, succeeded=succeeded)
    return nxt, succeeded


# -- scripted expert -----------------------------------------------------------------


def expert_action(scene: Scene, params: EnvParams = EnvParams()) -> np.ndarray:
    """Phased grasp-and-place controller, a pure function of the scene.

    The approach and grasp descent move below the step clamp so the
    object-position-dependent stretch of each demonstration is long enough
    to imitate from vision.
    """
    g = scene.gripper_pos
    obj = scene.object_pos
    goal = scene.goal_center
    hover = 0.08

    def toward(target, grip, speed=params.max_step):
        d = target - g
        n = float(np.linalg.norm(d))
        cap = min(speed, params.max_step)
        if n > cap:
            d = d * (cap / n)
        return np.concatenate([d, [grip]]).astype(np.float64)

    if scene.succeeded:
        return np.array([0.0, 0.0, 0.0, -1.0])
    if not scene.holding:
        if np.linalg.norm(g - obj) <= params.grasp_radius * 0.75:
            return np.array([0.0, 0.0, 0.0, 1.0])                 # close
        if np.hypot(g[0] - obj[0], g[1] - obj[1]) > 0.012:
            return toward(obj + [0, 0, hover], -1.0, speed=0.035)  # move above
        return toward(obj, -1.0, speed=0.028)                      # descend
    lift_z = scene.object_size + hover
    if np.hypot(g[0] - goal[0], g[1] - goal[1]) > 0.012:
        if g[2] < lift_z - 0.015:
            return toward([g[0], g[1], lift_z], 1.0)               # lift
        return toward([goal[0], goal[1], lift_z], 1.0)             # transport
    return toward(goal, 1.0)                                       # descend to goal


def run_expert(scene: Scene, params: EnvParams = EnvParams(),
               max_steps: int = 60, settle_steps: int = 2):
    """Roll the expert; returns (scenes, actions, success).

    scenes has one more entry than actions; actions[t] was applied in
    scenes[t].
    """
    scenes = [scene]
    actions = []
    settle = 0
    for _ in range(max_steps):
        act = expert_action(scenes[-1], params)
        nxt, done = step(scenes[-1], act, params)
        actions.append(act)
        scenes.append(nxt)
        if done:
            settle += 1
            if settle > settle_steps:
                break
    return scenes, actions, scenes[-1].succeeded


# -- camera rig -----------------------------------------------------------------------


def default_rig(image_size: int = 64, focal: float = 95.0) -> list[Camera]:
    """Five cameras: A held out at a distinct elevation, B-E on a ring."""
    look_target = CENTER + np.array([0.0, 0.0, 0.02])
    cams = [look_at_camera("A", CENTER + np.array([0.80, 0.0, 1.00]), look_target,
                           focal, focal, image_size, image_size)]
    ring_radius, ring_height = 0.85, 0.72
    for name, azimuth in zip("BCDE", (45.0, 135.0, 225.0, 315.0)):
        ang = np.deg2rad(azimuth)
        pos = CENTER + np.array([ring_radius * np.cos(ang),
                                 ring_radius * np.sin(ang), ring_height])
        cams.append(look_at_camera(name, pos, look_target,
                                   focal, focal, image_size, image_size))
    return cams


def rig_subset(rig: list[Camera], names: list[str] | str) -> list[Camera]:
    wanted = list(names)
    by_name = {c.name: c for c in rig}
    missing = [n for n in wanted if n not in by_name]
    if missing:
        raise ValueError(f"cameras {missing} not in rig {sorted(by_name)}")
    return [by_name[n] for n in wanted]


# -- scenarios -------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """What to sample: object region, background, camera subset, count, seed."""

    region: str = "id"          # "id" (inner square) or "annulus"
    background: int = 0
    cameras: str = "BCDE"
    episodes: int = 50          # training default mirrors the expert budget
    seed: int = 0

    def __post_init__(self):
        if self.region not in ("id", "annulus"):
            raise ValueError(f"unknown region {self.region!r} (use id or annulus)")
        if self.background not in BACKGROUND_IDS:
            raise ValueError(f"unknown background {self.background}; known {BACKGROUND_IDS}")

    def to_json(self) -> dict:
        return {"region": self.region, "background": self.background,
                "cameras": self.cameras, "episodes": self.episodes, "seed": self.seed}

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioSpec":
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


FINETUNE_EPISODES = 10  # few-shot split size


def sample_object_xy(rng: CounterRng, region: str) -> np.ndarray:
    """Uniform draw from the inner square or (by rejection) the annulus."""
    if region == "id":
        return (rng.uniform(2) * 2.0 - 1.0) * ID_HALF_WIDTH
    while True:
        xy = (rng.uniform(2) * 2.0 - 1.0) * OOD_OUTER_HALF_WIDTH
        if np.max(np.abs(xy)) > ID_HALF_WIDTH:
            return xy


def scenario_scene(spec: ScenarioSpec, episode_index: int) -> Scene:
    """Deterministic scene for one episode, keyed by (seed, episode index)."""
    rng = CounterRng(spec.seed).split("scenes").split(episode_index)
    xy = sample_object_xy(rng, spec.region)
    return make_scene(xy, background=spec.background)


def generate_pack(spec: ScenarioSpec, rig: list[Camera],
                  params: EnvParams = EnvParams(),
                  max_retries: int = 20) -> tuple[EpisodePack, int]:
    """Expert demonstrations under the spec; every episode ends in success.

    Returns (pack, retries).  A failed expert rollout is regenerated from a
    shifted per-episode stream; generation aborts if retries run out.
    """
    cams = rig_subset(rig, spec.cameras)
    episodes = []
    retries = 0
    for ep in range(spec.episodes):
        success = False
        for attempt in range(max_retries):
            rng = CounterRng(spec.seed).split("scenes").split(ep * max_retries + attempt)
            scene = make_scene(sample_object_xy(rng, spec.region),
                               background=spec.background)
            if not scene_solvable(scene):
                continue
            scenes, actions, success = run_expert(scene, params)
            if success:
                break
            retries += 1
        if not success:
            raise RuntimeError(f"expert failed episode {ep} after {max_retries} attempts")
        images = np.stack([render_views(s, cams) for s in scenes[:-1]])
        states = np.stack([s.robot_state() for s in scenes[:-1]])
        acts = np.stack(actions).astype(np.float32)
        episodes.append(Episode(images.astype(np.float32), states, acts))
    task = f"reach-grasp-place/{spec.region}/bg{spec.background}"
    return EpisodePack(task, "default_rig", list(spec.cameras), episodes), retries
