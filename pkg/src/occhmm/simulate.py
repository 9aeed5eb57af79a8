"""Synthetic multi-camera scenario generator with planted ground truth.

Two generation modes share one config:

* ``patch`` mode emits per-camera appearance vectors.  A low-dimensional
  latent appearance performs a smooth bounded random walk; each camera
  observes its own linear view of it plus noise.  During an occlusion event
  the camera's patch is replaced by a structured occluder drawn from an
  independent appearance model; at a change event every camera's view is
  redrawn at once, so the jump is visible everywhere simultaneously.
* ``direct_z`` mode emits residuals sampled straight from the filter's
  generative law: hidden bits either planted from the event lists or sampled
  from the model's chains, residuals exponential while normal and uniform on
  [0, M] while anomalous.

``render_scene`` additionally rasterises patch-mode scenarios into full 2-D
frames (background, moving target, sliding occluder) for tracking runs.

Everything is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hmm_filter import ModelParams
from .io import FrameRecord
from .tracker import BoundingBox

__all__ = [
    "GroundTruth",
    "RenderConfig",
    "RenderedScene",
    "ScenarioConfig",
    "generate",
    "generate_direct_z_matrix",
    "render_scene",
]


@dataclass(frozen=True)
class RenderConfig:
    """Geometry of rasterised scenes (patch mode only)."""

    frame_height: int = 64
    frame_width: int = 64
    box_height: int = 16
    box_width: int = 16
    occluder_height: int = 24
    occluder_width: int = 24
    # per-frame occluder velocity (dy, dx) while it slides away after an event
    occluder_speed: tuple[int, int] = (2, 2)
    background: float = 0.1
    # target top-left start; None centres it
    target_start: tuple[int, int] | None = None
    # per-frame target velocity (dy, dx), applied as rounded positions
    target_velocity: tuple[float, float] = (0.0, 0.0)
    # frame after which the target's velocity reverses (walk in, turn, walk
    # back); None keeps it constant
    target_turn_frame: int | None = None
    # displacement (dy, dx) of the occluder pin relative to centred-on-target,
    # letting it sit ahead of a moving target so the target slips behind it
    occluder_pin_offset: tuple[int, int] = (0, 0)
    # std-dev of a per-frame global additive illumination offset; keeps the
    # class-conditional variances of online classifiers realistically alive
    flicker_sigma: float = 0.0
    # pixel-intensity base ranges; the occluder palette is kept away from the
    # target's so the two are separable appearances, like a dark passer-by in
    # front of a bright subject
    target_palette: tuple[float, float] = (0.45, 0.85)
    occluder_palette: tuple[float, float] = (0.15, 0.35)
    # the occluder's own appearance walks much faster than the target's
    occluder_walk_step: float = 0.5


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Scenario description: geometry of events plus generator parameters.

    Events use 1-based frame indices.  ``occlusion_events`` holds
    (camera, start, duration) triples; ``change_events`` holds
    (start, duration) pairs.  Overlapping events merge.  ``model_params`` is
    required in ``direct_z`` mode and supplies both the sampled chains (when
    no events are planted) and the residual emission law.
    """

    n_cameras: int
    n_frames: int
    mode: str = "patch"
    patch_dim: int = 64
    latent_rank: int = 2
    noise_sigma: float = 0.01
    walk_step: float = 0.02
    appearance_amplitude: float = 0.15
    occlusion_events: tuple[tuple[int, int, int], ...] = ()
    change_events: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    model_params: ModelParams | None = None
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self) -> None:
        if self.n_cameras < 1:
            raise ValueError("need at least one camera")
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        if self.mode not in ("patch", "direct_z"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "direct_z" and self.model_params is None:
            raise ValueError("direct_z mode requires model_params")
        if self.mode == "patch" and (self.patch_dim < 1 or self.latent_rank < 1):
            raise ValueError("patch mode needs patch_dim >= 1 and latent_rank >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for cam, start, duration in self.occlusion_events:
            if not 0 <= cam < self.n_cameras:
                raise ValueError(f"occlusion event camera {cam} out of range")
            _check_event(start, duration, self.n_frames)
        for start, duration in self.change_events:
            _check_event(start, duration, self.n_frames)

    def occlusion_intervals(self, camera: int) -> list[tuple[int, int]]:
        """Merged, sorted (start, end) closed intervals for one camera, 1-based."""
        spans = [
            (start, start + duration - 1)
            for cam, start, duration in self.occlusion_events
            if cam == camera
        ]
        return _merge_intervals(spans)

    def change_intervals(self) -> list[tuple[int, int]]:
        spans = [(start, start + duration - 1) for start, duration in self.change_events]
        return _merge_intervals(spans)


def _check_event(start: int, duration: int, n_frames: int) -> None:
    if duration < 1:
        raise ValueError(f"event duration must be >= 1, got {duration}")
    if not 1 <= start <= n_frames or start + duration - 1 > n_frames:
        raise ValueError(
            f"event [{start}, {start + duration - 1}] outside frame range 1..{n_frames}"
        )


def _merge_intervals(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    if not spans:
        return []
    spans = sorted(spans)
    merged = [spans[0]]
    for start, end in spans[1:]:
        last_start, last_end = merged[-1]
        if start <= last_end + 1:
            merged[-1] = (last_start, max(last_end, end))
        else:
            merged.append((start, end))
    return merged


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Planted (or sampled) hidden bits: s is length T, o is N x T."""

    s: np.ndarray
    o: np.ndarray

    def change_intervals(self) -> list[tuple[int, int]]:
        return _bit_intervals(self.s)

    def occlusion_intervals(self, camera: int) -> list[tuple[int, int]]:
        return _bit_intervals(self.o[camera])


def _bit_intervals(bits: np.ndarray) -> list[tuple[int, int]]:
    """Closed 1-based (start, end) intervals where the bit sequence is 1."""
    out = []
    start = None
    for i, b in enumerate(bits):
        if b and start is None:
            start = i + 1
        elif not b and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(bits)))
    return out


def _truth_from_events(config: ScenarioConfig) -> GroundTruth:
    s = np.zeros(config.n_frames, dtype=int)
    o = np.zeros((config.n_cameras, config.n_frames), dtype=int)
    for start, end in config.change_intervals():
        s[start - 1 : end] = 1
    for cam in range(config.n_cameras):
        for start, end in config.occlusion_intervals(cam):
            o[cam, start - 1 : end] = 1
    return GroundTruth(s=s, o=o)


def _sample_truth_from_chains(config: ScenarioConfig, rng: np.random.Generator) -> GroundTruth:
    params = config.model_params
    assert params is not None
    n, horizon = config.n_cameras, config.n_frames
    prior = params.prior.probs
    start_index = int(rng.choice(prior.size, p=prior))
    s_cur = (start_index >> n) & 1
    o_cur = [(start_index >> k) & 1 for k in range(n)]
    stay = np.empty((n + 1, 2))
    stay[0] = np.diag(params.transitions.s_chain)
    for k in range(n):
        stay[k + 1] = np.diag(params.transitions.o_chains[k])
    u = rng.random((horizon, n + 1))
    s = np.empty(horizon, dtype=int)
    o = np.empty((n, horizon), dtype=int)
    for t in range(horizon):
        s_cur = s_cur if u[t, 0] < stay[0, s_cur] else 1 - s_cur
        s[t] = s_cur
        for k in range(n):
            o_cur[k] = o_cur[k] if u[t, k + 1] < stay[k + 1, o_cur[k]] else 1 - o_cur[k]
            o[k, t] = o_cur[k]
    return GroundTruth(s=s, o=o)


def generate_direct_z_matrix(config: ScenarioConfig) -> tuple[np.ndarray, GroundTruth]:
    """Residual matrix (T x N) sampled from the generative law, plus truth.

    Hidden bits come from the planted event lists when any are given,
    otherwise from the model's chains started at a prior draw.
    """
    if config.mode != "direct_z":
        raise ValueError("generate_direct_z_matrix requires direct_z mode")
    params = config.model_params
    assert params is not None
    rng = np.random.default_rng(config.seed)
    if config.occlusion_events or config.change_events:
        truth = _truth_from_events(config)
    else:
        truth = _sample_truth_from_chains(config, rng)
    anomalous = (truth.o.T | truth.s[:, None]).astype(bool)
    normal_draw = rng.exponential(params.emission.mu, size=anomalous.shape)
    uniform_draw = rng.uniform(0.0, params.emission.m_max, size=anomalous.shape)
    z = np.where(anomalous, uniform_draw, normal_draw)
    return z, truth


@dataclass(frozen=True, eq=False)
class _PatchModels:
    views: list[np.ndarray]
    offsets: list[np.ndarray]


def _draw_patch_models(
    n_cameras: int,
    dim: int,
    rank: int,
    amplitude: float,
    rng: np.random.Generator,
    palette: tuple[float, float] = (0.3, 0.7),
) -> _PatchModels:
    views, offsets = [], []
    for _ in range(n_cameras):
        raw = rng.normal(size=(dim, rank))
        q, _ = np.linalg.qr(raw)
        views.append(amplitude * q[:, :rank])
        offsets.append(rng.uniform(palette[0], palette[1], size=dim))
    return _PatchModels(views=views, offsets=offsets)


class _LatentWalk:
    """Smooth bounded random walk in the latent appearance space."""

    def __init__(self, rank: int, step_scale: float, rng: np.random.Generator):
        self.rng = rng
        self.step_scale = step_scale
        direction = rng.normal(size=rank)
        self.state = direction / np.linalg.norm(direction)
        self.base_norm = 1.0

    def advance(self) -> np.ndarray:
        g = self.rng.normal(size=self.state.size)
        norm = np.linalg.norm(g)
        if norm > 0:
            self.state = self.state + self.step_scale * np.linalg.norm(self.state) * g / norm
        total = np.linalg.norm(self.state)
        low, high = 0.5 * self.base_norm, 2.0 * self.base_norm
        if total > high:
            self.state *= high / total
        elif total < low and total > 0:
            self.state *= low / total
        return self.state.copy()


def generate(config: ScenarioConfig) -> tuple[list[FrameRecord], GroundTruth]:
    """Produce one frame record per t (1-based) plus the planted ground truth."""
    if config.mode == "direct_z":
        z, truth = generate_direct_z_matrix(config)
        records = [
            FrameRecord(t=t + 1, z=z[t], s=int(truth.s[t]), o=truth.o[:, t])
            for t in range(config.n_frames)
        ]
        return records, truth

    truth = _truth_from_events(config)
    n, dim, rank = config.n_cameras, config.patch_dim, config.latent_rank
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    walk_rng = np.random.default_rng(seeds[0])
    model_rng = np.random.default_rng(seeds[1])
    occluder_rng = np.random.default_rng(seeds[2])
    noise_rng = np.random.default_rng(seeds[3])

    models = _draw_patch_models(n, dim, rank, config.appearance_amplitude, model_rng)
    occ_models = _draw_patch_models(n, dim, rank, config.appearance_amplitude, occluder_rng)
    target_walk = _LatentWalk(rank, config.walk_step, walk_rng)
    occluder_walk = _LatentWalk(rank, config.walk_step, occluder_rng)
    change_starts = {start for start, _ in config.change_intervals()}

    records = []
    for t in range(1, config.n_frames + 1):
        if t in change_starts:
            models = _draw_patch_models(n, dim, rank, config.appearance_amplitude, model_rng)
        a = target_walk.advance()
        a_occ = occluder_walk.advance()
        noise = (
            noise_rng.normal(scale=config.noise_sigma, size=(n, dim))
            if config.noise_sigma > 0
            else np.zeros((n, dim))
        )
        patches = np.empty((n, dim))
        for cam in range(n):
            if truth.o[cam, t - 1]:
                patches[cam] = occ_models.views[cam] @ a_occ + occ_models.offsets[cam]
            else:
                patches[cam] = models.views[cam] @ a + models.offsets[cam]
            patches[cam] += noise[cam]
        records.append(
            FrameRecord(t=t, patches=patches, s=int(truth.s[t - 1]), o=truth.o[:, t - 1])
        )
    return records, truth


@dataclass(frozen=True, eq=False)
class RenderedScene:
    """Rasterised scenario: frames[t][cam] is a 2-D intensity image.

    ``target_boxes[t][cam]`` is the ground-truth box.  ``truth.o`` here is
    coverage-derived: a camera counts as occluded while the occluder covers
    more than half of the target box, so the slide-away tail after an event
    stays marked until the target is mostly visible again.
    """

    config: ScenarioConfig
    frames: list[list[np.ndarray]]
    target_boxes: list[list[BoundingBox]]
    truth: GroundTruth


def render_scene(config: ScenarioConfig) -> RenderedScene:
    """Rasterise a patch-mode scenario into frames with an occluding panel.

    At the start of a planted interval the occluder appears pinned over the
    target's position at that moment and stays there for the interval, so a
    moving target can walk behind it and re-emerge.  Afterwards it slides
    away at ``render.occluder_speed``; a zero speed leaves it parked, like a
    bystander who stepped in front and stayed.  The target panel is the
    camera's appearance vector reshaped to the box; the occluder panel comes
    from the independent occluder model.
    """
    if config.mode != "patch":
        raise ValueError("render_scene requires patch mode")
    render = config.render
    bh, bw = render.box_height, render.box_width
    oh, ow = render.occluder_height, render.occluder_width
    fh, fw = render.frame_height, render.frame_width
    if config.patch_dim != bh * bw:
        raise ValueError(
            f"patch_dim must equal box_height*box_width for rendering "
            f"({config.patch_dim} != {bh * bw})"
        )
    if render.target_start is None:
        ty0, tx0 = (fh - bh) // 2, (fw - bw) // 2
    else:
        ty0, tx0 = render.target_start

    base_truth = _truth_from_events(config)
    n, dim, rank = config.n_cameras, config.patch_dim, config.latent_rank
    occ_dim = oh * ow
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    walk_rng = np.random.default_rng(seeds[0])
    model_rng = np.random.default_rng(seeds[1])
    occluder_rng = np.random.default_rng(seeds[2])
    noise_rng = np.random.default_rng(seeds[3])

    models = _draw_patch_models(
        n, dim, rank, config.appearance_amplitude, model_rng, render.target_palette
    )
    occ_models = _draw_patch_models(
        n, occ_dim, rank, config.appearance_amplitude, occluder_rng, render.occluder_palette
    )
    target_walk = _LatentWalk(rank, config.walk_step, walk_rng)
    occluder_walk = _LatentWalk(rank, render.occluder_walk_step, occluder_rng)
    change_starts = {start for start, _ in config.change_intervals()}

    # occluder position per camera: None while idle, else top-left (y, x);
    # pinned where the target stood when its planted interval began, so a
    # moving target can walk behind it and re-emerge
    occ_pos: list[tuple[float, float] | None] = [None] * n
    was_planted = [False] * n
    vy, vx = render.occluder_speed

    frames: list[list[np.ndarray]] = []
    boxes: list[list[BoundingBox]] = []
    occ_truth = np.zeros((n, config.n_frames), dtype=int)

    for t in range(1, config.n_frames + 1):
        if t in change_starts:
            models = _draw_patch_models(
                n, dim, rank, config.appearance_amplitude, model_rng, render.target_palette
            )
        a = target_walk.advance()
        a_occ = occluder_walk.advance()
        turn = render.target_turn_frame
        if turn is None or t <= turn:
            fy = ty0 + (t - 1) * render.target_velocity[0]
            fx = tx0 + (t - 1) * render.target_velocity[1]
        else:
            fy = ty0 + (2 * turn - t - 1) * render.target_velocity[0]
            fx = tx0 + (2 * turn - t - 1) * render.target_velocity[1]
        ty = min(max(int(round(fy)), 0), fh - bh)
        tx = min(max(int(round(fx)), 0), fw - bw)
        target_box = BoundingBox(x=tx, y=ty, w=bw, h=bh)

        frame_row: list[np.ndarray] = []
        box_row: list[BoundingBox] = []
        for cam in range(n):
            frame = np.full((fh, fw), render.background)
            panel = (models.views[cam] @ a + models.offsets[cam]).reshape(bh, bw)
            frame[ty : ty + bh, tx : tx + bw] = panel

            planted = bool(base_truth.o[cam, t - 1])
            if planted and not was_planted[cam]:
                pin_dy, pin_dx = render.occluder_pin_offset
                occ_pos[cam] = (
                    ty + (bh - oh) / 2.0 + pin_dy,
                    tx + (bw - ow) / 2.0 + pin_dx,
                )
            elif not planted and occ_pos[cam] is not None and (vy or vx):
                oy, ox = occ_pos[cam]
                occ_pos[cam] = (oy + vy, ox + vx)
                oy, ox = occ_pos[cam]
                if oy >= fh or ox >= fw or oy + oh <= 0 or ox + ow <= 0:
                    occ_pos[cam] = None
            was_planted[cam] = planted

            if occ_pos[cam] is not None:
                oy, ox = int(round(occ_pos[cam][0])), int(round(occ_pos[cam][1]))
                occ_panel = (occ_models.views[cam] @ a_occ + occ_models.offsets[cam]).reshape(oh, ow)
                y0, y1 = max(oy, 0), min(oy + oh, fh)
                x0, x1 = max(ox, 0), min(ox + ow, fw)
                if y0 < y1 and x0 < x1:
                    frame[y0:y1, x0:x1] = occ_panel[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
                cover_y = max(0, min(oy + oh, ty + bh) - max(oy, ty))
                cover_x = max(0, min(ox + ow, tx + bw) - max(ox, tx))
                if cover_y * cover_x > 0.5 * bh * bw:
                    occ_truth[cam, t - 1] = 1

            if render.flicker_sigma > 0:
                frame += noise_rng.normal(scale=render.flicker_sigma)
            if config.noise_sigma > 0:
                frame += noise_rng.normal(scale=config.noise_sigma, size=frame.shape)
            frame_row.append(frame)
            box_row.append(target_box)
        frames.append(frame_row)
        boxes.append(box_row)

    truth = GroundTruth(s=base_truth.s, o=occ_truth)
    return RenderedScene(config=config, frames=frames, target_boxes=boxes, truth=truth)
