"""Drivers wiring the pieces together: stream filtering, tracking, evaluation.

``filter_records`` consumes a parsed stream (residuals or patches) and emits
one posterior row per frame.  In patch mode each camera's subspace model is
bootstrapped from the first ``init_window`` patches, optionally followed by
an emission-calibration window, before filtering starts; until then rows
carry the prior's marginals.  ``track_scenario`` runs the full per-camera
tracking loop over a rendered scene, with the learning rate either fixed or
driven by the filter posteriors.  ``evaluate`` scores traces against ground
truth.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import control as ctl
from . import hmm_filter as hf
from . import subspace as ssp
from . import tracker as trk
from .config import RunConfig
from .io import FrameRecord, PosteriorRow, TrackRow
from .simulate import GroundTruth, RenderedScene, _bit_intervals

__all__ = [
    "EvalError",
    "FilterRunResult",
    "TrackRunResult",
    "evaluate",
    "filter_records",
    "format_report",
    "track_scenario",
]

# floor for calibrated mu so that noiseless calibration windows stay valid
MIN_CALIBRATED_MU = 1e-9


class EvalError(ValueError):
    """Trace and truth inputs disagree in shape or coverage."""


@dataclass(frozen=True, eq=False)
class FilterRunResult:
    rows: list[PosteriorRow]
    beliefs: list[hf.BeliefState]
    calibrated_mu: float | None = None
    calibrated_m_max: float | None = None


class _SubspaceBank:
    """Per-camera appearance models with shared init / update policy."""

    def __init__(self, cfg: RunConfig, dim: int):
        self.cfg = cfg.subspace
        self.scale = float(np.sqrt(dim)) if cfg.model.scale_residuals else 1.0
        self.n_cameras = cfg.model.n_cameras
        self.dim = dim
        self.spaces: list[ssp.AffineSubspace | None] = [None] * self.n_cameras
        self._init_buffer: list[list[np.ndarray]] = [[] for _ in range(self.n_cameras)]
        self._windows = [deque(maxlen=self.cfg.rebuild_window) for _ in range(self.n_cameras)]
        self._jitter = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(5)[4])

    @property
    def ready(self) -> bool:
        return all(s is not None for s in self.spaces)

    def collect(self, cam: int, patch: np.ndarray) -> None:
        buf = self._init_buffer[cam]
        buf.append(np.asarray(patch, dtype=float))
        if len(buf) >= self.cfg.init_window:
            batch = np.stack(buf)
            # tiny isotropic jitter avoids a rank-0 start on constant patches
            batch = batch + self._jitter.normal(scale=1e-9, size=batch.shape)
            rank = min(self.cfg.rank_cap, len(buf) - 1)
            self.spaces[cam] = ssp.init_from_batch(batch, rank)
            self._windows[cam].extend(buf)
            buf.clear()

    def residual(self, cam: int, patch: np.ndarray) -> float:
        space = self.spaces[cam]
        assert space is not None
        return ssp.residual_distance(space, patch) / self.scale

    def update(self, cam: int, patch: np.ndarray, t: int, p_occlusion: float | None) -> None:
        """Fold a patch in; ``p_occlusion`` of None means ungated."""
        if t % self.cfg.update_every != 0:
            return
        space = self.spaces[cam]
        assert space is not None
        if self.cfg.mode == "rebuild":
            if p_occlusion is not None and p_occlusion > self.cfg.gate_threshold:
                return
            self._windows[cam].append(np.asarray(patch, dtype=float))
            window = np.stack(self._windows[cam])
            rank = min(self.cfg.rank_cap, len(window) - 1)
            self.spaces[cam] = ssp.init_from_batch(window, rank)
        elif p_occlusion is None:
            self.spaces[cam] = ssp.update(space, patch, self.cfg.forgetting, self.cfg.rank_cap)
        else:
            self.spaces[cam] = ssp.gated_update(
                space,
                patch,
                self.cfg.forgetting,
                p_occlusion,
                gate_threshold=self.cfg.gate_threshold,
                rank_cap=self.cfg.rank_cap,
            )


def filter_records(records: list[FrameRecord], cfg: RunConfig) -> FilterRunResult:
    """Filter a stream of residual or patch records into posterior rows.

    Residual records are filtered directly.  Patch records first pass
    through the per-camera subspace bank; the subspace update is gated by
    the camera's posterior occlusion probability.  With
    ``model.emission.calibrate`` the emission scale is fit to the residuals
    of an initial window (mean for mu, twice the 99.9th percentile for the
    uniform bound) before any filtering happens.
    """
    n = cfg.model.n_cameras
    if records and records[0].n_cameras != n:
        raise EvalError(
            f"stream has {records[0].n_cameras} cameras but config expects {n}"
        )
    patch_mode = records[0].patches is not None if records else False
    controller = ctl.LambdaController(cfg.control, n)
    rows: list[PosteriorRow] = []
    beliefs: list[hf.BeliefState] = []

    calibrated_mu: float | None = None
    calibrated_m: float | None = None

    if not patch_mode:
        params = cfg.model_params()
        belief = params.prior
        for rec in records:
            assert rec.z is not None
            belief = hf.step(belief, hf.ObservationVector(z=rec.z), params)
            _emit(rows, beliefs, belief, rec.t, controller)
        return FilterRunResult(rows=rows, beliefs=beliefs)

    bank = _SubspaceBank(cfg, records[0].patches.shape[1])
    calibration: list[float] = []
    calibrating = cfg.model.emission.calibrate
    params: hf.ModelParams | None = None if calibrating else cfg.model_params()
    belief = params.prior if params is not None else None

    for rec in records:
        assert rec.patches is not None
        if not bank.ready:
            for cam in range(n):
                bank.collect(cam, rec.patches[cam])
            _emit_prior(rows, beliefs, cfg, rec.t, controller)
            continue
        zs = np.array([bank.residual(cam, rec.patches[cam]) for cam in range(n)])
        if calibrating:
            calibration.extend(zs.tolist())
            for cam in range(n):
                bank.update(cam, rec.patches[cam], rec.t, None)
            _emit_prior(rows, beliefs, cfg, rec.t, controller)
            if len(calibration) >= cfg.model.emission.calibration_window * n:
                pooled = np.asarray(calibration)
                calibrated_mu = max(float(pooled.mean()), MIN_CALIBRATED_MU)
                calibrated_m = max(
                    2.0 * float(np.percentile(pooled, 99.9)), 20.0 * calibrated_mu
                )
                params = cfg.model_params(mu=calibrated_mu, m_max=calibrated_m)
                belief = params.prior
                calibrating = False
            continue
        assert params is not None and belief is not None
        belief = hf.step(belief, hf.ObservationVector(z=zs), params)
        p_change, p_occ = _emit(rows, beliefs, belief, rec.t, controller)
        for cam in range(n):
            bank.update(cam, rec.patches[cam], rec.t, p_occ[cam])
    return FilterRunResult(
        rows=rows, beliefs=beliefs, calibrated_mu=calibrated_mu, calibrated_m_max=calibrated_m
    )


def _emit(
    rows: list[PosteriorRow],
    beliefs: list[hf.BeliefState],
    belief: hf.BeliefState,
    t: int,
    controller: ctl.LambdaController,
) -> tuple[float, tuple[float, ...]]:
    p_change = hf.marginal_appearance_change(belief)
    p_occ = tuple(hf.marginal_occlusion(belief, cam) for cam in range(belief.n_cameras))
    lambdas = tuple(controller.lambdas(p_occ, p_change))
    alarm_bit = controller.alarm(p_change)
    rows.append(
        PosteriorRow(t=t, p_change=p_change, p_occlusion=p_occ, lambdas=lambdas, alarm=alarm_bit)
    )
    beliefs.append(replace(belief, t=t))
    return p_change, p_occ


def _emit_prior(
    rows: list[PosteriorRow],
    beliefs: list[hf.BeliefState],
    cfg: RunConfig,
    t: int,
    controller: ctl.LambdaController,
) -> None:
    prior = hf.default_prior(cfg.model.n_cameras, cfg.model.prior_normal_mass)
    _emit(rows, beliefs, prior, t, controller)


@dataclass(frozen=True, eq=False)
class TrackRunResult:
    track_rows: list[TrackRow]
    posterior_rows: list[PosteriorRow]
    truth: GroundTruth


def track_scenario(
    scene: RenderedScene,
    cfg: RunConfig,
    controlled: bool = True,
    fixed_lambda: float = 0.85,
) -> TrackRunResult:
    """Run per-camera trackers over a rendered scene, frame by frame.

    Each frame: local search moves every camera's box, the patch at the new
    box yields the camera's prediction error, one filter step fuses all
    cameras, and the resulting posteriors choose each camera's learning rate
    before the discriminative and generative models are updated.  With
    ``controlled=False`` the learning rate stays at ``fixed_lambda`` and the
    subspace updates are ungated; the filter still runs for reporting.
    """
    n = scene.config.n_cameras
    horizon = scene.config.n_frames
    tcfg = cfg.tracker
    dims = (tcfg.patch_height, tcfg.patch_width)
    fxs = [
        trk.SparseFeatureExtractor(tcfg.num_features, dims, seed=tcfg.feature_seed + cam)
        for cam in range(n)
    ]
    bank = _SubspaceBank(cfg, dims[0] * dims[1])
    params = cfg.model_params()
    belief = params.prior
    controller = ctl.LambdaController(cfg.control, n)

    boxes: list[trk.BoundingBox] = []
    models: list[trk.TrackerModel] = []
    for cam in range(n):
        frame = scene.frames[0][cam]
        box = scene.target_boxes[0][cam]
        feats = trk.extract(fxs[cam], frame, box)
        negs = [
            trk.extract(fxs[cam], frame, nb)
            for nb in trk.sample_negative_boxes(box, frame.shape)
        ]
        models.append(trk.init_model(feats, negs, tcfg.init_var, cfg.control.lambda_normal))
        boxes.append(box)

    track_rows: list[TrackRow] = []
    posterior_rows: list[PosteriorRow] = []
    beliefs: list[hf.BeliefState] = []

    for t in range(1, horizon + 1):
        frames = scene.frames[t - 1]
        if t > 1:
            boxes = [
                trk.search(models[cam], fxs[cam], frames[cam], boxes[cam], tcfg.search_radius)
                for cam in range(n)
            ]
        patches = [fxs[cam].resample(frames[cam], boxes[cam]).reshape(-1) for cam in range(n)]

        if not bank.ready:
            for cam in range(n):
                bank.collect(cam, patches[cam])
            zs = np.zeros(n)
            p_change, p_occ = _emit(posterior_rows, beliefs, replace(belief, t=t), t, controller)
        else:
            zs = np.array([bank.residual(cam, patches[cam]) for cam in range(n)])
            belief = hf.step(belief, hf.ObservationVector(z=zs), params)
            p_change, p_occ = _emit(posterior_rows, beliefs, belief, t, controller)

        row = posterior_rows[-1]
        for cam in range(n):
            lam = row.lambdas[cam] if controlled else fixed_lambda
            feats = fxs[cam].features(patches[cam])
            score = trk.classify(models[cam], feats)
            negs = [
                trk.extract(fxs[cam], frames[cam], nb)
                for nb in trk.sample_negative_boxes(boxes[cam], frames[cam].shape)
            ]
            models[cam] = trk.update_model(models[cam], feats, negs, lam)
            if bank.ready:
                bank.update(cam, patches[cam], t, p_occ[cam] if controlled else None)
            track_rows.append(
                TrackRow(
                    t=t,
                    camera=cam,
                    x=boxes[cam].x,
                    y=boxes[cam].y,
                    w=boxes[cam].w,
                    h=boxes[cam].h,
                    score=score,
                    iou=trk.iou(boxes[cam], scene.target_boxes[t - 1][cam]),
                    z=float(zs[cam]),
                    p_occlusion=row.p_occlusion[cam],
                    lam=lam,
                    alarm=row.alarm,
                )
            )
    return TrackRunResult(track_rows=track_rows, posterior_rows=posterior_rows, truth=scene.truth)


def evaluate(
    rows: list[PosteriorRow],
    truth_s: np.ndarray,
    truth_o: np.ndarray,
    occlusion_threshold: float = 0.5,
    track_rows: list[TrackRow] | None = None,
    window: int = 2,
) -> dict[str, object]:
    """Score posterior traces against ground truth.

    Produces detection delay and peak posterior per planted event, the
    false-alarm rate per 1000 frames (alarms outside +-``window`` frames of
    any true change interval), and the final IoU when tracking rows are
    supplied.  Raises EvalError when trace and truth lengths disagree.
    """
    horizon = len(rows)
    if truth_s.shape[0] != horizon or truth_o.shape[1] != horizon:
        raise EvalError(
            f"trace covers {horizon} frames but truth covers "
            f"{truth_s.shape[0]} (s) / {truth_o.shape[1]} (o)"
        )
    n = truth_o.shape[0]
    report: dict[str, object] = {"frames": horizon, "cameras": n}

    change_spans = _bit_intervals(truth_s)
    report["events.change.count"] = len(change_spans)
    allowed = np.zeros(horizon, dtype=bool)
    for i, (start, end) in enumerate(change_spans):
        lo, hi = max(start - window, 1), min(end + window, horizon)
        allowed[lo - 1 : hi] = True
        segment = rows[start - 1 : end]
        peak = max(r.p_change for r in segment)
        prefix = f"events.change.{i}"
        report[f"{prefix}.start"] = start
        report[f"{prefix}.end"] = end
        report[f"{prefix}.peak_p"] = peak
        delay = None
        for r in rows[start - 1 : hi]:
            if r.alarm:
                delay = r.t - start
                break
        report[f"{prefix}.detected"] = int(delay is not None)
        if delay is not None:
            report[f"{prefix}.delay"] = delay

    for cam in range(n):
        spans = _bit_intervals(truth_o[cam])
        report[f"events.occlusion.cam{cam + 1}.count"] = len(spans)
        for i, (start, end) in enumerate(spans):
            hi = min(end + window, horizon)
            segment = rows[start - 1 : end]
            peak = max(r.p_occlusion[cam] for r in segment)
            prefix = f"events.occlusion.cam{cam + 1}.{i}"
            report[f"{prefix}.start"] = start
            report[f"{prefix}.end"] = end
            report[f"{prefix}.peak_p"] = peak
            delay = None
            for r in rows[start - 1 : hi]:
                if r.p_occlusion[cam] > occlusion_threshold:
                    delay = r.t - start
                    break
            report[f"{prefix}.detected"] = int(delay is not None)
            if delay is not None:
                report[f"{prefix}.delay"] = delay

    false_alarms = sum(1 for r in rows if r.alarm and not allowed[r.t - 1])
    report["false_alarms"] = false_alarms
    report["false_alarm_rate_per_1000"] = 1000.0 * false_alarms / horizon

    if track_rows is not None:
        if len(track_rows) != horizon * n:
            raise EvalError(
                f"track trace has {len(track_rows)} rows, expected {horizon * n}"
            )
        last = [r for r in track_rows if r.t == horizon]
        ious = [r.iou for r in last]
        report["final_iou_mean"] = float(np.mean(ious))
        report["final_iou_min"] = float(np.min(ious))
    return report


def format_report(report: dict[str, object]) -> str:
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
