"""Map filter posteriors to per-camera learning rates and the alarm signal.

Pure threshold logic: freeze a camera's model (rate 1.0) while its occlusion
probability, or the global appearance-change probability, exceeds the freeze
threshold; raise the alarm while the appearance-change probability exceeds
the alarm threshold.  Both comparisons are strict.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ControlConfig", "LambdaController", "alarm", "lambda_for"]


@dataclass(frozen=True)
class ControlConfig:
    alarm_threshold: float = 0.9
    occlusion_threshold: float = 0.5
    lambda_normal: float = 0.85
    lambda_frozen: float = 1.0
    # when False, only the occlusion probability can freeze a model
    freeze_on_change: bool = True
    # alarms require this many consecutive over-threshold frames
    debounce_frames: int = 1
    # optional two-threshold hysteresis: once frozen, stay frozen until the
    # driving probability drops below this level (None disables)
    hysteresis_low: float | None = None

    def __post_init__(self) -> None:
        for name in ("alarm_threshold", "occlusion_threshold", "lambda_normal", "lambda_frozen"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.debounce_frames < 1:
            raise ValueError("debounce_frames must be >= 1")
        if self.hysteresis_low is not None and not 0.0 <= self.hysteresis_low <= self.occlusion_threshold:
            raise ValueError("hysteresis_low must lie in [0, occlusion_threshold]")


def lambda_for(p_occlusion: float, p_change: float, cfg: ControlConfig) -> float:
    """Learning rate for one camera given the current posteriors.

    Returns the frozen rate (1.0) when the occlusion probability, or the
    appearance-change probability if ``freeze_on_change`` is set, strictly
    exceeds the freeze threshold; otherwise the normal rate.
    """
    _check_prob("p_occlusion", p_occlusion)
    _check_prob("p_change", p_change)
    driver = max(p_occlusion, p_change) if cfg.freeze_on_change else p_occlusion
    return cfg.lambda_frozen if driver > cfg.occlusion_threshold else cfg.lambda_normal


def alarm(p_change: float, cfg: ControlConfig) -> int:
    """1 iff the appearance-change probability strictly exceeds the threshold."""
    _check_prob("p_change", p_change)
    return 1 if p_change > cfg.alarm_threshold else 0


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


class LambdaController:
    """Stateful wrapper adding optional hysteresis and alarm debouncing.

    With the defaults (no hysteresis, debounce of one frame) this reduces to
    the pure functions above.
    """

    def __init__(self, cfg: ControlConfig, n_cameras: int):
        self.cfg = cfg
        self._frozen = [False] * n_cameras
        self._alarm_streak = 0

    def lambdas(self, p_occlusion: list[float] | tuple[float, ...], p_change: float) -> list[float]:
        cfg = self.cfg
        out = []
        for n, p_occ in enumerate(p_occlusion):
            driver = max(p_occ, p_change) if cfg.freeze_on_change else p_occ
            if cfg.hysteresis_low is None:
                self._frozen[n] = driver > cfg.occlusion_threshold
            elif self._frozen[n]:
                self._frozen[n] = driver >= cfg.hysteresis_low
            else:
                self._frozen[n] = driver > cfg.occlusion_threshold
            out.append(cfg.lambda_frozen if self._frozen[n] else cfg.lambda_normal)
        return out

    def alarm(self, p_change: float) -> int:
        if alarm(p_change, self.cfg):
            self._alarm_streak += 1
        else:
            self._alarm_streak = 0
        return 1 if self._alarm_streak >= self.cfg.debounce_frames else 0
