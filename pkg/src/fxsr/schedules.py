"""Style-conditioned loss-weight schedules.

A single scalar style control t in [0, 1] is mapped to a full set of loss
weights. Two schedule variants are supported:

* ``PD`` sweeps between a reconstruction-faithful result (t = 0) and a
  perceptually sharpened one (t = 1). The reconstruction weight fades out
  linearly while the adversarial weight and a single shallow feature term
  fade in.
* ``DS`` keeps the adversarial weight fixed at 1 and moves a tent window
  across four feature depths, so t selects which depth dominates. Depth
  weights form a partition of unity on [0, 1].

The schedule output feeds :func:`lambda_coeffs`, which folds in the global
loss constants to produce the effective multipliers used by the trainer.
"""

import enum
from dataclasses import dataclass, field

from .errors import ConfigError, DomainError

__all__ = [
    "FeatureLevel",
    "ScheduleVariant",
    "WeightSet",
    "LossConstants",
    "LossCoefficients",
    "weights_at",
    "lambda_coeffs",
    "default_constants",
]


class FeatureLevel(enum.Enum):
    """Feature depths used by the perceptual objective, shallow to deep."""

    VGG22 = "vgg22"
    VGG34 = "vgg34"
    VGG44 = "vgg44"
    VGG54 = "vgg54"

    @classmethod
    def ordered(cls) -> tuple["FeatureLevel", ...]:
        return (cls.VGG22, cls.VGG34, cls.VGG44, cls.VGG54)


class ScheduleVariant(enum.Enum):
    """Which weight schedule the control value t is interpreted under."""

    PD = "pd"
    DS = "ds"

    @classmethod
    def parse(cls, name: str) -> "ScheduleVariant":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown schedule variant {name!r}; expected one of "
                f"{[v.value for v in cls]}"
            ) from None


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not value == value or value in (float("inf"), float("-inf")):
        raise DomainError(f"{name} must be finite, got {value!r}")
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class WeightSet:
    """Dimensionless schedule weights for one value of t.

    All entries are finite and lie in [0, 1]; ``w_per`` always carries an
    entry for every :class:`FeatureLevel`.
    """

    w_rec: float
    w_adv: float
    w_per: dict[FeatureLevel, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "w_rec", _check_unit("w_rec", self.w_rec))
        object.__setattr__(self, "w_adv", _check_unit("w_adv", self.w_adv))
        per = {}
        for level in FeatureLevel.ordered():
            per[level] = _check_unit(
                f"w_per[{level.value}]", self.w_per.get(level, 0.0)
            )
        extra = set(self.w_per) - set(per)
        if extra:
            raise DomainError(f"unknown feature levels in w_per: {sorted(extra)!r}")
        object.__setattr__(self, "w_per", per)

    def active_levels(self) -> tuple[FeatureLevel, ...]:
        return tuple(l for l in FeatureLevel.ordered() if self.w_per[l] > 0.0)


@dataclass(frozen=True)
class LossConstants:
    """Global objective constants, independent of t.

    ``eta`` scales how strongly the reconstruction weight responds to the
    schedule and is the one constant that differs between variants.
    """

    lambda_rec_o: float = 1e-2
    lambda_adv_o: float = 5e-3
    lambda_per: float = 1.0
    eta: float = 10.0

    def __post_init__(self):
        for name in ("lambda_rec_o", "lambda_adv_o", "lambda_per", "eta"):
            value = float(getattr(self, name))
            if not value == value or value in (float("inf"), float("-inf")):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if value < 0.0:
                raise DomainError(f"{name} must be non-negative, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class LossCoefficients:
    """Effective multipliers applied to the three loss terms."""

    lambda_rec: float
    lambda_adv: float
    lambda_per: float


def default_constants(variant: ScheduleVariant) -> LossConstants:
    """Published constants for each variant; they differ only in eta."""
    if variant is ScheduleVariant.PD:
        return LossConstants(eta=10.0)
    if variant is ScheduleVariant.DS:
        return LossConstants(eta=1.0)
    raise ConfigError(f"unknown variant {variant!r}")


def _tent(t: float, center: float) -> float:
    # Width 1/3 on each side; neighbouring tents cross at exactly 0.5.
    return max(0.0, 1.0 - 3.0 * abs(t - center))


def weights_at(t: float, variant: ScheduleVariant) -> WeightSet:
    """Evaluate the schedule at control value ``t``.

    Raises DomainError when t is outside [0, 1] or not finite.
    """
    t = _check_unit("t", t)
    levels = FeatureLevel.ordered()
    if variant is ScheduleVariant.PD:
        per = {level: 0.0 for level in levels}
        per[FeatureLevel.VGG22] = t
        return WeightSet(w_rec=1.0 - t, w_adv=t, w_per=per)
    if variant is ScheduleVariant.DS:
        per = {
            level: _tent(t, k / 3.0) for k, level in enumerate(levels)
        }
        return WeightSet(w_rec=1.0 - t, w_adv=1.0, w_per=per)
    raise ConfigError(f"unknown variant {variant!r}")


def lambda_coeffs(
    weights: WeightSet, constants: LossConstants
) -> LossCoefficients:
    """Fold schedule weights into the global constants.

    The reconstruction multiplier keeps a constant floor so the pixel term
    never vanishes entirely; the adversarial multiplier scales purely with
    its schedule weight.
    """
    return LossCoefficients(
        lambda_rec=constants.lambda_rec_o + constants.eta * weights.w_rec,
        lambda_adv=constants.lambda_adv_o * weights.w_adv,
        lambda_per=constants.lambda_per,
    )
