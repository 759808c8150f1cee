"""Prior log-densities with exact gradients, plus the constrained/unconstrained
coordinate transforms.

Families: normal, student_t, cauchy and their half variants. Half families
live on [0, inf) and add the constant log(2) truncation correction to the
symmetric density, so densities stay properly normalized at zero location
and, more importantly, naive and suffstat posteriors differ only by
parameter-independent constants. Positivity constraints are always realized
through the log transform; no other constraint type is needed by the four
models.
"""

from dataclasses import dataclass
import math
import re

from . import _engine
from .errors import ConfigError, OutOfSupport

__all__ = ["PriorSpec", "lpdf_grad", "transform_forward", "FAMILIES"]

FAMILIES = {
    "flat": _engine.FAM_FLAT,
    "normal": _engine.FAM_NORMAL,
    "student_t": _engine.FAM_STUDENT_T,
    "cauchy": _engine.FAM_CAUCHY,
    "half_student_t": _engine.FAM_HALF_STUDENT_T,
    "half_cauchy": _engine.FAM_HALF_CAUCHY,
}

_HALF = ("half_student_t", "half_cauchy")
_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class PriorSpec:
    """One prior block: family plus (df, loc, scale).

    df is only meaningful for the Student-t families; it is carried (and
    validated) regardless so specs round-trip through config files cleanly.
    """

    family: str
    df: float = 3.0
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown prior family {self.family!r}")
        if self.family != "flat":
            if not self.scale > 0:
                raise ConfigError("prior scale must be > 0")
            if self.family in ("student_t", "half_student_t") and not self.df > 0:
                raise ConfigError("student_t df must be > 0")

    @property
    def code(self):
        return FAMILIES[self.family]

    def packed(self):
        """(family_code, df, loc, scale) as plain floats for the kernels."""
        return float(self.code), float(self.df), float(self.loc), float(self.scale)

    @classmethod
    def parse(cls, text):
        """Parse e.g. 'student_t(3, 0, 2.5)', 'normal(0, 10)' or 'flat'."""
        text = text.strip()
        if text == "flat":
            return cls("flat")
        m = _SPEC_RE.match(text)
        if m is None:
            raise ConfigError(f"cannot parse prior spec {text!r}")
        family = m.group(1)
        if family not in FAMILIES:
            raise ConfigError(f"unknown prior family {family!r}")
        args = [float(x) for x in m.group(2).split(",") if x.strip()]
        if family in ("student_t", "half_student_t"):
            if len(args) != 3:
                raise ConfigError(f"{family} takes (df, loc, scale)")
            return cls(family, df=args[0], loc=args[1], scale=args[2])
        if len(args) != 2:
            raise ConfigError(f"{family} takes (loc, scale)")
        return cls(family, loc=args[0], scale=args[1])

    def __str__(self):
        if self.family == "flat":
            return "flat"
        if self.family in ("student_t", "half_student_t"):
            return f"{self.family}({self.df:g}, {self.loc:g}, {self.scale:g})"
        return f"{self.family}({self.loc:g}, {self.scale:g})"


def lpdf_grad(spec, x):
    """Log-density (normalization constants included) and d/dx at scalar x.

    For half families x must be nonnegative; a negative x means a transform
    bug somewhere upstream, so it raises OutOfSupport instead of returning
    -inf.
    """
    if spec.family in _HALF and x < 0:
        raise OutOfSupport(f"{spec.family} evaluated at x = {x} < 0")
    fam, df, loc, scale = spec.packed()
    lp, dx = _engine.prior_lpg(int(fam), df, loc, scale, float(x))
    return float(lp), float(dx)


def transform_forward(kind, unconstrained):
    """Map one unconstrained coordinate to its constrained value.

    Returns (constrained, log_jacobian): the log transform gives
    (exp(u), u); identity gives (u, 0).
    """
    u = float(unconstrained)
    if kind == "log":
        return math.exp(u), u
    if kind == "identity":
        return u, 0.0
    raise ConfigError(f"unknown transform {kind!r}")
