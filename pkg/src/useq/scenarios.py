"""Scenario registry, configuration files, and kernel/source binding.

A scenario names a (kernel, optional companion, source) triple with default
experiment sizes and its expected constants.  Derived constants are
regenerated from first principles at bind time and must match; paper-sourced
references are carried into reports without gating pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

from .errors import ConfigError
from .kernels import Kernel, kernel_integer_for, parse_kernel
from .limitlaw import LimitLaw, is_degenerate, stopped_limit_variance
from .sources import FiniteSource, SampleSource, parse_source, substream
from .ucore import cross_projection_cov, hoeffding_projections


@dataclass(frozen=True)
class ExpectedConstant:
    name: str
    value: float
    provenance: str  # "derived" | "paper"
    gating: bool
    note: str = ""


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    kernel: str
    dist: str
    companion: str | None = None
    n: int = 2000
    x: float = 10_000.0
    reps: int = 2000
    grid: tuple = (0.25, 0.5, 0.75, 1.0)
    seed: int = 20260810
    conditioning: str | None = None
    projection_method: str = "auto"
    mc_budget: int = 4096
    expected: tuple = ()
    notes: str = ""
    tolerance_overrides: dict = field(default_factory=dict)


GOLDEN_CENTERING_NOTE = (
    "The published constants for this scenario ((3-sqrt5)/2 centering rate and "
    "5^(-3/2) variance) cite external calculations; the renewal-reward rate is "
    "companion_mean/mean = (5-sqrt5)/10, which this artifact derives and uses. "
    "The derived variance happens to equal 5^(-3/2); the published centering "
    "rate does not match and is reported as a reference only."
)

_SQRT5 = math.sqrt(5.0)

REGISTRY: dict[str, ScenarioSpec] = {
    s.id: s
    for s in [
        ScenarioSpec(
            id="estring-10",
            kernel="pattern:10@binary",
            dist="bernoulli:0.5@binary",
            n=2000,
            x=500_000.0,  # crossing index scale 2000
            reps=2000,
            expected=(
                ExpectedConstant("mean", 0.25, "derived", True),
                ExpectedConstant("limit_variance", 1.0 / 48.0, "derived", True),
            ),
            notes="substring pattern 10 over fair bits",
        ),
        ScenarioSpec(
            id="eperm-inversions",
            kernel="permpattern:21",
            dist="uniform01",
            n=2000,
            x=500_000.0,
            reps=2000,
            expected=(
                ExpectedConstant("mean", 0.5, "derived", True),
                ExpectedConstant("limit_variance", 1.0 / 36.0, "derived", True),
            ),
            notes="inversion counting in a uniform random permutation",
        ),
        ScenarioSpec(
            id="e22-antisym",
            kernel="antisym-sign",
            dist="uniform01",
            n=2000,
            reps=2000,
            expected=(
                ExpectedConstant("mean", 0.0, "derived", True),
                ExpectedConstant("limit_variance", 1.0 / 9.0, "derived", True),
            ),
            notes="antisymmetric pair kernel; the limit is t*B(t) - 2*int B, not a BM",
        ),
        ScenarioSpec(
            id="eperm1-blocks",
            kernel="identity",
            companion="blocks:2",
            dist="geom:0.5",
            n=5000,
            x=10_000.0,
            reps=5000,
            conditioning="exact-hit",
            expected=(
                ExpectedConstant("mean", 2.0, "derived", True),
                ExpectedConstant("companion_mean", 2.0, "derived", True),
                ExpectedConstant("stopped_variance", 6.0, "derived", True),
            ),
            notes=(
                "geometric block lengths; inversions of a uniform random "
                "permutation with descending blocks"
            ),
        ),
        ScenarioSpec(
            id="eperm2-golden",
            kernel="identity",
            companion="blocks:2",
            dist="golden-blocks",
            n=5000,
            x=5000.0,
            reps=5000,
            conditioning="exact-hit",
            expected=(
                ExpectedConstant("mean", (5.0 - _SQRT5) / 2.0, "derived", True),
                ExpectedConstant("companion_mean", (3.0 - _SQRT5) / 2.0, "derived", True),
                ExpectedConstant(
                    "centering_rate", (5.0 - _SQRT5) / 10.0, "derived", True,
                    note="companion_mean / mean",
                ),
                ExpectedConstant("stopped_variance", 5.0 ** -1.5, "derived", True),
                ExpectedConstant(
                    "paper_centering_rate", (3.0 - _SQRT5) / 2.0, "paper", False,
                    note=GOLDEN_CENTERING_NOTE,
                ),
                ExpectedConstant(
                    "paper_stopped_variance", 5.0 ** -1.5, "paper", False,
                    note="published variance; agrees with the derived value",
                ),
            ),
            notes="blocks of length 1 or 2 with golden-ratio weights",
        ),
        ScenarioSpec(
            id="antisym-sine-degenerate",
            kernel="antisym-sine",
            dist="uniform2pi",
            n=1000,
            reps=500,
            projection_method="mc",
            expected=(ExpectedConstant("mean", 0.0, "derived", False),),
            notes="all projections vanish; standardization must be refused",
        ),
    ]
}


def list_scenarios() -> list[str]:
    return sorted(REGISTRY)


def get_scenario(scenario_id: str) -> ScenarioSpec:
    try:
        return REGISTRY[scenario_id]
    except KeyError:
        raise ConfigError(
            f"unknown scenario {scenario_id!r}; available: {', '.join(list_scenarios())}"
        ) from None


def validate_pairing(kernel: Kernel, source: SampleSource):
    """Configuration-time compatibility rules."""
    if kernel.rank_based and not source.continuous:
        raise ConfigError(
            f"rank-based kernel {kernel.name} cannot run on the discrete source "
            f"{source.name} (ties have positive probability)"
        )
    if kernel.name.startswith("pattern:"):
        if not isinstance(source, FiniteSource):
            raise ConfigError(
                f"pattern kernel {kernel.name} needs a finite-alphabet source, "
                f"got {source.name}"
            )
    if kernel.name.startswith("blocks:") and not source.integer_support:
        raise ConfigError(
            f"block kernel {kernel.name} needs an integer source, got {source.name}"
        )


class BoundScenario:
    """A scenario with kernel/source objects built and projections cached."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.kernel = parse_kernel(spec.kernel)
        self.companion = parse_kernel(spec.companion) if spec.companion else None
        self.source = parse_source(spec.dist)
        validate_pairing(self.kernel, self.source)
        if self.companion is not None:
            validate_pairing(self.companion, self.source)

    @cached_property
    def projections(self):
        return hoeffding_projections(
            self.kernel,
            self.source,
            method=self.spec.projection_method,
            budget=self.spec.mc_budget,
            rng=substream(self.spec.seed, 0xD1CE),
        )

    @cached_property
    def companion_projections(self):
        if self.companion is None:
            return None
        return hoeffding_projections(
            self.companion,
            self.source,
            method=self.spec.projection_method,
            budget=self.spec.mc_budget,
            rng=substream(self.spec.seed, 0xD1CF),
        )

    @cached_property
    def cross_cov(self):
        if self.companion is None:
            return None
        return cross_projection_cov(
            self.companion_projections, self.projections, self.source
        )

    @cached_property
    def limit_law(self) -> LimitLaw:
        source = self.source if self.projections.exact else None
        return LimitLaw.from_projections(self.projections, source=source)

    @cached_property
    def stopped_law(self):
        if self.companion is None:
            return None
        return stopped_limit_variance(
            self.projections, self.companion_projections, self.cross_cov
        )

    def degenerate(self) -> bool:
        return self.limit_law.degenerate

    def derived_constants(self) -> dict:
        out = {
            "mean": float(self.projections.mu),
            "limit_variance": float(self.limit_law.variance),
        }
        if self.companion is not None:
            out["companion_mean"] = float(self.companion_projections.mu)
            out["centering_rate"] = float(self.companion_projections.mu) / float(
                self.projections.mu
            )
            out["stopped_variance"] = float(self.stopped_law.variance)
        return out

    def regenerate_expected(self, rel_tol: float = 1e-9) -> dict:
        """Recompute every derived expected constant; raise on mismatch."""
        derived = self.derived_constants()
        for const in self.spec.expected:
            if const.provenance != "derived" or not const.gating:
                continue
            if const.name not in derived:
                raise ConfigError(
                    f"{self.spec.id}: no derived value for constant {const.name}"
                )
            got = derived[const.name]
            tol = rel_tol * max(1.0, abs(const.value))
            if abs(got - const.value) > tol:
                raise ConfigError(
                    f"{self.spec.id}: derived {const.name}={got!r} does not "
                    f"reproduce the registered value {const.value!r}"
                )
        return derived

    def expected_references(self) -> dict:
        return {
            c.name: {
                "value": c.value,
                "provenance": c.provenance,
                "gating": c.gating,
                **({"note": c.note} if c.note else {}),
            }
            for c in self.spec.expected
        }


def bind(spec_or_id) -> BoundScenario:
    spec = get_scenario(spec_or_id) if isinstance(spec_or_id, str) else spec_or_id
    return BoundScenario(spec)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "id",
    "kernel",
    "companion",
    "dist",
    "n",
    "x",
    "reps",
    "grid",
    "seed",
    "condition",
    "tolerance.variance",
    "tolerance.ks",
}


def load_config(path) -> ScenarioSpec:
    """Parse a key=value scenario file; unknown keys and bad values are
    rejected with the offending line number."""
    fields: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in fields:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            fields[key] = (lineno, value)

    def take(key, default=None, convert=str):
        if key not in fields:
            if default is None and key in ("kernel", "dist"):
                raise ConfigError(f"{path}: missing required key {key!r}")
            return default
        lineno, value = fields[key]
        try:
            return convert(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc

    tol_overrides = {}
    for src_key, dst_key in (("tolerance.variance", "variance"), ("tolerance.ks", "ks")):
        val = take(src_key, default=None, convert=float)
        if val is not None:
            if val < 0:
                lineno, raw_val = fields[src_key]
                raise ConfigError(f"{path}:{lineno}: {src_key} must be nonnegative")
            tol_overrides[dst_key] = val
    grid_text = take("grid", default=None)
    grid = (
        tuple(float(g) for g in grid_text.split(","))
        if grid_text
        else ScenarioSpec.grid
    )
    spec = ScenarioSpec(
        id=take("id", default="custom"),
        kernel=take("kernel"),
        companion=take("companion", default=None),
        dist=take("dist"),
        n=take("n", default=2000, convert=int),
        x=take("x", default=10_000.0, convert=float),
        reps=take("reps", default=2000, convert=int),
        grid=grid,
        seed=take("seed", default=20260810, convert=int),
        conditioning=take("condition", default=None),
        tolerance_overrides=tol_overrides,
    )
    bind(spec)  # semantic validation: raises on incompatible pairings
    return spec
