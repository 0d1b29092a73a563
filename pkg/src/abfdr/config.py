"""Design configuration: JSON in, validated dataclass out, canonical hash."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lp import build_psi_all
from .model import (
    MODEL_FAMILIES,
    OPTIMIZELY_MEMBERSHIP,
    HypothesisSpec,
    MetricPanel,
    PsiMixture,
    Submodel,
    ValidationError,
    check_nontrivial,
    total_from_group_a,
)
from .oc import ThresholdScheme
from .posterior import PosteriorConfig


class ConfigError(ValueError):
    """Bad configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _endpoint(x, where):
    if x is None:
        raise ConfigError(where, "endpoint must be a number or 'inf' / '-inf'")
    try:
        return float(x)
    except (TypeError, ValueError):
        raise ConfigError(where, f"not a number: {x!r}") from None


def _encode_endpoint(x: float):
    return ("inf" if x > 0 else "-inf") if math.isinf(x) else x


REQUIRED = ("psi", "q", "beta", "n0_A")


@dataclass
class DesignConfig:
    psi: dict
    q: float
    beta: float
    n0_A: int
    hypotheses: list = field(default_factory=lambda: [[0.0, "inf"]] * 5)
    model: str = "multinomial"
    posterior: dict = field(default_factory=dict)
    c: float = 1.0
    reps_per_submodel: int | None = None
    total_reps: int | None = None
    scheme: dict = field(default_factory=lambda: {"name": "common"})
    seed: int = 0
    workers: int = 1

    # Construction -------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "DesignConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        for key in REQUIRED:
            if key not in raw:
                raise ConfigError(key, "required field missing")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "DesignConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        def num(name, lo, hi, integer=False, lo_open=True, hi_open=True):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(name, f"expected a number, got {v!r}")
            if integer and int(v) != v:
                raise ConfigError(name, "expected an integer")
            if (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi):
                raise ConfigError(name, f"{v} outside {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'}")

        num("q", 0, 1)
        num("beta", 0, 1)
        num("c", 0, math.inf)
        num("n0_A", 1, math.inf, integer=True, lo_open=False)
        num("seed", 0, 2**64, integer=True, lo_open=False)
        num("workers", 1, 1024, integer=True, lo_open=False, hi_open=False)
        if self.model not in MODEL_FAMILIES:
            raise ConfigError("model", f"expected one of {sorted(MODEL_FAMILIES)}")
        if (self.reps_per_submodel is None) == (self.total_reps is None):
            raise ConfigError("reps_per_submodel", "give exactly one of reps_per_submodel / total_reps")
        for name in ("reps_per_submodel", "total_reps"):
            if getattr(self, name) is not None:
                num(name, 1, math.inf, integer=True, lo_open=False)
        self.metric_panel()
        self.posterior_config()
        self.threshold_scheme()
        if self.psi.get("kind") not in ("all", "explicit"):
            raise ConfigError("psi.kind", "expected 'all' or 'explicit'")

    # Derived objects -----------------------------------------------------
    def metric_panel(self) -> MetricPanel:
        try:
            hyps = []
            for i, pair in enumerate(self.hypotheses):
                if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                    raise ConfigError(f"hypotheses[{i}]", "expected [delta_L, delta_U]")
                hyps.append(HypothesisSpec(_endpoint(pair[0], f"hypotheses[{i}][0]"),
                                           _endpoint(pair[1], f"hypotheses[{i}][1]")))
            return MetricPanel(tuple(hyps))
        except ValidationError as exc:
            raise ConfigError("hypotheses", str(exc)) from None

    def posterior_config(self) -> PosteriorConfig:
        allowed = {"method", "draws", "prior_alpha", "beta_prior", "clip_eps"}
        extra = set(self.posterior) - allowed
        if extra:
            raise ConfigError(f"posterior.{sorted(extra)[0]}", "unknown field")
        kw = dict(self.posterior)
        if "beta_prior" in kw:
            kw["beta_prior"] = tuple(kw["beta_prior"])
        try:
            return PosteriorConfig(**kw)
        except ValueError as exc:
            raise ConfigError("posterior", str(exc)) from None

    def threshold_scheme(self) -> ThresholdScheme:
        try:
            return ThresholdScheme(self.scheme.get("name", "common"), float(self.scheme.get("box", 0.05)))
        except (ValidationError, AttributeError, TypeError, ValueError) as exc:
            raise ConfigError("scheme", str(exc)) from None

    def lift_model(self):
        membership = np.asarray(self.psi.get("membership", OPTIMIZELY_MEMBERSHIP))
        return MODEL_FAMILIES[self.model](membership)

    def mixture(self) -> PsiMixture:
        spec = self.psi
        panel = self.metric_panel()
        membership = np.asarray(spec.get("membership", OPTIMIZELY_MEMBERSHIP))
        try:
            if spec["kind"] == "all":
                if "marginals_A" not in spec:
                    raise ConfigError("psi.marginals_A", "required field missing")
                psi = build_psi_all(spec["marginals_A"], float(spec.get("effect", 0.10)), panel, membership,
                                    spec.get("sizes"), spec.get("lp_objective", "maxmin"))
            else:
                subs = []
                for i, s in enumerate(spec.get("submodels", [])):
                    try:
                        subs.append(Submodel(np.array(s["eta_A"], float), np.array(s["eta_B"], float),
                                             frozenset(int(k) - 1 for k in s["false_set"]),
                                             float(s.get("weight", 1.0)), s.get("label", "")))
                    except KeyError as exc:
                        raise ConfigError(f"psi.submodels[{i}].{exc.args[0]}", "required field missing") from None
                psi = PsiMixture(tuple(subs))
                if not spec.get("allow_trivial", False):
                    check_nontrivial(psi, panel.K)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("psi", str(exc)) from None
        model = self.lift_model()
        for i, s in enumerate(psi.submodels):
            try:
                model.truth_flags(s, panel)
            except ValueError as exc:
                raise ConfigError(f"psi.submodels[{i}]", str(exc)) from None
        return psi

    def reps_for(self, n_submodels: int) -> int:
        if self.reps_per_submodel is not None:
            return int(self.reps_per_submodel)
        return max(1, int(self.total_reps) // n_submodels)

    @property
    def n0_total(self) -> int:
        return total_from_group_a(int(self.n0_A), float(self.c))

    # Serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["hypotheses"] = [[_encode_endpoint(float(a)), _encode_endpoint(float(b))] for a, b in
                           ((_endpoint(p[0], "h"), _endpoint(p[1], "h")) for p in self.hypotheses)]
        return d

    def canonical(self) -> str:
        """Canonical JSON of everything that affects results (worker count excluded)."""
        d = self.to_dict()
        d.pop("workers")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def replace(self, **changes) -> "DesignConfig":
        d = self.to_dict() | changes
        return DesignConfig.from_dict(d)
