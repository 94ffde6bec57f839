"""CAT-N concatenation and the fixed-compute TIME-CAT experiment.

TIME-CAT spends one pretraining budget two ways: one model trained for the
whole budget, or ``n`` models with distinct seeds trained for a share of it
each and then concatenated. Every row is scored by linear probes on the
pretraining mixture and on each target component.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import DimMismatch
from .mixtures import CANONICAL_LAMBDA, MixtureSpec, gen_counterexample_family, mix
from .models import ArchSpec, ConcatExtractor, input_dim
from .oracle import minority_components
from .training import TrainConfig, pretrain, surviving_gates
from .transfer import linear_probe

BASELINE_BONUS = 1.125


@dataclass(frozen=True)
class EnsemblePlan:
    total_budget: int
    splits: tuple
    member_arch: ArchSpec
    base_seed: int
    mixture: MixtureSpec
    targets: tuple
    cfg: TrainConfig = TrainConfig()
    baseline_bonus: float = BASELINE_BONUS
    target_names: Optional[tuple] = None
    minority: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(int(n) for n in self.splits))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "minority", tuple(int(i) for i in self.minority))
        if self.total_budget < 1:
            raise ValueError("total_budget must be a positive number of steps")
        if not self.splits or any(n < 1 for n in self.splits):
            raise ValueError("splits must be a nonempty list of positive integers")
        if self.baseline_bonus < 1:
            raise ValueError("baseline_bonus must be >= 1")
        if self.target_names is None:
            object.__setattr__(self, "target_names", tuple(f"P{i + 1}" for i in range(len(self.targets))))
        if len(self.target_names) != len(self.targets):
            raise ValueError("one name per target")
        if any(not 0 <= i < len(self.targets) for i in self.minority):
            raise ValueError("minority indices must name targets")
        for t in self.targets:
            if t.dim != self.mixture.dim:
                raise DimMismatch(f"target dim {t.dim} != mixture dim {self.mixture.dim}")

    @property
    def adjusted_budget(self) -> int:
        """Budget shared by the ensembles; the single model gets the full budget."""
        return int(self.total_budget // self.baseline_bonus)

    def steps_per_member(self, n: int) -> int:
        if n == 1:
            return self.total_budget
        return self.adjusted_budget // n

    def member_seed(self, n: int, i: int) -> int:
        return rng.derive_seed(self.base_seed, n, i)


def _train_one(args):
    mixture, arch, cfg = args
    return pretrain(mixture, arch, cfg)


def train_members(plan: EnsemblePlan, n: int, jobs: int = 1) -> list:
    """Pretrain ``n`` members on the plan's mixture; returns their outcomes.

    Members are ordered by index whatever ``jobs`` is.
    """
    if n not in plan.splits:
        raise ValueError(f"split {n} is not in the plan's splits {plan.splits}")
    steps = plan.steps_per_member(n)
    tasks = [
        (plan.mixture, plan.member_arch, replace(plan.cfg, steps=steps, seed=plan.member_seed(n, i)))
        for i in range(n)
    ]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n)) as ex:
            return list(ex.map(_train_one, tasks))
    return [_train_one(t) for t in tasks]


def cat(members) -> ConcatExtractor:
    """Concatenate extractors, keeping their order."""
    members = list(members)
    if not members:
        raise ValueError("cat needs at least one member")
    d = input_dim(members[0])
    for m in members[1:]:
        if input_dim(m) != d:
            raise DimMismatch(f"member input dims differ: {d} vs {input_dim(m)}")
    return ConcatExtractor(tuple(members))


@dataclass
class TimecatRow:
    n: int
    steps_per_member: int
    total_steps: int
    in_mixture_risk: float
    target_risks: list
    minority_mean: float
    member_gates: list = field(default_factory=list)

    @property
    def method(self) -> str:
        return f"cat{self.n}x{self.steps_per_member}"


@dataclass
class TimecatReport:
    total_budget: int
    target_names: tuple
    minority: tuple
    rows: list

    def row(self, n: int) -> TimecatRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    @property
    def columns(self):
        return ("method", "n", "steps_per_member", "total_steps", "in_mixture",
                *self.target_names, "minority_mean")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([r.method, r.n, r.steps_per_member, r.total_steps, repr(r.in_mixture_risk),
                        *[repr(v) for v in r.target_risks], repr(r.minority_mean)])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "n", "steps_per_member", "total_steps", "column", "risk", "minority"])
        for r in self.rows:
            w.writerow([r.method, r.n, r.steps_per_member, r.total_steps, "in_mixture",
                        repr(r.in_mixture_risk), 0])
            for j, (name, v) in enumerate(zip(self.target_names, r.target_risks)):
                w.writerow([r.method, r.n, r.steps_per_member, r.total_steps, name, repr(v),
                            int(j in self.minority)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "total_budget": self.total_budget,
            "targets": list(self.target_names),
            "minority": [self.target_names[i] for i in self.minority],
            "rows": [
                {
                    "method": r.method, "n": r.n, "steps_per_member": r.steps_per_member,
                    "total_steps": r.total_steps, "in_mixture": r.in_mixture_risk,
                    "targets": dict(zip(self.target_names, r.target_risks)),
                    "minority_mean": r.minority_mean,
                    "member_gates": [sorted(g) for g in r.member_gates],
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def score_split(plan: EnsemblePlan, n: int, outcomes) -> TimecatRow:
    ex = cat([o.model.extractor for o in outcomes])
    in_mix = linear_probe(ex, mix(plan.mixture)).exact_risk
    risks = [linear_probe(ex, t).exact_risk for t in plan.targets]
    minority = float(np.mean([risks[i] for i in plan.minority])) if plan.minority else float("nan")
    steps = plan.steps_per_member(n)
    return TimecatRow(n, steps, steps * n, in_mix, risks, minority,
                      [surviving_gates(o.model) for o in outcomes])


def run_timecat(plan: EnsemblePlan, jobs: int = 1) -> TimecatReport:
    rows = [score_split(plan, n, train_members(plan, n, jobs)) for n in plan.splits]
    return TimecatReport(plan.total_budget, plan.target_names, plan.minority, rows)


# -- the desk-scale setting ----------------------------------------------------

def skewed_gence_weights(K: int, base=CANONICAL_LAMBDA) -> tuple:
    """Repeat the four-component skew on every coordinate pair, scaled to sum 1."""
    pairs = K // 2
    return tuple(float(v) / pairs for _ in range(pairs) for v in base)


def gence_train_config(K: int, steps: int = 1000, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Single-pair training settings (``base``) rescaled for K/2 coordinate pairs.

    Each pair carries 2/K of the mass, so its gradients shrink by that factor;
    dividing the penalties by K/2 keeps every pair at the single-pair setting.
    """
    base = TrainConfig() if base is None else base
    pairs = K // 2
    return replace(base, steps=steps, l1_gate=base.l1_gate / pairs, l2=base.l2 / pairs)


def gence_plan(base_seed: int, K: int = 8, total_budget: int = 4500, splits=(1, 2, 4),
               weights=None, cfg: Optional[TrainConfig] = None,
               baseline_bonus: float = BASELINE_BONUS) -> EnsemblePlan:
    """TIME-CAT plan on the counterexample family with a skewed mixture.

    Targets are every component of the family; the minority ones are those
    whose needed coordinate loses the pair-local sparse selection.
    """
    comps = gen_counterexample_family(K)
    w = skewed_gence_weights(K) if weights is None else tuple(float(v) for v in weights)
    return EnsemblePlan(
        total_budget=total_budget,
        splits=tuple(splits),
        member_arch=ArchSpec(kind="dictionary", input_dim=K),
        base_seed=base_seed,
        mixture=MixtureSpec(tuple(comps), w),
        targets=tuple(comps),
        cfg=gence_train_config(K) if cfg is None else cfg,
        baseline_bonus=baseline_bonus,
        minority=tuple(minority_components(comps, w)),
    )
