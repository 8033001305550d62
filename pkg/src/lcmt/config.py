"""Run configuration: one dataclass per ``section.`` prefix of the config file.

Defaults reproduce the desk-scale two-moons setup (1000 points, 6 labels,
200 MT-only epochs followed by a 50-epoch clustering ramp).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .data import BatchSpec, PerturbSpec
from .network import MlpSpec
from .schedule import Curriculum, LrPlan, RampUp


@dataclass
class DataSection:
    kind: str = "two_moons"  # two_moons | blobs | circles | csv
    n: int = 1000
    noise: float = 0.1
    centers: int = 3
    n_labeled: int = 6
    seed: Optional[int] = None  # None: follow run.seed
    test_n: int = 1000
    path: str = ""
    test_path: str = ""


@dataclass
class ModelSection:
    feature_layers: tuple[int, ...] = (64, 64)
    latent_dim: int = 2
    head_layers: tuple[int, ...] = ()
    normalize_latent: bool = False


@dataclass
class ScheduleSection:
    total_epochs: int = 250
    mt_only_epochs: int = 200
    cons_rampup_start: float = 0.0
    cons_rampup_length: float = 5.0
    lc_rampup_length: float = 50.0
    lr_decay_start: float = 250.0
    lr_decay_length: float = 50.0


@dataclass
class LossSection:
    lambda1: float = 30.0
    lambda2: float = 5.0
    lc_enabled: bool = True


@dataclass
class GraphSection:
    # None: epsilon = epsilon_scale * median squared latent distance at LC start
    epsilon: Optional[float] = None
    epsilon_scale: float = 1.0


@dataclass
class EmaSection:
    alpha: float = 0.99


@dataclass
class OptimSection:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0


@dataclass
class BatchSection:
    labeled: int = 6
    unlabeled: int = 128


@dataclass
class PerturbSection:
    sigma: float = 0.1
    jitter: float = 0.0


@dataclass
class CollapseSection:
    tau: Optional[float] = None  # None: relative_tau * feature variance at LC start
    relative_tau: float = 1e-6
    patience: int = 3


@dataclass
class RunSection:
    seed: int = 0
    eval_every: int = 1
    checkpoint_every: int = 0  # 0: final checkpoint only


@dataclass
class TrainConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    loss: LossSection = field(default_factory=LossSection)
    graph: GraphSection = field(default_factory=GraphSection)
    ema: EmaSection = field(default_factory=EmaSection)
    optim: OptimSection = field(default_factory=OptimSection)
    batch: BatchSection = field(default_factory=BatchSection)
    perturb: PerturbSection = field(default_factory=PerturbSection)
    collapse: CollapseSection = field(default_factory=CollapseSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "TrainConfig":
        if self.data.kind not in ("two_moons", "blobs", "circles", "csv"):
            raise ValueError(f"data.kind: unknown dataset kind {self.data.kind!r}")
        if self.data.kind == "csv" and not self.data.path:
            raise ValueError("data.path: required when data.kind = csv")
        if not 0.0 <= self.ema.alpha <= 1.0:
            raise ValueError("ema.alpha: must lie in [0, 1]")
        if self.graph.epsilon is not None and self.graph.epsilon < 0:
            raise ValueError("graph.epsilon: must be >= 0")
        if self.graph.epsilon_scale < 0:
            raise ValueError("graph.epsilon_scale: must be >= 0")
        if self.loss.lambda1 < 0 or self.loss.lambda2 < 0:
            raise ValueError("loss.lambda1/lambda2: must be >= 0")
        if self.run.eval_every < 1:
            raise ValueError("run.eval_every: must be >= 1")
        if self.collapse.patience < 1:
            raise ValueError("collapse.patience: must be >= 1")
        if self.schedule.mt_only_epochs > self.schedule.total_epochs:
            raise ValueError("schedule.mt_only_epochs: exceeds total_epochs")
        for key, build in (("schedule", self.curriculum), ("batch", self.batch_spec),
                           ("perturb", self.perturb_spec)):
            try:
                build()
            except ValueError as exc:
                raise ValueError(f"{key}: {exc}") from None
        return self

    @property
    def data_seed(self) -> int:
        return self.run.seed if self.data.seed is None else self.data.seed

    def curriculum(self) -> Curriculum:
        s = self.schedule
        return Curriculum(
            mt_only_epochs=s.mt_only_epochs,
            cons_rampup=RampUp(s.cons_rampup_start, s.cons_rampup_length, self.loss.lambda1),
            lc_rampup=RampUp(s.mt_only_epochs, s.lc_rampup_length, self.loss.lambda2),
            lr=LrPlan(self.optim.lr, s.lr_decay_start, s.lr_decay_length),
            total_epochs=s.total_epochs,
        )

    def mlp_spec(self, input_dim: int, class_count: int) -> MlpSpec:
        return MlpSpec(
            input_dim=input_dim,
            feature_layers=tuple(self.model.feature_layers),
            latent_dim=self.model.latent_dim,
            head_layers=tuple(self.model.head_layers),
            class_count=class_count,
            normalize_latent=self.model.normalize_latent,
        )

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(self.batch.labeled, self.batch.unlabeled)

    def perturb_spec(self) -> PerturbSpec:
        return PerturbSpec(self.perturb.sigma, self.perturb.jitter)


def sections(cfg: TrainConfig):
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name)


def copy_config(cfg: TrainConfig) -> TrainConfig:
    return dataclasses.replace(cfg, **{name: dataclasses.replace(sec) for name, sec in sections(cfg)})
