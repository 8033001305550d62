"""Optimizer, training step, evaluation, collapse detection and the run loop."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import BatchSampler, Dataset, gen_blobs, gen_circles, gen_two_moons, load_csv, perturb, split_labeled
from .network import Params, StudentTeacher, ema_update, forward_features, forward_logits, forward_probs, init_params, predict
from .objective import (
    GraphConfig,
    LossBreakdown,
    LossWeights,
    breakdown,
    consistency_loss,
    cross_entropy,
    local_clustering_loss,
    total_loss,
)
from .persistence import (
    Checkpoint,
    EpochMetrics,
    append_metrics,
    format_config,
    save_checkpoint,
)
from .schedule import active_losses, lr_at

log = logging.getLogger(__name__)


@dataclass
class OptimState:
    velocity: Params
    momentum: float = 0.9

    @classmethod
    def zeros(cls, params: Params, momentum: float) -> "OptimState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, momentum)


def sgd_nesterov_step(params: Params, grads: ad.Gradients, state: OptimState, lr: float) -> None:
    """v <- mu v - lr g; theta <- theta + mu v - lr g. Updates in place."""
    mu = state.momentum
    for k, p in params.items():
        g = grads[k]
        v = state.velocity[k]
        if g.shape != p.shape or v.shape != p.shape:
            raise ad.DimensionError(f"{k}: gradient {g.shape} / velocity {v.shape} vs param {p.shape}")
        v *= mu
        v -= lr * g
        p += mu * v - lr * g


@dataclass(frozen=True)
class CollapseStatus:
    variance: float
    flag: bool


def feature_variance(z: np.ndarray) -> float:
    return float(np.mean(np.var(z, axis=0)))


def detect_collapse(z, tau: float) -> CollapseStatus:
    """Mean per-dimension variance of ``z``; flagged when below ``tau``."""
    z = ad.constant(z).value
    if z.shape[0] < 2:
        raise ValueError("collapse detection needs at least two rows")
    v = feature_variance(z)
    return CollapseStatus(variance=v, flag=v < tau)


def evaluate(params: Params, X: np.ndarray, y: np.ndarray, normalize: bool = False) -> float:
    """Fraction of rows whose argmax prediction differs from ``y``."""
    return float(np.mean(predict(params, X, normalize) != np.asarray(y)))


def median_sq_distance(z: np.ndarray) -> float:
    d2 = ad.pairwise_sq_dist(z).value
    return float(np.median(d2[np.triu_indices(len(z), k=1)]))


@dataclass
class StepSettings:
    weights: LossWeights
    epsilon: float
    lr: float
    lc_enabled: bool = True
    weight_decay: float = 0.0
    normalize_latent: bool = False


def step_loss(student: Params, teacher: Params, x_student: np.ndarray, x_teacher: np.ndarray,
              y_l: np.ndarray, weights: LossWeights, epsilon: float, lc_enabled: bool = True,
              graphs=None, normalize: bool = False):
    """Build the taped objective on fixed input views.

    Rows ``[:len(y_l)]`` are labeled. Returns (tape, total, breakdown).
    """
    b_l = len(y_l)
    tape = ad.Tape()
    P = tape.watch_all(student)
    z, logits = forward_logits(P, x_student, normalize)
    ce = cross_entropy(ad.rows(logits, 0, b_l), y_l)
    cons = consistency_loss(ad.softmax(logits), forward_probs(teacher, x_teacher, normalize))
    use_lc = lc_enabled and weights.lambda2 > 0 and (epsilon > 0 or graphs is not None)
    if use_lc:
        lc = local_clustering_loss(ad.rows(z, 0, b_l), ad.rows(z, b_l, z.shape[0]), GraphConfig(epsilon), graphs)
    else:
        lc = ad.constant(0.0)
    total = total_loss(ce, cons, lc, weights)
    return tape, total, breakdown(ce, cons, lc, total, weights)


def train_step(st: StudentTeacher, opt: OptimState, batch, settings: StepSettings,
               perturb_spec, rng: np.random.Generator) -> LossBreakdown:
    """One iteration: two noisy views, objective, backward, Nesterov step, EMA."""
    X = np.concatenate([batch.x_l, batch.x_u])
    x_student = perturb(X, perturb_spec, rng)
    x_teacher = perturb(X, perturb_spec, rng)
    tape, total, parts = step_loss(st.student, st.teacher, x_student, x_teacher, batch.y_l,
                                   settings.weights, settings.epsilon, settings.lc_enabled,
                                   normalize=settings.normalize_latent)
    grads = ad.backward(total, tape)
    if settings.weight_decay:
        grads = {k: g + settings.weight_decay * st.student[k] for k, g in grads.items()}
    sgd_nesterov_step(st.student, grads, opt, settings.lr)
    ema_update(st)
    return parts


# ------------------------------------------------------------- datasets

def _seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def build_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    """(train with labeled split, held-out test) for the configured data source."""
    d = cfg.data
    train_seed, test_seed, split_seed = _seeds(cfg.data_seed, 3)
    if d.kind == "two_moons":
        train, test = gen_two_moons(d.n, d.noise, train_seed), gen_two_moons(d.test_n, d.noise, test_seed)
    elif d.kind == "blobs":
        train, test = gen_blobs(d.n, d.centers, d.noise, train_seed), gen_blobs(d.test_n, d.centers, d.noise, test_seed)
    elif d.kind == "circles":
        train, test = gen_circles(d.n, d.noise, train_seed), gen_circles(d.test_n, d.noise, test_seed)
    else:
        train = load_csv(d.path)
        test = load_csv(d.test_path) if d.test_path else train
    return split_labeled(train, d.n_labeled, split_seed), test


# ---------------------------------------------------------------- runs

COMPLETED, COLLAPSED, DIVERGED = "completed", "collapsed", "diverged"


@dataclass
class TrainResult:
    history: list[EpochMetrics]
    st: StudentTeacher
    outcome: str  # completed | collapsed | diverged
    epochs_run: int
    epsilon: float | None
    student_error: float
    teacher_error: float

    @property
    def collapsed(self) -> bool:
        return self.outcome == COLLAPSED

    @property
    def diverged(self) -> bool:
        return self.outcome == DIVERGED


@dataclass
class Trainer:
    cfg: TrainConfig
    train: Dataset
    test: Dataset
    out_dir: Path | None = None
    st: StudentTeacher = field(init=False)
    opt: OptimState = field(init=False)
    rng: np.random.Generator = field(init=False)
    sampler: BatchSampler = field(init=False)
    epoch: int = 0
    epsilon: float | None = None
    tau: float | None = None
    collapse_count: int = 0
    history: list[EpochMetrics] = field(default_factory=list)

    def __post_init__(self):
        cfg = self.cfg
        init_seed, train_seed = _seeds(cfg.run.seed, 2)
        spec = cfg.mlp_spec(self.train.d, self.train.K)
        self.st = StudentTeacher.from_student(init_params(spec, init_seed), cfg.ema.alpha)
        self.opt = OptimState.zeros(self.st.student, cfg.optim.momentum)
        self.rng = np.random.default_rng(train_seed)
        self.sampler = BatchSampler(self.train, cfg.batch_spec(), self.rng)
        self.curriculum = cfg.curriculum()
        self.perturb_spec = cfg.perturb_spec()
        if cfg.collapse.tau is not None:
            self.tau = cfg.collapse.tau
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- state

    def checkpoint(self) -> Checkpoint:
        tensors = {}
        for group, params in (("student", self.st.student), ("teacher", self.st.teacher),
                              ("velocity", self.opt.velocity)):
            tensors.update({f"{group}/{k}": v.copy() for k, v in params.items()})
        blob = {
            "rng": self.rng.bit_generator.state,
            "sampler": self.sampler.state(),
            "epsilon": self.epsilon,
            "tau": self.tau,
            "collapse_count": self.collapse_count,
        }
        return Checkpoint(step=self.st.step, epoch=self.epoch, tensors=tensors,
                          rng_state=json.dumps(blob).encode(), config_text=format_config(self.cfg))

    def restore(self, c: Checkpoint) -> None:
        for group, params in (("student", self.st.student), ("teacher", self.st.teacher),
                              ("velocity", self.opt.velocity)):
            saved = c.group(group)
            if saved.keys() != params.keys():
                raise ValueError(f"checkpoint {group} tensors do not match the configured network")
            for k, v in saved.items():
                if v.shape != params[k].shape:
                    raise ad.DimensionError(f"checkpoint {group}/{k} has shape {v.shape}, expected {params[k].shape}")
                params[k][...] = v
        blob = json.loads(c.rng_state.decode())
        self.rng.bit_generator.state = blob["rng"]
        self.sampler.restore(blob["sampler"])
        self.st.step = c.step
        self.epoch = c.epoch
        self.epsilon = blob["epsilon"]
        if self.cfg.collapse.tau is None:
            self.tau = blob["tau"]
        self.collapse_count = blob["collapse_count"]

    def save(self, name: str) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / name
        save_checkpoint(path, self.checkpoint())
        return path

    # -- loop

    def _error(self, params: Params) -> float:
        return evaluate(params, self.test.X, self.test.y, self.cfg.model.normalize_latent)

    def _train_features(self) -> np.ndarray:
        return forward_features(self.st.student, self.train.X, self.cfg.model.normalize_latent).value

    def _activate_lc(self) -> None:
        z = self._train_features()
        g = self.cfg.graph
        self.epsilon = g.epsilon if g.epsilon is not None else g.epsilon_scale * median_sq_distance(z)
        if self.cfg.collapse.tau is None:
            self.tau = self.cfg.collapse.relative_tau * feature_variance(z)
        log.info("clustering active from epoch %d: epsilon=%.6g tau=%.3g", self.epoch, self.epsilon, self.tau)

    def run_epoch(self) -> dict:
        cur = self.curriculum
        if self.epoch >= cur.mt_only_epochs and self.epsilon is None:
            self._activate_lc()
        bpe = self.sampler.batches_per_epoch
        acc = np.zeros(3)
        for it in range(bpe):
            t = self.epoch + it / bpe
            lam1, lam2 = active_losses(t, cur)
            settings = StepSettings(
                weights=LossWeights(lam1, lam2),
                epsilon=self.epsilon if self.epsilon is not None else 0.0,
                lr=lr_at(t, cur.lr),
                lc_enabled=self.cfg.loss.lc_enabled,
                weight_decay=self.cfg.optim.weight_decay,
                normalize_latent=self.cfg.model.normalize_latent,
            )
            parts = train_step(self.st, self.opt, self.sampler.next_batch(), settings, self.perturb_spec, self.rng)
            acc += (parts.ce, parts.cons, parts.lc)
        self.epoch += 1
        ce, cons, lc = acc / bpe
        return dict(ce=float(ce), cons=float(cons), lc=float(lc),
                    lambda1=lam1, lambda2=lam2, lr=settings.lr)

    def evaluate_now(self, losses: dict) -> EpochMetrics:
        z = self._train_features()
        tau = self.tau if self.tau is not None else 0.0
        status = detect_collapse(z, tau)
        row = EpochMetrics(
            epoch=self.epoch,
            student_error=self._error(self.st.student),
            teacher_error=self._error(self.st.teacher),
            feature_variance=status.variance,
            collapse_flag=status.flag,
            **losses,
        )
        self.collapse_count = self.collapse_count + 1 if status.flag else 0
        return row

    def _final_error(self, params: Params) -> float:
        try:
            return self._error(params)
        except ad.NonFiniteError:
            return float("nan")

    def run(self) -> TrainResult:
        # overflow surfaces as NonFiniteError from the tape; numpy's own warnings add nothing
        with np.errstate(over="ignore", invalid="ignore"):
            return self._run()

    def _run(self) -> TrainResult:
        cfg = self.cfg
        outcome = COMPLETED
        while self.epoch < cfg.schedule.total_epochs:
            try:
                losses = self.run_epoch()
            except ad.NonFiniteError:
                # the optimizer blew up; a reported outcome like collapse, not a crash
                log.warning("non-finite values during epoch %d, stopping", self.epoch + 1)
                outcome = DIVERGED
                break
            if self.epoch % cfg.run.eval_every == 0 or self.epoch == cfg.schedule.total_epochs:
                try:
                    row = self.evaluate_now(losses)
                except ad.NonFiniteError:
                    log.warning("non-finite features at epoch %d, stopping", self.epoch)
                    outcome = DIVERGED
                    break
                self.history.append(row)
                if self.out_dir is not None:
                    append_metrics(self.out_dir / "metrics.csv", row)
                if self.collapse_count >= cfg.collapse.patience:
                    outcome = COLLAPSED
                    log.warning("feature collapse at epoch %d (variance %.3g)", self.epoch, row.feature_variance)
                    break
            if cfg.run.checkpoint_every and self.epoch % cfg.run.checkpoint_every == 0:
                self.save(f"ckpt_{self.epoch:05d}.lcmt")
        self.save("final.lcmt")
        return TrainResult(
            history=self.history,
            st=self.st,
            outcome=outcome,
            epochs_run=self.epoch,
            epsilon=self.epsilon,
            student_error=self._final_error(self.st.student),
            teacher_error=self._final_error(self.st.teacher),
        )


def run_training(cfg: TrainConfig, datasets: tuple[Dataset, Dataset] | None = None,
                 out_dir: str | os.PathLike | None = None, resume: Checkpoint | None = None) -> TrainResult:
    """Run the full curriculum; ``resume`` continues from a saved trainer state."""
    train, test = datasets if datasets is not None else build_datasets(cfg)
    trainer = Trainer(cfg, train, test, Path(out_dir) if out_dir is not None else None)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run()
