"""Cold-start training loop.

Per minibatch: K critic updates (both critics, one summed objective), one
generator update on the composite adversarial + distillation objective, and,
only once the epoch index reaches rl_start_epoch, one policy-gradient update
through a separate optimizer state. The two generator objectives alternate;
they are never summed into a single step.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import cues, diffusion, engine, gan, reward as reward_mod
from .cues import CueConfig, VisualPrototypeTable
from .data import ZslDataset
from .errors import ConfigurationError, NumericFailure
from .evaluate import ClassifierConfig, EvalReport, full_report
from .gan import GpConfig
from .nets import AdamState, save_checkpoint
from .reward import AdvantageBatch, EmaBaseline, RewardModel
from .seeding import stream_rng

METRICS_COLUMNS = (
    "epoch",
    "raw_reward_mean",
    "ema_baseline",
    "advantage_mean",
    "critic_loss",
    "gen_adv_loss",
    "pd_loss",
    "czsl_acc",
    "gzsl_u",
    "gzsl_s",
    "gzsl_h",
)


@dataclass
class TrainConfig:
    total_epochs: int = 20
    rl_start_epoch: int = 5
    critic_steps: int = 1
    batch_size: int = 32
    lr_adv: float = 5e-4
    lr_rl: float = 5e-5
    lambda_pd: float = 5.0
    lambda_gp: float = 10.0
    ema_alpha: float = 0.9
    diffusion_steps: int = 4
    beta_min: float = 0.1
    beta_max: float = 0.4
    synth_per_class: int = 100
    eval_interval: int = 0
    checkpoint_interval: int = 0
    use_rl: bool = True
    use_cues: bool = True
    raw_reward: bool = False
    cue_variant: str = "pd"
    hidden_mult: int = 4
    temb_dim: int = 16
    leaky_slope: float = 0.2
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0

    def validate(self) -> None:
        if self.total_epochs < 1 or self.batch_size < 1 or self.critic_steps < 1:
            raise ConfigurationError("epochs, batch size, critic steps must be >= 1")
        if self.rl_start_epoch < 0:
            raise ConfigurationError("rl_start_epoch must be >= 0")
        if self.lr_adv <= 0 or self.lr_rl <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.lambda_gp < 0 or self.lambda_pd < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if not (0.0 <= self.ema_alpha < 1.0):
            raise ConfigurationError("ema_alpha must be in [0, 1)")
        if self.cue_variant not in cues.CUE_VARIANTS:
            raise ConfigurationError(f"unknown cue variant {self.cue_variant!r}")
        if self.synth_per_class < 1:
            raise ConfigurationError("synth_per_class must be >= 1")


@dataclass
class MetricsRow:
    epoch: int
    raw_reward_mean: float
    ema_baseline: float
    advantage_mean: float
    critic_loss: float
    gen_adv_loss: float
    pd_loss: float
    czsl_acc: float
    gzsl_u: float
    gzsl_s: float
    gzsl_h: float

    def to_csv(self) -> str:
        cells = [str(self.epoch)]
        for name in METRICS_COLUMNS[1:]:
            cells.append(repr(float(getattr(self, name))))
        return ",".join(cells)


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


@dataclass
class EpochCounters:
    epoch: int
    critic_updates: int = 0
    gen_updates: int = 0
    rl_updates: int = 0
    ema_writes: int = 0


@dataclass
class TrainResult:
    generator: gan.Generator
    critic_x0: gan.CriticX0
    critic_xt: gan.CriticXt
    metrics: list[MetricsRow]
    counters: list[EpochCounters]
    baseline: EmaBaseline
    prototype_table: VisualPrototypeTable | None
    reports: dict[int, EvalReport] = field(default_factory=dict)


def update_counters(result_or_list) -> list[EpochCounters]:
    """Snapshot of the per-epoch instrumentation record."""
    counters = result_or_list.counters if isinstance(result_or_list, TrainResult) else result_or_list
    return [replace(c) for c in counters]


def _require_finite(value: float, what: str, epoch: int, batch: int) -> float:
    if not np.isfinite(value):
        raise NumericFailure(f"{what} is non-finite at epoch {epoch}, batch {batch}")
    return value


def train(
    dataset: ZslDataset,
    reward_model: RewardModel | None,
    config: TrainConfig,
    clf_cfg: ClassifierConfig | None = None,
    out_dir: str | None = None,
    prototype_table: VisualPrototypeTable | None = None,
) -> TrainResult:
    """Run the full schedule and return the trained generator plus logs.

    The reward model must cover the seen classes (rows in sorted-id order)
    and is required whenever the RL phase is enabled. Prototypes are mined
    once, before the first epoch. Checkpoints are written every
    checkpoint_interval epochs and at completion; on a numeric abort the last
    written checkpoint stays on disk.
    """
    config.validate()
    dataset.validate()
    if clf_cfg is None:
        clf_cfg = ClassifierConfig(beta1=config.adam_beta1, beta2=config.adam_beta2)

    train_x, train_y = dataset.train
    n_train, d = train_x.shape
    seen = sorted(int(c) for c in dataset.seen_classes)
    seen_row = {c: i for i, c in enumerate(seen)}
    if config.use_rl:
        if reward_model is None:
            raise ConfigurationError("RL phase enabled but no reward model given")
        if reward_model.n_classes != len(seen) or reward_model.feat_dim != d:
            raise ConfigurationError(
                f"reward model covers {reward_model.n_classes} classes / dim "
                f"{reward_model.feat_dim}, dataset has {len(seen)} seen / dim {d}"
            )

    table = prototype_table
    if table is None and config.use_cues:
        table = cues.mine_prototypes(train_x, train_y, seen)
    cue_cfg = CueConfig(lambda_pd=config.lambda_pd, variant=config.cue_variant)
    gp_cfg = GpConfig(lambda_gp=config.lambda_gp)
    sched = diffusion.build_schedule(config.diffusion_steps, config.beta_min, config.beta_max)

    init_rng = stream_rng(config.seed, "init")
    generator = gan.Generator(
        d, dataset.sem_dim, init_rng,
        hidden_mult=config.hidden_mult, temb_dim=config.temb_dim, slope=config.leaky_slope,
    )
    critic_x0 = gan.CriticX0(
        d, dataset.sem_dim, init_rng, hidden_mult=config.hidden_mult, slope=config.leaky_slope
    )
    critic_xt = gan.CriticXt(
        d, dataset.sem_dim, init_rng,
        hidden_mult=config.hidden_mult, temb_dim=config.temb_dim, slope=config.leaky_slope,
    )

    betas = dict(beta1=config.adam_beta1, beta2=config.adam_beta2)
    opt_critic = AdamState(critic_x0.params + critic_xt.params, lr=config.lr_adv, **betas)
    opt_gen = AdamState(generator.params, lr=config.lr_adv, **betas)
    # The RL phase owns a separate optimizer state over the same parameters;
    # its updates alternate with the adversarial step rather than summing.
    opt_rl = AdamState(generator.params, lr=config.lr_rl, **betas)

    train_rng = stream_rng(config.seed, "train")
    rl_rng = stream_rng(config.seed, "rl")
    baseline = EmaBaseline(alpha=config.ema_alpha)

    batches_per_epoch = -(-n_train // config.batch_size)
    proto_matrix = dataset.prototypes

    metrics: list[MetricsRow] = []
    counters: list[EpochCounters] = []
    reports: dict[int, EvalReport] = {}
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.csv"), "w", newline="\n")
        metrics_fh.write(",".join(METRICS_COLUMNS) + "\n")

    def _draw_states(rng, x0):
        t = rng.integers(0, config.diffusion_steps, size=x0.shape[0])
        x_t = diffusion.forward_noise(x0, t, sched, rng)
        x_next = diffusion.forward_transition(x_t, t, sched, rng)
        return t, x_t, x_next

    try:
        for epoch in range(config.total_epochs):
            cnt = EpochCounters(epoch=epoch)
            rl_active = config.use_rl and epoch >= config.rl_start_epoch
            critic_vals, adv_vals, cue_vals = [], [], []
            reward_means, adv_means = [], []

            for batch_i in range(batches_per_epoch):
                idx = train_rng.integers(0, n_train, size=config.batch_size)
                x0 = train_x[idx]
                y = train_y[idx]
                z = proto_matrix[y]

                for _ in range(config.critic_steps):
                    t, x_t, x_next = _draw_states(train_rng, x0)
                    eps_g = train_rng.standard_normal(x0.shape)
                    fake_x0 = generator.synthesize(eps_g, z, x_next, t + 1).data
                    fake_xt = diffusion.posterior_sample(fake_x0, x_next, t, sched, train_rng)
                    loss0, grads0 = gan.critic_x0_loss(critic_x0, x0, fake_x0, z, gp_cfg, train_rng)
                    losst, gradst = gan.critic_xt_loss(
                        critic_xt, x_t, fake_xt, x_next, z, t, gp_cfg, train_rng
                    )
                    total = loss0.item() + losst.item()
                    _require_finite(total, "critic loss", epoch, batch_i)
                    opt_critic.step(grads0 + gradst)
                    cnt.critic_updates += 1
                    critic_vals.append(total)

                t, x_t, x_next = _draw_states(train_rng, x0)
                eps_g = train_rng.standard_normal(x0.shape)
                eps_post = train_rng.standard_normal(x0.shape)
                adv_loss, x0_tilde = gan.generator_adv_terms(
                    generator, critic_x0, critic_xt, z, x_next, t, sched, eps_g, eps_post
                )
                _require_finite(adv_loss.item(), "generator adversarial loss", epoch, batch_i)
                if config.use_cues:
                    cue_term = cues.cue_loss(x0_tilde, y, table, config.cue_variant)
                    _require_finite(cue_term.item(), "distillation loss", epoch, batch_i)
                    total_loss = cues.generator_total_loss(adv_loss, cue_term, cue_cfg)
                    cue_vals.append(cue_term.item())
                else:
                    total_loss = adv_loss
                opt_gen.step(engine.backward(total_loss, generator.params))
                cnt.gen_updates += 1
                adv_vals.append(adv_loss.item())

                if rl_active:
                    t, x_t, x_next = _draw_states(rl_rng, x0)
                    eps_g = rl_rng.standard_normal(x0.shape)
                    x0_rl = generator.synthesize(eps_g, z, x_next, t + 1)
                    rows = np.asarray([seen_row[int(c)] for c in y])
                    log_probs = reward_mod.class_log_probs(reward_model, x0_rl, rows)
                    r = log_probs.data.copy()
                    if not np.all(np.isfinite(r)):
                        raise NumericFailure(
                            f"reward is non-finite at epoch {epoch}, batch {batch_i}"
                        )
                    if config.raw_reward:
                        adv_batch = AdvantageBatch(rewards=r, advantages=r.copy())
                    else:
                        baseline.update(r)
                        cnt.ema_writes += 1
                        adv_batch = reward_mod.advantage(r, baseline)
                    rl_l, rl_grads = reward_mod.rl_loss(adv_batch, log_probs, generator.params)
                    _require_finite(rl_l.item(), "rl loss", epoch, batch_i)
                    opt_rl.step(rl_grads)
                    cnt.rl_updates += 1
                    reward_means.append(float(np.mean(r)))
                    if not config.raw_reward:
                        adv_means.append(float(np.mean(adv_batch.advantages)))

            nan = float("nan")
            report = None
            if config.eval_interval > 0 and (
                (epoch + 1) % config.eval_interval == 0 or epoch == config.total_epochs - 1
            ):
                report = full_report(
                    generator, dataset, config.synth_per_class, sched, clf_cfg,
                    stream_rng(config.seed, "eval", epoch),
                )
                reports[epoch] = report
            row = MetricsRow(
                epoch=epoch,
                raw_reward_mean=float(np.mean(reward_means)) if reward_means else nan,
                ema_baseline=baseline.value if (rl_active and not config.raw_reward) else nan,
                advantage_mean=float(np.mean(adv_means)) if adv_means else nan,
                critic_loss=float(np.mean(critic_vals)),
                gen_adv_loss=float(np.mean(adv_vals)),
                pd_loss=float(np.mean(cue_vals)) if cue_vals else nan,
                czsl_acc=report.czsl_acc if report else nan,
                gzsl_u=report.gzsl_u if report else nan,
                gzsl_s=report.gzsl_s if report else nan,
                gzsl_h=report.gzsl_h if report else nan,
            )
            metrics.append(row)
            counters.append(cnt)
            if metrics_fh is not None:
                metrics_fh.write(row.to_csv() + "\n")
                metrics_fh.flush()
            if (
                out_dir is not None
                and config.checkpoint_interval > 0
                and (epoch + 1) % config.checkpoint_interval == 0
            ):
                save_checkpoint(os.path.join(out_dir, "generator.ckpt"), generator.net, b"GNET")
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, "generator.ckpt"), generator.net, b"GNET")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    return TrainResult(
        generator=generator,
        critic_x0=critic_x0,
        critic_xt=critic_xt,
        metrics=metrics,
        counters=counters,
        baseline=baseline,
        prototype_table=table,
        reports=reports,
    )
