"""Flat key=value configuration with presets and strict precedence.

Precedence, lowest to highest: built-in defaults, preset, config file,
explicit command-line flags. Files hold one `key = value` per line; blank
lines and `#` comments are ignored; unknown keys are rejected.
"""

from __future__ import annotations

from .errors import ConfigurationError


def _parse_bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (default, parser, help)
SCHEMA: dict[str, tuple] = {
    "seed": (0, int, "root seed; every random stream derives from it"),
    "epochs": (20, int, "training epochs"),
    "rl_start_epoch": (5, int, "first epoch (0-indexed) with policy-gradient updates"),
    "critic_steps": (1, int, "critic updates per minibatch"),
    "batch_size": (32, int, "minibatch size"),
    "lr_adv": (5e-4, float, "Adam rate for critics and the adversarial generator step"),
    "lr_rl": (5e-5, float, "Adam rate for the policy-gradient generator step"),
    "lambda_pd": (5.0, float, "weight of the prototype-distillation term"),
    "lambda_gp": (10.0, float, "gradient-penalty weight"),
    "ema_alpha": (0.9, float, "EMA factor of the reward baseline"),
    "diffusion_steps": (4, int, "number of diffusion steps T"),
    "beta_min": (0.1, float, "first diffusion beta"),
    "beta_max": (0.4, float, "last diffusion beta"),
    "synth_per_class": (100, int, "synthesized features per unseen class"),
    "eval_interval": (0, int, "epochs between evaluations (0 = never)"),
    "checkpoint_interval": (0, int, "epochs between checkpoints (0 = end only)"),
    "use_rl": (True, _parse_bool, "enable the policy-gradient phase"),
    "use_cues": (True, _parse_bool, "enable the prototype-distillation term"),
    "raw_reward": (False, _parse_bool, "weight log-likelihoods by raw rewards (no baseline)"),
    "cue_loss": ("pd", str, "distillation variant: pd, kl, or l1"),
    "hidden_mult": (4, int, "hidden width as a multiple of the feature dim"),
    "temb_dim": (16, int, "timestep embedding width"),
    "leaky_slope": (0.2, float, "leaky-relu negative slope"),
    "adam_beta1": (0.5, float, "Adam beta1 (all optimizers)"),
    "adam_beta2": (0.999, float, "Adam beta2 (all optimizers)"),
    "reward_epochs": (50, int, "reward-model pretraining epochs"),
    "reward_lr": (0.01, float, "reward-model Adam rate"),
    "reward_batch": (128, int, "reward-model minibatch size"),
    "clf_epochs": (50, int, "evaluation-head training epochs"),
    "clf_lr": (0.001, float, "evaluation-head Adam rate"),
    "clf_batch": (128, int, "evaluation-head minibatch size"),
    "standardize": (False, _parse_bool, "standardize features with train-split statistics"),
    "n_seen": (20, int, "synthetic benchmark: seen classes"),
    "n_unseen": (5, int, "synthetic benchmark: unseen classes"),
    "feat_dim": (32, int, "synthetic benchmark: visual feature dim"),
    "sem_dim": (16, int, "synthetic benchmark: semantic prototype dim"),
    "samples_per_class": (60, int, "synthetic benchmark: samples per class"),
    "semantic_cluster_size": (5, int, "synthetic benchmark: classes per semantic cluster"),
    "semantic_jitter": (0.05, float, "synthetic benchmark: within-cluster prototype jitter"),
    "visual_separation": (6.0, float, "synthetic benchmark: min distance between class means"),
    "visual_sigma": (1.0, float, "synthetic benchmark: within-class feature noise"),
    "test_fraction": (0.2, float, "synthetic benchmark: held-out fraction per seen class"),
}

PRESETS: dict[str, dict] = {
    "cub": {"epochs": 500, "rl_start_epoch": 30, "lambda_pd": 20.0, "synth_per_class": 400},
    "sun": {"epochs": 300, "rl_start_epoch": 30, "lambda_pd": 1.0, "synth_per_class": 400},
    "awa2": {"epochs": 30, "rl_start_epoch": 7, "lambda_pd": 5.0, "synth_per_class": 4000},
    "synthetic": {
        "epochs": 40,
        "rl_start_epoch": 5,
        "lambda_pd": 5.0,
        "synth_per_class": 100,
        "eval_interval": 10,
        # a schedule ending near-pure-noise keeps the reverse chain's
        # starting point inside the training distribution
        "diffusion_steps": 6,
        "beta_max": 0.9,
        "standardize": True,
    },
}

_CUE_CHOICES = ("pd", "kl", "l1")


def defaults() -> dict:
    return {k: v[0] for k, v in SCHEMA.items()}


def parse_value(key: str, raw) -> object:
    if key not in SCHEMA:
        raise ConfigurationError(f"unknown config key {key!r}")
    _, parser, _ = SCHEMA[key]
    if isinstance(raw, str):
        try:
            value = parser(raw)
        except ValueError as e:
            raise ConfigurationError(f"config key {key!r}: {e}") from None
    else:
        value = raw
    if key == "cue_loss" and value not in _CUE_CHOICES:
        raise ConfigurationError(f"cue_loss must be one of {_CUE_CHOICES}, got {value!r}")
    return value


def load_config_file(path) -> dict:
    out = {}
    with open(path, "r") as fh:
        for i, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{path}:{i}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            out[key] = parse_value(key, raw.strip())
    return out


def resolve_config(
    preset: str | None = None,
    config_path: str | None = None,
    overrides: dict | None = None,
) -> dict:
    cfg = defaults()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
            )
        cfg.update(PRESETS[preset])
    if config_path is not None:
        cfg.update(load_config_file(config_path))
    for key, raw in (overrides or {}).items():
        cfg[key] = parse_value(key, raw)
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
