"""Experiment configuration: flat dotted keys, file + CLI overrides.

Config files are line-oriented `key.path = value` text, values in JSON
(bare words fall back to strings). The same format carries schema files
and ablation tables' sidecars, so one parser serves all of them.
"""

from __future__ import annotations

import json

from .errors import ParseError, ValidationError

VARIANTS = (
    "mkt",
    "target_only",
    "vanilla_finetune",
    "joint_shared",
    "mkt_wo_hfa",
    "mkt_wo_pdl",
    "mkt_wo_finetune",
)

DEFAULTS = {
    "seed": 7,
    "variant": "mkt",
    # synthetic data generator
    "gen.n_users": 600,
    "gen.n_items_source": 4000,
    "gen.n_items_target": 1200,
    "gen.n_clusters": 64,
    "gen.latent_dim": 8,
    "gen.alpha": 0.9,
    "gen.beta": 0.5,
    "gen.source_target_ratio": 3.0,
    "gen.n_target_samples": 40000,
    "gen.positive_rate": 0.35,
    "gen.neg_rate_source": 1.0,
    "gen.neg_rate_target": 1.0,
    "gen.activity_exponent": 1.1,
    "gen.score_scale": 2.0,
    "gen.intra_cluster_noise": 0.45,
    "gen.vocab_shared": 40,
    "gen.vocab_spec": 24,
    "gen.activity_bands": 8,
    # feature schema
    "schema.d_e": 8,
    "schema.seq_len": 10,
    "schema.d_attn": 16,
    # heterogeneous feature alignment
    "hfa.h_im": 0,  # 0 means "match the entity's spec width"
    "hfa.d_align": 32,
    "hfa.cross_layers": 2,
    "hfa.cross_form": "printed",  # "dcn" swaps the cross-term association
    # multi-entity model; expert/tower widths are desk-scale versions of the
    # production-size [1024, 512] shared layers and [64, 1] towers
    "mem.d_cke": 32,
    "mem.n_shared_experts": 2,
    "mem.n_specific_experts": 1,
    "mem.expert_hidden": 64,
    "mem.tower_hidden": 64,
    "mem.gamma": 0.1,
    "mem.use_hfa": True,
    # target entity model
    "tem.cross_hidden": 64,
    "tem.tower_hidden": 64,
    "tem.gate_bias": -2.0,
    # training
    "train.optimizer": "adam",
    "train.lr": 1e-3,
    "train.batch_size": 256,
    "train.epochs_pretrain": 3,
    "train.epochs_finetune": 3,
    "train.holdout_fraction": 0.05,
    "split.train_fraction": 0.8,
    # ablation sweep (smaller data so the full grid stays fast)
    "ablate.variants": list(VARIANTS),
    "ablate.seeds": [11, 12, 13],
    "ablate.n_target_samples": 9000,
    "ablate.epochs_pretrain": 2,
    "ablate.epochs_finetune": 2,
}


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def read_kv_file(path):
    """Parse a `key = value` file into a flat dict."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}",
                                 line=lineno)
            key, _, val = line.partition("=")
            out[key.strip()] = parse_value(val)
    return out


def write_kv_file(path, mapping):
    with open(path, "w") as f:
        for key in sorted(mapping):
            f.write(f"{key} = {json.dumps(mapping[key])}\n")


def _check_key(key, value):
    if key not in DEFAULTS:
        valid = ", ".join(sorted(DEFAULTS))
        raise ValidationError(f"unknown config key '{key}'; valid keys: {valid}")
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"config key '{key}' expects a bool, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"config key '{key}' expects a number, got {value!r}")
    elif isinstance(default, str) and not isinstance(value, str):
        raise ValidationError(f"config key '{key}' expects a string, got {value!r}")
    elif isinstance(default, list) and not isinstance(value, list):
        raise ValidationError(f"config key '{key}' expects a list, got {value!r}")


def build_config(path=None, sets=(), seed=None):
    """Merge defaults <- config file <- --set overrides <- --seed."""
    cfg = dict(DEFAULTS)
    cfg["ablate.variants"] = list(DEFAULTS["ablate.variants"])
    cfg["ablate.seeds"] = list(DEFAULTS["ablate.seeds"])
    if path is not None:
        for key, value in read_kv_file(path).items():
            _check_key(key, value)
            cfg[key] = value
    for item in sets:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        key = key.strip()
        value = parse_value(val)
        _check_key(key, value)
        cfg[key] = value
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["variant"] not in VARIANTS:
        raise ValidationError(
            f"unknown variant '{cfg['variant']}'; valid: {', '.join(VARIANTS)}")
    if cfg["mem.gamma"] < 0:
        raise ValidationError("mem.gamma must be >= 0")
    if not 0 < cfg["split.train_fraction"] < 1:
        raise ValidationError("split.train_fraction must be in (0, 1)")
    return cfg


def variant_config(cfg, variant, seed=None):
    """Effective config for one variant run (what the manifest records)."""
    out = dict(cfg)
    out["variant"] = variant
    if seed is not None:
        out["seed"] = int(seed)
    if variant == "mkt_wo_pdl":
        out["mem.gamma"] = 0.0
    if variant == "mkt_wo_hfa":
        out["mem.use_hfa"] = False
    return out
