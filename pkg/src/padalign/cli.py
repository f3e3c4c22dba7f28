"""Command-line entry point: training runs, ablation grids, inspections.

Configuration is a plain ``key = value`` text file; every key can also be
set on the command line with ``--set key=value``, and flags win over the
file. Each run writes a manifest with the fully resolved configuration
before any training starts, so runs can be reproduced bit for bit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .autodiff import ContractViolation
from .encoder import AttentionStack, EncoderConfig
from .losses import VARIANTS, LossSpec
from .significance import asp
from .spans import SpanConfig, aasa
from .synthdata import GenConfig, generate
from .tensorio import BundleError, dataset_to_bundle, read_bundle
from .trainer import TrainConfig, TrainingDiverged, make_teacher, train

__all__ = ["main", "UsageError", "parse_config", "resolve_config", "DEFAULTS"]


class UsageError(Exception):
    """Bad invocation: unknown flags, variants, or malformed config."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


DEFAULTS: dict[str, str] = {
    "variant": "pad_tlocal",
    "joint": "",
    "seed": "0",
    "epochs": "10",
    "lr": "1e-3",
    "batch_size": "8",
    "optimizer": "adam",
    "layer_mode": "all",
    "prior_grad": "false",
    "ctc_blank_logit": "0.0",
    "dev_fraction": "0.1",
    "glob_speech_prior": "true",
    "glob_text_prior": "true",
    "slocal_text_prior": "true",
    "span_xi": "8",
    "span_scales": "3",
    "span_pooling": "mean",
    "span_anchor_mode": "prior",
    "span_multi_scale": "true",
    "enc_layers": "2",
    "enc_heads": "2",
    "enc_dim": "32",
    "enc_ffn": "64",
    "data_vocab": "50",
    "data_count": "200",
    "data_text_len_min": "4",
    "data_text_len_max": "8",
    "data_repeat_min": "2",
    "data_repeat_max": "4",
    "data_blank_prob": "0.2",
    "data_noise_std": "0.1",
    "data_frame_dim": "32",
    "data_from_teacher": "false",
}


def parse_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(config_path: str | None, overrides: dict[str, str]) -> dict[str, str]:
    resolved = dict(DEFAULTS)
    if config_path:
        resolved.update(parse_config(config_path))
    for key, value in overrides.items():
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        resolved[key] = value
    return resolved


def _as_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise UsageError(f"{key}: expected a boolean, got {value!r}")


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as e:
        raise UsageError(f"{key}: expected an integer, got {value!r}") from e


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as e:
        raise UsageError(f"{key}: expected a number, got {value!r}") from e


def _loss_spec(cfg: dict[str, str]) -> LossSpec:
    if cfg["joint"].strip():
        weights: dict[str, float] = {}
        for part in cfg["joint"].split(","):
            if ":" in part:
                name, w = part.split(":", 1)
                weights[name.strip()] = _as_float("joint", w)
            else:
                weights[part.strip()] = 1.0
        for name in weights:
            if name not in VARIANTS:
                raise UsageError(
                    f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}")
        return LossSpec(weights=weights)
    variant = cfg["variant"].strip()
    if variant not in VARIANTS:
        raise UsageError(
            f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
    return LossSpec.single(variant)


def _gen_config(cfg: dict[str, str]) -> GenConfig:
    return GenConfig(
        vocab_size=_as_int("data_vocab", cfg["data_vocab"]),
        text_len=(_as_int("data_text_len_min", cfg["data_text_len_min"]),
                  _as_int("data_text_len_max", cfg["data_text_len_max"])),
        repeats=(_as_int("data_repeat_min", cfg["data_repeat_min"]),
                 _as_int("data_repeat_max", cfg["data_repeat_max"])),
        blank_prob=_as_float("data_blank_prob", cfg["data_blank_prob"]),
        noise_std=_as_float("data_noise_std", cfg["data_noise_std"]),
        frame_dim=_as_int("data_frame_dim", cfg["data_frame_dim"]),
        seed=_as_int("seed", cfg["seed"]))


def _train_config(cfg: dict[str, str]) -> TrainConfig:
    span = SpanConfig(
        base_scale=_as_int("span_xi", cfg["span_xi"]),
        num_scales=_as_int("span_scales", cfg["span_scales"]),
        pooling=cfg["span_pooling"],
        anchor_mode=cfg["span_anchor_mode"],
        multi_scale=_as_bool("span_multi_scale", cfg["span_multi_scale"]))
    encoder = EncoderConfig(
        num_layers=_as_int("enc_layers", cfg["enc_layers"]),
        num_heads=_as_int("enc_heads", cfg["enc_heads"]),
        model_dim=_as_int("enc_dim", cfg["enc_dim"]),
        ffn_dim=_as_int("enc_ffn", cfg["enc_ffn"]),
        seed=_as_int("seed", cfg["seed"]))
    return TrainConfig(
        loss=_loss_spec(cfg),
        lr=_as_float("lr", cfg["lr"]),
        optimizer=cfg["optimizer"],
        epochs=_as_int("epochs", cfg["epochs"]),
        batch_size=_as_int("batch_size", cfg["batch_size"]),
        seed=_as_int("seed", cfg["seed"]),
        layer_mode=cfg["layer_mode"],
        span=span,
        encoder=encoder,
        prior_grad=_as_bool("prior_grad", cfg["prior_grad"]),
        ctc_blank_logit=_as_float("ctc_blank_logit", cfg["ctc_blank_logit"]),
        dev_fraction=_as_float("dev_fraction", cfg["dev_fraction"]),
        glob_speech_prior=_as_bool("glob_speech_prior", cfg["glob_speech_prior"]),
        glob_text_prior=_as_bool("glob_text_prior", cfg["glob_text_prior"]),
        slocal_text_prior=_as_bool("slocal_text_prior", cfg["slocal_text_prior"]))


def _run_id(resolved: dict[str, str]) -> str:
    canonical = json.dumps(resolved, sort_keys=True).encode()
    return hashlib.sha1(canonical).hexdigest()[:12]


def _out_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("PAD_OUT_DIR", "runs"))


def _write_manifest(out_dir: Path, resolved: dict[str, str], run_id: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"run_id": run_id, "seed": int(resolved["seed"]),
                "out_dir": str(out_dir), "config": resolved}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _build_dataset(resolved: dict[str, str]):
    gen_cfg = _gen_config(resolved)
    prototypes = None
    if _as_bool("data_from_teacher", resolved["data_from_teacher"]):
        # frames become noisy copies of the run's frozen teacher embeddings
        train_cfg = _train_config(resolved)
        if gen_cfg.frame_dim != train_cfg.encoder.model_dim:
            raise UsageError(
                "data_from_teacher needs data_frame_dim == enc_dim, got "
                f"{gen_cfg.frame_dim} vs {train_cfg.encoder.model_dim}")
        teacher = make_teacher(train_cfg, gen_cfg.vocab_size)
        prototypes = teacher.parameters()["embed"].data
    return generate(gen_cfg, _as_int("data_count", resolved["data_count"]),
                    prototypes=prototypes)


def _run_one(resolved: dict[str, str], out_dir: Path) -> None:
    run_id = _run_id(resolved)
    _write_manifest(out_dir, resolved, run_id)
    dataset = _build_dataset(resolved)
    result = train(_train_config(resolved), dataset)
    result.history.to_csv(out_dir / "metrics.csv")
    last = result.history.rows[-1]
    print(f"run {run_id}: {len(result.history.rows)} epochs, "
          f"final dev_loss {last.dev_loss:.6f}, frame_acc {last.frame_acc:.4f} "
          f"-> {out_dir / 'metrics.csv'}")


def _cmd_train(args) -> int:
    resolved = resolve_config(args.config, _collect_overrides(args))
    out_dir = Path(args.out) if args.out else _out_root(None) / f"run-{_run_id(resolved)}"
    _run_one(resolved, out_dir)
    return 0


# ablation grid: prior toggles for global, prior/span/anchor toggles for the
# span variant, and every joint combination of the three prior-informed losses
ABLATION_CELLS: list[tuple[str, dict[str, str]]] = [
    ("pad_glob_full", {"variant": "pad_glob"}),
    ("pad_glob_wo_s_prior", {"variant": "pad_glob", "glob_speech_prior": "false"}),
    ("pad_glob_wo_t_prior", {"variant": "pad_glob", "glob_text_prior": "false"}),
    ("pad_glob_wo_both", {"variant": "pad_glob", "glob_speech_prior": "false",
                          "glob_text_prior": "false"}),
    ("pad_tlocal_full", {"variant": "pad_tlocal"}),
    ("pad_tlocal_wo_prior", {"variant": "tlocal"}),
    ("pad_slocal_full", {"variant": "pad_slocal"}),
    ("pad_slocal_wo_prior", {"variant": "pad_slocal", "slocal_text_prior": "false"}),
    ("pad_slocal_wo_span_pool", {"variant": "pad_slocal", "span_multi_scale": "false"}),
    ("pad_slocal_wo_anch_pts", {"variant": "pad_slocal",
                                "span_anchor_mode": "even_stride"}),
    ("joint_g_t", {"joint": "pad_glob:1,pad_tlocal:1"}),
    ("joint_g_s", {"joint": "pad_glob:1,pad_slocal:1"}),
    ("joint_t_s", {"joint": "pad_tlocal:1,pad_slocal:1"}),
    ("joint_all", {"joint": "pad_glob:1,pad_tlocal:1,pad_slocal:1"}),
]


def _cmd_ablate(args) -> int:
    base = resolve_config(args.config, _collect_overrides(args))
    root = Path(args.out) if args.out else _out_root(None) / f"ablate-{_run_id(base)}"
    for cell, overrides in ABLATION_CELLS:
        resolved = dict(base)
        resolved.update(overrides)
        _run_one(resolved, root / cell)
    return 0


def _pick_tensor(records, role: str, name: str | None):
    if name is not None:
        if name not in records:
            raise UsageError(f"tensor {name!r} not in bundle")
        return records[name]
    matching = [r for r in records.values() if r.role == role]
    if not matching:
        raise UsageError(f"bundle has no tensor with role {role!r}")
    return matching[0]


def _cmd_inspect(args) -> int:
    records = read_bundle(args.bundle)
    attn = _pick_tensor(records, "attention", args.attention_tensor)
    stack = AttentionStack.from_array(attn.data)
    prior = asp(stack, args.layer_mode)
    if args.what == "asp":
        print("position,weight")
        for i, w in enumerate(prior.weights.data):
            print(f"{i},{w:.8f}")
        return 0
    hidden = _pick_tensor(records, "hidden", args.hidden_tensor)
    if hidden.data.ndim != 2:
        raise UsageError(f"hidden tensor {hidden.name!r} is not an n x d matrix")
    if hidden.data.shape[0] != len(prior):
        raise UsageError("hidden length does not match attention size")
    cfg = SpanConfig(base_scale=args.xi, num_scales=args.scales,
                     pooling=args.pooling, anchor_mode=args.anchor_mode,
                     multi_scale=not args.no_multi_scale)
    from .autodiff import Tensor
    pools = aasa(Tensor(hidden.data), prior, cfg)
    print("anchor,half_width")
    for a in pools.anchors:
        for s in pools.scales:
            print(f"{a},{s}")
    return 0


def _cmd_gen_data(args) -> int:
    resolved = resolve_config(args.config, _collect_overrides(args))
    dataset = _build_dataset(resolved)
    dataset_to_bundle(dataset, args.out)
    print(f"wrote {len(dataset)} examples to {args.out}")
    return 0


def _collect_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return overrides


def _build_parser() -> _Parser:
    parser = _Parser(prog="padalign",
                     description="speech/text embedding alignment experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    p_train.add_argument("--config")
    p_train.add_argument("--variant")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_train.set_defaults(func=_cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the ablation and joint grids")
    p_ablate.add_argument("--config")
    p_ablate.add_argument("--seed", type=int)
    p_ablate.add_argument("--out")
    p_ablate.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_inspect = sub.add_parser("inspect", help="print priors or anchors from a bundle")
    p_inspect.add_argument("what", choices=("asp", "aasa"))
    p_inspect.add_argument("--bundle", required=True)
    p_inspect.add_argument("--layer-mode", dest="layer_mode",
                           choices=("all", "last"), default="all")
    p_inspect.add_argument("--attention-tensor", dest="attention_tensor")
    p_inspect.add_argument("--hidden-tensor", dest="hidden_tensor")
    p_inspect.add_argument("--xi", type=int, default=8)
    p_inspect.add_argument("--scales", type=int, default=3)
    p_inspect.add_argument("--pooling", choices=("mean", "max"), default="mean")
    p_inspect.add_argument("--anchor-mode", dest="anchor_mode",
                           choices=("prior", "even_stride"), default="prior")
    p_inspect.add_argument("--no-multi-scale", dest="no_multi_scale",
                           action="store_true")
    p_inspect.set_defaults(func=_cmd_inspect)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset bundle")
    p_gen.add_argument("--config")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_gen.set_defaults(func=_cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (BundleError, TrainingDiverged, ContractViolation, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
