"""Command-line entry point.

Subcommands: synth, train, evaluate, predict, gradcheck, info.  Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numerical failure.

Training is fully deterministic given the resolved config: model init,
train/test split, epoch ordering, augmentation, and dropout all draw from
named substreams of one seeded generator, keyed so that results do not
depend on execution order.
"""

import argparse
import dataclasses
import math
import os
import sys

import numpy as np

from . import verification
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ENV_PREFIX, RunConfig, apply_overrides, parse_config_text,
                     resolve_config, serialize_config)
from .data import (augment, generate_phantom, list_subjects, load_subject,
                   preprocess_subject, save_subject, split_dataset)
from .data.nifti import NiftiVolume, save_nifti
from .engine import Rng, Tape, Tensor
from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     ShapeError)
from .layers import softmax_channels
from .network import (build_model, count_parameters, describe_model, forward,
                      parameter_shapes, watch_all)
from .objectives import average_reports, evaluate_volume, predict_labels, total_loss
from .optim import adamw_init, adamw_step, schedule_lr

CSV_COLUMNS = ("epoch", "split", "loss", "lr",
               "dice_c0", "dice_c1", "dice_c2", "dice_c3",
               "dice_WT", "dice_TC", "dice_ET",
               "sens_WT", "sens_TC", "sens_ET",
               "spec_WT", "spec_TC", "spec_ET")

_METRIC_KEYS = ("0", "1", "2", "3", "WT", "TC", "ET")


# ---------------------------------------------------------------------------
# Shared plumbing


def _resolved(args) -> RunConfig:
    cfg = resolve_config(getattr(args, "config", None), getattr(args, "overrides", []))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg.validate()


def _load_dataset(cfg: RunConfig):
    """Subjects in canonical order; the position in this list is the stable
    subject index used for augmentation keying."""
    if cfg.data_dir:
        ids = list_subjects(cfg.data_dir)
        return [load_subject(cfg.data_dir, sid) for sid in ids]
    return generate_phantom(cfg.seed, cfg.phantom_size, cfg.phantom_count)


def _prepare(cfg: RunConfig):
    subjects = _load_dataset(cfg)
    samples = {}
    index = {}
    for i, sub in enumerate(subjects):
        samples[sub.id] = preprocess_subject(sub, cfg.crop_to())
        index[sub.id] = i
    rng = Rng(cfg.seed)
    train_ids, test_ids = split_dataset([s.id for s in subjects], cfg.split_ratio, rng)
    return samples, index, train_ids, test_ids


def _check_compat(ck, cfg: RunConfig):
    """Verify a loaded checkpoint matches the architecture before any forward."""
    arch = cfg.architecture()
    want = parameter_shapes(arch)
    if set(ck.params) != set(want):
        diff = sorted(set(ck.params) ^ set(want))
        raise CheckpointError(f"checkpoint parameter set does not match the "
                              f"architecture (first differences: {diff[:4]})")
    for name, shape in want.items():
        if ck.params[name].shape != shape:
            raise CheckpointError(f"checkpoint parameter {name!r} has shape "
                                  f"{ck.params[name].shape}, architecture expects {shape}")
    return arch


def _params_from_checkpoint(ck) -> dict:
    return {name: Tensor(arr.copy()) for name, arr in ck.params.items()}


def _evaluate_split(params, arch, loss_cfg, samples, ids):
    """Eval-mode loss and macro-averaged metrics over the listed subjects."""
    losses, reports = [], []
    for sid in ids:
        sam = samples[sid]
        if sam.image.shape[0] != arch.in_channels:
            raise CheckpointError(f"data has {sam.image.shape[0]} channels, "
                                  f"architecture expects {arch.in_channels}")
        art = forward(params, arch, Tensor(sam.image[None]), mode="eval")
        probs = softmax_channels(art.logits)
        loss = total_loss(probs, Tensor(sam.target[None]), loss_cfg)
        losses.append(loss.item())
        reports.append(evaluate_volume(predict_labels(art.logits.data[0]), sam.labels))
    return float(np.mean(losses)), average_reports(reports)


def _csv_row(epoch, split, loss, lr, rep) -> str:
    cells = [str(epoch), split, repr(float(loss)), repr(float(lr))]
    cells += [repr(float(rep.dice[k])) for k in ("0", "1", "2", "3")]
    cells += [repr(float(rep.dice[k])) for k in ("WT", "TC", "ET")]
    cells += [repr(float(rep.sensitivity[k])) for k in ("WT", "TC", "ET")]
    cells += [repr(float(rep.specificity[k])) for k in ("WT", "TC", "ET")]
    return ",".join(cells)


def _summary_table(rows) -> str:
    """rows: (label, MetricsReport).  Mirrors the Dice/Sens/Spec x WT/TC/ET layout."""
    head = (f"{'split':<8s}" + "".join(f"{m}_{r:<6s}"
            for m in ("Dice", "Sens", "Spec") for r in ("WT", "TC", "ET")))
    lines = [head]
    for label, rep in rows:
        cells = [f"{rep.dice[r]:.4f}  " for r in ("WT", "TC", "ET")]
        cells += [f"{rep.sensitivity[r]:.4f}  " for r in ("WT", "TC", "ET")]
        cells += [f"{rep.specificity[r]:.4f}  " for r in ("WT", "TC", "ET")]
        lines.append(f"{label:<8s}" + "".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    cfg = _resolved(args)
    out = args.out if args.out is not None else cfg.out_dir
    size = args.size if args.size is not None else cfg.phantom_size
    count = args.count if args.count is not None else cfg.phantom_count
    os.makedirs(out, exist_ok=True)
    for sub in generate_phantom(cfg.seed, size, count):
        save_subject(sub, out)
    print(f"wrote {count} phantom subjects ({size}^3, seed {cfg.seed}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved(args)
    arch = cfg.architecture()
    loss_cfg = cfg.loss()
    os.makedirs(cfg.out_dir, exist_ok=True)
    config_text = serialize_config(cfg)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_text)

    samples, index, train_ids, test_ids = _prepare(cfg)
    rng = Rng(cfg.seed)
    params = build_model(arch, rng)
    state = adamw_init(params, beta1=cfg.beta1, beta2=cfg.beta2,
                       eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(train_ids) / cfg.batch_size))
    sch = cfg.schedule(steps_per_epoch)

    csv_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")

    last_path = os.path.join(cfg.out_dir, "last.ckpt")
    best_path = os.path.join(cfg.out_dir, "best.ckpt")
    print(f"training {arch.decoders}-decoder model, {count_parameters(params)} parameters, "
          f"{len(train_ids)} train / {len(test_ids)} test subjects, "
          f"{cfg.epochs} epochs x {steps_per_epoch} steps")

    step = 0
    best_wt = -1.0
    save_checkpoint(last_path, params, config_text, state)
    for epoch in range(cfg.epochs):
        order = rng.generator("split", "order", epoch).permutation(len(train_ids))
        epoch_ids = [train_ids[i] for i in order]
        for start in range(0, len(epoch_ids), cfg.batch_size):
            batch = epoch_ids[start:start + cfg.batch_size]
            aug = [augment(samples[sid], rng, subject_index=index[sid],
                           epoch=epoch, p=cfg.augment_p) for sid in batch]
            x = np.stack([a.image for a in aug])
            t = np.stack([a.target for a in aug])
            lr = schedule_lr(step, sch)
            with Tape() as tape:
                watch_all(tape, params)
                art = forward(params, arch, Tensor(x), mode="train", rng=rng, step=step)
                probs = softmax_channels(art.logits)
                loss = total_loss(probs, Tensor(t), loss_cfg)
                lval = loss.item()
                if not np.isfinite(lval):
                    raise NumericalError(f"non-finite training loss ({lval}) at step {step}; "
                                         "aborting instead of skipping")
                node_grads = tape.backward(loss)
            grads = {name: node_grads[p.node] for name, p in params.items()}
            adamw_step(params, grads, state, lr)
            step += 1

        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            lr_logged = schedule_lr(step - 1, sch)
            tr_loss, tr_rep = _evaluate_split(params, arch, loss_cfg, samples, train_ids)
            rows = [_csv_row(epoch, "train", tr_loss, lr_logged, tr_rep)]
            gate_rep = tr_rep
            if test_ids:
                te_loss, te_rep = _evaluate_split(params, arch, loss_cfg, samples, test_ids)
                rows.append(_csv_row(epoch, "test", te_loss, lr_logged, te_rep))
                gate_rep = te_rep
            with open(csv_path, "a", encoding="utf-8") as fh:
                fh.write("\n".join(rows) + "\n")
            print(f"epoch {epoch:3d}  train_loss {tr_loss:.4f}  "
                  f"WT dice {gate_rep.dice['WT']:.4f}  lr {lr_logged:.3g}")
            if gate_rep.dice["WT"] > best_wt:
                best_wt = gate_rep.dice["WT"]
                save_checkpoint(best_path, params, config_text, state)
        save_checkpoint(last_path, params, config_text, state)
    print(f"done; best WT dice {max(best_wt, 0.0):.4f}; checkpoints in {cfg.out_dir}")
    return 0


def _cfg_from_checkpoint(ck, args) -> RunConfig:
    values = parse_config_text(ck.config_text, source="<checkpoint config>")
    apply_overrides(values, getattr(args, "overrides", []))
    cfg = RunConfig(**values)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(ck, args)
    arch = _check_compat(ck, cfg)
    params = _params_from_checkpoint(ck)
    samples, _index, train_ids, test_ids = _prepare(cfg)
    chosen = {"train": [("train", train_ids)], "test": [("test", test_ids)],
              "all": [("train", train_ids), ("test", test_ids)]}[args.split]
    out_dir = args.out if args.out is not None else (os.path.dirname(args.checkpoint) or ".")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "eval_metrics.csv")
    rows, table = [], []
    for label, ids in chosen:
        if not ids:
            continue
        loss, rep = _evaluate_split(params, arch, cfg.loss(), samples, ids)
        rows.append(_csv_row(-1, label, loss, 0.0, rep))
        table.append((label, rep))
    if not table:
        raise DataError(f"split {args.split!r} selects no subjects")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n" + "\n".join(rows) + "\n")
    print(_summary_table(table))
    print(f"metrics written to {csv_path}")
    return 0


def cmd_predict(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(ck, args)
    arch = _check_compat(ck, cfg)
    params = _params_from_checkpoint(ck)
    subject_dir = args.subject.rstrip("/")
    sid = os.path.basename(subject_dir)
    subject = load_subject(os.path.dirname(subject_dir) or ".", sid)
    sample = preprocess_subject(subject, cfg.crop_to())
    if sample.image.shape[0] != arch.in_channels:
        raise CheckpointError(f"subject has {sample.image.shape[0]} channels, "
                              f"architecture expects {arch.in_channels}")
    out_dir = args.out if args.out is not None else cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    art = forward(params, arch, Tensor(sample.image[None]), mode="eval",
                  capture_attention=True)
    labels = predict_labels(art.logits.data[0]).astype(np.uint8)
    pred_path = os.path.join(out_dir, f"{sid}_pred.nii.gz")
    save_nifti(NiftiVolume(labels), pred_path)
    print(f"wrote {pred_path}")
    if args.export_attention:
        if arch.attention == "none":
            print("no attention maps in this variant")
            return 0
        for d in arch.decoder_names():
            alpha = art.alphas[d][-1].data[0, 0].astype(np.float32)
            path = os.path.join(out_dir, f"attn_final_{d}.nii.gz")
            save_nifti(NiftiVolume(alpha), path)
            print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.scope == "all":
        outcomes = verification.run_suite(seeds=args.seeds)
    else:
        outcomes = verification.run_scope(args.scope, seeds=args.seeds)
    print(verification.summarize(outcomes))
    if not verification.suite_passed(outcomes):
        worst = max(outcomes, key=lambda o: o.max_rel_error)
        raise NumericalError(f"gradient check failed in scope {worst.scope!r} "
                             f"(max relative error {worst.max_rel_error:.3e})")
    return 0


def cmd_info(args) -> int:
    cfg = _resolved(args)
    arch = cfg.architecture()
    print(describe_model(arch))
    shapes = parameter_shapes(arch)
    n = sum(int(np.prod(s)) for s in shapes.values())
    print(f"parameters: {n} in {len(shapes)} tensors")
    print(f"loss: {cfg.lambda_dice} * dice + {cfg.lambda_focal} * focal "
          f"(gamma={cfg.focal_gamma}, alpha={cfg.focal_alpha})")
    print(f"schedule: {cfg.lr_schedule}, max_lr {cfg.max_lr}")
    return 0


# ---------------------------------------------------------------------------
# Parser and exit-code mapping


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the documented usage code is 1,
    so route parse errors through ConfigError instead."""

    def error(self, message):
        raise ConfigError(f"{self.format_usage().strip()}\n{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="flat key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help="override the run seed")

    p = _Parser(prog="voxelseg",
                description="Dual-decoder attention U-Net for 3D segmentation.",
                epilog=f"Any config key may also be set via {ENV_PREFIX}<KEY> "
                       "environment variables (precedence: defaults < file < "
                       f"environment < --set). {ENV_PREFIX}BACKEND selects the "
                       "compute backend: numba, numpy, or auto.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a phantom dataset")
    s.add_argument("--size", type=int, default=None, help="cube edge length in voxels")
    s.add_argument("--count", type=int, default=None, help="number of subjects")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    s.add_argument("checkpoint", help="path to a .ckpt file")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", parents=[common],
                       help="segment one subject directory")
    s.add_argument("checkpoint", help="path to a .ckpt file")
    s.add_argument("subject", help="subject directory (<id> with <id>_t1.nii.gz ...)")
    s.add_argument("--export-attention", action="store_true",
                   help="also write final-level attention maps per decoder")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    s.add_argument("scope", nargs="?", default="all",
                   help="one scope name or 'all' (see error message for the list)")
    s.add_argument("--seeds", type=int, default=verification.DEFAULT_SEEDS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("info", parents=[common], help="describe the configured model")
    s.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataError, ShapeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
