"""Command-line entry point: training, evaluation, gradient checking,
weakly-supervised localization, and attention-map export.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 numeric abort.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, net_arrays, restore_net, save_checkpoint
from .classifier import AGClassifier, ClassifierConfig, evaluate_cls, train_cls
from .config import ConfigError, RunConfig, load_config
from .imageio import burn_box, gray_to_rgb, to_uint8, write_pgm, write_ppm
from .metrics import cls_metrics, mean_records, seg_metrics, write_cls_csv, write_seg_csv
from .optim import NumericAbort, make_optimizer
from .synthdata import SynthSample, gen_cls, gen_seg
from .unet import AttentionUNet, UNetConfig, evaluate_seg, standardize, train_seg
from .verify import run_scope
from .wsl import BoundingBox, localize, wsl_score


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AGKIT_THREADS", "1")))
    except ValueError:
        return 1


def build_seg_net(cfg: RunConfig) -> AttentionUNet:
    modes = ("attention" if cfg.model == "gated" else "identity",) * (cfg.depth - 1)
    ucfg = UNetConfig(
        depth=cfg.depth,
        base_filters=cfg.base_filters,
        n_classes=cfg.classes,
        height=cfg.height,
        width=cfg.width,
        deep_supervision=cfg.deep_supervision,
        gate_modes=modes,
        gate_normalization=cfg.norm_for_task(),
        sub_gates=cfg.sub_gates,
        gate_resample=cfg.gate_resample,
    )
    return AttentionUNet(ucfg, seed=cfg.seed)


def build_cls_net(cfg: RunConfig) -> AGClassifier:
    ccfg = ClassifierConfig(
        n_stages=cfg.n_stages,
        base_width=cfg.base_width,
        n_classes=cfg.n_fg_classes + 1,
        height=cfg.height,
        width=cfg.width,
        gated_stages=cfg.gated_stages,
        aggregation=cfg.aggregation,
        gated=cfg.model == "gated",
        gate_normalization=cfg.norm_for_task(),
        sub_gates=cfg.sub_gates,
    )
    return AGClassifier(ccfg, seed=cfg.seed)


def make_datasets(cfg: RunConfig):
    total = cfg.train_count + cfg.val_count + cfg.test_count
    if cfg.task == "seg":
        samples = gen_seg(cfg.seed, total, cfg.height, cfg.width, cfg.contrast, cfg.classes)
    else:
        samples = gen_cls(cfg.seed, total, cfg.height, cfg.width, cfg.n_fg_classes, cfg.background_ratio)
    train = samples[: cfg.train_count]
    val = samples[cfg.train_count : cfg.train_count + cfg.val_count]
    test = samples[cfg.train_count + cfg.val_count :]
    return train, val, test


def run_id_for(cfg: RunConfig) -> str:
    return f"{cfg.task}-{cfg.model}-seed{cfg.seed}"


def _collect_attention(net, sample: SynthSample, task: str):
    """Eval-mode forward of one sample returning [(scale, map array)]."""
    net.set_training(False)
    with ad.no_grad():
        out = net.forward(Tensor(standardize(sample.image)))
    net.set_training(True)
    return [(amap.scale, amap.alpha.data[0]) for amap in out.attention]


def _export_attention_pgms(net, sample: SynthSample, task: str, out_dir: str, prefix: str,
                           sidecar_rows: list[str] | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for scale, alpha in _collect_attention(net, sample, task):
        for k in range(alpha.shape[0]):
            lo, hi = float(alpha[k].min()), float(alpha[k].max())
            name = f"{prefix}_gate{scale}" + (f"_sub{k}" if alpha.shape[0] > 1 else "") + ".pgm"
            write_pgm(os.path.join(out_dir, name), to_uint8(alpha[k], lo, hi))
            if sidecar_rows is not None:
                sidecar_rows.append(f"{name},{lo:.9g},{hi:.9g}")


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    train, val, test = make_datasets(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    run_id = run_id_for(cfg)
    monitor = val[0] if val else train[0]
    attention_dir = os.path.join(cfg.out_dir, "attention")

    if cfg.task == "seg":
        net = build_seg_net(cfg)
        optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum, cfg.beta1, cfg.beta2)

        def hook(epoch, net):
            if net.gates and any(g is not None for g in net.gates):
                _export_attention_pgms(net, monitor, "seg", attention_dir, f"epoch{epoch:03d}")

        history = train_seg(
            net, train, val, optimizer, cfg.epochs, seed=cfg.seed,
            batch_size=cfg.batch_size, aux_weight=cfg.aux_weight, epoch_hook=hook,
        )
        write_seg_csv(
            os.path.join(cfg.out_dir, "metrics.csv"),
            run_id,
            [(row["epoch"], row["val_metrics"]) for row in history if "val_metrics" in row],
        )
    else:
        net = build_cls_net(cfg)
        optimizer = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum, cfg.beta1, cfg.beta2)

        def hook(epoch, net):
            if net.gates:
                _export_attention_pgms(net, monitor, "cls", attention_dir, f"epoch{epoch:03d}")

        history = train_cls(
            net, train, val, optimizer, cfg.epochs, seed=cfg.seed,
            batch_size=cfg.batch_size, use_schedule=cfg.use_schedule, epoch_hook=hook,
        )
        lines = ["run_id,epoch,class,precision,recall,f1"]
        for row in history:
            rec = row.get("val_metrics")
            if rec is None:
                continue
            for c in sorted(rec.per_class):
                m = rec.per_class[c]
                lines.append(
                    f"{run_id},{row['epoch']},{c},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f}"
                )
        with open(os.path.join(cfg.out_dir, "metrics.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    save_checkpoint(os.path.join(cfg.out_dir, "checkpoint.agk"), net_arrays(net))
    last = history[-1]
    summary = ", ".join(
        f"{k}={v:.4f}" for k, v in last.items() if isinstance(v, float)
    )
    print(f"[agkit] train {run_id}: {cfg.epochs} epochs, {summary}")
    return 0


def _restore_from_config(cfg: RunConfig, checkpoint_path: str):
    net = build_seg_net(cfg) if cfg.task == "seg" else build_cls_net(cfg)
    try:
        restore_net(net, load_checkpoint(checkpoint_path))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return net


def _eval_seg_parallel(net, samples, spacing, threads):
    if threads <= 1:
        return evaluate_seg(net, samples, spacing)
    net.set_training(False)

    def one(s):
        with ad.no_grad():
            out = net.forward(Tensor(standardize(s.image)))
        pred = out.logits.data.argmax(axis=1)[0]
        return seg_metrics(pred, s.mask, net.cfg.n_classes, spacing)

    with ThreadPoolExecutor(max_workers=threads) as ex:
        records = list(ex.map(one, samples))
    net.set_training(True)
    return mean_records(records)


def _eval_cls_parallel(net, samples, threads):
    if threads <= 1:
        return evaluate_cls(net, samples)
    net.set_training(False)

    def one(s):
        with ad.no_grad():
            out = net.forward(Tensor(standardize(s.image)))
        return int(out.logits.data.argmax(axis=1)[0])

    with ThreadPoolExecutor(max_workers=threads) as ex:
        preds = np.asarray(list(ex.map(one, samples)))
    net.set_training(True)
    gts = np.asarray([s.label for s in samples])
    return cls_metrics(preds, gts, net.cfg.n_classes)


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    _, _, test = make_datasets(cfg)
    if not test:
        raise ConfigError("eval: test_count is 0, nothing to evaluate")
    net = _restore_from_config(cfg, _checkpoint_path(args, cfg))
    os.makedirs(cfg.out_dir, exist_ok=True)
    threads = _threads()
    if cfg.task == "seg":
        rec = _eval_seg_parallel(net, test, cfg.spacing, threads)
        write_seg_csv(os.path.join(cfg.out_dir, "eval_metrics.csv"), run_id_for(cfg), [(0, rec)])
        print(f"[agkit] eval: macro DSC {rec.macro('dsc'):.4f}, macro recall {rec.macro('recall'):.4f}")
    else:
        rec = _eval_cls_parallel(net, test, threads)
        write_cls_csv(os.path.join(cfg.out_dir, "eval_metrics.csv"), rec)
        print(
            f"[agkit] eval: accuracy {rec.accuracy:.4f}, macro precision {rec.macro('precision'):.4f}"
        )
    return 0


def cmd_gradcheck(args) -> int:
    checks = run_scope(args.scope, seed=args.seed or 0)
    failed = False
    for name, result, tol in checks:
        status = "ok" if result.max_rel_err < tol and not result.failures else "FAIL"
        if status == "FAIL":
            failed = True
        print(
            f"[agkit] gradcheck {name}: max rel err {result.max_rel_err:.3e} "
            f"(tol {tol:.0e}, checked {result.n_checked}, excluded {len(result.excluded)}) {status}"
        )
        for pname, idx, a, num, rel in result.failures[:8]:
            print(f"    coordinate {pname}[{idx}]: analytic {a:.6e}, numeric {num:.6e}, rel {rel:.3e}")
    return 1 if failed else 0


def cmd_localize(args) -> int:
    cfg = _load_cfg(args)
    if cfg.task != "cls":
        raise ConfigError("localize requires a classification config (task = cls)")
    _, _, test = make_datasets(cfg)
    net = _restore_from_config(cfg, _checkpoint_path(args, cfg))
    os.makedirs(cfg.out_dir, exist_ok=True)
    overlay_dir = os.path.join(cfg.out_dir, "overlays")
    os.makedirs(overlay_dir, exist_ok=True)
    tau = args.tau if args.tau is not None else cfg.tau
    blur = args.blur if args.blur is not None else cfg.blur

    rows = ["image_id,class,x0,y0,x1,y1,iou,fallback"]
    boxes, gts, labels = [], [], []
    for i, s in enumerate(test):
        if s.label == 0 or s.box is None:
            continue
        maps = [m for _, alpha in _collect_attention(net, s, "cls") for m in alpha]
        result = localize(maps, (cfg.height, cfg.width), tau=tau, sigma_blur=blur)
        gt = BoundingBox(*s.box)
        iou = result.box.iou(gt)
        boxes.append(result.box)
        gts.append(gt)
        labels.append(s.label)
        x0, y0, x1, y1 = result.box.astuple()
        rows.append(f"{i},{s.label},{x0},{y0},{x1},{y1},{iou:.6f},{int(result.fallback)}")
        rgb = gray_to_rgb(to_uint8(s.image[0, 0], 0.0, 1.0))
        rgb = burn_box(rgb, s.box, color=(0, 0, 255))
        rgb = burn_box(rgb, result.box.astuple(), color=(255, 0, 0))
        write_ppm(os.path.join(overlay_dir, f"{i:05d}.ppm"), rgb)
    with open(os.path.join(cfg.out_dir, "boxes.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    if not boxes:
        raise ConfigError("localize: no foreground samples in the test split")
    score = wsl_score(boxes, gts, labels)
    lines = ["class,mean_iou,correctness,relative_correctness"]
    for lab in sorted(score.per_class):
        s = score.per_class[lab]
        lines.append(
            f"{lab},{s['mean_iou']:.6f},{s['correctness']:.6f},{s['relative_correctness']:.6f}"
        )
    lines.append(f"all,{score.mean_iou:.6f},,")
    with open(os.path.join(cfg.out_dir, "wsl_summary.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"[agkit] localize: {len(boxes)} boxes, mean IoU {score.mean_iou:.4f}")
    return 0


def cmd_export_attention(args) -> int:
    cfg = _load_cfg(args)
    _, _, test = make_datasets(cfg)
    net = _restore_from_config(cfg, _checkpoint_path(args, cfg))
    os.makedirs(cfg.out_dir, exist_ok=True)
    maps_dir = os.path.join(cfg.out_dir, "attention_maps")
    sidecar = ["file,min,max"]
    count = min(cfg.export_count, len(test))
    if count == 0:
        raise ConfigError("export-attention: empty test split")
    for i in range(count):
        _export_attention_pgms(net, test[i], cfg.task, maps_dir, f"sample{i:03d}", sidecar)
    with open(os.path.join(cfg.out_dir, "attention_minmax.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(sidecar) + "\n")
    print(f"[agkit] export-attention: {count} samples -> {maps_dir}")
    return 0


def _checkpoint_path(args, cfg: RunConfig) -> str:
    if args.checkpoint:
        return args.checkpoint
    return os.path.join(cfg.out_dir, "checkpoint.agk")


def _load_cfg(args) -> RunConfig:
    if not args.config:
        raise ConfigError(f"{args.command}: --config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="agkit",
        description="Attention-gated segmentation/classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "gradcheck", "localize", "export-attention"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a key = value run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--tau", type=float, default=None, help="localization threshold quantile")
        p.add_argument("--blur", type=float, default=None, help="localization blur sigma (px)")
        p.add_argument("--checkpoint", default=None, help="checkpoint path (default: <out>/checkpoint.agk)")
        if name == "gradcheck":
            p.add_argument(
                "--scope", default="all", choices=("ops", "gate", "unet", "classifier", "all")
            )
    args = parser.parse_args(argv)
    commands = {
        "train": cmd_train,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
        "localize": cmd_localize,
        "export-attention": cmd_export_attention,
    }
    try:
        return commands[args.command](args)
    except ConfigError as e:
        print(f"[agkit] config error: {e}", file=sys.stderr)
        return 2
    except NumericAbort as e:
        print(f"[agkit] numeric abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
