"""Command-line entry points for training, evaluation, harnesses, and the
intervention service.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import (Dataset, SynthSpec, load_concept_bank, load_dataset,
                   save_concept_bank, save_dataset, stratified_kfold,
                   synth_generate)
from .errors import (CcbmError, CheckpointError, ConfigError, DataFormatError,
                     DivergenceError, UsageError)
from .experiments import (crossval_evaluate, run_ablation_similarity,
                          run_intervention, run_label_efficiency,
                          run_unknown_sweep)
from .losses import LossWeights
from .metrics import evaluate
from .model import (ModelConfig, explain, load_checkpoint, predict_batch,
                    save_checkpoint)
from .service import ModelBundle, create_app, export_decision_layer
from .trainer import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _out_dir(args) -> str:
    out = args.out or os.environ.get("CCBM_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def build_parser() -> _Parser:
    p = _Parser(prog="ccbm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, bank=False, ckpt=False):
        sp.add_argument("--out", default=None, help="output directory "
                        "(default: $CCBM_OUT_DIR or cwd)")
        sp.add_argument("--seed", type=int, default=0)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if bank:
            sp.add_argument("--bank", required=True, help="concept bank CSV")
        if ckpt:
            sp.add_argument("--checkpoint", required=True)

    def train_flags(sp):
        sp.add_argument("--lambda1", type=float, default=0.2)
        sp.add_argument("--lambda2", type=float, default=10.0)
        sp.add_argument("--nu", type=int, default=0, help="unknown concept count")
        sp.add_argument("--dk", type=int, default=None,
                        help="concept subspace dim (default: bank width)")
        sp.add_argument("--heads", type=int, default=1)
        sp.add_argument("--epochs", type=int, default=300)
        sp.add_argument("--batch", type=int, default=32)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--folds", type=int, default=5)

    sp = sub.add_parser("synth", help="generate a synthetic dataset + bank")
    common(sp, data=False)
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--d", type=int, default=16)
    sp.add_argument("--nk", type=int, default=6)
    sp.add_argument("--nc", type=int, default=2)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--dk", type=int, default=16)
    sp.add_argument("--hidden", action="store_true")
    sp.add_argument("--hidden-strength", type=float, default=0.25)

    for name in ("train", "crossval", "label-eff", "sweep-nu", "ablate-sim"):
        sp = sub.add_parser(name)
        common(sp, bank=True)
        train_flags(sp)
        if name == "label-eff":
            sp.add_argument("--proportions", type=_float_list,
                            default=[1.0, 0.7, 0.5, 0.3, 0.1])
        if name == "sweep-nu":
            sp.add_argument("--values", type=_int_list, default=[0, 1, 2, 3, 5])

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(sp, ckpt=True)

    sp = sub.add_parser("intervene", help="threshold-intervention sweep")
    common(sp, ckpt=True)
    sp.add_argument("--thresholds", type=_float_list, default=None)
    sp.add_argument("--include-unknown", action="store_true")

    sp = sub.add_parser("explain", help="explanation report for one sample")
    common(sp, ckpt=True)
    sp.add_argument("--id", required=True, dest="sample_id")

    sp = sub.add_parser("export", help="export the decision layer as JSON")
    common(sp, data=False, ckpt=True)
    sp.add_argument("--out-file", default="decision_layer.json")

    sp = sub.add_parser("serve", help="run the intervention HTTP service")
    common(sp, ckpt=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8100)

    return p


def _train_config(args, meta, bank) -> TrainConfig:
    d_k = args.dk or bank.embeddings.shape[1]
    model = ModelConfig(
        d=meta.d, d_k=d_k, n_k=meta.n_k, n_c=meta.n_c, n_u=args.nu,
        heads=args.heads, concept_task=meta.task,
    )
    return TrainConfig(
        model=model, weights=LossWeights(args.lambda1, args.lambda2),
        max_epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        seed=args.seed,
    )


def _cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = SynthSpec(n=args.n, d=args.d, n_k=args.nk, n_c=args.nc,
                     noise=args.noise, hidden_factor=args.hidden,
                     hidden_strength=args.hidden_strength if args.hidden else 0.0,
                     seed=args.seed, d_k=args.dk)
    dataset, bank = synth_generate(spec)
    save_dataset(dataset, out)
    save_concept_bank(bank, os.path.join(out, "bank.csv"))
    print(f"wrote dataset ({len(dataset)} samples) and bank to {out}")
    return 0


def _cmd_train(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    bank = load_concept_bank(args.bank, dataset.meta.concept_names)
    config = _train_config(args, dataset.meta, bank)
    params, history = train(dataset, bank, config)
    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(ckpt, params, config.model, bank, dataset.meta.class_names,
                    metadata={"seed": args.seed,
                              "stopped_epoch": history.stopped_epoch,
                              "lambda1": args.lambda1, "lambda2": args.lambda2})
    history.to_csv(os.path.join(out, "history.csv"))
    from .plots import plot_history
    plot_history([bd.total for bd in history.epochs],
                 os.path.join(out, "history.png"), history.val_auc)
    print(f"trained {history.stopped_epoch} epochs; checkpoint at {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    params, config, bank, _, _ = load_checkpoint(args.checkpoint)
    s, _, _, probs = predict_batch(dataset.features, params, bank, config)
    report = evaluate(probs, dataset.labels, s, dataset.concepts,
                      config.concept_task, config.n_c)
    path = os.path.join(out, "metrics.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    print(json.dumps(report.flat(), indent=2))
    print(f"wrote {path}")
    return 0


def _harness_cmd(args, runner) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    bank = load_concept_bank(args.bank, dataset.meta.concept_names)
    config = _train_config(args, dataset.meta, bank)
    report = runner(dataset, bank, config, args)
    report.write(out)
    print(f"wrote {report.experiment_id} report to {out}")
    return 0


def _cmd_intervene(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    params, config, bank, _, _ = load_checkpoint(args.checkpoint)
    report = run_intervention(params, bank, config, dataset,
                              thresholds=args.thresholds,
                              include_unknown=args.include_unknown)
    report.write(out)
    print(f"wrote intervention report to {out}")
    return 0


def _cmd_explain(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.data)
    params, config, bank, class_names, _ = load_checkpoint(args.checkpoint)
    if args.sample_id not in dataset.ids:
        raise DataFormatError(f"unknown sample id {args.sample_id!r}")
    i = dataset.ids.index(args.sample_id)
    report = explain(dataset.features[i], params, bank, config, class_names,
                     bank.names, sample_id=args.sample_id,
                     true_label=int(dataset.labels[i]))
    path = os.path.join(out, f"explain_{args.sample_id}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_export(args) -> int:
    out = _out_dir(args)
    path = os.path.join(out, args.out_file)
    export_decision_layer(args.checkpoint, path)
    print(f"wrote {path}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    dataset = load_dataset(args.data)
    bundle = ModelBundle.from_checkpoint(args.checkpoint, dataset)
    app = create_app(bundle)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "crossval":
            return _harness_cmd(
                args, lambda d, b, c, a: crossval_evaluate(d, b, c, k=a.folds))
        if args.command == "label-eff":
            return _harness_cmd(
                args, lambda d, b, c, a: run_label_efficiency(
                    d, b, c, proportions=a.proportions, k=a.folds))
        if args.command == "sweep-nu":
            return _harness_cmd(
                args, lambda d, b, c, a: run_unknown_sweep(
                    d, b, c, n_u_values=a.values, k=a.folds))
        if args.command == "ablate-sim":
            return _harness_cmd(
                args, lambda d, b, c, a: run_ablation_similarity(
                    d, b, c, k=a.folds))
        if args.command == "intervene":
            return _cmd_intervene(args)
        if args.command == "explain":
            return _cmd_explain(args)
        if args.command == "export":
            return _cmd_export(args)
        if args.command == "serve":
            return _cmd_serve(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 3
    except (DataFormatError, CheckpointError, ConfigError, CcbmError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
