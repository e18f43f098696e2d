"""Command-line entry point: ``vsformer {train,eval,tokenize,synth,explain}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from vsformer.dataset import gen_synthetic, parse_ts, split_train_val, write_ts
from vsformer.model import MODES
from vsformer.pipeline import Tokenizer
from vsformer.trainer.checkpoint import load_checkpoint, save_checkpoint
from vsformer.trainer.config import TrainConfig
from vsformer.trainer.explain import explain
from vsformer.trainer.training import evaluate, train
from vsformer.value_tokenizer import STATISTICS


def _emit(payload: dict, text: str, as_json: bool) -> None:
    print(json.dumps(payload, indent=2) if as_json else text)


def cmd_train(args) -> None:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if overrides:
        config = config.replace(**overrides)
    data = parse_ts(args.data)
    test = parse_ts(args.test) if args.test else None
    tr, val = split_train_val(data, config.val_fraction, config.seed)
    checkpoint, report = train(config, tr, val, test)
    save_checkpoint(checkpoint, args.out)
    _emit(report.to_dict(), report.to_text() + f"\ncheckpoint written to {args.out}", args.json)


def cmd_eval(args) -> None:
    report = evaluate(load_checkpoint(args.ckpt), parse_ts(args.data))
    _emit(report.to_dict(), report.to_text(), args.json)


def cmd_tokenize(args) -> None:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    data = parse_ts(args.data)
    tok = Tokenizer.fit(data, config)
    enc = tok.encode(data)
    st, vt = enc.shape_tokens, enc.value_tokens
    dump = {
        "config": config.to_dict(),
        "motif_length": tok.m,
        "prototypes": [
            {"id": j, "variable": p.variable, "class": data.class_names[p.klass], "rank": p.rank,
             "values": p.values.tolist(), "weight": w.weight, "D1": w.d_intra, "D2": w.d_inter, "ratio": w.ratio}
            for j, (p, w) in enumerate(zip(tok.prototypes, tok.prototype_weights))
        ],
        "value_priors": [
            {"position": j, "variable": int(vt.variable[j]), "granularity": int(vt.granularity[j]),
             "interval": int(vt.interval[j]), "kind": STATISTICS[vt.kind[j]],
             "importance": float(tok.feature_importance.importance[j]),
             "bin_edges": tok.feature_importance.edges[j].tolist()}
            for j in range(vt.n_tokens)
        ],
        "instances": [
            {
                "label": data.class_names[int(data.y[i])],
                "shape_tokens": [
                    {"prototype": j, "t_start": int(st.start[i, j]), "t_end": int(st.end[i, j]),
                     "distance": float(st.distance[i, j]), "prior": float(enc.shape.prior[i, j]),
                     "values": st.values[i, j].tolist()}
                    for j in range(st.n_tokens)
                ],
                "value_tokens": vt.values[i].tolist(),
            }
            for i in range(data.N)
        ],
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(dump, fh)
    print(f"{data.N} instances: {st.n_tokens} shape tokens and {vt.n_tokens} value tokens each; dump written to {args.out}")


def cmd_synth(args) -> None:
    d = gen_synthetic(args.kind, args.per_class, args.vars, args.len, args.classes, args.seed)
    write_ts(d, args.out)
    print(f"wrote {d.N} instances (V={d.V}, T={d.T}, C={d.C}) to {args.out}")


def cmd_explain(args) -> None:
    rep = explain(load_checkpoint(args.ckpt), parse_ts(args.data), args.instance, args.top)
    if args.json:
        print(json.dumps(rep, indent=2))
        return
    print(f"instance {rep['instance']}: label {rep['label']}, predicted {rep['predicted']}, lambda {rep['lambda']:.4f}")
    for branch, rows in rep["branches"].items():
        print(f"[{branch} tokens]")
        for rank, r in enumerate(rows, 1):
            extra = f"{r['kind']}={r['value']:.5g}" if branch == "value" else f"d={r['distance']:.4f}"
            print(f"  {rank:3d}. token {r['token']:4d}  att {r['attention']:.5f}  var {r['variable']}  "
                  f"[{r['t_start']}, {r['t_end']})  prior {r['prior']:.4f}  {extra}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsformer", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on a .ts training file")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a .ts file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tokenize", help="dump token sets and priors as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("synth", help="write a synthetic .ts corpus")
    p.add_argument("--kind", choices=("shape", "value", "mixed"), required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--vars", type=int, default=2)
    p.add_argument("--len", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("explain", help="rank one instance's tokens by attention")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--top", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.seterr(all="ignore")
    try:
        args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
