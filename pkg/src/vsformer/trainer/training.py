"""Training loop, evaluation and ablation runs."""

from __future__ import annotations

import logging

import numpy as np

from vsformer.dataset import MtsDataset
from vsformer.model import MODES, ModelSpec, VSFormer
from vsformer.numerics import Adam, backward, cross_entropy
from vsformer.pipeline import Encoded, Tokenizer
from vsformer.trainer.checkpoint import ModelCheckpoint
from vsformer.trainer.config import TrainConfig
from vsformer.trainer.metrics import EpochRecord, MetricsReport, accuracy, macro_auc

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


def model_spec(config: TrainConfig, tok: Tokenizer) -> ModelSpec:
    return ModelSpec(
        n_classes=len(tok.class_names),
        n_shape_tokens=tok.n_shape_tokens,
        shape_token_width=tok.m,
        n_value_tokens=tok.n_value_tokens,
        tsi_width=tok.tsi_width,
        d_model=config.d_model,
        d_ff=config.d_ff,
        value_d_model=config.value_d_model,
        value_d_ff=config.value_d_ff,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        mode=config.mode,
        dropout=config.dropout,
    )


def predict(model: VSFormer, enc: Encoded, batch_size: int = 8):
    """Evaluation-mode forward over ``enc``.

    Returns probabilities (N, C), lambda (N,) and the received-attention map of
    each branch (N, n_tokens).
    """
    model.eval()
    probs, lams = [], []
    maps: dict[str, list[np.ndarray]] = {}
    for i0 in range(0, len(enc), batch_size):
        idx = np.arange(i0, min(i0 + batch_size, len(enc)))
        out = model(enc.shape.take(idx), enc.value.take(idx))
        probs.append(out.probs.data)
        lams.append(out.lam)
        for name, att in out.attention.items():
            maps.setdefault(name, []).append(att)
    return (
        np.concatenate(probs),
        np.concatenate(lams),
        {k: np.concatenate(v) for k, v in maps.items()},
    )


def _nll(probs: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(probs[np.arange(y.size), y], 1e-12))))


def train(
    config: TrainConfig,
    train_set: MtsDataset,
    val_set: MtsDataset,
    test_set: MtsDataset | None = None,
) -> tuple[ModelCheckpoint, MetricsReport]:
    """Fit tokenizer and model; keep the snapshot with the best validation accuracy.

    Every prior is fitted on ``train_set`` alone. Training stops early after
    ``config.patience`` epochs without a validation-accuracy improvement.
    """
    if train_set.N == 0 or val_set.N == 0:
        raise ValueError("train and validation sets must be non-empty")
    tok = Tokenizer.fit(train_set, config)
    enc_train = tok.encode(train_set)
    enc_val = tok.encode(val_set)
    spec = model_spec(config, tok)
    model = VSFormer(spec, seed=config.seed)
    opt = Adam(model.named_parameters(), lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2]) if config.dropout > 0 else None

    report = MetricsReport()
    best_acc, best_state, stale = -1.0, None, 0
    N = len(enc_train)
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = shuffle_rng.permutation(N)
        loss_sum, correct = 0.0, 0
        try:
            for i0 in range(0, N, config.batch_size):
                idx = order[i0 : i0 + config.batch_size]
                out = model(enc_train.shape.take(idx), enc_train.value.take(idx), dropout_rng)
                loss = cross_entropy(out.probs, enc_train.y[idx])
                opt.zero_grad()
                backward(loss)
                opt.step()
                loss_sum += loss.item() * idx.size
                correct += int(np.sum(np.argmax(out.probs.data, axis=1) == enc_train.y[idx]))
            val_probs, _, _ = predict(model, enc_val, config.batch_size)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"training diverged at epoch {epoch}: {exc}") from exc
        rec = EpochRecord(epoch, loss_sum / N, correct / N, _nll(val_probs, enc_val.y), accuracy(val_probs, enc_val.y))
        report.history.append(rec)
        log.info("epoch %d train_loss %.4f val_acc %.4f", epoch, rec.train_loss, rec.val_accuracy)
        if rec.val_accuracy > best_acc:
            best_acc, best_state, stale = rec.val_accuracy, model.state_dict(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break

    checkpoint = ModelCheckpoint(config, tok, spec, best_state)
    if test_set is not None:
        test_report = evaluate(checkpoint, test_set)
        test_report.history, test_report.best_epoch = report.history, report.best_epoch
        report = test_report
    return checkpoint, report


def evaluate(checkpoint: ModelCheckpoint, dataset: MtsDataset) -> MetricsReport:
    if tuple(dataset.class_names) != tuple(checkpoint.class_names):
        raise ValueError(
            f"class vocabulary {dataset.class_names} does not match checkpoint {checkpoint.class_names}"
        )
    enc = checkpoint.tokenizer.encode(dataset)
    probs, lam, _ = predict(checkpoint.build_model(), enc, checkpoint.config.batch_size)
    return MetricsReport(
        accuracy=accuracy(probs, enc.y),
        auc=macro_auc(probs, enc.y),
        loss=_nll(probs, enc.y),
        lambdas=[float(x) for x in lam],
        predictions=[int(p) for p in np.argmax(probs, axis=1)],
    )


def ablate(
    config: TrainConfig,
    train_set: MtsDataset,
    val_set: MtsDataset,
    test_set: MtsDataset,
    modes=MODES,
) -> dict[str, MetricsReport]:
    """Train and test one model per mode with otherwise identical settings."""
    return {mode: train(config.replace(mode=mode), train_set, val_set, test_set)[1] for mode in modes}
