"""End-to-end training of mending + GNN + readout.

One sample is one supergraph; optimisation is per-sample Adam steps over
a shuffled epoch. Model selection is early stopping on validation
accuracy with a fixed patience; the checkpoint returned is the one with
the best validation accuracy, earliest epoch winning ties.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import dirichlet, sparsity
from .errors import ContractError, NumericError
from .gnn import GATNetwork, GCNNetwork, ReadoutParams, build_gat_network, build_gcn_network, init_readout, readout
from .mending import (EncoderParams, MendedAdjacency, encode, fixed_temporal,
                      identity_mending, init_encoder_params, mask_to_temporal,
                      random_mending)
from .optim import Adam
from .supergraph import SuperGraph
from .tensor import Tensor, backward, clip_min, l1_norm, l2_norm, log, mul, scale, transpose, tsum
from .errors import ConfigError


@dataclass
class LossConfig:
    """Cross-entropy plus an optional sparsity-promoting penalty."""

    class_count: int
    penalty: float = 1e-6
    norm: str = "l1"            # l1 | l2 | none
    penalty_target: str = "skew"  # skew: ||(S - S^T)/2||_p on the raw encoder
                                  # output; full: ||S||_1 on the final matrix

    def __post_init__(self):
        if self.penalty < 0:
            raise ContractError(f"penalty must be >= 0, got {self.penalty}")
        if self.norm not in ("l1", "l2", "none"):
            raise ContractError(f"norm must be l1, l2 or none, got {self.norm!r}")
        if self.penalty_target not in ("skew", "full"):
            raise ContractError(f"penalty_target must be skew or full, got {self.penalty_target!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ContractError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.patience < 0 or self.max_epochs < 1:
            raise ContractError("patience must be >= 0 and max_epochs >= 1")


def loss(y_true: np.ndarray, y_pred: Tensor, penalty_matrix: Tensor | None, cfg: LossConfig) -> Tensor:
    """-sum(y_true * log(y_pred)) + penalty * norm of the penalty target.

    Probabilities are floored at 1e-12 before the log. For a symmetric
    penalty matrix the skew-part penalty is exactly zero."""
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_true.shape != (cfg.class_count,):
        raise ContractError(f"y_true must have shape ({cfg.class_count},), got {y_true.shape}")
    if not np.isclose(y_true.sum(), 1.0, atol=1e-9) or np.any(y_true < 0):
        raise ContractError("y_true must be a normalized label distribution")
    if y_pred.data.shape != (cfg.class_count,):
        raise ContractError(f"y_pred must have shape ({cfg.class_count},), got {y_pred.data.shape}")
    ce = scale(tsum(mul(Tensor(y_true), log(clip_min(y_pred, 1e-12)))), -1.0)
    if cfg.norm == "none" or cfg.penalty == 0.0 or penalty_matrix is None:
        return ce
    if cfg.penalty_target == "skew":
        target = scale(penalty_matrix - transpose(penalty_matrix), 0.5)
        penalty = l1_norm(target) if cfg.norm == "l1" else l2_norm(target)
    else:
        penalty = l1_norm(penalty_matrix) if cfg.norm == "l1" else l2_norm(penalty_matrix)
    return ce + scale(penalty, cfg.penalty)


@dataclass
class Sample:
    sample_id: str
    supergraph: SuperGraph
    label: int
    baseline_mended: MendedAdjacency | None = None  # cached for non-learnable strategies


@dataclass
class MendingConfig:
    strategy: str = "encoder"   # encoder | fixed | random-weighted | random-binary | none
    temporal_only: bool = False
    fixed_neighbors: int = 1
    random_edges_per_node: int = 1
    seed: int = 0

    def __post_init__(self):
        valid = ("encoder", "fixed", "random-weighted", "random-binary", "none")
        if self.strategy not in valid:
            raise ContractError(f"unknown mending strategy {self.strategy!r}")


def prepare_samples(ids: list[str], supergraphs: list[SuperGraph], labels: list[int],
                    mending: MendingConfig) -> list[Sample]:
    """Attach precomputed mendings for the non-learnable strategies."""
    samples = []
    for idx, (sid, sg, lab) in enumerate(zip(ids, supergraphs, labels)):
        cached = None
        if mending.strategy == "none":
            cached = identity_mending(sg)
        elif mending.strategy == "fixed":
            cached = fixed_temporal(sg, k=mending.fixed_neighbors)
        elif mending.strategy in ("random-weighted", "random-binary"):
            mode = mending.strategy.split("-")[1]
            cached = random_mending(sg, mode, edges_per_node=mending.random_edges_per_node,
                                    seed=mending.seed * 100003 + idx)
        samples.append(Sample(sample_id=sid, supergraph=sg, label=lab, baseline_mended=cached))
    return samples


class SupergraphClassifier:
    """Mending + GNN + readout over fixed-size supergraphs."""

    def __init__(self, mending: MendingConfig, encoder: EncoderParams | None,
                 gnn, head: ReadoutParams):
        if mending.strategy == "encoder" and encoder is None:
            raise ContractError("encoder strategy requires encoder parameters")
        self.mending = mending
        self.encoder = encoder
        self.gnn = gnn
        self.head = head

    def mend(self, sample: Sample) -> MendedAdjacency:
        if self.mending.strategy == "encoder":
            mended = encode(sample.supergraph, self.encoder)
            if self.mending.temporal_only:
                mended = mask_to_temporal(mended, sample.supergraph)
            return mended
        if sample.baseline_mended is None:
            raise ContractError(f"sample {sample.sample_id} lacks a precomputed {self.mending.strategy} mending")
        return sample.baseline_mended

    def forward(self, sample: Sample) -> tuple[Tensor, MendedAdjacency]:
        mended = self.mend(sample)
        z = self.gnn.forward(Tensor(sample.supergraph.features), mended.final)
        return readout(z, self.head), mended

    def predict(self, sample: Sample) -> int:
        probs, _ = self.forward(sample)
        return int(np.argmax(probs.data))

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.encoder is not None:
            out.update(self.encoder.named_parameters())
        out.update(self.gnn.named_parameters())
        out.update(self.head.named_parameters())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                raise ContractError(f"missing parameter tensor {name!r}")
            if state[name].shape != p.data.shape:
                raise ContractError(
                    f"tensor {name!r} has shape {state[name].shape}, expected {p.data.shape}")
            p.data = state[name].copy()


def build_classifier(total_nodes: int, feature_dim: int, class_count: int,
                     mending: MendingConfig, gnn_kind: str = "gat",
                     gnn_hidden: int = 8, gnn_heads: int = 2, gnn_out: int = 8,
                     encoder_heads: int = 1, encoder_layers: int = 1,
                     encoder_ffn_multiplier: int = 2, leaky_slope: float = 0.2,
                     weighted_logits: bool = False, seed: int = 0) -> SupergraphClassifier:
    rng = np.random.default_rng(seed)
    encoder = None
    if mending.strategy == "encoder":
        encoder = init_encoder_params(feature_dim, total_nodes, heads=encoder_heads,
                                      layers=encoder_layers,
                                      ffn_multiplier=encoder_ffn_multiplier, rng=rng)
    if gnn_kind == "gat":
        gnn = build_gat_network(feature_dim, gnn_hidden, gnn_out, gnn_heads, rng,
                                leaky_slope=leaky_slope, weighted_logits=weighted_logits)
    elif gnn_kind == "gcn":
        gnn = build_gcn_network(feature_dim, gnn_hidden, gnn_out, rng)
    else:
        raise ConfigError(f"unknown gnn kind {gnn_kind!r}")
    head = init_readout(total_nodes, gnn.out_dim, class_count, rng)
    return SupergraphClassifier(mending, encoder, gnn, head)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    rho: float
    delta_rho: float
    delta_dirichlet: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_accuracy: float
    best_state: dict[str, np.ndarray]
    stopped_early: bool


def train(train_samples: list[Sample], val_samples: list[Sample],
          model: SupergraphClassifier, tcfg: TrainConfig, lcfg: LossConfig) -> TrainResult:
    """Optimise, early-stop on validation accuracy, restore the best state."""
    if not train_samples or not val_samples:
        raise ContractError("train: empty train or validation split")
    params = model.named_parameters()
    optimizer = Adam(list(params.values()), learning_rate=tcfg.learning_rate)
    shuffle_rng = np.random.default_rng(tcfg.seed)

    history: list[EpochRecord] = []
    best_acc = -1.0
    best_epoch = -1
    best_state = model.state_arrays()
    since_best = 0
    stopped_early = False

    for epoch in range(1, tcfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        total_loss = 0.0
        for idx in order:
            sample = train_samples[idx]
            probs, mended = model.forward(sample)
            y_true = np.zeros(lcfg.class_count)
            y_true[sample.label] = 1.0
            penalty_matrix = mended.encoder_output if (
                lcfg.penalty_target == "skew" and mended.encoder_output is not None) else mended.final
            sample_loss = loss(y_true, probs, penalty_matrix, lcfg)
            value = sample_loss.item()
            if not np.isfinite(value):
                raise NumericError(f"training diverged: non-finite loss at epoch {epoch}")
            total_loss += value
            optimizer.zero_grad()
            backward(sample_loss)
            optimizer.step()
        val_acc, rho_mean, drho_mean, dh_mean = _validation_metrics(model, val_samples)
        history.append(EpochRecord(epoch=epoch, train_loss=total_loss / len(train_samples),
                                   val_accuracy=val_acc, rho=rho_mean,
                                   delta_rho=drho_mean, delta_dirichlet=dh_mean))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_state = model.state_arrays()
            since_best = 0
        else:
            since_best += 1
            if since_best > tcfg.patience:
                stopped_early = True
                break
    model.load_state_arrays(best_state)
    return TrainResult(history=history, best_epoch=best_epoch, best_val_accuracy=best_acc,
                       best_state=best_state, stopped_early=stopped_early)


def _validation_metrics(model: SupergraphClassifier, samples: list[Sample]):
    correct = 0
    rhos, drhos, dhs = [], [], []
    for sample in samples:
        probs, mended = model.forward(sample)
        if int(np.argmax(probs.data)) == sample.label:
            correct += 1
        original = sample.supergraph.block_adjacency
        rhos.append(sparsity(mended.adjacency))
        drhos.append(sparsity(original) - sparsity(mended.adjacency))
        dhs.append(dirichlet(sample.supergraph.features, mended.adjacency)
                   - dirichlet(sample.supergraph.features, original))
    return correct / len(samples), float(np.mean(rhos)), float(np.mean(drhos)), float(np.mean(dhs))


HISTORY_COLUMNS = ("epoch", "train_loss", "val_acc", "rho", "delta_rho", "delta_dirichlet")


def write_history_csv(path, history: list[EpochRecord]) -> None:
    from .diagnostics import format_float
    lines = [",".join(HISTORY_COLUMNS)]
    for rec in history:
        lines.append(",".join([
            str(rec.epoch), format_float(rec.train_loss), format_float(rec.val_accuracy),
            format_float(rec.rho), format_float(rec.delta_rho), format_float(rec.delta_dirichlet),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class Metrics:
    accuracy: float
    per_class_f1: list[float]
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray  # confusion[true][pred]


def evaluate(model: SupergraphClassifier, samples: list[Sample], class_count: int) -> Metrics:
    """Accuracy, per-class F1, macro and support-weighted F1, confusion matrix.

    A class with no true and no predicted samples has F1 defined as 0;
    its weight in the support-weighted average is naturally 0."""
    if not samples:
        raise ContractError("evaluate: empty split")
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    for sample in samples:
        if not 0 <= sample.label < class_count:
            raise ContractError(f"label {sample.label} out of range for {class_count} classes")
        confusion[sample.label, model.predict(sample)] += 1
    return metrics_from_confusion(confusion)


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total
    per_class = []
    supports = confusion.sum(axis=1)
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = supports[c] - tp
        denom = 2 * tp + fp + fn
        per_class.append(float(2 * tp / denom) if denom > 0 else 0.0)
    macro = float(np.mean(per_class))
    weighted = float(np.dot(per_class, supports) / supports.sum())
    return Metrics(accuracy=accuracy, per_class_f1=per_class, macro_f1=macro,
                   weighted_f1=weighted, confusion=confusion)
