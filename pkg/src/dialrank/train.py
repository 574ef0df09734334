"""Two-phase training loop, Adam optimizer, checkpointing, evaluation.

Phase one trains the stage-one scorer alone; phase two adds the
synergistic re-ranker and optimizes the summed loss, sampling its
candidate subset from the live stage-one ranking. One turn is one
optimizer step (gradient accumulation is available through the config).
Everything downstream of (seed, config, dataset) is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import DialogRecord, vocab_corpus
from .encoders import Vocabulary
from .generative import answer_log_prob
from .metrics import MetricsReport, loss_share_diagnostic, ndcg, rank_metrics, ranking_from_scores
from .model import Model
from .ranking import (
    StageScores,
    fuse_rankings,
    npair_temperature_loss,
    select_candidates,
    synergy_cross_entropy,
)
from .tensor import Tensor, no_grad


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; training state is unusable."""


@dataclass
class IndexedTurn:
    question: list[int]
    candidates: list[list[int]]
    gt_index: int
    relevance: np.ndarray


@dataclass
class IndexedDialog:
    dialog_id: int
    features: np.ndarray
    caption: list[int]
    turns: list[IndexedTurn]

    def history_items(self, t: int) -> list[list[int]]:
        """Caption plus (question, true answer) pairs of the turns before t."""
        items = [self.caption]
        for i in range(t):
            turn = self.turns[i]
            items.append(turn.question + turn.candidates[turn.gt_index])
        return items


def index_dataset(records: list[DialogRecord], vocab: Vocabulary) -> list[IndexedDialog]:
    indexed = []
    for rec in records:
        turns = [
            IndexedTurn(
                question=vocab.encode(t.question),
                candidates=[vocab.encode(c) for c in t.candidates],
                gt_index=t.gt_index,
                relevance=np.asarray(t.relevance, dtype=np.float64),
            )
            for t in rec.turns
        ]
        indexed.append(
            IndexedDialog(
                dialog_id=rec.dialog_id,
                features=np.asarray(rec.object_features, dtype=np.float64),
                caption=vocab.encode(rec.caption),
                turns=turns,
            )
        )
    return indexed


class Adam:
    """Bias-corrected Adam. Parameters without a gradient are skipped, so
    stage-two weights stay untouched through phase one."""

    def __init__(self, params: dict[str, Tensor], beta1: float, beta2: float, eps: float):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.steps = {name: 0 for name in params}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.steps[name] += 1
            t = self.steps[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def learning_rate(config: RunConfig, epoch: int) -> float:
    """Exponential decay by decay_rate once per decay_interval epochs."""
    return config.lr * config.decay_rate ** (epoch // config.decay_interval)


@dataclass
class Checkpoint:
    config: RunConfig
    vocab: Vocabulary
    arrays: dict[str, np.ndarray]
    epoch: int
    rng_state: dict

    def save(self, path) -> None:
        meta = json.dumps(
            {
                "config": self.config.to_dict(),
                "vocab": json.loads(self.vocab.to_json()),
                "epoch": self.epoch,
                "rng_state": self.rng_state,
            }
        )
        np.savez(path, __meta__=np.array(meta), **{f"param/{k}": v for k, v in self.arrays.items()})

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as archive:
            meta = json.loads(str(archive["__meta__"][()]))
            arrays = {
                name[len("param/") :]: archive[name]
                for name in archive.files
                if name.startswith("param/")
            }
        return cls(
            config=RunConfig.from_dict(meta["config"]),
            vocab=Vocabulary.from_json(json.dumps(meta["vocab"])),
            arrays=arrays,
            epoch=meta["epoch"],
            rng_state=meta["rng_state"],
        )

    def build_model(self) -> Model:
        model = Model(self.config, self.vocab)
        model.load_param_arrays(self.arrays)
        return model


def _checkpoint_of(model: Model, epoch: int, rng) -> Checkpoint:
    return Checkpoint(
        config=model.config,
        vocab=model.vocab,
        arrays=model.param_arrays(),
        epoch=epoch,
        rng_state=rng.bit_generator.state,
    )


def _turn_losses(model: Model, dialog: IndexedDialog, t: int, phase: int, rng):
    """Loss tensors for one turn: (primary loss, synergy loss or None)."""
    cfg = model.config
    turn = dialog.turns[t]
    V = Tensor(dialog.features.T)
    ctx = model.encode_context(turn.question, dialog.history_items(t), V)

    if model.kind == "discriminative":
        scores = model.primary_scores(ctx, turn.candidates)
        primary_loss = npair_temperature_loss(scores, turn.gt_index, cfg.tau)
        scores_np = scores.data
    else:
        primary_loss = -answer_log_prob(
            turn.candidates[turn.gt_index], ctx.m_q, ctx.e_p, model.decoder
        )
        scores_np = None

    if phase == 1:
        return primary_loss, None

    if scores_np is None:
        scores_np = model.primary_scores_np(ctx, turn.candidates)
    C = len(turn.candidates)
    selected = select_candidates(
        scores_np,
        min(cfg.n_select, C),
        min(cfg.m_pool, C),
        "train",
        gt_index=turn.gt_index,
        rng=rng,
    )
    syn = model.synergy_scores(ctx, turn.question, [turn.candidates[i] for i in selected])
    labels = np.zeros(len(selected))
    labels[selected.index(turn.gt_index)] = 1.0
    return primary_loss, synergy_cross_entropy(syn, labels)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: Model
    vocab: Vocabulary
    loss_log: list[dict]
    manifest: dict


def train(
    config: RunConfig,
    records: list[DialogRecord],
    vocab: Vocabulary | None = None,
    out_dir=None,
    epoch_callback=None,
) -> TrainResult:
    """Run both phases over the dataset and return the final state.

    ``epoch_callback(model, epoch, entry)``, when given, runs after every
    epoch and may stop training early by returning True. With ``out_dir``
    set, the loss log, run manifest, latest checkpoint, and final
    checkpoint are written there.
    """
    config.validate()
    if not records:
        raise ValueError("training needs a nonempty dataset")
    if vocab is None:
        vocab = Vocabulary.build(vocab_corpus(records), config.min_count)
    dataset = index_dataset(records, vocab)
    model = Model(config, vocab)
    adam = Adam(model.params, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 13])

    out_path = None
    if out_dir is not None:
        import pathlib

        out_path = pathlib.Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    loss_log: list[dict] = []
    total_epochs = config.epochs_primary + config.epochs_joint
    n_params = int(np.sum([p.data.size for p in model.params.values()]))
    manifest = {
        "vocab_size": len(vocab),
        "n_params": n_params,
        "batch_policy": "one turn per optimizer step; dialog order reshuffled per epoch (seeded)",
        "grad_accumulation": config.grad_accumulation,
        "epochs": {"primary": config.epochs_primary, "joint": config.epochs_joint},
        "config": config.to_dict(),
    }
    if out_path is not None:
        with open(out_path / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2)

    log_file = open(out_path / "loss_log.jsonl", "w") if out_path is not None else None
    try:
        for epoch in range(total_epochs):
            phase = 1 if epoch < config.epochs_primary else 2
            lr = learning_rate(config, epoch)
            order = rng.permutation(len(dataset))
            sums = {"primary": 0.0, "synergy": 0.0}
            n_turns = 0
            pending = 0
            for d_idx in order:
                dialog = dataset[d_idx]
                for t in range(len(dialog.turns)):
                    primary_loss, synergy_loss = _turn_losses(model, dialog, t, phase, rng)
                    loss = primary_loss if synergy_loss is None else primary_loss + synergy_loss
                    value = loss.item()
                    if not np.isfinite(value):
                        raise TrainingDiverged(
                            f"non-finite loss {value} at epoch {epoch}, dialog {dialog.dialog_id}, turn {t}"
                        )
                    sums["primary"] += primary_loss.item()
                    if synergy_loss is not None:
                        sums["synergy"] += synergy_loss.item()
                    n_turns += 1
                    loss.backward()
                    pending += 1
                    if pending >= config.grad_accumulation:
                        if pending > 1:
                            for p in model.params.values():
                                if p.grad is not None:
                                    p.grad /= pending
                        adam.step(lr)
                        adam.zero_grad()
                        pending = 0
            if pending:
                for p in model.params.values():
                    if p.grad is not None:
                        p.grad /= pending
                adam.step(lr)
                adam.zero_grad()
            entry = {
                "epoch": epoch,
                "phase": phase,
                "lr": lr,
                "loss": (sums["primary"] + sums["synergy"]) / n_turns,
                "loss_primary": sums["primary"] / n_turns,
                "loss_synergy": sums["synergy"] / n_turns,
                "turns": n_turns,
            }
            loss_log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if out_path is not None:
                _checkpoint_of(model, epoch, rng).save(out_path / "checkpoint_last.npz")
            if epoch_callback is not None and epoch_callback(model, epoch, entry):
                break
    finally:
        if log_file is not None:
            log_file.close()

    checkpoint = _checkpoint_of(model, loss_log[-1]["epoch"] if loss_log else 0, rng)
    if out_path is not None:
        checkpoint.save(out_path / "checkpoint_final.npz")
    return TrainResult(checkpoint=checkpoint, model=model, vocab=vocab, loss_log=loss_log, manifest=manifest)


# evaluation ----------------------------------------------------------------


def score_turn(model: Model, dialog: IndexedDialog, t: int, mode: str) -> StageScores:
    """Raw stage scores and final ranking for one turn, without gradients."""
    cfg = model.config
    turn = dialog.turns[t]
    with no_grad():
        V = Tensor(dialog.features.T)
        ctx = model.encode_context(turn.question, dialog.history_items(t), V)
        primary = model.primary_scores(ctx, turn.candidates).data.copy()
        if mode == "primary":
            return StageScores(primary=primary, ranking=ranking_from_scores(primary))
        if mode != "two-stage":
            raise ValueError(f"unknown evaluation mode: {mode!r}")
        C = len(turn.candidates)
        selected = select_candidates(primary, min(cfg.n_select, C), min(cfg.m_pool, C), "test")
        syn = model.synergy_scores(ctx, turn.question, [turn.candidates[i] for i in selected])
        synergy = syn.data.copy()
        return StageScores(
            primary=primary,
            selected=selected,
            synergy=synergy,
            ranking=fuse_rankings(primary, selected, synergy),
        )


def merged_scores(stage: StageScores) -> np.ndarray:
    """One score vector per turn for ensembling.

    Two-stage turns shift each selected candidate's synergy score by its
    own minimum and add the primary score back; unselected candidates keep
    their primary score.
    """
    if stage.selected is None:
        return stage.primary.copy()
    out = stage.primary.copy()
    base = stage.synergy.min()
    for j, idx in enumerate(stage.selected):
        out[idx] = (stage.synergy[j] - base) + stage.primary[idx]
    return out


def evaluate(
    model: Model,
    dataset: list[IndexedDialog],
    mode: str = "two-stage",
    collect_scores: bool = False,
):
    """Rank every turn, aggregate retrieval metrics, and attach the
    loss-share diagnostic computed from stage-one margins."""
    per_turn = []
    margins = []
    collected = []
    for dialog in dataset:
        for t in range(len(dialog.turns)):
            turn = dialog.turns[t]
            stage = score_turn(model, dialog, t, mode)
            gt = turn.gt_index
            rr, h1, h5, h10, rank = rank_metrics(stage.ranking, gt)
            per_turn.append((ndcg(stage.ranking, turn.relevance), rr, h1, h5, h10, rank))
            margins.extend(
                stage.primary[i] - stage.primary[gt] for i in range(len(stage.primary)) if i != gt
            )
            if collect_scores:
                collected.append((dialog.dialog_id, t, stage))
    diag = loss_share_diagnostic(margins, model.config.tau).to_dict()
    report = MetricsReport.aggregate(per_turn, diagnostics=diag)
    if collect_scores:
        return report, collected
    return report
