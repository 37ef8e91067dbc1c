"""Training orchestration: pretext mortality models, first-layer transfer,
HFNC fine-tuning, and prediction-averaging ensembles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural
from .baselines import (
    LR14_DEFAULT_FEATURES,
    ElasticNetModel,
    fit_elasticnet_logreg,
    predict_logreg,
)
from .evaluate import PredictionSeries, auroc, validation_objective
from .neural import (
    LSTMStack,
    OptimizerState,
    ScheduleState,
    TrainHyper,
    apply_dropout_masks,
    backward,
    forward,
    init_params,
    rmsprop_step,
    schedule_update,
)
from .preprocess import NormStats, perseverate, perseverate_labels
from .trials import HFNCTrial

MODEL_KINDS = ("lr14", "lr517", "lstm", "lstm_pers", "lstm_tl", "lstm_pers_tl")

LR_DEFAULTS = {
    "lr14": {"lam": 7.50e-1, "alpha": 0.5},
    "lr517": {"lam": 1.15e-3, "alpha": 0.2},
}


@dataclass
class TrialData:
    """One trial with its dense inputs and aligned labels."""

    trial: HFNCTrial
    X: np.ndarray  # (T, F)
    labels: np.ndarray  # (T,) 0/1/NaN
    partition: str = ""


@dataclass
class ModelBundle:
    kind: str
    perseveration: int  # k
    stats_ref: str  # NormStats catalog hash
    seeds: dict = field(default_factory=dict)
    lstm: LSTMStack | None = None
    logreg: ElasticNetModel | None = None
    hyper: TrainHyper | None = None
    feature_indices: list[int] | None = None  # LR column subset


@dataclass
class EnsembleSpec:
    members: list[ModelBundle]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        refs = {m.stats_ref for m in self.members}
        if len(refs) != 1:
            raise ValueError("ensemble members must share normalization stats")


# ------------------------------------------------------------------ training


def _sequence_loss_and_grads(stack, X, labels, hyper, masks):
    probs, cache = forward(stack, X, masks)
    loss = neural.bce_masked(probs, labels)
    grads = backward(stack, cache, labels)
    return loss, grads


def _train_lstm(
    train_seqs: list[tuple[np.ndarray, np.ndarray]],
    hyper: TrainHyper,
    seed: int,
    objective_fn,
    init_stack: LSTMStack | None = None,
    freeze_layer0: bool = False,
) -> tuple[LSTMStack, list[float]]:
    """Core LSTM training loop.

    ``objective_fn(stack) -> float`` is the per-epoch validation objective
    (higher is better); the checkpoint with the best objective is returned.
    """
    if not train_seqs:
        raise ValueError("training set is empty")
    input_dim = train_seqs[0][0].shape[1]
    stack = init_stack.copy() if init_stack is not None else init_params(
        seed, input_dim, hyper.hidden_sizes
    )
    opt = OptimizerState.for_stack(stack, hyper.rmsprop_rho, hyper.rmsprop_eps)
    sched = ScheduleState(
        hyper.initial_lr, hyper.patience, hyper.reduce_rate, hyper.max_reductions
    )
    best = stack.copy()
    history = []
    epoch = 0
    while True:
        order = np.random.default_rng(
            np.random.SeedSequence([seed, epoch, 1])
        ).permutation(len(train_seqs))
        for b0 in range(0, len(order), hyper.batch_size):
            batch = order[b0 : b0 + hyper.batch_size]
            acc = None
            for si in batch:
                X, labels = train_seqs[int(si)]
                masks = apply_dropout_masks(
                    seed,
                    epoch,
                    int(si),
                    input_dim,
                    hyper.hidden_sizes,
                    hyper.dropout,
                    hyper.recurrent_dropout,
                )
                _, grads = _sequence_loss_and_grads(stack, X, labels, hyper, masks)
                if acc is None:
                    acc = grads
                else:
                    for a, g in zip(acc, grads):
                        a += g
            for a in acc:
                a /= len(batch)
            neural.add_l2_grads(stack, acc, hyper.l2)
            if freeze_layer0:
                for a in acc[:3]:  # Wx, Wh, b of layer 0
                    a[...] = 0.0
            rmsprop_step(stack.param_arrays(), acc, opt, sched.current_lr)

        metric = objective_fn(stack)
        history.append(metric)
        improved, stop = schedule_update(sched, metric)
        if improved:
            best = stack.copy()
        epoch += 1
        if stop or (hyper.max_epochs is not None and epoch >= hyper.max_epochs):
            break
    return best, history


def predict_sequence(bundle: ModelBundle, X: np.ndarray) -> np.ndarray:
    """Per-original-row probabilities for one trial matrix (not yet
    perseverated).  For perseverated models the last-copy output stands in
    for each original row."""
    if bundle.logreg is not None:
        cols = bundle.feature_indices
        rows = X[:, cols] if cols is not None else X
        return np.asarray(predict_logreg(bundle.logreg, rows))
    Xp = perseverate(X, bundle.perseveration)
    probs, _ = forward(bundle.lstm, Xp)
    k = bundle.perseveration
    return probs[k - 1 :: k]


def predict_trial(model, data: TrialData) -> PredictionSeries:
    """PredictionSeries for one trial from a bundle or an ensemble."""
    if isinstance(model, EnsembleSpec):
        member_probs = [predict_sequence(m, data.X) for m in model.members]
        probs = np.mean(member_probs, axis=0)
    else:
        probs = predict_sequence(model, data.X)
    return PredictionSeries(
        data.trial.trial_id, data.trial.label_series.times, probs
    )


def predict_cohort(model, data: list[TrialData]) -> dict[str, PredictionSeries]:
    return {d.trial.trial_id: predict_trial(model, d) for d in data}


def _hfnc_objective(model_or_stack, val_data, k):
    """Mean hourly 0-14h validation AUROC for a stack under perseveration k."""
    preds = {}
    for d in val_data:
        Xp = perseverate(d.X, k)
        probs, _ = forward(model_or_stack, Xp)
        preds[d.trial.trial_id] = PredictionSeries(
            d.trial.trial_id, d.trial.label_series.times, probs[k - 1 :: k]
        )
    return validation_objective([d.trial for d in val_data], preds)


def train_hfnc_model(
    kind: str,
    data: list[TrialData],
    hyper: TrainHyper,
    seed: int,
    stats: NormStats,
    pretext: LSTMStack | None = None,
    pretext_seed: int | None = None,
) -> ModelBundle:
    """Train one of the eight model kinds on the partitioned trial data."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    train = [d for d in data if d.partition == "training"]
    val = [d for d in data if d.partition == "validation"]
    if not train or not val:
        raise ValueError("training and validation partitions must be non-empty")

    seeds = {"finetune": seed}
    if kind in ("lr14", "lr517"):
        reg = LR_DEFAULTS[kind]
        if kind == "lr14":
            subset = [f for f in LR14_DEFAULT_FEATURES if f in stats.features]
            cols = [stats.features.index(f) for f in subset]
        else:
            subset, cols = list(stats.features), None
        rows, labels = [], []
        for d in train:
            keep = ~np.isnan(d.labels)
            X = d.X[keep]
            rows.append(X[:, cols] if cols is not None else X)
            labels.append(d.labels[keep])
        model = fit_elasticnet_logreg(
            np.vstack(rows),
            np.concatenate(labels),
            reg["lam"],
            reg["alpha"],
            seed=seed,
            features=subset,
            feature_subset="lr14" if kind == "lr14" else "full",
        )
        return ModelBundle(kind, 1, stats.catalog_hash, seeds, logreg=model,
                           feature_indices=cols)

    k = 3 if "pers" in kind else 1
    use_tl = kind.endswith("_tl")
    if use_tl:
        if pretext is None:
            raise ValueError(f"kind {kind!r} requires a pretext checkpoint")
        init_stack = init_params(seed, train[0].X.shape[1], hyper.hidden_sizes)
        transfer_first_layer(pretext, init_stack)
        seeds["pretext"] = pretext_seed
    else:
        init_stack = None

    seqs = [
        (perseverate(d.X, k), perseverate_labels(d.labels, k)) for d in train
    ]
    stack, history = _train_lstm(
        seqs,
        hyper,
        seed,
        objective_fn=lambda s: _hfnc_objective(s, val, k),
        init_stack=init_stack,
        freeze_layer0=use_tl and hyper.freeze_transfer,
    )
    return ModelBundle(kind, k, stats.catalog_hash, seeds, lstm=stack,
                       hyper=hyper)


def train_pretext(
    episode_data: list[tuple[np.ndarray, int]],
    hyper: TrainHyper,
    seed: int,
    val_fraction: float = 0.2,
) -> LSTMStack:
    """Pretext task: predict episode mortality at every time step with the
    same architecture and inputs as the HFNC task."""
    outcomes = {int(y) for _, y in episode_data}
    if outcomes != {0, 1}:
        raise ValueError("pretext outcomes must contain both classes")
    n_val = max(int(round(val_fraction * len(episode_data))), 1)
    order = np.random.default_rng(
        np.random.SeedSequence([seed, 9])
    ).permutation(len(episode_data))
    val_idx = set(order[:n_val].tolist())
    train_seqs, val_seqs = [], []
    for i, (X, y) in enumerate(episode_data):
        labels = np.full(X.shape[0], float(y))
        (val_seqs if i in val_idx else train_seqs).append((X, labels))
    val_classes = {int(labels[0]) for _, labels in val_seqs}
    if val_classes != {0, 1}:
        missing = (({0, 1} - val_classes)).pop()
        for j, (X, labels) in enumerate(train_seqs):
            if int(labels[0]) == missing:
                val_seqs.append(train_seqs.pop(j))
                break

    def objective(stack):
        scores = []
        labels = []
        for X, y in val_seqs:
            probs, _ = forward(stack, X)
            scores.append(float(probs[-1]))
            labels.append(bool(y[0]))
        value = auroc(np.array(scores), np.array(labels))
        return 0.5 if value is None else value

    stack, _ = _train_lstm(train_seqs, hyper, seed, objective)
    return stack


def transfer_first_layer(pretext: LSTMStack, target: LSTMStack) -> LSTMStack:
    """Copy the pretext model's first hidden layer into ``target`` (layers
    2-3 keep their fresh initialization)."""
    src, dst = pretext.layers[0], target.layers[0]
    if src.Wx.shape != dst.Wx.shape or src.Wh.shape != dst.Wh.shape:
        raise ValueError(
            f"incompatible first-layer shapes: pretext {src.Wx.shape}, "
            f"target {dst.Wx.shape}"
        )
    dst.Wx = src.Wx.copy()
    dst.Wh = src.Wh.copy()
    dst.b = src.b.copy()
    return target


def build_simple_ensemble(
    data: list[TrialData],
    hyper: TrainHyper,
    stats: NormStats,
    pretext: LSTMStack,
    pretext_seed: int,
    finetune_seeds: list[int],
    kind: str = "lstm_pers_tl",
) -> EnsembleSpec:
    """Five fine-tune seeds under a single pretext model, averaged."""
    if len(set(finetune_seeds)) != len(finetune_seeds):
        raise ValueError("fine-tune seeds must be distinct")
    members = [
        train_hfnc_model(kind, data, hyper, s, stats, pretext, pretext_seed)
        for s in finetune_seeds
    ]
    return EnsembleSpec(members)


def build_multi_ensemble(
    data: list[TrialData],
    hyper: TrainHyper,
    stats: NormStats,
    pretexts: list[tuple[int, LSTMStack]],
    finetune_seeds: list[int],
    kind: str = "lstm_pers_tl",
) -> EnsembleSpec:
    """Flat mean over |pretexts| x |finetune_seeds| members."""
    if len({s for s, _ in pretexts}) != len(pretexts):
        raise ValueError("pretext seeds must be distinct")
    members = []
    for pseed, pstack in pretexts:
        for fseed in finetune_seeds:
            members.append(
                train_hfnc_model(kind, data, hyper, fseed, stats, pstack, pseed)
            )
    return EnsembleSpec(members)


# ------------------------------------------------------------- serialization


def _stack_to_dict(stack: LSTMStack) -> dict:
    return {
        "layers": [
            {"Wx": l.Wx.tolist(), "Wh": l.Wh.tolist(), "b": l.b.tolist()}
            for l in stack.layers
        ],
        "Wy": stack.Wy.tolist(),
        "by": stack.by.tolist(),
    }


def _stack_from_dict(d: dict) -> LSTMStack:
    layers = [
        neural.LayerParams(
            np.array(l["Wx"]), np.array(l["Wh"]), np.array(l["b"])
        )
        for l in d["layers"]
    ]
    return LSTMStack(layers, np.array(d["Wy"]), np.array(d["by"]))


def bundle_to_json(bundle: ModelBundle) -> str:
    d = {
        "kind": bundle.kind,
        "perseveration": bundle.perseveration,
        "stats_ref": bundle.stats_ref,
        "seeds": bundle.seeds,
        "feature_indices": bundle.feature_indices,
    }
    if bundle.hyper is not None:
        d["hyper"] = asdict(bundle.hyper)
    if bundle.lstm is not None:
        d["lstm"] = _stack_to_dict(bundle.lstm)
    if bundle.logreg is not None:
        m = bundle.logreg
        d["logreg"] = {
            "weights": m.weights.tolist(),
            "intercept": m.intercept,
            "lam": m.lam,
            "alpha": m.alpha,
            "feature_subset": m.feature_subset,
            "features": m.features,
        }
    return json.dumps(d, sort_keys=True)


def bundle_from_json(text: str) -> ModelBundle:
    d = json.loads(text)
    hyper = None
    if "hyper" in d:
        h = dict(d["hyper"])
        h["hidden_sizes"] = tuple(h["hidden_sizes"])
        hyper = TrainHyper(**h)
    lstm = _stack_from_dict(d["lstm"]) if "lstm" in d else None
    logreg = None
    if "logreg" in d:
        m = d["logreg"]
        logreg = ElasticNetModel(
            np.array(m["weights"]), m["intercept"], m["lam"], m["alpha"],
            m["feature_subset"], m["features"],
        )
    return ModelBundle(
        d["kind"],
        d["perseveration"],
        d["stats_ref"],
        d.get("seeds", {}),
        lstm=lstm,
        logreg=logreg,
        hyper=hyper,
        feature_indices=d.get("feature_indices"),
    )
