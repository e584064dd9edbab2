"""Toy victim classifiers, the poisoning pipeline, and attack evaluation.

PointNetLite is a shared-MLP + max-pool classifier (per-point
3->64->128->256 BN+ReLU trunk, pooled, 256->128->K head).  EdgeConvLite
builds kNN edge features [x_i ; x_j - x_i] through a 6->64->64 edge MLP
with neighbor max, lifts to 256 per-point channels, and uses the same
head; its neighborhoods make it sensitive to local geometry.  Both expose
the per-point feature map (the trunk output before pooling) for the
activation-map analyses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .ae import AEModel
from .cloud import LabeledDataset, PointCloud, _pairwise_sq_dists
from .errors import ConfigMismatch, NothingToPoison, UntrainedModel
from .metrics import chamfer, hausdorff, sliced_wasserstein, wasserstein_exact
from .nn import LayerParams, Var
from .rng import SeededRng
from .triggers import TriggerSpec, apply_trigger

ARCHITECTURES = ("pointnet_lite", "edgeconv_lite")


def _knn_fast(pts: np.ndarray, k: int) -> np.ndarray:
    """Partition-based neighbor lookup for the EdgeConv forward pass.

    Deterministic; agrees with cloud.knn except when exact distance ties
    straddle the k-th place, where the partition picks the survivors.
    """
    d2 = _pairwise_sq_dists(pts, pts)
    np.fill_diagonal(d2, np.inf)
    part = np.argpartition(d2, k, axis=1)[:, :k]
    vals = np.take_along_axis(d2, part, axis=1)
    order = np.argsort(vals, axis=1, kind="stable")
    return np.take_along_axis(part, order, axis=1)


@dataclass(frozen=True)
class VictimSpec:
    architecture: str = "pointnet_lite"
    k_classes: int = 8
    trunk_widths: tuple[int, int, int] = (64, 128, 256)
    edge_widths: tuple[int, int] = (64, 64)
    head_hidden: int = 128
    knn_k: int = 8
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 16

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.k_classes < 2:
            raise ValueError("need at least two classes")
        if any(w <= 0 for w in self.trunk_widths + self.edge_widths):
            raise ValueError("widths must be positive")


@dataclass
class VictimModel:
    spec: VictimSpec
    layers_map: dict[str, LayerParams]
    trained: bool = False
    rng_seed: int | None = None
    epochs_trained: int = 0
    train_log: list[dict] = field(default_factory=list)

    def parameters(self) -> list[Var]:
        out = []
        for layer in self.layers_map.values():
            out.extend(layer.variables())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # ---- forward passes -------------------------------------------------

    def pointwise_features(self, x, mode: str = "infer") -> Var:
        """A_X: per-point features before the global max-pool."""
        xv = x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))
        L = self.layers_map
        if self.spec.architecture == "pointnet_lite":
            h = nn.layer_bn_relu(xv, L["trunk1"], mode)
            h = nn.layer_bn_relu(h, L["trunk2"], mode)
            return nn.layer_bn_relu(h, L["trunk3"], mode)
        # edgeconv_lite: neighbor gather on the input coordinates
        pts = xv.value
        k = self.spec.knn_k
        if pts.ndim == 2:
            idx = _knn_fast(pts, k)
        else:
            idx = np.stack([_knn_fast(p, k) for p in pts])
        edges = nn.edge_features(xv, idx)
        # plain ReLU on the edge stacks: BN over the (B, n, k, c) arrays
        # costs more than the rest of the network; the lift layer
        # re-normalizes per point
        h = nn.layer_relu(edges, L["edge1"])
        h = nn.layer_relu(h, L["edge2"])
        pooled = nn.maxpool_points(h)  # max over the k neighbors
        return nn.layer_bn_relu(pooled, L["lift"], mode)

    def head_from_features(self, features) -> Var:
        """Global max-pool plus the classification head."""
        L = self.layers_map
        g = nn.maxpool_points(features)
        h = nn.layer_relu(g, L["head1"])
        return nn.layer_linear(h, L["head2"])

    def logits(self, x, mode: str = "infer") -> Var:
        return self.head_from_features(self.pointwise_features(x, mode))

    def predict(self, cloud: PointCloud) -> int:
        if not self.trained:
            raise UntrainedModel("victim has not been trained")
        return int(np.argmax(self.logits(cloud.points).value))

    def predict_batch(self, clouds: Sequence[PointCloud]) -> np.ndarray:
        if not self.trained:
            raise UntrainedModel("victim has not been trained")
        sizes = {c.n for c in clouds}
        if len(sizes) == 1:
            stacked = np.stack([c.points for c in clouds])
            return np.argmax(self.logits(stacked).value, axis=-1).astype(np.int64)
        return np.array([self.predict(c) for c in clouds], dtype=np.int64)

    def input_gradient(self, cloud: PointCloud, label: int) -> np.ndarray:
        """Gradient of the cross-entropy loss wrt the input coordinates."""
        if not self.trained:
            raise UntrainedModel("victim has not been trained")
        x = Var(cloud.points)
        loss = nn.mean_all(nn.softmax_xent(self.logits(x), np.asarray(label)))
        loss.backward()
        return x.grad.copy()


def init_victim(spec: VictimSpec, rng: SeededRng) -> VictimModel:
    gen = rng.generator()
    layers: dict[str, LayerParams] = {}
    if spec.architecture == "pointnet_lite":
        w1, w2, w3 = spec.trunk_widths
        layers["trunk1"] = nn.init_layer(3, w1, gen, with_bn=True)
        layers["trunk2"] = nn.init_layer(w1, w2, gen, with_bn=True)
        layers["trunk3"] = nn.init_layer(w2, w3, gen, with_bn=True)
        feat = w3
    else:
        e1, e2 = spec.edge_widths
        layers["edge1"] = nn.init_layer(6, e1, gen)
        layers["edge2"] = nn.init_layer(e1, e2, gen)
        layers["lift"] = nn.init_layer(e2, spec.trunk_widths[-1], gen, with_bn=True)
        feat = spec.trunk_widths[-1]
    layers["head1"] = nn.init_layer(feat, spec.head_hidden, gen)
    layers["head2"] = nn.init_layer(spec.head_hidden, spec.k_classes, gen)
    return VictimModel(spec=spec, layers_map=layers, rng_seed=rng.seed)


# ---------------------------------------------------------------------------
# poisoning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoisonPlan:
    rate: float = 0.02
    target_label: int = 0
    trigger: TriggerSpec = TriggerSpec("iba")
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ValueError("poisoning rate must lie in (0, 1)")
        if self.target_label < 0:
            raise ValueError("target label must be >= 0")


def poison_dataset(
    train: LabeledDataset, plan: PoisonPlan, ae_model: AEModel | None = None
) -> tuple[LabeledDataset, np.ndarray]:
    """Trigger and relabel round(rate*N) non-target entries.

    Returns the poisoned dataset plus the sorted poisoned indices; every
    other entry is carried over bit-identical.
    """
    if plan.target_label >= train.k:
        raise ConfigMismatch(
            f"target label {plan.target_label} outside [0, {train.k})"
        )
    n_total = len(train)
    budget = int(round(plan.rate * n_total))
    eligible = np.flatnonzero(train.labels != plan.target_label)
    if budget < 1 or len(eligible) == 0:
        raise NothingToPoison(
            f"rate {plan.rate} of {n_total} entries selects nothing"
        )
    budget = min(budget, len(eligible))
    gen = SeededRng(plan.seed).generator()
    chosen = np.sort(gen.choice(eligible, size=budget, replace=False))
    chosen_set = set(int(i) for i in chosen)
    clouds: list[PointCloud] = []
    labels = train.labels.copy()
    for i, cloud in enumerate(train.clouds):
        if i in chosen_set:
            clouds.append(apply_trigger(plan.trigger, cloud, ae_model, instance=i))
            labels[i] = plan.target_label
        else:
            clouds.append(cloud)
    return (
        LabeledDataset(clouds, labels, k=train.k, split=train.split),
        chosen,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_victim(
    dataset: LabeledDataset,
    spec: VictimSpec,
    rng: SeededRng,
    augmentations: Sequence | None = None,
) -> VictimModel:
    """Cross-entropy Adam training with optional per-batch augmentations.

    Augmentations (AugmentationSpec objects from the defenses module) are
    applied online: fresh draws per entry per epoch, deterministic given
    rng.
    """
    if int(dataset.labels.max()) >= spec.k_classes:
        raise ConfigMismatch(
            f"dataset has labels up to {int(dataset.labels.max())}, "
            f"spec expects {spec.k_classes} classes"
        )
    model = init_victim(spec, rng.derive(0))
    shuffle_gen = rng.derive(1).generator()
    aug_stream = rng.derive(2)
    params = model.parameters()
    state = nn.AdamState(lr=spec.lr)
    data = dataset.stacked()
    labels = dataset.labels
    n_data = len(dataset)
    aug_counter = 0
    for epoch in range(spec.epochs):
        order = shuffle_gen.permutation(n_data)
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n_data, spec.batch_size):
            sel = order[start : start + spec.batch_size]
            batch = data[sel]
            if augmentations:
                from .defenses import augment  # deferred: defenses needs no victim

                batch = batch.copy()
                for j in range(len(batch)):
                    c = PointCloud(batch[j])
                    for a_spec in augmentations:
                        c = augment(c, a_spec, aug_stream.derive(aug_counter))
                        aug_counter += 1
                    batch[j] = c.points
            batch_labels = labels[sel]
            model.zero_grad()
            logits = model.logits(Var(batch), mode="train")
            loss = nn.mean_all(nn.softmax_xent(logits, batch_labels))
            loss.backward()
            nn.adam_step(params, state)
            epoch_loss += loss.item() * len(sel)
            epoch_correct += int(
                (np.argmax(logits.value, axis=-1) == batch_labels).sum()
            )
        mean_loss = epoch_loss / n_data
        if not np.isfinite(mean_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        model.train_log.append(
            {"epoch": epoch, "loss": mean_loss, "acc": epoch_correct / n_data}
        )
        model.epochs_trained = epoch + 1
    model.trained = True
    return model


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_acc(model: VictimModel, test: LabeledDataset) -> float:
    """Clean test accuracy."""
    preds = model.predict_batch(test.clouds)
    return float((preds == test.labels).mean())


@dataclass(frozen=True)
class AsrResult:
    """Triggered-input hit rates on the target label, both conventions."""

    asr: float  # entries whose true label differs from the target
    asr_all: float  # every test entry
    n_eval: int
    n_total: int


def eval_asr(
    model: VictimModel,
    test: LabeledDataset,
    trigger: TriggerSpec,
    target_label: int,
    ae_model: AEModel | None = None,
) -> AsrResult:
    triggered = [
        apply_trigger(trigger, c, ae_model, instance=i)
        for i, c in enumerate(test.clouds)
    ]
    preds = model.predict_batch(triggered)
    hits = preds == target_label
    non_target = test.labels != target_label
    n_eval = int(non_target.sum())
    asr = float(hits[non_target].mean()) if n_eval else float("nan")
    return AsrResult(
        asr=asr,
        asr_all=float(hits.mean()),
        n_eval=n_eval,
        n_total=len(test),
    )


@dataclass
class AttackReport:
    """Consolidated evaluation of one attack configuration."""

    acc: float
    asr: float
    asr_all: float
    imperceptibility: dict
    trigger: dict
    poison: dict
    seed: int | None = None
    config_hash: str | None = None

    def __post_init__(self):
        for name in ("acc", "asr", "asr_all"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for key, v in self.imperceptibility.items():
            if isinstance(v, float) and key != "n_eval" and v < 0.0:
                raise ValueError(f"imperceptibility {key}={v} negative")

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "asr": self.asr,
            "asr_all": self.asr_all,
            "imperceptibility": dict(self.imperceptibility),
            "trigger": dict(self.trigger),
            "poison": dict(self.poison),
            "seed": self.seed,
            "config_hash": self.config_hash,
        }


def evaluate_attack(
    model: VictimModel,
    test: LabeledDataset,
    trigger: TriggerSpec,
    target_label: int,
    ae_model: AEModel | None = None,
    poison: dict | None = None,
    seed: int = 0,
    config_hash: str | None = None,
) -> AttackReport:
    """ACC, ASR (both conventions), and trigger deviation in one report."""
    asr = eval_asr(model, test, trigger, target_label, ae_model)
    return AttackReport(
        acc=eval_acc(model, test),
        asr=asr.asr,
        asr_all=asr.asr_all,
        imperceptibility=eval_imperceptibility(test, trigger, ae_model,
                                               seed=seed),
        trigger=trigger.to_dict(),
        poison=dict(poison or {"target_label": target_label}),
        seed=seed,
        config_hash=config_hash,
    )


def eval_imperceptibility(
    test: LabeledDataset,
    trigger: TriggerSpec,
    ae_model: AEModel | None = None,
    swd_projections: int = 512,
    exact_wd: bool = True,
    seed: int = 0,
) -> dict:
    """Mean trigger deviation under CD, SWD (and exact WD), and HD."""
    cds, swds, wds, hds = [], [], [], []
    for i, cloud in enumerate(test.clouds):
        out = apply_trigger(trigger, cloud, ae_model, instance=i)
        cds.append(chamfer(cloud, out))
        hds.append(hausdorff(cloud, out))
        if out.n == cloud.n:
            swds.append(
                sliced_wasserstein(
                    cloud, out, swd_projections, SeededRng(seed).derive(i)
                )
            )
            if exact_wd:
                wds.append(wasserstein_exact(cloud, out))
    report = {
        "cd": float(np.mean(cds)),
        "hd": float(np.mean(hds)),
        "swd": float(np.mean(swds)) if swds else None,
        "wd_exact": float(np.mean(wds)) if wds else None,
        "n_eval": len(test),
    }
    return report


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_victim(model: VictimModel, path, extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, layer in model.layers_map.items():
        for key, arr in layer.state_arrays().items():
            arrays[f"{name}.{key}"] = arr
    meta = {
        "spec": {
            "architecture": model.spec.architecture,
            "k_classes": model.spec.k_classes,
            "trunk_widths": list(model.spec.trunk_widths),
            "edge_widths": list(model.spec.edge_widths),
            "head_hidden": model.spec.head_hidden,
            "knn_k": model.spec.knn_k,
            "epochs": model.spec.epochs,
            "lr": model.spec.lr,
            "batch_size": model.spec.batch_size,
        },
        "trained": model.trained,
    }
    if extra:
        meta.update(extra)
    nn.save_checkpoint(
        path,
        architecture=model.spec.architecture,
        arrays=arrays,
        rng_seed=model.rng_seed,
        epoch=model.epochs_trained,
        extra=meta,
    )


def load_victim(path) -> VictimModel:
    architecture, arrays, meta = nn.load_checkpoint(path)
    if architecture not in ARCHITECTURES:
        raise ConfigMismatch(f"checkpoint holds {architecture!r}, not a victim")
    raw = dict(meta["extra"]["spec"])
    raw["trunk_widths"] = tuple(raw["trunk_widths"])
    raw["edge_widths"] = tuple(raw["edge_widths"])
    spec = VictimSpec(**raw)
    model = init_victim(spec, SeededRng(meta["rng_seed"] or 0))
    for name, layer in model.layers_map.items():
        layer.load_state_arrays(
            {k.split(".", 1)[1]: v for k, v in arrays.items()
             if k.startswith(name + ".")}
        )
    model.trained = bool(meta["extra"]["trained"])
    model.epochs_trained = meta["epoch"] or 0
    model.rng_seed = meta["rng_seed"]
    return model
