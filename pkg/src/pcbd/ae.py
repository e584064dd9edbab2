"""Folding-based autoencoder whose reconstruction error is the trigger.

The encoder lifts each point through three BN+ReLU layers, max-pools a
global feature, concatenates it back onto the point-wise features, and
max-pools the latent code after two plain ReLU layers.  The decoder folds
a fixed square grid (on the z=0 plane) twice, each fold conditioning on
the latent code; fold modules end in a linear layer so reconstructions
can reach the whole cube.  Training minimizes a weighted sum of Chamfer
and sliced-Wasserstein reconstruction losses with Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cloud import PointCloud, LabeledDataset
from .errors import ConfigMismatch, NotNormalized, ShapeMismatch, UntrainedModel
from .metrics import sample_unit_directions
from .nn import LayerParams, Var
from .rng import SeededRng

COMPOSE_TOL = 0.5  # implanting accepts clouds up to max-abs 1.5


@dataclass(frozen=True)
class AEConfig:
    """Toy-scale defaults; paper_profile() selects the full-scale variant."""

    latent_dim: int = 128
    grid_side: int = 16
    enc_widths: tuple[int, int, int] = (32, 64, 128)
    mix_hidden: int = 128
    fold_hidden: int = 128
    grid_extent: float = 0.5
    lambda_cd: float = 1.0
    lambda_swd: float = 0.001
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 16
    swd_projections: int = 32

    def __post_init__(self):
        if self.lambda_cd < 0 or self.lambda_swd < 0:
            raise ValueError("loss weights must be >= 0")
        if self.grid_side < 2:
            raise ValueError("grid_side must be >= 2")

    @property
    def n_points(self) -> int:
        return self.grid_side**2

    @classmethod
    def paper_profile(cls) -> "AEConfig":
        return cls(
            latent_dim=512,
            grid_side=32,
            enc_widths=(64, 128, 256),
            mix_hidden=512,
            fold_hidden=512,
        )


def make_grid(config: AEConfig) -> np.ndarray:
    """(grid_side^2, 3) square grid on the z=0 plane, centered at origin."""
    side = np.linspace(-config.grid_extent, config.grid_extent, config.grid_side)
    u, v = np.meshgrid(side, side, indexing="ij")
    return np.c_[u.ravel(), v.ravel(), np.zeros(config.grid_side**2)]


@dataclass
class AEModel:
    config: AEConfig
    enc1: LayerParams
    enc2: LayerParams
    enc3: LayerParams
    mix1: LayerParams
    mix2: LayerParams
    fold1_hidden: LayerParams
    fold1_out: LayerParams
    fold2_hidden: LayerParams
    fold2_out: LayerParams
    grid: np.ndarray
    trained: bool = False
    rng_seed: int | None = None
    epochs_trained: int = 0
    train_log: list[float] = field(default_factory=list)

    _LAYERS = (
        "enc1", "enc2", "enc3", "mix1", "mix2",
        "fold1_hidden", "fold1_out", "fold2_hidden", "fold2_out",
    )

    def layers(self) -> dict[str, LayerParams]:
        return {name: getattr(self, name) for name in self._LAYERS}

    def parameters(self) -> list[Var]:
        out = []
        for layer in self.layers().values():
            out.extend(layer.variables())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def init_ae(config: AEConfig, rng: SeededRng) -> AEModel:
    gen = rng.generator()
    w1, w2, w3 = config.enc_widths
    mix_in = w1 + w3
    fold_in = 3 + config.latent_dim
    return AEModel(
        config=config,
        enc1=nn.init_layer(3, w1, gen, with_bn=True),
        enc2=nn.init_layer(w1, w2, gen, with_bn=True),
        enc3=nn.init_layer(w2, w3, gen, with_bn=True),
        mix1=nn.init_layer(mix_in, config.mix_hidden, gen),
        mix2=nn.init_layer(config.mix_hidden, config.latent_dim, gen),
        fold1_hidden=nn.init_layer(fold_in, config.fold_hidden, gen),
        fold1_out=nn.init_layer(config.fold_hidden, 3, gen),
        fold2_hidden=nn.init_layer(fold_in, config.fold_hidden, gen),
        fold2_out=nn.init_layer(config.fold_hidden, 3, gen),
        grid=make_grid(config),
        rng_seed=rng.seed,
    )


def _check_cloud_input(x: np.ndarray, config: AEConfig, tol: float):
    if x.shape[-2] != config.n_points or x.shape[-1] != 3:
        raise ShapeMismatch(
            f"expected (..., {config.n_points}, 3) points, got {x.shape}"
        )
    max_abs = float(np.abs(x).max())
    if max_abs > 1.0 + tol:
        raise NotNormalized(f"max-abs coordinate {max_abs:.4f} exceeds 1+{tol}")


def encode(model: AEModel, x, mode: str = "infer", tol: float = 1e-6) -> Var:
    """Latent code; (latent,) for one cloud, (B, latent) for a batch."""
    xv = x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))
    _check_cloud_input(xv.value, model.config, tol)
    x_loc = nn.layer_bn_relu(xv, model.enc1, mode)
    h = nn.layer_bn_relu(x_loc, model.enc2, mode)
    h = nn.layer_bn_relu(h, model.enc3, mode)
    x_glob = nn.maxpool_points(h)
    # mix layer on [x_loc ; x_glob] without materializing the concat
    h = nn.relu(nn.concat_affine(x_loc, x_glob, model.mix1.w, model.mix1.b))
    h = nn.layer_relu(h, model.mix2)
    return nn.maxpool_points(h)


def decode(model: AEModel, z) -> Var:
    """Fold the fixed grid twice, conditioned on z; (..., n, 3) points."""
    zv = z if isinstance(z, Var) else Var(np.asarray(z, dtype=np.float64))
    if zv.value.shape[-1] != model.config.latent_dim:
        raise ShapeMismatch(
            f"latent dim {zv.value.shape[-1]} != {model.config.latent_dim}"
        )
    batch_shape = zv.value.shape[:-1]
    grid = np.broadcast_to(
        model.grid, batch_shape + model.grid.shape
    ).copy()
    stage = Var(grid)
    for hidden, out in (
        (model.fold1_hidden, model.fold1_out),
        (model.fold2_hidden, model.fold2_out),
    ):
        h = nn.relu(nn.concat_affine(stage, zv, hidden.w, hidden.b))
        stage = nn.layer_linear(h, out)
    return stage


def reconstruct(model: AEModel, x, mode: str = "infer", tol: float = 1e-6) -> Var:
    return decode(model, encode(model, x, mode=mode, tol=tol))


def implant_iba(model: AEModel, cloud: PointCloud) -> PointCloud:
    """Trigger implanting: the inference-mode reconstruction of the cloud."""
    if not model.trained:
        raise UntrainedModel("autoencoder has not been trained")
    recon = reconstruct(model, cloud.points, mode="infer", tol=COMPOSE_TOL)
    return PointCloud(recon.value)


def train_ae(dataset: LabeledDataset, config: AEConfig, rng: SeededRng) -> AEModel:
    """Adam training on the reconstruction loss; deterministic given rng."""
    if dataset.n_points != config.n_points:
        raise ConfigMismatch(
            f"dataset clouds have {dataset.n_points} points, "
            f"config expects {config.n_points}"
        )
    for i, cloud in enumerate(dataset.clouds):
        if not cloud.is_normalized():
            raise NotNormalized(f"cloud {i} is not normalized")
    model = init_ae(config, rng.derive(0))
    shuffle_gen = rng.derive(1).generator()
    dir_stream = rng.derive(2)
    params = model.parameters()
    state = nn.AdamState(lr=config.lr)
    data = dataset.stacked()
    n_data = len(dataset)
    dir_counter = 0
    for epoch in range(config.epochs):
        order = shuffle_gen.permutation(n_data)
        epoch_loss = 0.0
        for start in range(0, n_data, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            model.zero_grad()
            recon = reconstruct(model, batch, mode="train")
            loss = nn.scale(nn.mean_all(nn.chamfer_loss(recon, batch)),
                            config.lambda_cd)
            if config.lambda_swd > 0.0:
                dirs = sample_unit_directions(
                    config.swd_projections, dir_stream.derive(dir_counter)
                )
                dir_counter += 1
                loss = nn.add(
                    loss,
                    nn.scale(nn.mean_all(nn.swd_loss(recon, batch, dirs)),
                             config.lambda_swd),
                )
            loss.backward()
            nn.adam_step(params, state)
            epoch_loss += loss.item() * len(batch)
        mean_loss = epoch_loss / n_data
        if not np.isfinite(mean_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        model.train_log.append(mean_loss)
        model.epochs_trained = epoch + 1
    model.trained = True
    return model


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_ae(model: AEModel, path, extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {"grid": model.grid}
    for name, layer in model.layers().items():
        for key, arr in layer.state_arrays().items():
            arrays[f"{name}.{key}"] = arr
    arrays["train_log"] = np.asarray(model.train_log, dtype=np.float64)
    meta = {
        "config": {
            "latent_dim": model.config.latent_dim,
            "grid_side": model.config.grid_side,
            "enc_widths": list(model.config.enc_widths),
            "mix_hidden": model.config.mix_hidden,
            "fold_hidden": model.config.fold_hidden,
            "grid_extent": model.config.grid_extent,
            "lambda_cd": model.config.lambda_cd,
            "lambda_swd": model.config.lambda_swd,
            "epochs": model.config.epochs,
            "lr": model.config.lr,
            "batch_size": model.config.batch_size,
            "swd_projections": model.config.swd_projections,
        },
        "trained": model.trained,
    }
    if extra:
        meta.update(extra)
    nn.save_checkpoint(
        path,
        architecture="folding_ae",
        arrays=arrays,
        rng_seed=model.rng_seed,
        epoch=model.epochs_trained,
        extra=meta,
    )


def load_ae(path) -> AEModel:
    architecture, arrays, meta = nn.load_checkpoint(path)
    if architecture != "folding_ae":
        raise ConfigMismatch(f"checkpoint holds {architecture!r}, not an AE")
    cfg_raw = dict(meta["extra"]["config"])
    cfg_raw["enc_widths"] = tuple(cfg_raw["enc_widths"])
    config = AEConfig(**cfg_raw)
    model = init_ae(config, SeededRng(meta["rng_seed"] or 0))
    for name, layer in model.layers().items():
        layer.load_state_arrays(
            {k.split(".", 1)[1]: v for k, v in arrays.items()
             if k.startswith(name + ".")}
        )
    model.grid = arrays["grid"]
    model.train_log = list(arrays["train_log"])
    model.trained = bool(meta["extra"]["trained"])
    model.epochs_trained = meta["epoch"] or 0
    model.rng_seed = meta["rng_seed"]
    return model
