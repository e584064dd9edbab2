"""The three layer types used by every network in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import tensor as T
from .tensor import Var

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass
class LayerParams:
    """Weights of one layer; BN fields are None for plain layers."""

    w: Var
    b: Var
    bn_gamma: Var | None = None
    bn_beta: Var | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.bn_gamma is not None

    def variables(self) -> list[Var]:
        out = [self.w, self.b]
        if self.has_bn:
            out += [self.bn_gamma, self.bn_beta]
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Trainable values plus BN running statistics, in a stable order."""
        out = {"w": self.w.value, "b": self.b.value}
        if self.has_bn:
            out.update(
                bn_gamma=self.bn_gamma.value,
                bn_beta=self.bn_beta.value,
                bn_running_mean=self.bn_running_mean,
                bn_running_var=self.bn_running_var,
            )
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.w.value = arrays["w"].copy()
        self.b.value = arrays["b"].copy()
        if self.has_bn:
            self.bn_gamma.value = arrays["bn_gamma"].copy()
            self.bn_beta.value = arrays["bn_beta"].copy()
            self.bn_running_mean[...] = arrays["bn_running_mean"]
            self.bn_running_var[...] = arrays["bn_running_var"]


def init_layer(c_in: int, c_out: int, gen: np.random.Generator,
               with_bn: bool = False) -> LayerParams:
    """He-normal weights, zero bias, identity BN affine."""
    w = Var(gen.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, c_out)))
    b = Var(np.zeros(c_out))
    if not with_bn:
        return LayerParams(w, b)
    return LayerParams(
        w,
        b,
        bn_gamma=Var(np.ones(c_out)),
        bn_beta=Var(np.zeros(c_out)),
        bn_running_mean=np.zeros(c_out),
        bn_running_var=np.ones(c_out),
    )


def layer_bn_relu(x, p: LayerParams, mode: str = "infer") -> Var:
    """ReLU(BN(Wx + b))."""
    if not p.has_bn:
        raise ShapeMismatch("layer has no BN parameters")
    pre = T.affine(x, p.w, p.b)
    normed = T.batchnorm(
        pre,
        p.bn_gamma,
        p.bn_beta,
        p.bn_running_mean,
        p.bn_running_var,
        mode=mode,
        momentum=BN_MOMENTUM,
        eps=BN_EPS,
    )
    return T.relu(normed)


def layer_relu(x, p: LayerParams) -> Var:
    """ReLU(Wx + b)."""
    return T.relu(T.affine(x, p.w, p.b))


def layer_linear(x, p: LayerParams) -> Var:
    """Wx + b."""
    return T.affine(x, p.w, p.b)
