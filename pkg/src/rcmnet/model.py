"""The four ablation architectures built on a ResNet18 backbone.

============  ===================================================
``resnet18``  plain backbone
``resnet18-c`` CBAM inside every residual block of layers 1-4
``resnet18-m`` backbone plus a BoT block as ``layer5``
``rcmnet``    CBAM in every block and the BoT block
============  ===================================================
"""

from __future__ import annotations

import warnings
from typing import Callable, Optional, Union

import numpy as np

from . import tensor as T
from .blocks import BoTBlock, ResidualBlock
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Linear, Module, Sequential
from .tensor import Tensor

ARCHITECTURES = ("resnet18", "resnet18-c", "resnet18-m", "rcmnet")
BASE_WIDTHS = (64, 128, 256, 512)
CLASSIFIER_PREFIX = "fc."

VARIANT_NOTE = (
    "variant naming: resnet18-c = backbone + CBAM in every residual block; "
    "resnet18-m = backbone + BoT (MHSA) block as layer5; rcmnet = both"
)


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def feature_sides(input_side: int) -> dict[str, int]:
    """Spatial side after each stage for a square input."""
    sides = {"conv1": _conv_out(input_side, 7, 2, 3)}
    sides["maxpool"] = _conv_out(sides["conv1"], 3, 2, 1)
    sides["layer1"] = sides["maxpool"]
    for i in (2, 3, 4):
        sides[f"layer{i}"] = _conv_out(sides[f"layer{i - 1}"], 3, 2, 1)
    sides["layer5"] = sides["layer4"]
    return sides


class ResNetVariant(Module):
    """One ablation architecture; stages run in a fixed, named order."""

    def __init__(
        self,
        arch: str,
        num_classes: int,
        input_side: Optional[int],
        rng: np.random.Generator,
        width_div: int = 1,
        reduction: int = 16,
        scale_logits: bool = True,
        feat_side: Optional[int] = None,
        dtype=np.float64,
    ):
        super().__init__()
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")
        if num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if input_side is not None and input_side < 32:
            raise ConfigError(f"input side {input_side} too small for five stride-2 reductions (need >= 32)")
        if width_div < 1 or any(w % width_div for w in BASE_WIDTHS):
            raise ConfigError(f"width divisor {width_div} must divide 64")
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "num_classes", num_classes)
        object.__setattr__(self, "input_side", input_side)
        object.__setattr__(self, "width_div", width_div)
        object.__setattr__(self, "dtype", np.dtype(dtype))
        use_cbam = arch in ("resnet18-c", "rcmnet")
        use_bot = arch in ("resnet18-m", "rcmnet")
        widths = [w // width_div for w in BASE_WIDTHS]

        self.conv1 = Conv2d(3, widths[0], 7, rng, stride=2, padding=3, dtype=dtype)
        self.bn1 = BatchNorm2d(widths[0], dtype)
        cin = widths[0]
        for i, w in enumerate(widths, start=1):
            stride = 1 if i == 1 else 2
            layer = Sequential(
                ResidualBlock(cin, w, rng, stride, use_cbam, reduction, dtype=dtype),
                ResidualBlock(w, w, rng, 1, use_cbam, reduction, dtype=dtype),
            )
            setattr(self, f"layer{i}", layer)
            cin = w
        if use_bot:
            if feat_side is None:
                if input_side is None:
                    raise ConfigError("BoT block needs input_side or feat_side")
                feat_side = feature_sides(input_side)["layer4"]
            self.layer5 = BoTBlock(cin, rng, width=cin, heads=4, feat_size=(feat_side, feat_side),
                                   scale_logits=scale_logits, dtype=dtype)
        else:
            object.__setattr__(self, "layer5", None)
        self.fc = Linear(cin, num_classes, rng, dtype)
        object.__setattr__(self, "feature_dim", cin)

    # -- staged execution -----------------------------------------------------------
    def stages(self) -> list[tuple[str, Callable[[Tensor], Tensor]]]:
        out: list = [
            ("conv1", lambda x: T.relu(self.bn1(self.conv1(x)))),
            ("maxpool", lambda x: T.pool2d(x, "max", 3, 2, 1)),
        ]
        for i in range(1, 5):
            for j, blk in enumerate(getattr(self, f"layer{i}")):
                out.append((f"layer{i}.{j}", blk))
        if self.layer5 is not None:
            out.append(("layer5", self.layer5))
        out.append(("pool", lambda x: T.global_pool(x, "avg").reshape(x.shape[0], x.shape[1])))
        out.append(("fc", self.fc))
        return out

    def stage_names(self) -> list[str]:
        return [n for n, _ in self.stages()]

    def resolve_stage(self, name: str) -> str:
        """Map a layer name (``layer4`` or ``layer4.1``) to a stage name."""
        names = self.stage_names()
        if name in names:
            return name
        blocks = [n for n in names if n.startswith(name + ".")]
        if blocks:
            return blocks[-1]
        raise ConfigError(f"unknown layer {name!r}; known: {', '.join(names)}")

    @property
    def default_cam_layer(self) -> str:
        return "layer5" if self.layer5 is not None else "layer4"

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected a batch of shape [N, 3, s, s], got {x.shape}")
        if self.input_side is not None and x.shape[2:] != (self.input_side, self.input_side):
            raise ShapeError(f"model built for side {self.input_side}, got {x.shape[2]}x{x.shape[3]}")

    def run(self, x: Tensor, start: Optional[str] = None, stop: Optional[str] = None,
            record: Optional[dict] = None) -> Tensor:
        """Run stages after ``start`` (exclusive) up to ``stop`` (inclusive)."""
        stages = self.stages()
        names = [n for n, _ in stages]
        i0 = 0 if start is None else names.index(self.resolve_stage(start)) + 1
        i1 = len(stages) if stop is None else names.index(self.resolve_stage(stop)) + 1
        for name, fn in stages[i0:i1]:
            x = fn(x)
            if record is not None:
                record[name] = x
        return x

    def forward(self, x: Tensor, record: Optional[dict] = None) -> Tensor:
        self.check_input(x)
        return self.run(x, record=record)


ModelGraph = ResNetVariant


def build_model(
    arch: str,
    num_classes: int,
    input_side: int,
    seed: int = 0,
    width_div: int = 1,
    dtype=np.float64,
    reduction: int = 16,
    scale_logits: bool = True,
) -> ResNetVariant:
    """Build one architecture with parameters drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    return ResNetVariant(arch, num_classes, input_side, rng, width_div=width_div,
                         reduction=reduction, scale_logits=scale_logits, dtype=dtype)


def forward(model: ResNetVariant, batch, mode: str = "eval") -> Tensor:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    return model(T.as_tensor(batch))


def parameter_count(model: Module, trainable_only: bool = False) -> int:
    return sum(p.size for p in model.parameters() if p.requires_grad or not trainable_only)


def is_classifier(name: str) -> bool:
    return name.startswith(CLASSIFIER_PREFIX)


def trainable_predicate(spec: Union[str, Callable[[str], bool]]) -> Callable[[str], bool]:
    if callable(spec):
        return spec
    table = {
        "all": lambda n: True,
        "none": lambda n: False,
        "classifier": is_classifier,
        "backbone": lambda n: not is_classifier(n),
    }
    if spec not in table:
        raise ConfigError(f"unknown trainable predicate {spec!r}")
    return table[spec]


def set_trainable(model: Module, predicate: Union[str, Callable[[str], bool]]) -> int:
    """Mark parameters matching ``predicate`` trainable and freeze the rest.

    Returns the number of trainable scalar parameters.
    """
    pred = trainable_predicate(predicate)
    matched = 0
    for name, p in model.named_parameters():
        p.requires_grad = bool(pred(name))
        if p.requires_grad:
            matched += 1
        else:
            p.grad = None
    if matched == 0:
        warnings.warn("trainable predicate matched no parameters; model is fully frozen", stacklevel=2)
    return parameter_count(model, trainable_only=True)


def trainable_names(model: Module) -> list[str]:
    return [n for n, p in model.named_parameters() if p.requires_grad]
