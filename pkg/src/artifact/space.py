"""Search spaces and profiling grids.

A ``SearchSpace`` bundles what the attacker assumes about the victim family:
which ops occur, the parameter values worth hypothesizing, the block-mining
rules, and the structural conventions used to prune candidate graphs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .arch import OpKind


@dataclass(frozen=True)
class ParamGrid:
    """Eager profiling grid for convolution and linear layers."""

    conv_channels: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 128, 256)
    conv_kernels: tuple[int, ...] = (1, 3, 5, 7, 11, 100, 200, 500, 1000, 10000)
    conv_strides: tuple[int, ...] = (1, 2, 5, 10, 100, 200, 500, 1000, 10000)
    linear_in: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048)
    linear_out: tuple[int, ...] = (1, 10, 16, 20, 32, 40, 100, 128, 256, 512, 1000, 1024, 2048)
    conv_op: OpKind = OpKind.CONV1D
    # spatial extent of the profiled convolution inputs
    conv_input_length: int = 2_000_000

    @property
    def conv_size(self) -> int:
        c = len(self.conv_channels)
        return c * c * len(self.conv_kernels) * len(self.conv_strides)

    @property
    def linear_size(self) -> int:
        return len(self.linear_in) * len(self.linear_out)

    def is_empty(self) -> bool:
        return self.conv_size + self.linear_size == 0


MALCONV_GRID = ParamGrid()
EMPTY_GRID = ParamGrid((), (), (), (), ())


@dataclass(frozen=True)
class BlockRules:
    """Toggles for the four block-mining rules."""

    conv_then_bn: bool = True         # every Conv2d is followed by a BatchNorm
    depthwise_tail: bool = True       # a DepthConv2d block ends with the separable tail
    no_mid_merge: bool = True         # a join may only close a block
    most_frequent: bool = True        # keep the most frequent block per window


@dataclass(frozen=True)
class SearchSpace:
    name: str
    allowed_ops: frozenset[OpKind]
    kernel_grid: tuple[int, ...] = (3, 5)
    stride_grid: tuple[int, ...] = (1, 2)
    multipliers: tuple[float, ...] = (0.75, 1.0, 1.25)
    layers_delta: int = 1
    block_rules: BlockRules = field(default_factory=BlockRules)
    max_block: int = 9

    # hypothesis grids used by the estimator
    conv_channels: tuple[int, ...] = ()
    conv_kernels: tuple[int, ...] = (1, 3, 5)
    conv_strides: tuple[int, ...] = (1, 2)
    depthwise_kernels: tuple[int, ...] = (3, 5, 7)
    padding: str = "same"             # "same" pads kernel//2, "valid" pads 0
    linear_in: tuple[int, ...] = ()   # empty: any input width
    linear_out: tuple[int, ...] = ()
    embedding_dims: tuple[int, ...] = ()
    embedding_vocab: int = 257
    narrow: str = "halving"           # "halving", "halving+identity" or "full"
    # a Conv2d entry may be a depthwise conv reported under the dense symbol
    depthwise_as_conv2d: bool = False
    # conv -> BN -> activation units are fused (structural candidate rules)
    fused_units: bool = False
    grid: ParamGrid | None = None

    def __post_init__(self) -> None:
        for name in ("kernel_grid", "stride_grid", "multipliers"):
            if not getattr(self, name):
                raise ValueError(f"search space {name} must be nonempty")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding policy {self.padding!r}")
        if self.narrow not in ("halving", "halving+identity", "full"):
            raise ValueError(f"unknown narrow policy {self.narrow!r}")
        if not 1 <= self.max_block <= 9:
            raise ValueError("max_block must be in 1..9")

    def pad_for(self, kernel: int) -> int:
        return kernel // 2 if self.padding == "same" else 0

    def with_rules(self, **toggles: bool) -> "SearchSpace":
        return replace(self, block_rules=replace(self.block_rules, **toggles))

    def replace(self, **changes) -> "SearchSpace":
        return replace(self, **changes)


def _ops(*names: OpKind) -> frozenset[OpKind]:
    return frozenset(names)


def mnasnet_space() -> SearchSpace:
    """MobileNetV2-family space: inverted residual blocks of conv/depthwise units.

    Channel hypotheses are the multiples of 8 up to 2048 (the usual
    make-divisible convention).  The final classifier width is the task's
    label count, which the attacker knows.
    """
    return SearchSpace(
        name="mnasnet",
        # cell ops only: the pooling/classifier head is left to the terminal unit
        allowed_ops=_ops(OpKind.CONV2D, OpKind.DEPTHCONV2D, OpKind.BATCHNORM, OpKind.RELU6, OpKind.ADD),
        conv_channels=tuple(range(8, 2049, 8)),
        conv_kernels=(1, 3, 5),
        conv_strides=(1, 2),
        depthwise_kernels=(3, 5, 7),
        padding="same",
        linear_out=(1000,),
        fused_units=True,
    )


def toynet_space() -> SearchSpace:
    """Small conv space for the two-conv toy network (unpadded convs)."""
    return SearchSpace(
        name="toynet",
        allowed_ops=_ops(OpKind.CONV2D, OpKind.DEPTHCONV2D, OpKind.BATCHNORM, OpKind.RELU6, OpKind.ADD),
        conv_channels=tuple(range(1, 65)),
        conv_kernels=(1, 3, 5, 7),
        conv_strides=(1, 2),
        depthwise_kernels=(1, 3, 5, 7),
        padding="valid",
        depthwise_as_conv2d=True,
        fused_units=True,
    )


def malconv_space(grid: ParamGrid = MALCONV_GRID) -> SearchSpace:
    """Byte-sequence pipeline space profiled on ``grid``."""
    return SearchSpace(
        name="malconv",
        allowed_ops=_ops(OpKind.EMBEDDING, OpKind.TRANSPOSE, OpKind.NARROW, OpKind.CONV1D,
                         OpKind.SIGMOID, OpKind.MULTIPLY, OpKind.MAXPOOL1D, OpKind.LINEAR),
        kernel_grid=grid.conv_kernels or (1,),
        stride_grid=grid.conv_strides or (1,),
        conv_channels=grid.conv_channels,
        conv_kernels=grid.conv_kernels,
        conv_strides=grid.conv_strides,
        padding="valid",
        linear_in=grid.linear_in,
        linear_out=grid.linear_out,
        embedding_dims=grid.conv_channels,
        grid=grid,
    )


def generic_space(channels: Iterable[int], kernels: Iterable[int] = (1, 3),
                  strides: Iterable[int] = (1,)) -> SearchSpace:
    """Rule-free 2-D space used for randomized property checks."""
    return SearchSpace(
        name="generic",
        allowed_ops=frozenset(OpKind),
        conv_channels=tuple(sorted(set(channels))),
        conv_kernels=tuple(kernels),
        conv_strides=tuple(strides),
        depthwise_kernels=tuple(kernels),
        padding="same",
        block_rules=BlockRules(False, False, False, True),
    )


SPACES = {"mnasnet": mnasnet_space, "toynet": toynet_space, "malconv": malconv_space}


def get_space(name: str) -> SearchSpace:
    try:
        return SPACES[name]()
    except KeyError:
        raise KeyError(f"unknown search space {name!r}; choose from {sorted(SPACES)}") from None
