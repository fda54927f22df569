# -*- coding: utf-8 -*-
"""
张量算子目录与反向传播记录带（Tape）
用途：以PyTorch自动求导为引擎，提供模型库所需的全部算子的统一入口、形状检查和记录带，
     并提供图神经网络与注意力层共用的散射/聚集辅助函数
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from ..utils.errors import ShapeError

# 算子目录
OP_KINDS = (
    "matmul", "add", "sub", "mul", "concat",
    "reduce_sum", "reduce_mean", "reduce_max", "softmax",
    "relu", "gelu", "sigmoid",
    "layernorm", "batchnorm", "dropout", "linear",
    "gather", "scatter_sum", "segment_softmax",
    "transpose", "scale",
)

_ACTIVE_TAPES: List["Tape"] = []


@dataclass
class OpRecord:
    """
    单条算子记录
    用途：记录算子类型、输入张量编号与输出张量编号，追加顺序即拓扑顺序
    """
    kind: str
    input_ids: Tuple[int, ...]
    output_id: int
    attrs: Dict[str, Any] = field(default_factory=dict)


class Tape:
    """
    反向传播记录带
    用途：在上下文中记录每次 forward_op 调用，backward 时为所有被观察的叶子张量返回梯度
    使用场景：
        with Tape() as tape:
            x_id = tape.watch(x)
            loss = forward_op("reduce_sum", [forward_op("mul", [x, x])])
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: List[OpRecord] = []
        self._ids: Dict[int, int] = {}
        # 持有张量引用，保证 id() 在记录带生命周期内不被复用
        self._tensors: List[torch.Tensor] = []
        self._watched: List[int] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.remove(self)

    @staticmethod
    def active() -> Optional["Tape"]:
        return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None

    def _track(self, tensor: torch.Tensor) -> int:
        key = id(tensor)
        if key not in self._ids:
            self._ids[key] = len(self._tensors)
            self._tensors.append(tensor)
        return self._ids[key]

    def watch(self, tensor: torch.Tensor) -> int:
        """
        注册叶子张量
        参数：
            tensor: 需要求梯度的叶子张量（会被设置 requires_grad）
        返回值：该张量在记录带中的编号
        """
        if not tensor.requires_grad:
            tensor.requires_grad_(True)
        tape_id = self._track(tensor)
        if tape_id not in self._watched:
            self._watched.append(tape_id)
        return tape_id

    def id_of(self, tensor: torch.Tensor) -> Optional[int]:
        return self._ids.get(id(tensor))

    def tensor(self, tape_id: int) -> torch.Tensor:
        return self._tensors[tape_id]

    def record(self, kind: str, inputs: Sequence[torch.Tensor], output: torch.Tensor,
               attrs: Optional[Dict[str, Any]] = None) -> OpRecord:
        input_ids = tuple(self._track(t) for t in inputs)
        output_id = self._track(output)
        node = OpRecord(kind, input_ids, output_id,
                        {k: v for k, v in (attrs or {}).items() if not torch.is_tensor(v)})
        self.nodes.append(node)
        return node

    def leaf_ids(self) -> List[int]:
        """
        返回所有叶子编号：显式观察的张量，加上作为输入出现、需要梯度且不是任何算子输出的张量
        """
        outputs = {node.output_id for node in self.nodes}
        leaves = list(self._watched)
        for node in self.nodes:
            for tape_id in node.input_ids:
                if tape_id in outputs or tape_id in leaves:
                    continue
                if self._tensors[tape_id].requires_grad:
                    leaves.append(tape_id)
        return leaves

    def contains_output(self, tensor: torch.Tensor) -> bool:
        tape_id = self.id_of(tensor)
        return tape_id is not None and any(node.output_id == tape_id for node in self.nodes)


# ----------------------------------------------------------------------
# 共用辅助函数（图层与注意力层直接调用）
# ----------------------------------------------------------------------

def _check_index(kind: str, index: torch.Tensor, size: int) -> None:
    if index.numel() == 0:
        return
    low, high = int(index.min()), int(index.max())
    if low < 0 or high >= size:
        raise ShapeError(f"{kind}: 索引越界, 范围 [{low}, {high}], 允许 [0, {size - 1}]")


def gather_rows(x: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    """
    按行聚集
    参数：
        x: (n, ...) 张量
        index: 行索引（long）
    返回值：x[index]
    """
    _check_index("gather", index, x.shape[0])
    return x.index_select(0, index)


def scatter_sum(src: torch.Tensor, index: torch.Tensor, size: int) -> torch.Tensor:
    """
    按索引散射求和，累加在64位精度下进行再转换回原精度
    参数：
        src: (E, ...) 张量
        index: (E,) 目标行索引
        size: 输出行数
    返回值：(size, ...) 张量，第i行为所有 index==i 的 src 行之和
    """
    if index.shape[0] != src.shape[0]:
        raise ShapeError(f"scatter_sum: 索引长度 {index.shape[0]} 与源张量行数 {src.shape[0]} 不一致")
    _check_index("scatter_sum", index, size)
    acc = torch.zeros((size,) + tuple(src.shape[1:]), dtype=torch.float64, device=src.device)
    acc = acc.index_add(0, index, src.to(torch.float64))
    return acc.to(src.dtype)


def segment_softmax(scores: torch.Tensor, index: torch.Tensor, size: int) -> torch.Tensor:
    """
    分组softmax：对 index 相同的元素做softmax归一化
    参数：
        scores: (E,) 或 (E, h) 打分
        index: (E,) 分组编号
        size: 分组数
    返回值：与 scores 同形状的归一化系数，每组之和为1
    """
    if index.shape[0] != scores.shape[0]:
        raise ShapeError(f"segment_softmax: 索引长度 {index.shape[0]} 与打分行数 {scores.shape[0]} 不一致")
    _check_index("segment_softmax", index, size)
    expand_index = index.view(-1, *([1] * (scores.dim() - 1))).expand_as(scores)
    group_max = torch.full((size,) + tuple(scores.shape[1:]), float("-inf"),
                           dtype=scores.dtype, device=scores.device)
    group_max = group_max.scatter_reduce(0, expand_index, scores.detach(), reduce="amax", include_self=True)
    shifted = torch.exp(scores - group_max.index_select(0, index))
    denom = scatter_sum(shifted, index, size)
    return shifted / denom.index_select(0, index)


# ----------------------------------------------------------------------
# 算子实现
# ----------------------------------------------------------------------

def _shape(t: torch.Tensor) -> Tuple[int, ...]:
    return tuple(t.shape)


def _arity(kind: str, inputs: Sequence[torch.Tensor], low: int, high: Optional[int] = None) -> None:
    high = low if high is None else high
    if not low <= len(inputs) <= high:
        raise ShapeError(f"{kind}: 需要 {low}~{high} 个输入, 实际 {len(inputs)} 个")


def _broadcast(kind: str, a: torch.Tensor, b: torch.Tensor) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"{kind}: 形状无法广播 {_shape(a)} 与 {_shape(b)}")


def _op_matmul(inputs, attrs):
    _arity("matmul", inputs, 2)
    a, b = inputs
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: 内维不匹配 {_shape(a)} x {_shape(b)}")
    return a @ b


def _op_add(inputs, attrs):
    _arity("add", inputs, 2)
    _broadcast("add", *inputs)
    return inputs[0] + inputs[1]


def _op_sub(inputs, attrs):
    _arity("sub", inputs, 2)
    _broadcast("sub", *inputs)
    return inputs[0] - inputs[1]


def _op_mul(inputs, attrs):
    _arity("mul", inputs, 2)
    _broadcast("mul", *inputs)
    return inputs[0] * inputs[1]


def _op_concat(inputs, attrs):
    if not inputs:
        raise ShapeError("concat: 至少需要一个输入")
    axis = attrs.get("axis", -1)
    ref = inputs[0]
    axis = axis % ref.dim()
    for t in inputs[1:]:
        if t.dim() != ref.dim() or any(t.shape[i] != ref.shape[i] for i in range(ref.dim()) if i != axis):
            raise ShapeError(f"concat(axis={axis}): 非拼接维度不一致 {_shape(ref)} 与 {_shape(t)}")
    return torch.cat(list(inputs), dim=axis)


def _reduce_axis(kind: str, x: torch.Tensor, attrs):
    axis = attrs.get("axis")
    if axis is not None and not -x.dim() <= axis < x.dim():
        raise ShapeError(f"{kind}: 轴 {axis} 超出张量维度 {_shape(x)}")
    return axis


def _op_reduce_sum(inputs, attrs):
    _arity("reduce_sum", inputs, 1)
    x = inputs[0]
    axis = _reduce_axis("reduce_sum", x, attrs)
    wide = x.to(torch.float64)
    out = wide.sum() if axis is None else wide.sum(dim=axis, keepdim=attrs.get("keepdim", False))
    return out.to(x.dtype)


def _op_reduce_mean(inputs, attrs):
    _arity("reduce_mean", inputs, 1)
    x = inputs[0]
    axis = _reduce_axis("reduce_mean", x, attrs)
    wide = x.to(torch.float64)
    out = wide.mean() if axis is None else wide.mean(dim=axis, keepdim=attrs.get("keepdim", False))
    return out.to(x.dtype)


def _op_reduce_max(inputs, attrs):
    _arity("reduce_max", inputs, 1)
    x = inputs[0]
    axis = _reduce_axis("reduce_max", x, attrs)
    if axis is None:
        return x.amax()
    return x.amax(dim=axis, keepdim=attrs.get("keepdim", False))


def _op_softmax(inputs, attrs):
    _arity("softmax", inputs, 1)
    x = inputs[0]
    axis = _reduce_axis("softmax", x, {"axis": attrs.get("axis", -1)})
    return F.softmax(x, dim=axis)


def _op_relu(inputs, attrs):
    _arity("relu", inputs, 1)
    return F.relu(inputs[0])


def _op_gelu(inputs, attrs):
    _arity("gelu", inputs, 1)
    # 精确的高斯累积分布形式
    return F.gelu(inputs[0], approximate="none")


def _op_sigmoid(inputs, attrs):
    _arity("sigmoid", inputs, 1)
    return torch.sigmoid(inputs[0])


def _op_layernorm(inputs, attrs):
    _arity("layernorm", inputs, 1, 3)
    x = inputs[0]
    weight = inputs[1] if len(inputs) > 1 else None
    bias = inputs[2] if len(inputs) > 2 else None
    d = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and _shape(p) != (d,):
            raise ShapeError(f"layernorm: {name} 形状 {_shape(p)} 与特征维 {d} 不一致")
    return F.layer_norm(x, (d,), weight, bias, attrs.get("eps", 1e-5))


def _op_batchnorm(inputs, attrs):
    _arity("batchnorm", inputs, 1, 3)
    x = inputs[0]
    if x.dim() != 2:
        raise ShapeError(f"batchnorm: 需要 (n, d) 输入, 实际 {_shape(x)}")
    d = x.shape[1]
    running_mean = attrs.get("running_mean")
    running_var = attrs.get("running_var")
    for name, p in (("running_mean", running_mean), ("running_var", running_var)):
        if p is not None and _shape(p) != (d,):
            raise ShapeError(f"batchnorm: {name} 形状 {_shape(p)} 与特征维 {d} 不一致")
    weight = inputs[1] if len(inputs) > 1 else None
    bias = inputs[2] if len(inputs) > 2 else None
    return F.batch_norm(x, running_mean, running_var, weight, bias,
                        training=attrs.get("training", False),
                        momentum=attrs.get("momentum", 0.1),
                        eps=attrs.get("eps", 1e-5))


def _op_dropout(inputs, attrs):
    _arity("dropout", inputs, 1)
    # 反向缩放：训练时除以保留概率，评估时为恒等映射
    return F.dropout(inputs[0], p=attrs.get("p", 0.0), training=attrs.get("training", False))


def _op_linear(inputs, attrs):
    _arity("linear", inputs, 2, 3)
    x, weight = inputs[0], inputs[1]
    bias = inputs[2] if len(inputs) > 2 else None
    if weight.dim() != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: 输入 {_shape(x)} 与权重 {_shape(weight)} 不匹配")
    if bias is not None and _shape(bias) != (weight.shape[0],):
        raise ShapeError(f"linear: 偏置 {_shape(bias)} 与输出维 {weight.shape[0]} 不一致")
    return F.linear(x, weight, bias)


def _op_gather(inputs, attrs):
    _arity("gather", inputs, 1)
    return gather_rows(inputs[0], attrs["index"])


def _op_scatter_sum(inputs, attrs):
    _arity("scatter_sum", inputs, 1)
    return scatter_sum(inputs[0], attrs["index"], attrs["size"])


def _op_segment_softmax(inputs, attrs):
    _arity("segment_softmax", inputs, 1)
    return segment_softmax(inputs[0], attrs["index"], attrs["size"])


def _op_transpose(inputs, attrs):
    _arity("transpose", inputs, 1)
    x = inputs[0]
    if x.dim() < 2:
        raise ShapeError(f"transpose: 至少需要二维输入, 实际 {_shape(x)}")
    return x.transpose(-2, -1)


def _op_scale(inputs, attrs):
    _arity("scale", inputs, 1)
    return inputs[0] * float(attrs["factor"])


_FORWARD: Dict[str, Callable] = {
    "matmul": _op_matmul,
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "concat": _op_concat,
    "reduce_sum": _op_reduce_sum,
    "reduce_mean": _op_reduce_mean,
    "reduce_max": _op_reduce_max,
    "softmax": _op_softmax,
    "relu": _op_relu,
    "gelu": _op_gelu,
    "sigmoid": _op_sigmoid,
    "layernorm": _op_layernorm,
    "batchnorm": _op_batchnorm,
    "dropout": _op_dropout,
    "linear": _op_linear,
    "gather": _op_gather,
    "scatter_sum": _op_scatter_sum,
    "segment_softmax": _op_segment_softmax,
    "transpose": _op_transpose,
    "scale": _op_scale,
}


def forward_op(kind: str, inputs: Sequence[torch.Tensor], attrs: Optional[Dict[str, Any]] = None,
               tape: Optional[Tape] = None) -> torch.Tensor:
    """
    执行单个算子
    参数：
        kind: 算子类型，取值见 OP_KINDS
        inputs: 输入张量列表
        attrs: 算子属性（axis、p、training、index、size、factor 等）
        tape: 记录带；为None时使用当前上下文中的记录带
    返回值：输出张量；任一输入需要梯度时该调用被记录到记录带
    """
    if kind not in _FORWARD:
        raise ValueError(f"未知算子类型: {kind}")
    attrs = attrs or {}
    output = _FORWARD[kind](list(inputs), attrs)
    tape = tape if tape is not None else Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, output, attrs)
    return output


def backward(tape: Tape, loss: torch.Tensor, retain_graph: bool = False) -> Dict[int, torch.Tensor]:
    """
    反向传播
    参数：
        tape: 记录了前向计算的记录带
        loss: 标量损失
        retain_graph: 是否保留计算图以便再次反向传播
    返回值：梯度映射 {叶子编号: dLoss/dLeaf}，未参与计算的叶子得到全零梯度
    """
    if loss.numel() != 1:
        raise ShapeError(f"backward: 损失必须是标量, 实际形状 {_shape(loss)}")
    if not tape.contains_output(loss):
        raise ValueError("backward: 记录带中不包含该损失张量")

    leaf_ids = tape.leaf_ids()
    leaves = [tape.tensor(i) for i in leaf_ids]
    grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True, retain_graph=retain_graph)
    return {
        leaf_id: (grad if grad is not None else torch.zeros_like(leaf))
        for leaf_id, leaf, grad in zip(leaf_ids, leaves, grads)
    }
